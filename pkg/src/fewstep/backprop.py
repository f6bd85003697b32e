"""Hand-rolled reverse-mode differentiation through a full solve.

Given the cotangent of a terminal-state loss, walk the solver recursion
backwards and return cotangents for the coefficient vector, the time
parameters (through the schedule's analytic derivatives and the grid
parametrization), and the initial state.  Score-model Jacobian information
enters only through the model's closed-form vjp and time partials, so memory
stays linear in the number of steps; cached score evaluations are reused when
the trace kept them and recomputed otherwise.

Clamped quantities (stage-time clamps, score-time offset clips) contribute
zero gradient when saturated.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .coeffs import SolverCoefficients
from .errors import StateError
from .grids import LearnableTimeParams, TimeGrid, grid_gradient_vjp, materialize
from .schedules import NoiseSchedule
from .solvers import SolveTrace, wrapper_factors


@dataclasses.dataclass
class AdjointResult:
    """Gradient blocks, index-compatible with their primals."""

    grad_coeffs: np.ndarray
    grad_x0: np.ndarray
    grad_steps: np.ndarray
    grad_score_times: np.ndarray
    grad_xi: np.ndarray | None = None
    grad_xi_c: np.ndarray | None = None
    loss_value: float = 0.0


def _wrapper_derivatives(schedule, t_prev, t_next, prediction, h_mode):
    """d(R, S)/d(t_prev, t_next) for the update wrapper."""
    a_p, s_p = float(schedule.alpha(t_prev)), float(schedule.sigma(t_prev))
    a_n, s_n = float(schedule.alpha(t_next)), float(schedule.sigma(t_next))
    da_p, ds_p = float(schedule.d_alpha(t_prev)), float(schedule.d_sigma(t_prev))
    da_n, ds_n = float(schedule.d_alpha(t_next)), float(schedule.d_sigma(t_next))
    if h_mode == "lambda":
        h = float(schedule.lam(t_next) - schedule.lam(t_prev))
        dh_p, dh_n = -float(schedule.d_lam(t_prev)), float(schedule.d_lam(t_next))
    else:
        h = float(t_next - t_prev)
        dh_p, dh_n = -1.0, 1.0
    if prediction == "noise":
        dR_p = -a_n * da_p / (a_p * a_p)
        dR_n = da_n / a_p
        eh = np.exp(h)
        dS_p = s_n * eh * dh_p
        dS_n = ds_n * np.expm1(h) + s_n * eh * dh_n
    else:
        dR_p = -s_n * ds_p / (s_p * s_p)
        dR_n = ds_n / s_p
        emh = np.exp(-h)
        dS_p = a_n * emh * dh_p
        dS_n = da_n * np.expm1(-h) - a_n * emh * dh_n
    return dR_p, dR_n, float(dS_p), float(dS_n)


def _eval_vjp(model, prediction, schedule, x, t, cot):
    if prediction == "noise":
        return model.epsilon_vjp(schedule, x, t, cot)
    a, s = float(schedule.alpha(t)), float(schedule.sigma(t))
    return (cot - s * model.epsilon_vjp(schedule, x, t, cot)) / a


def _eval_time_dot(model, prediction, schedule, x, t, cot) -> float:
    if prediction == "noise":
        return float(np.sum(cot * model.epsilon_time_partial(schedule, x, t)))
    a, s = float(schedule.alpha(t)), float(schedule.sigma(t))
    da, ds = float(schedule.d_alpha(t)), float(schedule.d_sigma(t))
    eps = model.epsilon(schedule, x, t)
    deps = model.epsilon_time_partial(schedule, x, t)
    xhat = (np.asarray(x, dtype=float) - s * eps) / a
    dxhat = (-ds * eps - s * deps - xhat * da) / a
    return float(np.sum(cot * dxhat))


def _evaluate(model, prediction, schedule, x, t):
    if prediction == "noise":
        return model.epsilon(schedule, x, t)
    return model.data_prediction(schedule, x, t)


def _rematerialize_cache(trace, coeffs, schedule, grid, model):
    pred = coeffs.prediction
    if coeffs.kind == "lms":
        return [_evaluate(model, pred, schedule, trace.states[m], float(grid.score_times[m]))
                for m in range(coeffs.n_steps)]
    cache = [_evaluate(model, pred, schedule, trace.states[0], float(grid.score_times[0]))]
    last = coeffs.n_steps if trace.final_corrector else coeffs.n_steps - 1
    for m in range(1, last + 1):
        cache.append(_evaluate(model, pred, schedule, trace.pred_states[m - 1],
                               float(grid.score_times[m])))
    return cache


def backward(
    trace: SolveTrace,
    coeffs: SolverCoefficients,
    schedule: NoiseSchedule,
    model,
    loss_cotangent: np.ndarray,
    grid: TimeGrid | None = None,
    params: LearnableTimeParams | None = None,
    loss_value: float = 0.0,
) -> AdjointResult:
    """Exact reverse-mode derivative of x0 -> solve -> loss.

    Pass the grid the trace was produced with, or the learnable parameters it
    was materialized from (then cotangents on (xi, xi_c) are returned too).
    """
    if params is not None:
        grid = materialize(params, schedule)
    if grid is None:
        raise ValueError("backward needs the grid or the time parameters")
    n = coeffs.n_steps
    if grid.n_steps != n or trace.kind != coeffs.kind:
        raise ValueError("trace, coefficients, and grid disagree")
    if len(trace.states) != n + 1:
        raise ValueError("trace does not match the coefficient step count")

    prediction = coeffs.prediction
    h_mode = trace.h_mode
    xbar = np.asarray(loss_cotangent, dtype=float)
    if xbar.shape != np.asarray(trace.states[-1]).shape:
        raise ValueError("loss cotangent shape does not match the terminal state")

    grad_values = np.zeros_like(coeffs.values)
    tbar = np.zeros(n + 1)
    tcbar = np.zeros(n + 1)

    if coeffs.kind == "ss":
        if trace.stage_records is None:
            raise StateError("single-step backward needs the trace's stage records")
        xbar = _backward_ss(trace, coeffs, schedule, grid, model, xbar,
                            grad_values, tbar, tcbar, h_mode)
    else:
        cache = trace.eps_cache
        if cache is None:
            cache = _rematerialize_cache(trace, coeffs, schedule, grid, model)
        if coeffs.kind == "lms":
            xbar = _backward_lms(trace, coeffs, schedule, grid, model, xbar, cache,
                                 grad_values, tbar, tcbar, h_mode)
        else:
            xbar = _backward_pc(trace, coeffs, schedule, grid, model, xbar, cache,
                                grad_values, tbar, tcbar, h_mode)

    result = AdjointResult(grad_coeffs=grad_values, grad_x0=xbar, grad_steps=tbar,
                           grad_score_times=tcbar, loss_value=loss_value)
    if params is not None:
        result.grad_xi, result.grad_xi_c = grid_gradient_vjp(params, schedule, tbar, tcbar)
    return result


def _dot(a, b) -> float:
    return float(np.sum(a * b))


def _backward_lms(trace, coeffs, schedule, grid, model, xbar, cache,
                  grad_values, tbar, tcbar, h_mode):
    n = coeffs.n_steps
    ebar = [None] * len(cache)
    for i in range(n, 0, -1):
        q = coeffs.q(i)
        b = coeffs.values[coeffs.b_slice(i)]
        R, S, _ = wrapper_factors(schedule, grid.steps[i - 1], grid.steps[i],
                                  coeffs.prediction, h_mode)
        delta = sum(b[j] * cache[i - 1 - j] for j in range(q))
        rbar, sbar = _dot(xbar, trace.states[i - 1]), -_dot(xbar, delta)
        gb = grad_values[coeffs.b_slice(i)]
        for j in range(q):
            gb[j] += -S * _dot(xbar, cache[i - 1 - j])
            contrib = (-S * b[j]) * xbar
            ebar[i - 1 - j] = contrib if ebar[i - 1 - j] is None else ebar[i - 1 - j] + contrib
        xprev_bar = R * xbar
        if ebar[i - 1] is not None:
            tc = float(grid.score_times[i - 1])
            xprev_bar = xprev_bar + _eval_vjp(model, coeffs.prediction, schedule,
                                              trace.states[i - 1], tc, ebar[i - 1])
            tcbar[i - 1] += _eval_time_dot(model, coeffs.prediction, schedule,
                                           trace.states[i - 1], tc, ebar[i - 1])
        dR_p, dR_n, dS_p, dS_n = _wrapper_derivatives(
            schedule, grid.steps[i - 1], grid.steps[i], coeffs.prediction, h_mode)
        tbar[i] += rbar * dR_n + sbar * dS_n
        tbar[i - 1] += rbar * dR_p + sbar * dS_p
        xbar = xprev_bar
    return xbar


def _backward_pc(trace, coeffs, schedule, grid, model, xbar, cache,
                 grad_values, tbar, tcbar, h_mode):
    n = coeffs.n_steps
    ebar = [None] * len(cache)
    for i in range(n, 0, -1):
        q = coeffs.q(i)
        correct = trace.final_corrector or i < n
        R, S, _ = wrapper_factors(schedule, grid.steps[i - 1], grid.steps[i],
                                  coeffs.prediction, h_mode)
        rbar = sbar = 0.0
        if correct:
            w = coeffs.corrector_weights(i)
            pool = [i] + [i - 1 - j for j in range(q)]
            delta_c = sum(w[u] * cache[pool[u]] for u in range(q + 1))
            rbar += _dot(xbar, trace.states[i - 1])
            sbar += -_dot(xbar, delta_c)
            wbar = np.array([-S * _dot(xbar, cache[m]) for m in pool])
            # free weights; the oldest pool weight is 1 - sum(free)
            grad_values[coeffs.corrector_slice(i)] += wbar[:-1] - wbar[-1]
            for u, m in enumerate(pool):
                contrib = (-S * w[u]) * xbar
                ebar[m] = contrib if ebar[m] is None else ebar[m] + contrib
            xprev_bar = R * xbar
            # the new evaluation lives at the predicted state; release it now
            tc_i = float(grid.score_times[i])
            pstate = trace.pred_states[i - 1]
            pbar = _eval_vjp(model, coeffs.prediction, schedule, pstate, tc_i, ebar[i])
            tcbar[i] += _eval_time_dot(model, coeffs.prediction, schedule,
                                       pstate, tc_i, ebar[i])
        else:
            xprev_bar = np.zeros_like(xbar)
            pbar = xbar
        b = coeffs.values[coeffs.b_slice(i)]
        delta_p = sum(b[j] * cache[i - 1 - j] for j in range(q))
        rbar += _dot(pbar, trace.states[i - 1])
        sbar += -_dot(pbar, delta_p)
        gb = grad_values[coeffs.b_slice(i)]
        for j in range(q):
            gb[j] += -S * _dot(pbar, cache[i - 1 - j])
            contrib = (-S * b[j]) * pbar
            ebar[i - 1 - j] = contrib if ebar[i - 1 - j] is None else ebar[i - 1 - j] + contrib
        xprev_bar = xprev_bar + R * pbar
        dR_p, dR_n, dS_p, dS_n = _wrapper_derivatives(
            schedule, grid.steps[i - 1], grid.steps[i], coeffs.prediction, h_mode)
        tbar[i] += rbar * dR_n + sbar * dS_n
        tbar[i - 1] += rbar * dR_p + sbar * dS_p
        xbar = xprev_bar
    if ebar[0] is not None:
        tc0 = float(grid.score_times[0])
        xbar = xbar + _eval_vjp(model, coeffs.prediction, schedule,
                                trace.states[0], tc0, ebar[0])
        tcbar[0] += _eval_time_dot(model, coeffs.prediction, schedule,
                                   trace.states[0], tc0, ebar[0])
    return xbar


def _backward_ss(trace, coeffs, schedule, grid, model, xbar,
                 grad_values, tbar, tcbar, h_mode):
    n, k = coeffs.n_steps, coeffs.order
    for i in range(n, 0, -1):
        rec = trace.stage_records[i - 1]
        b = coeffs.values[coeffs.ss_b_slice(i)]
        amat = coeffs.ss_a_matrix(i)
        R, S, _ = wrapper_factors(schedule, grid.steps[i - 1], grid.steps[i],
                                  coeffs.prediction, h_mode)
        delta = sum(b[j] * rec.kappas[j] for j in range(k))
        rbar, sbar = _dot(xbar, trace.states[i - 1]), -_dot(xbar, delta)
        gb = grad_values[coeffs.ss_b_slice(i)]
        kbar = []
        for j in range(k):
            gb[j] += -S * _dot(xbar, rec.kappas[j])
            kbar.append((-S * b[j]) * xbar)
        xprev_bar = R * xbar
        ga = grad_values[coeffs.ss_a_slice(i)].reshape(k, max(k - 1, 0))
        gc = grad_values[coeffs.ss_c_slice(i)]
        for j in range(k - 1, -1, -1):
            s_j = float(rec.stage_times[j])
            zbar = _eval_vjp(model, coeffs.prediction, schedule, rec.stage_x[j], s_j, kbar[j])
            tdot = _eval_time_dot(model, coeffs.prediction, schedule,
                                  rec.stage_x[j], s_j, kbar[j])
            if not rec.clamped[j]:
                ds_dlam = 1.0 / float(schedule.d_lam(s_j))
                if j >= 1:
                    gc[j - 1] += tdot * ds_dlam
                tbar[i - 1] += tdot * ds_dlam * float(schedule.d_lam(grid.steps[i - 1]))
            xprev_bar = xprev_bar + zbar
            for l in range(j):
                kbar[l] = kbar[l] + amat[j, l] * zbar
                ga[j, l] += _dot(zbar, rec.kappas[l])
        dR_p, dR_n, dS_p, dS_n = _wrapper_derivatives(
            schedule, grid.steps[i - 1], grid.steps[i], coeffs.prediction, h_mode)
        tbar[i] += rbar * dR_n + sbar * dS_n
        tbar[i - 1] += rbar * dR_p + sbar * dS_p
        xbar = xprev_bar
    return xbar


# ---------------------------------------------------------------------------
# Finite-difference oracle
# ---------------------------------------------------------------------------

def check_gradients(
    coeffs: SolverCoefficients,
    schedule: NoiseSchedule,
    model,
    x0: np.ndarray,
    target: np.ndarray,
    grid: TimeGrid | None = None,
    params: LearnableTimeParams | None = None,
    fd_step: float = 1e-5,
    h_mode: str = "lambda",
):
    """Compare backward() against central finite differences on a squared loss.

    Returns a report dict with the relative deviation per gradient block
    (2-norm of the difference over the 2-norm of the reference); deviations
    above a caller-chosen tolerance are a failed check, not an exception.
    """
    from .solvers import solve

    def run(cfs, pms, x):
        g = materialize(pms, schedule) if pms is not None else grid
        trace = solve(cfs, schedule, g, model, x, h_mode=h_mode)
        y = trace.terminal
        resid = y - target
        return trace, float(np.mean(resid * resid)), 2.0 * resid / resid.size

    trace, loss, cot = run(coeffs, params, x0)
    res = backward(trace, coeffs, schedule, model, cot, grid=grid, params=params,
                   loss_value=loss)

    def fd_on(vector, setter):
        grad = np.zeros_like(vector)
        for idx in range(vector.size):
            for sign in (+1.0, -1.0):
                vector.flat[idx] += sign * fd_step
                setter()
                grad.flat[idx] += sign * run(coeffs, params, x0)[1]
                vector.flat[idx] -= sign * fd_step
            setter()
        return grad / (2.0 * fd_step)

    def rel(err, ref):
        return float(np.linalg.norm(err - ref) / max(np.linalg.norm(ref), 1e-12))

    report = {"loss": loss, "blocks": {}}
    fd_coeffs = fd_on(coeffs.values, lambda: None)
    report["blocks"]["coefficients"] = rel(res.grad_coeffs, fd_coeffs)
    x0_work = np.array(x0, dtype=float)

    def fd_x0():
        grad = np.zeros_like(x0_work)
        for idx in range(x0_work.size):
            for sign in (+1.0, -1.0):
                x0_work.flat[idx] += sign * fd_step
                grad.flat[idx] += sign * run(coeffs, params, x0_work)[1]
                x0_work.flat[idx] -= sign * fd_step
        return grad / (2.0 * fd_step)

    report["blocks"]["initial_state"] = rel(res.grad_x0, fd_x0())
    if params is not None:
        report["blocks"]["xi"] = rel(res.grad_xi, fd_on(params.xi, lambda: None))
        report["blocks"]["xi_c"] = rel(res.grad_xi_c, fd_on(params.xi_c, lambda: None))
    report["max_relative_deviation"] = max(report["blocks"].values())
    return report
