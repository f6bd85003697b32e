"""The generalized few-step solver: multistep, single-step, and predictor-corrector.

Every family shares the exponential-integrator wrapper

    x_i = R_i x_{i-1} - S_i * increment_i

with R_i = alpha_i/alpha_{i-1}, S_i = sigma_i (e^{h_i} - 1) for noise
prediction and R_i = sigma_i/sigma_{i-1}, S_i = alpha_i (e^{-h_i} - 1) for
data prediction, h_i the per-step log-SNR gap.  The increment is the
coefficient-weighted combination of score evaluations defined by the family.
Score evaluations happen at the grid's score times; wrapper factors always
use the step times.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .coeffs import SolverCoefficients
from .errors import DivergenceError, StateError
from .grids import TimeGrid
from .schedules import NoiseSchedule

H_MODES = ("lambda", "time")


def wrapper_factors(schedule: NoiseSchedule, t_prev: float, t_next: float,
                    prediction: str, h_mode: str = "lambda"):
    """(R, S, h) of the update wrapper for one step."""
    if h_mode == "lambda":
        h = float(schedule.lam(t_next) - schedule.lam(t_prev))
    elif h_mode == "time":
        h = float(t_next - t_prev)
    else:
        raise ValueError(f"unknown h mode {h_mode!r}")
    if prediction == "noise":
        R = float(schedule.alpha(t_next) / schedule.alpha(t_prev))
        S = float(schedule.sigma(t_next)) * float(np.expm1(h))
    else:
        R = float(schedule.sigma(t_next) / schedule.sigma(t_prev))
        S = float(schedule.alpha(t_next)) * float(np.expm1(-h))
    return R, S, h


def _evaluate(model, coeffs, schedule, x, t, step_index=None):
    try:
        # divergence surfaces as a DivergenceError below, not as warnings
        with np.errstate(over="ignore", invalid="ignore"):
            if coeffs.prediction == "noise":
                out = model.epsilon(schedule, x, t)
            else:
                out = model.data_prediction(schedule, x, t)
    except FloatingPointError as exc:
        raise DivergenceError(f"score evaluation overflowed: {exc}",
                              step_index=step_index) from exc
    if step_index is not None and not np.all(np.isfinite(out)):
        raise DivergenceError("score evaluation returned non-finite values",
                              step_index=step_index)
    return out


@dataclasses.dataclass
class StageRecord:
    """Forward data of one single-step solve step, kept for the reverse pass."""

    stage_x: list
    kappas: list
    stage_lams: np.ndarray
    stage_times: np.ndarray
    clamped: np.ndarray


@dataclasses.dataclass
class SolveTrace:
    """Full trajectory of one solve, with enough cached data to run backward."""

    states: list
    eps_cache: list | None
    pred_states: list | None
    stage_records: list | None
    nfe_used: int
    diagnostics: list
    kind: str
    h_mode: str
    final_corrector: bool

    @property
    def terminal(self):
        return self.states[-1]


def lms_step(coeffs: SolverCoefficients, schedule: NoiseSchedule, grid: TimeGrid,
             i: int, x_prev: np.ndarray, eps_history, h_mode: str = "lambda"):
    """Multistep update at step i; eps_history is most-recent-first."""
    q = coeffs.q(i)
    if eps_history is None or len(eps_history) < q:
        raise StateError(f"step {i} needs {q} cached evaluations, got "
                         f"{0 if eps_history is None else len(eps_history)}")
    R, S, _ = wrapper_factors(schedule, grid.steps[i - 1], grid.steps[i],
                              coeffs.prediction, h_mode)
    b = coeffs.values[coeffs.b_slice(i)]
    delta = sum(b[j] * eps_history[j] for j in range(q))
    return R * x_prev - S * delta


def pc_step(coeffs: SolverCoefficients, schedule: NoiseSchedule, grid: TimeGrid,
            i: int, x_prev: np.ndarray, eps_history, model,
            apply_corrector: bool = True, h_mode: str = "lambda"):
    """Predict with the multistep row, evaluate at the prediction, correct.

    Returns (x_next, new_evaluation, predicted_state); the new evaluation is
    the one cached for subsequent steps, so a full solve spends one extra
    model call only at the terminal step.
    """
    pred = lms_step(coeffs, schedule, grid, i, x_prev, eps_history, h_mode)
    if not apply_corrector:
        return pred, None, pred
    q = coeffs.q(i)
    new_eval = _evaluate(model, coeffs, schedule, pred, float(grid.score_times[i]),
                         step_index=i)
    R, S, _ = wrapper_factors(schedule, grid.steps[i - 1], grid.steps[i],
                              coeffs.prediction, h_mode)
    w = coeffs.corrector_weights(i)           # [new, recent, ..., oldest]
    pool = [new_eval] + [eps_history[j] for j in range(q)]
    delta = sum(w[u] * pool[u] for u in range(q + 1))
    return R * x_prev - S * delta, new_eval, pred


def ss_step(coeffs: SolverCoefficients, schedule: NoiseSchedule, grid: TimeGrid,
            i: int, x_prev: np.ndarray, model, h_mode: str = "lambda",
            diagnostics: list | None = None):
    """Single-step update: k internal stages at learnable log-SNR offsets."""
    k = coeffs.order
    R, S, _ = wrapper_factors(schedule, grid.steps[i - 1], grid.steps[i],
                              coeffs.prediction, h_mode)
    lam_prev = float(schedule.lam(grid.steps[i - 1]))
    lam_lo, lam_hi = schedule.lambda_range()
    c_full = np.concatenate([[0.0], coeffs.values[coeffs.ss_c_slice(i)]])
    raw_lams = lam_prev + c_full
    stage_lams = np.clip(raw_lams, lam_lo, lam_hi)
    clamped = stage_lams != raw_lams
    if diagnostics is not None:
        for j in np.nonzero(clamped)[0]:
            diagnostics.append({"event": "stage_clamp", "step": i, "stage": int(j + 1),
                                "requested": float(raw_lams[j]), "used": float(stage_lams[j])})
    stage_times = np.array([schedule.time_from_lambda(l) for l in stage_lams])
    amat = coeffs.ss_a_matrix(i)
    b = coeffs.values[coeffs.ss_b_slice(i)]

    stage_x, kappas = [], []
    for j in range(k):
        z = x_prev.copy()
        for l in range(j):
            z = z + amat[j, l] * kappas[l]
        stage_x.append(z)
        kappas.append(_evaluate(model, coeffs, schedule, z, float(stage_times[j]),
                                step_index=i))
    delta = sum(b[j] * kappas[j] for j in range(k))
    record = StageRecord(stage_x=stage_x, kappas=kappas, stage_lams=stage_lams,
                         stage_times=stage_times, clamped=clamped)
    return R * x_prev - S * delta, record


def solve(coeffs: SolverCoefficients, schedule: NoiseSchedule, grid: TimeGrid,
          model, x_init: np.ndarray, h_mode: str = "lambda",
          final_corrector: bool = True) -> SolveTrace:
    """Run the solver from t_0 = T down to t_N = t_min.

    x_init may be a single state (d,) or a batch (B, d); the trace keeps the
    given shape.  nfe_used counts score-model calls per sample, matching the
    per-step accounting of the solver family.
    """
    if grid.n_steps != coeffs.n_steps:
        raise ValueError(f"grid has {grid.n_steps} steps but coefficients expect "
                         f"{coeffs.n_steps}")
    x = np.asarray(x_init, dtype=float)
    if not np.all(np.isfinite(x)):
        raise DivergenceError("initial state is not finite", step_index=0)

    states = [x]
    diagnostics: list = []
    nfe = 0
    eps_cache: list | None = None
    pred_states: list | None = None
    stage_records: list | None = None

    if coeffs.kind == "ss":
        stage_records = []
        for i in range(1, coeffs.n_steps + 1):
            x, record = ss_step(coeffs, schedule, grid, i, x, model,
                                h_mode=h_mode, diagnostics=diagnostics)
            nfe += coeffs.order
            stage_records.append(record)
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"state diverged at step {i}", step_index=i)
            states.append(x)
    else:
        eps_cache = [_evaluate(model, coeffs, schedule, x, float(grid.score_times[0]),
                               step_index=0)]
        nfe += 1
        if coeffs.kind == "pc":
            pred_states = []
        for i in range(1, coeffs.n_steps + 1):
            history = eps_cache[i - 1 :: -1][: coeffs.q(i)]
            if coeffs.kind == "lms":
                x = lms_step(coeffs, schedule, grid, i, x, history, h_mode)
                if i < coeffs.n_steps:
                    eps_cache.append(
                        _evaluate(model, coeffs, schedule, x, float(grid.score_times[i]),
                                  step_index=i)
                    )
                    nfe += 1
            else:
                correct = final_corrector or i < coeffs.n_steps
                x, new_eval, pred = pc_step(coeffs, schedule, grid, i, x, history,
                                            model, apply_corrector=correct, h_mode=h_mode)
                pred_states.append(pred)
                if correct:
                    eps_cache.append(new_eval)
                    nfe += 1
            if not np.all(np.isfinite(x)):
                raise DivergenceError(f"state diverged at step {i}", step_index=i)
            states.append(x)

    return SolveTrace(states=states, eps_cache=eps_cache, pred_states=pred_states,
                      stage_records=stage_records, nfe_used=nfe, diagnostics=diagnostics,
                      kind=coeffs.kind, h_mode=h_mode, final_corrector=final_corrector)
