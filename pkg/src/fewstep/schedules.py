"""Noise schedules, the log-SNR change of variables, and exponential-integrator helpers.

A schedule fixes the forward perturbation kernel ``p(x_t | x_0) = N(alpha_t x_0,
sigma_t^2 I)`` on ``[t_min, T]`` and everything derived from it: the log-SNR
``lam(t) = log(alpha_t / sigma_t)``, the drift/diffusion coefficients of the
probability-flow ODE, and the phi functions that appear when the ODE is solved
in the log-SNR variable.  All schedules here are smooth with strictly
decreasing SNR, so ``lam`` is strictly decreasing and invertible; the inverse
is computed by bisection in ``log t`` so every schedule kind shares one path.

Solving runs from ``T`` down to ``t_min`` (never to 0, for numerical
stability); ``tilde_sigma`` is the noise scale of the terminal marginal used
to draw initial states.
"""

from __future__ import annotations

import dataclasses
import math

import numpy as np
from scipy.integrate import solve_ivp

from .errors import DomainError, NumericalError

# Bisection budget for inverting lam(t); performed in log t so the resolution
# is uniform across schedules with wide time ranges.
_BISECT_ITERS = 50

# Below this |h| the closed forms of the phi functions cancel catastrophically
# in double precision; switch to the (rapidly convergent) Taylor series.
PHI_SERIES_CUTOFF = 1e-4
_PHI_SERIES_TERMS = 10


@dataclasses.dataclass(frozen=True)
class NoiseSchedule:
    """Base class; concrete kinds implement ``alpha/sigma`` and their t-derivatives."""

    T: float = 1.0
    t_min: float = 1e-3
    tilde_sigma: float | None = None

    def __post_init__(self):
        if not (0.0 < self.t_min < self.T):
            raise DomainError(f"need 0 < t_min < T, got t_min={self.t_min}, T={self.T}")
        if self.tilde_sigma is None:
            object.__setattr__(self, "tilde_sigma", self._default_tilde_sigma())
        if self.tilde_sigma <= 0.0:
            raise DomainError(f"tilde_sigma must be positive, got {self.tilde_sigma}")

    # -- schedule-specific primitives ------------------------------------
    def alpha(self, t):
        raise NotImplementedError

    def sigma(self, t):
        raise NotImplementedError

    def d_alpha(self, t):
        """dalpha/dt."""
        raise NotImplementedError

    def d_sigma(self, t):
        """dsigma/dt."""
        raise NotImplementedError

    def _default_tilde_sigma(self) -> float:
        return float(self.sigma(self.T))

    # -- derived quantities ----------------------------------------------
    def lam(self, t):
        """Log signal-to-noise ratio log(alpha_t / sigma_t)."""
        return np.log(self.alpha(t)) - np.log(self.sigma(t))

    def d_lam(self, t):
        return self.d_alpha(t) / self.alpha(t) - self.d_sigma(t) / self.sigma(t)

    def kappa(self, t):
        """Noise-to-signal ratio sigma_t / alpha_t (strictly increasing)."""
        return self.sigma(t) / self.alpha(t)

    def f(self, t):
        """Drift coefficient d log(alpha_t) / dt of the probability-flow ODE."""
        return self.d_alpha(t) / self.alpha(t)

    def g_sq(self, t):
        """Squared diffusion coefficient d(sigma_t^2)/dt - 2 f(t) sigma_t^2."""
        s = self.sigma(t)
        return 2.0 * s * self.d_sigma(t) - 2.0 * self.f(t) * s * s

    def check_time(self, t):
        """Validate t in [t_min, T] (tiny fp slack) and return it clipped exactly."""
        t = np.asarray(t, dtype=float)
        slack = 1e-9 * (self.T - self.t_min)
        if np.any(t < self.t_min - slack) or np.any(t > self.T + slack):
            raise DomainError(
                f"time {t} outside schedule domain [{self.t_min}, {self.T}]"
            )
        return np.clip(t, self.t_min, self.T)

    def alpha_sigma_lambda(self, t):
        """Return (alpha_t, sigma_t, lambda_t); raises DomainError off-domain."""
        t = self.check_time(t)
        return self.alpha(t), self.sigma(t), self.lam(t)

    def lambda_range(self):
        """(lam(T), lam(t_min)) — the increasing span traversed by reverse solves."""
        return float(self.lam(self.T)), float(self.lam(self.t_min))

    def time_from_lambda(self, lam_target, tol=1e-10):
        """Invert lam(t) by monotone bisection in log t to |dlam| <= tol."""
        lam_lo, lam_hi = self.lambda_range()
        slack = 1e-9 * (lam_hi - lam_lo)
        lam_target = float(lam_target)
        if lam_target < lam_lo - slack or lam_target > lam_hi + slack:
            raise DomainError(
                f"lambda {lam_target} outside [{lam_lo}, {lam_hi}]"
            )
        if lam_target <= lam_lo:
            return self.T
        if lam_target >= lam_hi:
            return self.t_min
        # lam decreases in t, hence increases toward lo_log.
        lo, hi = math.log(self.t_min), math.log(self.T)
        for _ in range(_BISECT_ITERS):
            mid = 0.5 * (lo + hi)
            if float(self.lam(math.exp(mid))) > lam_target:
                lo = mid
            else:
                hi = mid
        t = math.exp(0.5 * (lo + hi))
        if abs(float(self.lam(t)) - lam_target) > tol:
            raise NumericalError(
                "lambda inversion did not reach tolerance",
                {"target": lam_target, "achieved": float(self.lam(t)), "tol": tol},
            )
        return t

    def time_from_kappa(self, kappa_target):
        """Invert kappa(t) = sigma_t/alpha_t via kappa = exp(-lam)."""
        return self.time_from_lambda(-math.log(float(kappa_target)))


@dataclasses.dataclass(frozen=True)
class VpLinearSchedule(NoiseSchedule):
    """Variance-preserving schedule with beta(t) linear in t.

    alpha_t = exp(-1/2 int_0^t beta), sigma_t = sqrt(1 - alpha_t^2).  The
    beta range follows the common convention for this family; it is a config
    default, not a claim about any particular pretrained model.
    """

    beta_min: float = 0.1
    beta_max: float = 20.0

    def beta(self, t):
        return self.beta_min + (self.beta_max - self.beta_min) * (t / self.T)

    def _log_alpha(self, t):
        return -0.5 * self.beta_min * t - (self.beta_max - self.beta_min) * t * t / (4.0 * self.T)

    def alpha(self, t):
        return np.exp(self._log_alpha(t))

    def sigma(self, t):
        return np.sqrt(-np.expm1(2.0 * self._log_alpha(t)))

    def d_alpha(self, t):
        return -0.5 * self.beta(t) * self.alpha(t)

    def d_sigma(self, t):
        a = self.alpha(t)
        return 0.5 * self.beta(t) * a * a / self.sigma(t)

    def _default_tilde_sigma(self) -> float:
        return 1.0


@dataclasses.dataclass(frozen=True)
class VeSchedule(NoiseSchedule):
    """Variance-exploding schedule: alpha = 1, sigma_t = t."""

    T: float = 10.0
    t_min: float = 0.01

    def alpha(self, t):
        return np.ones_like(np.asarray(t, dtype=float))

    def sigma(self, t):
        return np.asarray(t, dtype=float)

    def d_alpha(self, t):
        return np.zeros_like(np.asarray(t, dtype=float))

    def d_sigma(self, t):
        return np.ones_like(np.asarray(t, dtype=float))


@dataclasses.dataclass(frozen=True)
class EdmSchedule(VeSchedule):
    """Same process as VeSchedule but with the wide time range conventional
    for this parametrization (t in [0.002, 80])."""

    T: float = 80.0
    t_min: float = 0.002


SCHEDULE_KINDS = {
    "vp_linear": VpLinearSchedule,
    "ve": VeSchedule,
    "edm": EdmSchedule,
}


@dataclasses.dataclass(frozen=True)
class OdeCoefficients:
    """Drift f(t) and squared diffusion g^2(t) of the probability-flow ODE."""

    f_t: float
    g_sq_t: float


def ode_coefficients(schedule: NoiseSchedule, t) -> OdeCoefficients:
    t = schedule.check_time(t)
    return OdeCoefficients(f_t=float(schedule.f(t)), g_sq_t=float(schedule.g_sq(t)))


@dataclasses.dataclass(frozen=True)
class PhiTable:
    """phi_1(h) ... phi_order(h) for one step h.

    phi_k(z) = int_0^1 e^{(1-u) z} u^{k-1}/(k-1)! du, with phi_k(0) = 1/k! and
    the recurrence phi_{k+1}(z) = (phi_k(z) - phi_k(0)) / z.
    """

    order: int
    h: float
    values: np.ndarray


def phi_functions(h: float, order: int) -> PhiTable:
    """Evaluate phi_1..phi_order at h, switching to the series for small |h|."""
    if order < 1:
        raise ValueError(f"order must be >= 1, got {order}")
    h = float(h)
    values = np.empty(order)
    if abs(h) < PHI_SERIES_CUTOFF:
        for k in range(1, order + 1):
            acc = 0.0
            term_fact = math.factorial(k)
            # phi_k(h) = sum_n h^n / (n + k)!
            hp = 1.0
            for n in range(_PHI_SERIES_TERMS):
                acc += hp / term_fact
                hp *= h
                term_fact *= n + k + 1
            values[k - 1] = acc
    else:
        # Upward recurrence (phi_{k+1} = (phi_k - phi_k(0))/h) cancels badly for
        # moderate h, so evaluate the top order from its defining integral and
        # recurse downward, which is stable.
        nodes, weights = np.polynomial.legendre.leggauss(32)
        u = 0.5 * (nodes + 1.0)
        top = 0.5 * float(
            np.dot(weights, np.exp((1.0 - u) * h) * u ** (order - 1))
        ) / math.factorial(order - 1)
        values[order - 1] = top
        for k in range(order - 1, 0, -1):
            values[k - 1] = h * values[k] + 1.0 / math.factorial(k)
    return PhiTable(order=order, h=h, values=values)


def exact_step_integrand(
    schedule: NoiseSchedule,
    x_prev: np.ndarray,
    t_prev: float,
    t_next: float,
    eps_fn,
    rtol: float = 1e-10,
    atol: float = 1e-12,
    quad_nodes: int = 48,
    agreement_tol: float = 1e-8,
) -> np.ndarray:
    """Reference one-step solution via the exact log-SNR integral form.

    Integrates the noise-prediction term against e^{-lam} with Gauss-Legendre
    quadrature along a tightly-resolved trajectory.  This is the slow oracle
    the fast solvers are tested against, not a sampling path.
    """
    if not t_next < t_prev:
        raise ValueError("exact step requires t_next < t_prev (reverse time)")
    t_prev = float(schedule.check_time(t_prev))
    t_next = float(schedule.check_time(t_next))
    x_prev = np.asarray(x_prev, dtype=float)
    lam_p = float(schedule.lam(t_prev))
    lam_n = float(schedule.lam(t_next))

    def rhs(lam, y):
        t = schedule.time_from_lambda(lam)
        x = y.reshape(x_prev.shape)
        dloga = float(schedule.f(t)) / float(schedule.d_lam(t))
        dx = dloga * x - float(schedule.sigma(t)) * eps_fn(x, t)
        return dx.ravel()

    sol = solve_ivp(
        rhs, (lam_p, lam_n), x_prev.ravel(), method="RK45",
        rtol=rtol, atol=atol, dense_output=True,
    )
    if not sol.success:
        raise NumericalError("trajectory resolution failed", {"message": sol.message})

    alpha_p = float(schedule.alpha(t_prev))
    alpha_n = float(schedule.alpha(t_next))

    def quadrature(n_nodes):
        nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
        mid, half = 0.5 * (lam_p + lam_n), 0.5 * (lam_n - lam_p)
        total = np.zeros_like(x_prev)
        for z, w in zip(nodes, weights):
            lam = mid + half * z
            t = schedule.time_from_lambda(lam)
            x = sol.sol(lam).reshape(x_prev.shape)
            total += w * math.exp(-lam) * eps_fn(x, t)
        return half * total

    q_hi = quadrature(quad_nodes)
    q_lo = quadrature(max(8, quad_nodes // 2))
    deviation = float(np.max(np.abs(q_hi - q_lo)))
    scale = max(1.0, float(np.max(np.abs(q_hi))))
    if deviation > agreement_tol * scale:
        raise NumericalError(
            "quadrature did not converge",
            {"deviation": deviation, "nodes": quad_nodes, "tol": agreement_tol},
        )
    return (alpha_n / alpha_p) * x_prev - alpha_n * q_hi
