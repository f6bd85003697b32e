"""Walk through the noise schedules and the log-SNR machinery.

Every solver in this package lives in the log-SNR variable lambda(t) =
log(alpha_t / sigma_t).  This script shows the three schedule kinds, the
round trip between t and lambda, the phi functions of the exponential
integrator, and the slow reference step used as a test oracle.
"""

import numpy as np

from fewstep import (EdmSchedule, VeSchedule, VpLinearSchedule,
                     exact_step_integrand, ode_coefficients, phi_functions)
from fewstep.scores import GaussianMixtureScore

print("=== Schedule kinds ===")
for schedule in (VpLinearSchedule(), VeSchedule(), EdmSchedule()):
    lam_lo, lam_hi = schedule.lambda_range()
    print(f"{type(schedule).__name__:<18} t in [{schedule.t_min:g}, {schedule.T:g}]  "
          f"lambda in [{lam_lo:+.2f}, {lam_hi:+.2f}]  tilde_sigma={schedule.tilde_sigma:g}")

print("\n=== t <-> lambda round trip (VP schedule) ===")
vp = VpLinearSchedule()
worst = max(abs(vp.time_from_lambda(float(vp.lam(t))) - t)
            for t in np.linspace(vp.t_min, vp.T, 500))
print(f"worst |t - t_lambda(lambda(t))| over 500 samples: {worst:.2e}")

print("\n=== Probability-flow ODE coefficients at a few times ===")
for t in (0.1, 0.5, 0.9):
    c = ode_coefficients(vp, t)
    print(f"t={t}: drift f(t)={c.f_t:+.4f}  diffusion g^2(t)={c.g_sq_t:+.4f}")

print("\n=== phi functions ===")
print("phi_k(0) = 1/k!:", phi_functions(0.0, 4).values)
for h in (0.5, 2.0):
    table = phi_functions(h, 3).values
    recur = (table[0] - 1.0) / h
    print(f"h={h}: phi_1..3 = {np.round(table, 6)}  "
          f"recurrence check |phi_2 - (phi_1 - 1)/h| = {abs(table[1] - recur):.1e}")

print("\n=== Reference step vs. the closed-form Gaussian flow ===")
ve = VeSchedule()
model = GaussianMixtureScore.isotropic(2, scale=1.0)
from fewstep.teachers import exact_gaussian_solution

x_T = ve.tilde_sigma * np.array([0.4, -0.2])
x_mid = exact_gaussian_solution(ve, model, x_T, t_end=6.0)   # flow down to t=6
out = exact_step_integrand(ve, x_mid, 6.0, 2.0, model.epsilon_fn(ve))
expected = exact_gaussian_solution(ve, model, x_T, t_end=2.0)
print(f"one reference step 6.0 -> 2.0: {np.round(out, 8)}")
print(f"closed-form flow value:        {np.round(expected, 8)}")
print(f"agreement: {np.linalg.norm(out - expected):.2e}")
