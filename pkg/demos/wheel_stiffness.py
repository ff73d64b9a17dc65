"""Why the wheels and the body need different controllers.

Linearise the full model at a few points of the default course and print
the eigenvalue spread. Wheel-spin modes sit hundreds of times per second,
while pose modes sit near zero on straights, so a single RK4 step of 0.1 s
blows up even though 100 sub-steps are stable.
"""

import numpy as np

from slipforge import SimConfig, TyreParams, VehicleParams, jacobian, step_interval
from slipforge.errors import ModelDomainError
from slipforge.model import free_rolling_rates
from slipforge.trials import generate_reference, two_corner_course

params = VehicleParams()
theta = TyreParams(10.0, 1.9, 1.0)
ref = generate_reference(two_corner_course(), 0.1)

print("  k   lambda_max   lambda_min        ratio")
for k in (0, 30, 60, 90, 120, 185):
    X = np.concatenate([ref.states[k], [0.0, 0.0]])
    X[6], X[7] = free_rolling_rates(X, 0.0, params)
    rep = jacobian(X, [0, 0, 0], params, theta)
    print(f"{k:3d} {rep.lambda_max_abs:12.4g} {rep.lambda_min_abs:12.4g} {rep.ratio:12.4g}")

X = np.concatenate([ref.states[0], [0.0, 0.0]])
X[6], X[7] = free_rolling_rates(X, 0.0, params)
X[7] *= 1.05  # some rear drive slip
U = [0.05, 0.0, 400.0]
fine = step_interval(X, U, SimConfig(0.1, 100), params, theta)
print("\n100 sub-steps: wheel rates", np.round(fine[6:], 3))
try:
    coarse = step_interval(X, U, SimConfig(0.1, 1), params, theta)
    print("one sub-step:  wheel rates", np.round(coarse[6:], 3))
except ModelDomainError as exc:
    print("one sub-step:  left the model domain:", exc)
