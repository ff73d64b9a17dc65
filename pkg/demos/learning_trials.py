"""Learning the road from a few laps.

Start from tyre parameters for a very slippery road, drive the two-corner
course, refit the Magic Formula on everything logged so far, and drive
again. Pass a trial count on the command line (default 5).
"""

import sys

from slipforge import TaskConfig, TyreParams, VehicleParams, run_trials
from slipforge.trials import generate_reference, two_corner_course

n = int(sys.argv[1]) if len(sys.argv) > 1 else 5
params = VehicleParams()
truth = TyreParams(10.0, 1.9, 1.0)
prior = TyreParams(6.0, 1.5, 0.5)
ref = generate_reference(two_corner_course(), 0.1)

for r in run_trials(n, ref, TaskConfig(), params, truth, prior):
    th = r.theta_hat
    print(f"trial {r.trial_index:2d}  mse {r.mse:9.5f} m^2  next B {th.B:7.4f} C {th.C:6.4f} "
          f"D {th.D:6.4f}")
