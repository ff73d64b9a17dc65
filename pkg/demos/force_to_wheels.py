"""From a body-force request to steering and torques.

The body MPC asks for friction forces on each axle. The inversion turns the
front request into a steering angle and target slips, the rear request into
target slips, and both into wheel torques. Applying the inputs to the true
model shows how close the realised forces come.
"""

import numpy as np

from slipforge import TyreParams, VehicleParams, force_to_input
from slipforge.model import kinematics, tyre_forces

params = VehicleParams()
theta = TyreParams(10.0, 1.9, 1.0)
# slight inward sideslip, so the rear axle can push toward the corner centre
v, beta, psidot = 25.0, -0.01, 0.25
X = np.array([0, 0, 0, v * np.cos(beta), v * np.sin(beta), psidot, 0, 0])
X[6] = X[7] = v / params.r_f

demand = np.array([-300.0, 200.0, 4000.0, 3500.0])  # f_fx_b, f_rx_b, f_fy_b, f_ry_b
u, rep = force_to_input(demand, X, params, theta, dt=0.1)
t = rep.targets
print(f"steer {u.delta:.5f} rad, T_f {u.T_f:.1f} N m, T_r {u.T_r:.1f} N m")
print(f"front saturated {rep.front_saturated}, rear fallback {rep.rear_fallback}")
print(f"front slips ({t.s_fx:.5f}, {t.s_fy:.5f}), rear slips ({t.s_rx:.5f}, {t.s_ry:.5f})")

# put both wheels on their target slips and evaluate the true tyre forces
kin = kinematics(X, u.delta, params)
X[6] = float(kin.v_fx_w) / (params.r_f * (1 + t.s_fx))
X[7] = float(kin.v_rx_b) / (params.r_r * (1 + t.s_rx))
fs = tyre_forces(X, u.to_array(), params, theta)
c, s = np.cos(u.delta), np.sin(u.delta)
front = (c * fs.f_fx_w - s * fs.f_fy_w, s * fs.f_fx_w + c * fs.f_fy_w)
print("front demanded", demand[[0, 2]], "realised", np.round(np.array(front, dtype=float), 1))
rear = np.array([fs.f_rx_b, fs.f_ry_b], dtype=float)
print("rear direction demanded", np.round(np.arctan2(demand[3], demand[1]), 6),
      "realised", np.round(np.arctan2(rear[1], rear[0]), 6),
      "(only the direction is controlled)")
