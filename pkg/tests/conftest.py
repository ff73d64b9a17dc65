import dataclasses

import numpy as np
import pytest

from slipforge.model import TyreParams, VehicleParams

THETA_STAR = TyreParams(10.0, 1.9, 1.0)
PRIOR = TyreParams(6.0, 1.5, 0.5)


@pytest.fixture
def params():
    return VehicleParams()


@pytest.fixture
def pdict(params):
    return dataclasses.asdict(params)


@pytest.fixture
def theta():
    return THETA_STAR


def random_states(rng, n, params, slip=0.3, speed=(5.0, 40.0), beta=0.3, yaw=1.0,
                  delta=0.5, torque=3000.0):
    """Random in-domain states and inputs.

    Wheel rates are set from target longitudinal slips in ``[-slip, slip]``
    so every state stays above the wheel-rate floor.
    """
    v = rng.uniform(*speed, n)
    b = rng.uniform(-beta, beta, n)
    psi = rng.uniform(-np.pi, np.pi, n)
    psidot = rng.uniform(-yaw, yaw, n)
    d = rng.uniform(-delta, delta, n)
    X = np.empty((n, 8))
    X[:, 0] = rng.uniform(-100, 100, n)
    X[:, 1] = rng.uniform(-100, 100, n)
    X[:, 2] = psi
    X[:, 3] = v * np.cos(psi + b)
    X[:, 4] = v * np.sin(psi + b)
    X[:, 5] = psidot
    v_fx = v * np.cos(b - d) + psidot * params.l_f * np.sin(d)
    v_rx = v * np.cos(b)
    X[:, 6] = v_fx / (params.r_f * (1 + rng.uniform(-slip, slip, n)))
    X[:, 7] = v_rx / (params.r_r * (1 + rng.uniform(-slip, slip, n)))
    U = np.column_stack([d, rng.uniform(-torque, torque, n), rng.uniform(-torque, torque, n)])
    return X, U


def aggressive_state(params):
    """Hard cornering with front braking and rear drive slip."""
    v, beta, psi, psidot, delta = 25.0, 0.1, 0.3, 0.8, 0.2
    X = np.array([1.0, 2.0, psi, v * np.cos(psi + beta), v * np.sin(psi + beta), psidot, 0, 0])
    v_fx = v * np.cos(beta - delta) + psidot * params.l_f * np.sin(delta)
    v_rx = v * np.cos(beta)
    X[6] = v_fx / (params.r_f * 1.05)
    X[7] = v_rx / (params.r_r * 0.93)
    return X, np.array([delta, 150.0, -200.0])
