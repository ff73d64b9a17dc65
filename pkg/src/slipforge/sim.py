"""Sub-stepped RK4 integration and the Jacobian stiffness diagnostic."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from slipforge import _kernels
from slipforge.errors import ConfigError, ModelDomainError
from slipforge.model import (
    TyreParams,
    VehicleParams,
    as_input_array,
    as_state_array,
    state_derivative,
)

# rows/columns of the stiffness Jacobian: psi, xdot, ydot, psidot, omega_f, omega_r
JACOBIAN_STATES = (2, 3, 4, 5, 6, 7)
FD_REL_STEP = 1e-5


@dataclass(frozen=True)
class SimConfig:
    dt: float = 0.1
    substeps: int = 100
    horizon_time: float = 30.0  # cap on closed-loop episode length

    def __post_init__(self) -> None:
        if not self.dt > 0:
            raise ConfigError(f"dt must be positive, got {self.dt}")
        if int(self.substeps) != self.substeps or self.substeps < 1:
            raise ConfigError(f"substeps must be a positive integer, got {self.substeps}")
        if not self.horizon_time > 0:
            raise ConfigError(f"horizon_time must be positive, got {self.horizon_time}")


@dataclass(frozen=True)
class StiffnessReport:
    jacobian: np.ndarray
    eigenvalues: np.ndarray
    lambda_max_abs: float
    lambda_min_abs: float
    ratio: float


def rk4(f, y, h):
    """One classical Runge-Kutta step of ``y' = f(y)``."""
    k1 = f(y)
    k2 = f(y + 0.5 * h * k1)
    k3 = f(y + 0.5 * h * k2)
    k4 = f(y + h * k3)
    return y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def rk4_step(state, u, h: float, params: VehicleParams, theta: TyreParams) -> np.ndarray:
    """Advance the full model by ``h`` seconds with ``u`` held constant."""
    if not h > 0:
        raise ValueError(f"step size must be positive, got {h}")
    U = as_input_array(u)
    return rk4(lambda X: state_derivative(X, U, params, theta), as_state_array(state), h)


def step_interval(state, u, cfg: SimConfig, params: VehicleParams, theta: TyreParams,
                  trace: bool = False):
    """Advance one control interval under zero-order hold.

    With ``trace=True`` the states at every sub-step boundary are returned as
    an array of shape ``(substeps + 1, 8)`` instead of only the final state.
    """
    U = np.ascontiguousarray(as_input_array(u), dtype=float)
    X = as_state_array(state)
    if X.shape != (8,) or U.shape != (3,):
        raise ValueError("step_interval advances a single state")
    h = cfg.dt / cfg.substeps
    out = np.empty((cfg.substeps + 1, 8))
    status, k = _kernels.integrate(np.asarray(X, dtype=float), U, h, cfg.substeps,
                                   _kernels.pack_params(params), theta.to_array(), out)
    if status == _kernels.DOMAIN:
        # replay through the reference model for the precise error
        try:
            rk4_step(out[k], U, h, params, theta)
        except ModelDomainError as exc:
            raise type(exc)(f"sub-step {k}: {exc}") from exc
        raise ModelDomainError(f"sub-step {k}: left the model domain")
    if status == _kernels.NONFINITE:
        raise ModelDomainError(f"sub-step {k}: state became non-finite")
    return out if trace else out[-1].copy()


def _fd_steps(X: np.ndarray) -> np.ndarray:
    return FD_REL_STEP * np.maximum(1.0, np.abs(X[list(JACOBIAN_STATES)]))


def jacobian_matrix(f, X: np.ndarray, steps: np.ndarray) -> np.ndarray:
    """Central-difference Jacobian of ``f(X)[rows]`` with respect to ``X[cols]``.

    ``f`` returns the full 8-vector derivative; both the selected outputs and
    the perturbed inputs are the six entries in ``JACOBIAN_STATES``.
    """
    idx = list(JACOBIAN_STATES)
    J = np.empty((len(idx), len(idx)))
    for j, (col, d) in enumerate(zip(idx, steps)):
        Xp = X.copy()
        Xm = X.copy()
        Xp[col] += d
        Xm[col] -= d
        # output psi-row is psidot, i.e. derivative index 2
        J[:, j] = (f(Xp)[idx] - f(Xm)[idx]) / (2 * d)
    return J


def stiffness_report(J: np.ndarray) -> StiffnessReport:
    eig = np.linalg.eigvals(J)
    mags = np.abs(eig)
    lo, hi = float(mags.min()), float(mags.max())
    ratio = hi / lo if lo > 0 else np.inf
    return StiffnessReport(J, eig, hi, lo, ratio)


def jacobian(state, u, params: VehicleParams, theta: TyreParams, steps=None) -> StiffnessReport:
    """Jacobian of ``[psidot, xddot, yddot, psiddot, omegadot_f, omegadot_r]``.

    Differentiated with respect to ``[psi, xdot, ydot, psidot, omega_f, omega_r]``
    by central differences, together with the eigenvalue-magnitude spread.
    """
    X = as_state_array(state).astype(float)
    U = as_input_array(u)
    if steps is None:
        steps = _fd_steps(X)
    J = jacobian_matrix(lambda Z: state_derivative(Z, U, params, theta), X, np.asarray(steps))
    return stiffness_report(J)
