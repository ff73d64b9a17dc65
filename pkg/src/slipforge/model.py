"""Bicycle model with tyre slip and load transfer.

Every function here is pure and accepts either scalars or numpy arrays that
broadcast against each other, so the same code drives the single-state
simulator and the batched estimator. A full state is the 8-vector
``[x, y, psi, xdot, ydot, psidot, omega_f, omega_r]`` and an input is
``[delta, T_f, T_r]``; both may carry leading batch dimensions.
"""

from __future__ import annotations

from dataclasses import astuple, dataclass, fields
from typing import NamedTuple

import numpy as np

from slipforge.errors import (
    ConfigError,
    LoadTransferSingularityError,
    SpeedBelowFloorError,
    WheelRateBelowFloorError,
)

OMEGA_MIN = 0.1  # rad/s
V_MIN = 0.1  # m/s
S_EPS = 1e-9
DENOM_EPS = 1e-6  # m

STATE_NAMES = ("x", "y", "psi", "xdot", "ydot", "psidot", "omega_f", "omega_r")
INPUT_NAMES = ("delta", "T_f", "T_r")


@dataclass(frozen=True)
class VehicleParams:
    """Geometric and mechanical constants of the car.

    The defaults are representative of a large saloon; they are placeholders,
    not measured data.
    """

    m: float = 1845.0
    I_z: float = 3500.0
    I_f: float = 1.8
    I_r: float = 1.8
    r_f: float = 0.33
    r_r: float = 0.33
    l_f: float = 1.42
    l_r: float = 1.51
    h: float = 0.45
    g: float = 9.81

    def __post_init__(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not np.isfinite(value) or value <= 0:
                raise ConfigError(f"VehicleParams.{f.name} must be positive, got {value}")
        if self.h >= self.l_f + self.l_r:
            raise ConfigError("CoM height must be below the wheelbase for load transfer")

    @property
    def wheelbase(self) -> float:
        return self.l_f + self.l_r


@dataclass(frozen=True)
class TyreParams:
    """Magic Formula stiffness, shape and peak factors."""

    B: float
    C: float
    D: float

    def __post_init__(self) -> None:
        if not (0 < self.B <= 50):
            raise ConfigError(f"B must lie in (0, 50], got {self.B}")
        if not (1 < self.C <= 4):
            raise ConfigError(f"C must lie in (1, 4], got {self.C}")
        if not (0 < self.D <= 2):
            raise ConfigError(f"D must lie in (0, 2], got {self.D}")

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, a) -> TyreParams:
        B, C, D = (float(v) for v in a)
        return cls(B, C, D)

    @property
    def peak_slip(self) -> float:
        """Total slip at which the friction curve peaks."""
        return float(np.tan(np.pi / (2 * self.C)) / self.B)


@dataclass(frozen=True)
class FullState:
    x: float
    y: float
    psi: float
    xdot: float
    ydot: float
    psidot: float
    omega_f: float
    omega_r: float

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, a) -> FullState:
        return cls(*(float(v) for v in a))


@dataclass(frozen=True)
class ControlInput:
    delta: float
    T_f: float
    T_r: float

    def to_array(self) -> np.ndarray:
        return np.array(astuple(self), dtype=float)

    @classmethod
    def from_array(cls, a) -> ControlInput:
        return cls(*(float(v) for v in a))


class WheelKinematics(NamedTuple):
    v: np.ndarray
    beta: np.ndarray
    v_fx_w: np.ndarray
    v_fy_w: np.ndarray
    v_rx_b: np.ndarray
    v_ry_b: np.ndarray


class SlipState(NamedTuple):
    s_fx: np.ndarray
    s_fy: np.ndarray
    s_rx: np.ndarray
    s_ry: np.ndarray
    s_f: np.ndarray
    s_r: np.ndarray


class FrictionState(NamedTuple):
    mu_fx: np.ndarray
    mu_fy: np.ndarray
    mu_rx: np.ndarray
    mu_ry: np.ndarray
    f_fz: np.ndarray
    f_rz: np.ndarray
    f_fx_w: np.ndarray
    f_fy_w: np.ndarray
    f_rx_b: np.ndarray
    f_ry_b: np.ndarray


def as_state_array(state) -> np.ndarray:
    if isinstance(state, FullState):
        return state.to_array()
    return np.asarray(state, dtype=float)


def as_input_array(u) -> np.ndarray:
    if isinstance(u, ControlInput):
        return u.to_array()
    return np.asarray(u, dtype=float)


def wrap_angle(a):
    """Wrap angles to (-pi, pi]."""
    return np.pi - np.mod(np.pi - a, 2 * np.pi)


def kinematics(state, delta, params: VehicleParams) -> WheelKinematics:
    """Speed, sideslip and contact-patch velocities of both wheels.

    Front velocities are resolved in the steered wheel frame, rear velocities
    in the body frame.

    Raises:
        SpeedBelowFloorError: if the planar speed is at or below ``V_MIN``.
    """
    X = as_state_array(state)
    psi, xdot, ydot, psidot = X[..., 2], X[..., 3], X[..., 4], X[..., 5]
    v = np.hypot(xdot, ydot)
    if np.any(v <= V_MIN):
        raise SpeedBelowFloorError(f"speed {np.min(v):.4g} m/s is below the floor {V_MIN}")
    beta = wrap_angle(np.arctan2(ydot, xdot) - psi)
    v_fx_w = v * np.cos(beta - delta) + psidot * params.l_f * np.sin(delta)
    v_fy_w = v * np.sin(beta - delta) + psidot * params.l_f * np.cos(delta)
    v_rx_b = v * np.cos(beta)
    v_ry_b = v * np.sin(beta) - psidot * params.l_r
    return WheelKinematics(v, beta, v_fx_w, v_fy_w, v_rx_b, v_ry_b)


def slip_ratios(kin: WheelKinematics, omega_f, omega_r, params: VehicleParams) -> SlipState:
    """Longitudinal, lateral and total slip ratios of both wheels.

    Raises:
        WheelRateBelowFloorError: if either wheel spins slower than ``OMEGA_MIN``.
    """
    omega_f = np.asarray(omega_f, dtype=float)
    omega_r = np.asarray(omega_r, dtype=float)
    if np.any(omega_f < OMEGA_MIN) or np.any(omega_r < OMEGA_MIN):
        lo = min(np.min(omega_f), np.min(omega_r))
        raise WheelRateBelowFloorError(f"wheel rate {lo:.4g} rad/s is below the floor {OMEGA_MIN}")
    wf = omega_f * params.r_f
    wr = omega_r * params.r_r
    s_fx = (kin.v_fx_w - wf) / wf
    s_fy = kin.v_fy_w / wf
    s_rx = (kin.v_rx_b - wr) / wr
    s_ry = kin.v_ry_b / wr
    return SlipState(s_fx, s_fy, s_rx, s_ry, np.hypot(s_fx, s_fy), np.hypot(s_rx, s_ry))


def friction_magnitude(s, theta: TyreParams):
    """Friction coefficient magnitude produced by total slip ``s``."""
    return theta.D * np.sin(theta.C * np.arctan(theta.B * s))


def _mu_components(sx, sy, s, theta: TyreParams):
    small = s < S_EPS
    scale = np.where(small, 0.0, friction_magnitude(s, theta) / np.where(small, 1.0, s))
    return -sx * scale, -sy * scale


def magic_formula(slips: SlipState, theta: TyreParams):
    """Friction coefficients ``(mu_fx, mu_fy, mu_rx, mu_ry)``, each opposing its slip."""
    mu_fx, mu_fy = _mu_components(slips.s_fx, slips.s_fy, slips.s_f, theta)
    mu_rx, mu_ry = _mu_components(slips.s_rx, slips.s_ry, slips.s_r, theta)
    return mu_fx, mu_fy, mu_rx, mu_ry


def normal_forces(mu, delta, params: VehicleParams):
    """Front and rear normal loads including longitudinal load transfer.

    Raises:
        LoadTransferSingularityError: if the shared denominator collapses.
    """
    mu_fx, mu_fy, mu_rx, _ = mu
    front_long = mu_fx * np.cos(delta) - mu_fy * np.sin(delta)
    denom = params.l_f + params.l_r + (front_long - mu_rx) * params.h
    if np.any(denom <= DENOM_EPS):
        raise LoadTransferSingularityError(f"load-transfer denominator {np.min(denom):.3g} m")
    mg = params.m * params.g
    f_fz = (params.l_r - mu_rx * params.h) / denom * mg
    f_rz = (params.l_f + front_long * params.h) / denom * mg
    return f_fz, f_rz


def tyre_forces(state, u, params: VehicleParams, theta: TyreParams) -> FrictionState:
    """Friction coefficients, normal loads and friction forces at ``(state, u)``."""
    X = as_state_array(state)
    U = as_input_array(u)
    delta = U[..., 0]
    kin = kinematics(X, delta, params)
    slips = slip_ratios(kin, X[..., 6], X[..., 7], params)
    mu = magic_formula(slips, theta)
    f_fz, f_rz = normal_forces(mu, delta, params)
    mu_fx, mu_fy, mu_rx, mu_ry = mu
    return FrictionState(
        mu_fx, mu_fy, mu_rx, mu_ry, f_fz, f_rz,
        mu_fx * f_fz, mu_fy * f_fz, mu_rx * f_rz, mu_ry * f_rz,
    )


def state_derivative(state, u, params: VehicleParams, theta: TyreParams) -> np.ndarray:
    """Time derivative of the full 8-dimensional state under input ``u``."""
    X = as_state_array(state)
    U = as_input_array(u)
    fr = tyre_forces(X, U, params, theta)
    psi = X[..., 2]
    delta, T_f, T_r = U[..., 0], U[..., 1], U[..., 2]
    cpd, spd = np.cos(psi + delta), np.sin(psi + delta)
    cp, sp = np.cos(psi), np.sin(psi)
    xdd = (fr.f_fx_w * cpd - fr.f_fy_w * spd + fr.f_rx_b * cp - fr.f_ry_b * sp) / params.m
    ydd = (fr.f_fx_w * spd + fr.f_fy_w * cpd + fr.f_rx_b * sp + fr.f_ry_b * cp) / params.m
    psidd = (
        (fr.f_fy_w * np.cos(delta) + fr.f_fx_w * np.sin(delta)) * params.l_f - fr.f_ry_b * params.l_r
    ) / params.I_z
    wfd = (T_f - fr.f_fx_w * params.r_f) / params.I_f
    wrd = (T_r - fr.f_rx_b * params.r_r) / params.I_r
    return np.stack([X[..., 3], X[..., 4], X[..., 5], xdd, ydd, psidd, wfd, wrd], axis=-1)


def free_rolling_rates(state, delta, params: VehicleParams):
    """Wheel rates that zero both longitudinal slips at ``state``."""
    kin = kinematics(state, delta, params)
    return kin.v_fx_w / params.r_f, kin.v_rx_b / params.r_r
