"""Fast-timescale conversion of desired body forces into steering and torques.

Body motion is treated as frozen over one control interval. Rear slips follow
in closed form from the demanded force direction and the rear contact
velocity; the steering angle is found by root-finding so that the front total
slip produces the demanded force magnitude; wheel torques then drive the
mid-interval wheel rate to the value that realises each longitudinal slip.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from slipforge.errors import (
    FrictionLimitError,
    InfeasibleDirectionError,
    InversionError,
    NoRootError,
    TargetSlipError,
)
from slipforge.model import (
    ControlInput,
    TyreParams,
    VehicleParams,
    WheelKinematics,
    as_state_array,
    friction_magnitude,
    kinematics,
)

F_EPS = 1.0  # N
V_LAT_EPS = 1e-3  # m/s
MARGIN = 0.02
DIRECTION_EPS = 1e-9
SLIP_EPS = 1e-6
ROOT_TOL = 1e-8
MAX_ROOT_ITERS = 200
SCAN_POINTS = 721


@dataclass(frozen=True)
class InputLimits:
    delta_max: float = 0.6  # rad
    torque_max: float = 6000.0  # N*m


@dataclass(frozen=True)
class SlipTargets:
    delta: float
    s_fx: float
    s_fy: float
    s_rx: float = 0.0
    s_ry: float = 0.0
    residual: float = 0.0  # friction-coefficient residual of the steering solve
    branch: str = "generic"


@dataclass
class InversionReport:
    targets: SlipTargets | None = None
    f_fz: float = float("nan")
    f_rz: float = float("nan")
    front_saturated: bool = False
    rear_fallback: bool = False
    steer_fallback: bool = False
    clamped: list[str] = field(default_factory=list)


def inverse_friction(mu, theta: TyreParams):
    """Smallest total slip whose friction magnitude equals ``mu``.

    This is the pre-peak branch of the Magic Formula; ``mu`` must lie in
    ``[0, D)``.
    """
    mu = np.asarray(mu, dtype=float)
    if np.any(mu < 0) or np.any(mu >= theta.D):
        raise FrictionLimitError(f"friction coefficient {np.max(mu):.4g} outside [0, {theta.D})")
    return np.tan(np.arcsin(mu / theta.D) / theta.C) / theta.B


def demanded_normal_forces(f_fx_b, f_rx_b, params: VehicleParams):
    """Axle loads implied by the demanded longitudinal body forces.

    Equivalent to the load-transfer formulas once friction coefficients are
    multiplied back into forces, so it needs no tyre parameters.
    """
    mg = params.m * params.g
    L = params.wheelbase
    Fx = f_fx_b + f_rx_b
    f_fz = (params.l_r * mg - params.h * Fx) / L
    return f_fz, mg - f_fz


def _ray_slip(vx, vy, fx, fy):
    """Slip vector along the kinematic ray that is parallel to force ``(fx, fy)``.

    With ``k = 1/(omega*r)`` the slip is ``(vx*k - 1, vy*k)``; ``k`` is chosen
    so the slip is parallel to the force. Returns ``(sx, sy, k)``.
    """
    den = vx * fy - vy * fx
    with np.errstate(divide="ignore", invalid="ignore"):
        k = np.where(den != 0, fy / np.where(den != 0, den, 1.0), np.nan)
    return vx * k - 1.0, vy * k, k


def _valid_ray(sx, sy, k, fx, fy):
    return np.isfinite(k) & (k > 0) & (sx * fx + sy * fy < 0)


def invert_rear(f_rx_b: float, f_ry_b: float, kin: WheelKinematics,
                theta_hat: TyreParams | None = None, f_rz: float | None = None):
    """Rear slips whose Magic Formula force points along the demanded force.

    Only the direction is controlled; the magnitude follows from body motion.
    When both the lateral demand and the lateral velocity vanish, the
    longitudinal slip is taken from the scalar friction equation instead,
    which needs ``theta_hat`` and ``f_rz``.

    Raises:
        InfeasibleDirectionError: if no positive wheel rate yields the demanded
            direction (for instance the demand is parallel to the kinematic ray).
    """
    v_rx, v_ry = float(kin.v_rx_b), float(kin.v_ry_b)
    if abs(f_ry_b) <= F_EPS and abs(v_ry) <= V_LAT_EPS:
        if theta_hat is None or f_rz is None:
            raise InversionError("degenerate rear branch needs theta_hat and f_rz")
        s = float(inverse_friction(min(abs(f_rx_b) / f_rz, theta_hat.D * (1 - MARGIN)), theta_hat))
        return -np.sign(f_rx_b) * s, 0.0
    if abs(f_ry_b) <= F_EPS:
        raise InfeasibleDirectionError("no lateral demand while the rear axle slides sideways")
    ratio = v_rx / v_ry - f_rx_b / f_ry_b if v_ry != 0 else np.inf
    if abs(ratio) < DIRECTION_EPS:
        raise InfeasibleDirectionError("demanded force is parallel to the rear kinematic ray")
    sx, sy, k = _ray_slip(v_rx, v_ry, f_rx_b, f_ry_b)
    if not _valid_ray(sx, sy, k, f_rx_b, f_ry_b):
        raise InfeasibleDirectionError(
            "demanded rear force direction cannot be produced by a positive wheel rate")
    return float(sx), float(sy)


def front_ray(delta, f_fx_b, f_fy_b, v, beta, psidot, l_f):
    """Front slips and wheel-frame force direction as functions of steering.

    Vectorised over ``delta``. Returns ``(s_fx, s_fy, k, f_fx_w, f_fy_w)``.
    """
    delta = np.asarray(delta, dtype=float)
    cd, sd = np.cos(delta), np.sin(delta)
    vx = v * np.cos(beta - delta) + psidot * l_f * sd
    vy = v * np.sin(beta - delta) + psidot * l_f * cd
    fx = cd * f_fx_b + sd * f_fy_b
    fy = -sd * f_fx_b + cd * f_fy_b
    sx, sy, k = _ray_slip(vx, vy, fx, fy)
    return sx, sy, k, fx, fy


def neutral_steer(kin: WheelKinematics, psidot: float, params: VehicleParams) -> float:
    """Steering angle that zeroes the front lateral contact velocity."""
    v, beta = float(kin.v), float(kin.beta)
    return float(np.arctan2(v * np.sin(beta) + psidot * params.l_f, v * np.cos(beta)))


def invert_front(f_fx_b: float, f_fy_b: float, state, f_fz: float, theta_hat: TyreParams,
                 params: VehicleParams, delta_max: float = 0.6) -> SlipTargets:
    """Steering angle and front slips that realise a body-frame front force.

    The steering angle solves ``D sin(C atan(B s_f(delta))) = |f| / f_fz`` on
    the pre-peak branch, found by scanning ``[-delta_max, delta_max]`` for
    sign changes and refining each by bisection with Newton polishing. Among
    several roots the one closest to the neutral steer is returned.

    Raises:
        FrictionLimitError: if the demand exceeds ``(1 - MARGIN) * D * f_fz``.
        NoRootError: if no admissible steering angle exists in the bracket.
    """
    X = as_state_array(state)
    kin = kinematics(X, 0.0, params)
    v, beta, psidot = float(kin.v), float(kin.beta), float(X[5])
    mag = float(np.hypot(f_fx_b, f_fy_b))
    mu_target = mag / f_fz
    if mu_target >= theta_hat.D * (1 - MARGIN):
        raise FrictionLimitError(
            f"front demand {mu_target:.4g}*f_fz exceeds the friction limit {theta_hat.D:.4g}")
    d0 = neutral_steer(kin, psidot, params)
    if mag <= F_EPS:
        d = float(np.clip(d0, -delta_max, delta_max))
        return SlipTargets(d, 0.0, 0.0, residual=mu_target, branch="idle")
    s_target = float(inverse_friction(mu_target, theta_hat))

    def slips(d):
        return front_ray(d, f_fx_b, f_fy_b, v, beta, psidot, params.l_f)

    # lateral wheel-frame demand vanishing at the neutral steer: purely longitudinal slip
    _, _, _, fx0, fy0 = slips(d0)
    if abs(fy0) <= F_EPS and abs(d0) <= delta_max:
        sx = -np.sign(fx0) * s_target
        return SlipTargets(d0, float(sx), 0.0, residual=0.0, branch="longitudinal")

    def g(d):
        sx, sy, k, fx, fy = slips(d)
        ok = _valid_ray(sx, sy, k, fx, fy)
        # zero slip at the neutral steer is the limit of both valid sides
        ok = ok | (np.abs(np.asarray(d) - d0) == 0)
        return np.where(ok, np.hypot(sx, sy) - s_target, np.nan)

    # small demands put the root within a hair of the neutral steer, so the
    # uniform scan is refined geometrically around it
    offsets = d0 + np.outer([-1.0, 1.0], np.geomspace(1e-9, 1e-2, 29)).ravel()
    grid = np.linspace(-delta_max, delta_max, SCAN_POINTS)
    grid = np.unique(np.concatenate([grid, [d0], offsets]))
    grid = grid[(grid >= -delta_max) & (grid <= delta_max)]
    vals = g(grid)
    ok = np.isfinite(vals)
    cand = np.nonzero(ok[:-1] & ok[1:] & (np.sign(vals[:-1]) != np.sign(vals[1:])))[0]
    roots = []
    for i in cand:
        a, b = grid[i], grid[i + 1]
        ga = vals[i]
        for _ in range(MAX_ROOT_ITERS):
            mid = 0.5 * (a + b)
            gm = float(g(mid))
            if not np.isfinite(gm):
                break
            if np.sign(gm) == np.sign(ga):
                a, ga = mid, gm
            else:
                b = mid
            if b - a < 1e-15:
                break
        d = 0.5 * (a + b)
        # Newton polish, kept only when it stays in the bracket and improves
        for _ in range(3):
            gd = float(g(d))
            h = 1e-7
            slope = (float(g(d + h)) - float(g(d - h))) / (2 * h)
            if not np.isfinite(slope) or slope == 0:
                break
            dn = d - gd / slope
            if not (grid[i] <= dn <= grid[i + 1]) or not abs(float(g(dn))) < abs(gd):
                break
            d = dn
        roots.append(d)
    if not roots:
        raise NoRootError("no steering angle in the bracket realises the demanded front force")
    d = min(roots, key=lambda r: abs(r - d0))
    sx, sy, _, _, _ = slips(d)
    s_f = float(np.hypot(sx, sy))
    residual = float(friction_magnitude(s_f, theta_hat) - mu_target)
    return SlipTargets(float(d), float(sx), float(sy), residual=residual)


def _wheel_torque(s_x, v_x, omega0, f_x, r, inertia, dt):
    if s_x <= -1 + SLIP_EPS:
        raise TargetSlipError(f"target longitudinal slip {s_x:.6g} is at or below -1")
    if v_x <= 0:
        raise TargetSlipError("longitudinal contact velocity must be positive")
    omega_target = v_x / (r * (s_x + 1))
    return f_x * r + (2 * inertia / dt) * (omega_target - omega0)


def front_torque(s_fx: float, kin: WheelKinematics, omega_f0: float, f_fx_w: float,
                 params: VehicleParams, dt: float) -> float:
    """Front torque putting the mid-interval wheel rate on the target slip.

    ``kin`` must be evaluated at the new steering angle.
    """
    return _wheel_torque(s_fx, float(kin.v_fx_w), omega_f0, f_fx_w, params.r_f, params.I_f, dt)


def rear_torque(s_rx: float, kin: WheelKinematics, omega_r0: float, f_rx_b: float,
                params: VehicleParams, dt: float) -> float:
    return _wheel_torque(s_rx, float(kin.v_rx_b), omega_r0, f_rx_b, params.r_r, params.I_r, dt)


def _mu_vector(sx, sy, theta):
    s = float(np.hypot(sx, sy))
    if s < 1e-12:
        return 0.0, 0.0
    mag = float(friction_magnitude(s, theta))
    return -sx / s * mag, -sy / s * mag


def force_to_input(f, state, params: VehicleParams, theta_hat: TyreParams, dt: float,
                   limits: InputLimits = InputLimits()):
    """Convert a body-force demand into ``(ControlInput, InversionReport)``.

    A front demand beyond the friction limit is scaled down to
    ``(1 - MARGIN)`` of it and retried once. A rear direction that no wheel
    rate can produce falls back to matching the longitudinal component only.
    """
    fv = f.to_array() if hasattr(f, "to_array") else np.asarray(f, dtype=float)
    f_fx_b, f_rx_b, f_fy_b, f_ry_b = (float(c) for c in fv)
    X = as_state_array(state)
    rep = InversionReport()
    f_fz, f_rz = demanded_normal_forces(f_fx_b, f_rx_b, params)
    rep.f_fz, rep.f_rz = f_fz, f_rz

    front = None
    for attempt in range(2):
        try:
            front = invert_front(f_fx_b, f_fy_b, X, f_fz, theta_hat, params, limits.delta_max)
            break
        except NoRootError:
            break
        except FrictionLimitError:
            if attempt:
                break
            rep.front_saturated = True
            # the axle load moves with the scaled longitudinal force, so iterate the scale
            for _ in range(20):
                cap = theta_hat.D * (1 - MARGIN) * f_fz * (1 - 1e-6)
                mag = np.hypot(f_fx_b, f_fy_b)
                if mag < cap:
                    break
                f_fx_b *= cap / mag
                f_fy_b *= cap / mag
                f_fz, f_rz = demanded_normal_forces(f_fx_b, f_rx_b, params)
            rep.f_fz, rep.f_rz = f_fz, f_rz
    if front is None:
        # keep the wheel straight along its contact velocity and match |f_x| only
        rep.steer_fallback = True
        kin0 = kinematics(X, 0.0, params)
        d = float(np.clip(neutral_steer(kin0, X[5], params), -limits.delta_max, limits.delta_max))
        mu = min(abs(f_fx_b) / f_fz, theta_hat.D * (1 - MARGIN))
        front = SlipTargets(d, float(-np.sign(f_fx_b) * inverse_friction(mu, theta_hat)), 0.0,
                            residual=float("nan"), branch="fallback")

    delta = front.delta
    kin = kinematics(X, delta, params)
    try:
        s_rx, s_ry = invert_rear(f_rx_b, f_ry_b, kin, theta_hat, f_rz)
    except InfeasibleDirectionError:
        rep.rear_fallback = True
        mu = min(abs(f_rx_b) / f_rz, theta_hat.D * (1 - MARGIN))
        s_rx = float(-np.sign(f_rx_b) * inverse_friction(mu, theta_hat))
        s_ry = float(kin.v_ry_b / kin.v_rx_b * (1 + s_rx))

    mu_fx, _ = _mu_vector(front.s_fx, front.s_fy, theta_hat)
    mu_rx, _ = _mu_vector(s_rx, s_ry, theta_hat)
    T_f = front_torque(front.s_fx, kin, float(X[6]), mu_fx * f_fz, params, dt)
    T_r = rear_torque(s_rx, kin, float(X[7]), mu_rx * f_rz, params, dt)

    for name, val, lim in (("delta", delta, limits.delta_max), ("T_f", T_f, limits.torque_max),
                           ("T_r", T_r, limits.torque_max)):
        if abs(val) > lim:
            rep.clamped.append(name)
    delta = float(np.clip(delta, -limits.delta_max, limits.delta_max))
    T_f = float(np.clip(T_f, -limits.torque_max, limits.torque_max))
    T_r = float(np.clip(T_r, -limits.torque_max, limits.torque_max))
    rep.targets = SlipTargets(delta, front.s_fx, front.s_fy, s_rx, s_ry, front.residual, front.branch)
    return ControlInput(delta, T_f, T_r), rep
