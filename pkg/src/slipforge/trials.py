"""Reference courses, the closed-loop control episode and the learning trials."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field, replace

import numpy as np

from slipforge.errors import (
    DiscontinuousCourseError,
    InversionError,
    ModelDomainError,
    NonFiniteCostError,
    ReferenceWindowError,
)
from slipforge.estimator import EstimatorConfig, Sample, SampleSet, update
from slipforge.inversion import InputLimits, force_to_input
from slipforge.model import STATE_NAMES, TyreParams, VehicleParams, free_rolling_rates
from slipforge.mpc import BodyMpc, MpcConfig, reference_window
from slipforge.sim import SimConfig, step_interval

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Straight:
    length: float
    start: tuple[float, float, float] | None = None


@dataclass(frozen=True)
class Arc:
    radius: float
    sweep: float  # rad, positive
    direction: int = 1  # +1 turns left (counter-clockwise), -1 right
    start: tuple[float, float, float] | None = None

    @property
    def length(self) -> float:
        return self.radius * self.sweep


@dataclass(frozen=True)
class CourseSpec:
    segments: tuple
    target_speed: float = 25.0
    start: tuple[float, float, float] = (0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ValueError("course needs at least one segment")
        if not self.target_speed > 0:
            raise ValueError("target speed must be positive")
        for seg in self.segments:
            if isinstance(seg, Arc) and not (seg.radius > 0 and seg.sweep > 0
                                             and seg.direction in (1, -1)):
                raise ValueError(f"invalid arc {seg}")
            if isinstance(seg, Straight) and not seg.length > 0:
                raise ValueError(f"invalid straight {seg}")

    @property
    def length(self) -> float:
        return sum(s.length for s in self.segments)


# 10 m corners at 25 m/s need 62.5 m/s^2 of lateral acceleration, far beyond
# any tyre; 100 m corners need 6.25 m/s^2, inside the true friction budget but
# outside what a D = 0.5 prior lets the controller ask for
DEFAULT_RADIUS = 100.0


def two_corner_course(radius: float = DEFAULT_RADIUS, speed: float = 25.0, lead: float = 50.0,
                      middle: float = 50.0, tail: float = 50.0, direction: int = -1) -> CourseSpec:
    """Straight, 90 degree corner, straight, 90 degree corner, straight."""
    quarter = np.pi / 2
    return CourseSpec((Straight(lead), Arc(radius, quarter, direction), Straight(middle),
                       Arc(radius, quarter, direction), Straight(tail)), speed)


def _advance(pose, seg, s):
    """Pose after travelling ``s`` metres along ``seg`` from ``pose``."""
    x, y, psi = pose
    if isinstance(seg, Straight):
        return x + s * np.cos(psi), y + s * np.sin(psi), psi
    k = seg.direction / seg.radius
    dpsi = k * s
    # exact chord of a circular arc
    return (x + (np.sin(psi + dpsi) - np.sin(psi)) / k,
            y - (np.cos(psi + dpsi) - np.cos(psi)) / k,
            psi + dpsi)


def segment_start_poses(course: CourseSpec):
    """Start pose of every segment plus the final end pose.

    Raises:
        DiscontinuousCourseError: if a segment declares a start pose that does
            not match where the previous segment ends.
    """
    poses = [tuple(course.start)]
    for seg in course.segments:
        pose = poses[-1]
        if seg.start is not None:
            sx, sy, spsi = seg.start
            dpsi = np.pi - np.mod(np.pi - (spsi - pose[2]), 2 * np.pi)
            if np.hypot(sx - pose[0], sy - pose[1]) > 1e-6 or abs(dpsi) > 1e-6:
                raise DiscontinuousCourseError(
                    f"segment {seg} starts at {seg.start}, previous segment ends at {pose}")
        poses.append(_advance(pose, seg, seg.length))
    return poses


@dataclass(frozen=True, eq=False)
class ReferenceTrajectory:
    states: np.ndarray  # (N, 6) body states
    dt: float

    def __len__(self) -> int:
        return len(self.states)

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(len(self.states))

    def consistency_error(self) -> float:
        """Largest ``|dpos - v*dt| / (v*dt)`` over consecutive samples."""
        s = self.states
        if len(s) < 2:
            return 0.0
        dpos = s[1:, :2] - s[:-1, :2]
        vavg = 0.5 * (s[1:, 3:5] + s[:-1, 3:5])
        err = np.linalg.norm(dpos - vavg * self.dt, axis=1)
        scale = np.linalg.norm(vavg, axis=1) * self.dt
        return float(np.max(err / np.maximum(scale, 1e-12)))


def generate_reference(course: CourseSpec, dt: float) -> ReferenceTrajectory:
    """Sample a constant-speed pass along ``course`` every ``dt`` seconds."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    poses = segment_start_poses(course)
    bounds = np.cumsum([0.0] + [s.length for s in course.segments])
    v = course.target_speed
    n = int(np.floor(bounds[-1] / (v * dt) + 1e-9)) + 1
    out = np.empty((n, 6))
    for i in range(n):
        s = min(i * v * dt, bounds[-1])
        j = int(np.searchsorted(bounds, s, side="right") - 1)
        j = min(j, len(course.segments) - 1)
        seg = course.segments[j]
        x, y, psi = _advance(poses[j], seg, s - bounds[j])
        rate = seg.direction * v / seg.radius if isinstance(seg, Arc) else 0.0
        out[i] = (x, y, psi, v * np.cos(psi), v * np.sin(psi), rate)
    return ReferenceTrajectory(out, dt)


@dataclass(frozen=True)
class TaskConfig:
    """Everything a closed-loop episode needs besides the reference."""

    sim: SimConfig = SimConfig()
    mpc: MpcConfig = field(default_factory=MpcConfig)
    estimator: EstimatorConfig = field(default_factory=EstimatorConfig)
    limits: InputLimits = InputLimits()
    hold_time: float = 1.0
    seed: int = 0
    measurement_noise: float = 0.0  # std of additive noise on observed accelerations
    mpc_bounds: str = "estimate"  # "estimate": +-1.2*D_hat*m*g/2 each episode; "fixed": as in mpc

    def __post_init__(self) -> None:
        if not self.hold_time >= 0:
            raise ValueError("hold_time must be non-negative")
        if not self.measurement_noise >= 0:
            raise ValueError("measurement_noise must be non-negative")
        if self.mpc_bounds not in ("estimate", "fixed"):
            raise ValueError("mpc_bounds must be 'estimate' or 'fixed'")


@dataclass
class EpisodeResult:
    rows: list[dict]
    samples: list[Sample]
    mse: float
    aborted: bool = False
    error: str = ""

    @property
    def positions(self) -> np.ndarray:
        return np.array([[r["x"], r["y"]] for r in self.rows])


@dataclass(frozen=True)
class TrialResult:
    trial_index: int
    mse: float
    theta_hat: TyreParams
    samples_collected: int
    aborted: bool = False


def initial_state(ref: ReferenceTrajectory, params: VehicleParams) -> np.ndarray:
    q = ref.states[0]
    X = np.concatenate([q, [0.0, 0.0]])
    wf, wr = free_rolling_rates(X, 0.0, params)
    X[6], X[7] = wf, wr
    return X


def tracking_mse(positions: np.ndarray, ref_positions: np.ndarray) -> float:
    d = np.asarray(positions) - np.asarray(ref_positions)
    return float(np.mean(np.sum(d * d, axis=1)))


def _midpoint_sample(trace: np.ndarray, u: np.ndarray, h: float) -> Sample:
    """Sample at mid-interval with accelerations by central difference over one sub-step."""
    k = (len(trace) - 1) // 2
    y = (trace[k + 1, 3:8] - trace[k - 1, 3:8]) / (2 * h)
    return Sample(trace[k], u, y)


def run_episode(ref: ReferenceTrajectory, theta_hat: TyreParams, task: TaskConfig,
                params: VehicleParams, theta_true: TyreParams,
                rng: np.random.Generator | None = None) -> EpisodeResult:
    """Drive one pass of the reference with the two-timescale controller."""
    if len(ref) == 0:
        raise ReferenceWindowError("reference trajectory is empty")
    if task.sim.substeps < 2:
        raise ValueError("sample collection needs at least two sub-steps per interval")
    dt = task.sim.dt
    n_hold = int(round(task.hold_time / dt))
    n_steps = min(len(ref) + n_hold, max(1, int(round(task.sim.horizon_time / dt))))
    # the reference is extended past its end at constant velocity
    ref_all = reference_window(ref.states, 0, n_steps + task.mpc.horizon, dt)
    mpc_cfg = task.mpc
    if task.mpc_bounds == "estimate":
        mpc_cfg = mpc_cfg.with_bounds_for(params, theta_hat.D)
    mpc = BodyMpc(mpc_cfg, params, dt)
    h = dt / task.sim.substeps
    X = initial_state(ref, params)
    rows, samples, sq_err = [], [], []
    aborted, error = False, ""
    for k in range(n_steps):
        e = X[:2] - ref_all[k, :2]
        sq_err.append(float(e @ e))
        row = {"t": k * dt, **dict(zip(STATE_NAMES, X.tolist())),
               "x_ref": ref_all[k, 0], "y_ref": ref_all[k, 1]}
        try:
            f0, mrep = mpc.solve(X[:6], ref_all[k:k + task.mpc.horizon])
            u, irep = force_to_input(f0, X, params, theta_hat, dt, task.limits)
            U = u.to_array()
            row.update(delta=U[0], T_f=U[1], T_r=U[2],
                       f_fx_b=f0.f_fx_b, f_rx_b=f0.f_rx_b, f_fy_b=f0.f_fy_b, f_ry_b=f0.f_ry_b,
                       mpc_cost=mrep.cost, mpc_iters=mrep.iterations, mpc_pg_norm=mrep.pg_norm,
                       eq_residual=irep.targets.residual,
                       front_saturated=int(irep.front_saturated),
                       rear_fallback=int(irep.rear_fallback),
                       steer_fallback=int(irep.steer_fallback),
                       clamped="|".join(irep.clamped))
            rows.append(row)
            trace = step_interval(X, U, task.sim, params, theta_true, trace=True)
        except (ModelDomainError, InversionError, NonFiniteCostError) as exc:
            aborted, error = True, f"step {k}: {exc}"
            log.warning("episode aborted at %s", error)
            if "delta" not in row:
                rows.append(row)
            break
        smp = _midpoint_sample(trace, U, h)
        if task.measurement_noise > 0 and rng is not None:
            smp = Sample(smp.state, smp.input,
                         smp.observed_y + rng.normal(0.0, task.measurement_noise, 5))
        samples.append(smp)
        X = trace[-1]
    return EpisodeResult(rows, samples, float(np.mean(sq_err)), aborted, error)


def run_trials(n_trials: int, ref: ReferenceTrajectory, task: TaskConfig, params: VehicleParams,
               theta_true: TyreParams, theta0: TyreParams, road_changes: dict | None = None,
               on_episode=None) -> list[TrialResult]:
    """Alternate closed-loop episodes with refits of the tyre parameters.

    ``road_changes`` maps a 1-based trial index to the true tyre parameters
    from that trial on. ``on_episode(k, episode, theta_used)`` is called after
    every episode, before the refit.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be at least 1")
    road_changes = road_changes or {}
    rng = np.random.default_rng(task.seed)
    data = SampleSet(task.estimator.capacity)
    theta_hat = theta0
    results = []
    for k in range(1, n_trials + 1):
        theta_true = road_changes.get(k, theta_true)
        ep = run_episode(ref, theta_hat, task, params, theta_true, rng)
        if on_episode is not None:
            on_episode(k, ep, theta_hat)
        data.extend(ep.samples)
        if len(data):
            theta_hat, fit = update(theta_hat, data.copy(), task.estimator, params)
            log.info("trial %d mse %.4g theta %s loss %.4g -> %.4g", k, ep.mse, theta_hat,
                     fit.initial_loss, fit.final_loss)
        results.append(TrialResult(k, ep.mse, theta_hat, len(ep.samples), ep.aborted))
    return results


def with_speed(course: CourseSpec, speed: float) -> CourseSpec:
    return replace(course, target_speed=speed)
