"""TOML experiment configuration.

Sections: ``[vehicle]``, ``[tyre_true]``, ``[tyre_prior]``, ``[sim]``,
``[mpc]``, ``[estimator]``, ``[limits]``, ``[task]``, ``[course]`` and an
optional ``[[road_change]]`` array. Every key is optional; missing keys take
the library defaults. Unknown keys are rejected so typos do not pass
silently. ``SLIPFORGE_SEED`` in the environment overrides ``task.seed``.
"""

from __future__ import annotations

import math
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from slipforge.errors import ConfigError
from slipforge.estimator import EstimatorConfig
from slipforge.inversion import InputLimits
from slipforge.model import STATE_NAMES, TyreParams, VehicleParams
from slipforge.mpc import MpcConfig
from slipforge.sim import SimConfig
from slipforge.trials import (
    DEFAULT_RADIUS,
    Arc,
    CourseSpec,
    Straight,
    TaskConfig,
    two_corner_course,
)

SEED_ENV = "SLIPFORGE_SEED"

DEFAULT_TYRE_TRUE = TyreParams(10.0, 1.9, 1.0)
DEFAULT_TYRE_PRIOR = TyreParams(6.0, 1.5, 0.5)


@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    vehicle: VehicleParams = VehicleParams()
    tyre_true: TyreParams = DEFAULT_TYRE_TRUE
    tyre_prior: TyreParams = DEFAULT_TYRE_PRIOR
    task: TaskConfig = field(default_factory=TaskConfig)
    course: CourseSpec = field(default_factory=two_corner_course)
    trials: int = 30
    road_changes: dict = field(default_factory=dict)  # trial index -> TyreParams
    initial_state: np.ndarray | None = None


def _take(section: dict, name: str, allowed) -> dict:
    unknown = set(section) - set(allowed)
    if unknown:
        raise ConfigError(f"unknown keys in [{name}]: {', '.join(sorted(unknown))}")
    return dict(section)


def _dataclass_section(cls, data: dict, name: str):
    allowed = [f.name for f in fields(cls)]
    kwargs = _take(data, name, allowed)
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[{name}]: {exc}") from exc


def _matrix(value, n: int, name: str) -> np.ndarray:
    a = np.asarray(value, dtype=float)
    if a.shape == (n,):
        return np.diag(a)
    if a.shape == (n, n):
        return a
    raise ConfigError(f"mpc.{name} must be a {n}-vector diagonal or an {n}x{n} matrix")


def _mpc(data: dict, vehicle: VehicleParams, prior: TyreParams):
    d = _take(data, "mpc", ["horizon", "Q", "R", "f_lower", "f_upper", "max_iters", "tol",
                            "bounds"])
    bounds = d.pop("bounds", None)
    kwargs = {}
    for key in ("horizon", "max_iters"):
        if key in d:
            kwargs[key] = int(d[key])
    if "tol" in d:
        kwargs["tol"] = float(d["tol"])
    if "Q" in d:
        kwargs["Q"] = _matrix(d["Q"], 6, "Q")
    if "R" in d:
        kwargs["R"] = _matrix(d["R"], 4, "R")
    explicit = "f_lower" in d or "f_upper" in d
    if explicit:
        if not ("f_lower" in d and "f_upper" in d):
            raise ConfigError("mpc.f_lower and mpc.f_upper must be given together")
        kwargs["f_lower"] = np.broadcast_to(np.asarray(d["f_lower"], dtype=float), (4,))
        kwargs["f_upper"] = np.broadcast_to(np.asarray(d["f_upper"], dtype=float), (4,))
        cfg = MpcConfig(**kwargs)
    else:
        cfg = MpcConfig.for_friction(vehicle, prior.D, **kwargs)
    if bounds is None:
        bounds = "fixed" if explicit else "estimate"
    if bounds not in ("fixed", "estimate"):
        raise ConfigError("mpc.bounds must be 'fixed' or 'estimate'")
    return cfg, bounds


def _tyre(data, name, default):
    if data is None:
        return default
    return _dataclass_section(TyreParams, data, name)


def _estimator(data: dict) -> EstimatorConfig:
    d = _take(data, "estimator", [f.name for f in fields(EstimatorConfig)])
    for key in ("theta_min", "theta_max"):
        if key in d:
            v = d[key]
            d[key] = (TyreParams(**v) if isinstance(v, dict)
                      else TyreParams.from_array(np.asarray(v, dtype=float)))
    try:
        return EstimatorConfig(**d)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"[estimator]: {exc}") from exc


def course_from_dict(data: dict) -> CourseSpec:
    """Build a course from a ``[course]`` table.

    Either ``segments`` (a list of tables with ``type = "straight"`` and
    ``length``, or ``type = "arc"`` with ``radius``, ``sweep_deg`` and
    ``direction``) or the two-corner shorthand keys ``radius``, ``lead``,
    ``middle``, ``tail`` and ``direction``. ``target_speed`` applies to both.
    """
    d = _take(data, "course", ["segments", "target_speed", "start", "radius", "lead", "middle",
                               "tail", "direction"])
    speed = float(d.pop("target_speed", 25.0))
    start = tuple(float(v) for v in d.pop("start", (0.0, 0.0, 0.0)))
    try:
        if "segments" in d:
            if set(d) - {"segments"}:
                raise ConfigError("course.segments cannot be combined with two-corner keys")
            segs = []
            for i, s in enumerate(d["segments"]):
                s = dict(s)
                kind = s.pop("type", None)
                seg_start = s.pop("start", None)
                seg_start = tuple(float(v) for v in seg_start) if seg_start is not None else None
                if kind == "straight":
                    segs.append(Straight(float(s.pop("length")), seg_start))
                elif kind == "arc":
                    sweep = s.pop("sweep_deg", None)
                    sweep = math.radians(float(sweep)) if sweep is not None else float(s.pop("sweep"))
                    segs.append(Arc(float(s.pop("radius")), sweep, int(s.pop("direction", 1)),
                                    seg_start))
                else:
                    raise ConfigError(f"course segment {i}: type must be 'straight' or 'arc'")
                if s:
                    raise ConfigError(f"course segment {i}: unknown keys {sorted(s)}")
            return CourseSpec(tuple(segs), speed, start)
        base = two_corner_course(float(d.get("radius", DEFAULT_RADIUS)), speed,
                                 float(d.get("lead", 50.0)), float(d.get("middle", 50.0)),
                                 float(d.get("tail", 50.0)), int(d.get("direction", -1)))
        return CourseSpec(base.segments, speed, start)
    except KeyError as exc:
        raise ConfigError(f"course segment is missing {exc}") from exc
    except ValueError as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"[course]: {exc}") from exc


def config_from_dict(data: dict, env=None) -> ExperimentConfig:
    env = os.environ if env is None else env
    _take(data, "top level", ["vehicle", "tyre_true", "tyre_prior", "sim", "mpc", "estimator",
                              "limits", "task", "course", "road_change", "initial_state"])
    vehicle = _dataclass_section(VehicleParams, data.get("vehicle", {}), "vehicle")
    tyre_true = _tyre(data.get("tyre_true"), "tyre_true", DEFAULT_TYRE_TRUE)
    prior = _tyre(data.get("tyre_prior"), "tyre_prior", DEFAULT_TYRE_PRIOR)
    sim = _dataclass_section(SimConfig, data.get("sim", {}), "sim")
    mpc, bounds = _mpc(data.get("mpc", {}), vehicle, prior)
    est = _estimator(data.get("estimator", {}))
    limits = _dataclass_section(InputLimits, data.get("limits", {}), "limits")
    t = _take(data.get("task", {}), "task", ["hold_time", "seed", "measurement_noise", "trials"])
    seed = int(t.get("seed", 0))
    if env.get(SEED_ENV, "").strip():
        try:
            seed = int(env[SEED_ENV])
        except ValueError as exc:
            raise ConfigError(f"{SEED_ENV} must be an integer, got {env[SEED_ENV]!r}") from exc
    try:
        task = TaskConfig(sim=sim, mpc=mpc, estimator=est, limits=limits,
                          hold_time=float(t.get("hold_time", 1.0)), seed=seed,
                          measurement_noise=float(t.get("measurement_noise", 0.0)),
                          mpc_bounds=bounds)
    except ValueError as exc:
        raise ConfigError(f"[task]: {exc}") from exc
    trials = int(t.get("trials", 30))
    if trials < 1:
        raise ConfigError("task.trials must be at least 1")
    course = course_from_dict(data.get("course", {}))
    changes = {}
    for entry in data.get("road_change", []):
        e = _take(entry, "road_change", ["trial", "B", "C", "D"])
        if "trial" not in e:
            raise ConfigError("every [[road_change]] needs a trial index")
        k = int(e.pop("trial"))
        changes[k] = _dataclass_section(TyreParams, e, "road_change")
    x0 = None
    if "initial_state" in data:
        s = _take(data["initial_state"], "initial_state", STATE_NAMES)
        missing = [n for n in STATE_NAMES if n not in s]
        if missing:
            raise ConfigError(f"[initial_state] is missing {', '.join(missing)}")
        x0 = np.array([float(s[n]) for n in STATE_NAMES])
    return ExperimentConfig(vehicle, tyre_true, prior, task, course, trials, changes, x0)


def load_config(path, env=None) -> ExperimentConfig:
    """Read an :class:`ExperimentConfig` from a TOML file."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return config_from_dict(data, env)


def load_course(path) -> CourseSpec:
    """Read the ``[course]`` table of a TOML file."""
    try:
        with open(path, "rb") as fh:
            data = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    return course_from_dict(data.get("course", {}))
