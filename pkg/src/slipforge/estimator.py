"""Tyre-parameter estimation from logged transitions.

The fit minimises a Huber loss on scaled acceleration residuals plus a log
barrier that keeps ``(B, C, D)`` strictly inside a plausible box. The
optimiser is a small L-BFGS working in box-normalised coordinates, with
central-difference gradients (three parameters, so six loss evaluations).
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from slipforge.errors import BarrierDomainError, ConfigError, EmptyDatasetError
from slipforge.model import (
    OMEGA_MIN,
    V_MIN,
    TyreParams,
    VehicleParams,
    as_input_array,
    as_state_array,
    state_derivative,
)

Y_NAMES = ("xddot", "yddot", "psiddot", "omegadot_f", "omegadot_r")


@dataclass(frozen=True)
class Sample:
    state: np.ndarray
    input: np.ndarray
    observed_y: np.ndarray

    def __post_init__(self) -> None:
        object.__setattr__(self, "state", as_state_array(self.state).astype(float))
        object.__setattr__(self, "input", as_input_array(self.input).astype(float))
        object.__setattr__(self, "observed_y", np.asarray(self.observed_y, dtype=float))
        if self.state.shape != (8,) or self.input.shape != (3,) or self.observed_y.shape != (5,):
            raise ValueError("sample needs an 8-state, 3-input and 5-vector observation")


class SampleSet:
    """Bounded FIFO collection of samples."""

    def __init__(self, capacity: int = 20_000, samples=()):
        if capacity < 1:
            raise ConfigError("capacity must be positive")
        self.capacity = capacity
        self._buf: deque[Sample] = deque(maxlen=capacity)
        self.extend(samples)

    def __len__(self) -> int:
        return len(self._buf)

    def __iter__(self):
        return iter(self._buf)

    def append(self, sample: Sample) -> None:
        self._buf.append(sample)

    def extend(self, samples) -> None:
        for s in samples:
            self.append(s)

    def copy(self) -> SampleSet:
        return SampleSet(self.capacity, list(self._buf))

    def arrays(self):
        """``(states, inputs, observations)`` stacked as ``(n, 8)``, ``(n, 3)``, ``(n, 5)``."""
        if not self._buf:
            return np.empty((0, 8)), np.empty((0, 3)), np.empty((0, 5))
        return (np.array([s.state for s in self._buf]),
                np.array([s.input for s in self._buf]),
                np.array([s.observed_y for s in self._buf]))

    @classmethod
    def from_arrays(cls, states, inputs, ys, capacity: int = 20_000) -> SampleSet:
        return cls(capacity, (Sample(x, u, y) for x, u, y in zip(states, inputs, ys)))


@dataclass(frozen=True, eq=False)
class EstimatorConfig:
    theta_min: TyreParams = TyreParams(1.0, 1.1, 0.1)
    theta_max: TyreParams = TyreParams(30.0, 3.5, 1.5)
    huber_delta: np.ndarray = field(default_factory=lambda: np.ones(5))
    residual_scale: np.ndarray = field(default_factory=lambda: np.array([1.0, 1.0, 1.0, 10.0, 10.0]))
    barrier_weight: float = 1e-3
    max_opt_iters: int = 100
    grad_tol: float = 1e-6
    capacity: int = 20_000

    def __post_init__(self) -> None:
        hd = np.broadcast_to(np.asarray(self.huber_delta, dtype=float), (5,)).copy()
        sc = np.broadcast_to(np.asarray(self.residual_scale, dtype=float), (5,)).copy()
        object.__setattr__(self, "huber_delta", hd)
        object.__setattr__(self, "residual_scale", sc)
        if np.any(self.theta_min.to_array() >= self.theta_max.to_array()):
            raise ConfigError("theta_min must be below theta_max componentwise")
        if np.any(hd <= 0) or np.any(sc <= 0):
            raise ConfigError("huber_delta and residual_scale must be positive")
        if self.barrier_weight <= 0:
            raise ConfigError("barrier_weight must be positive")

    @property
    def lower(self) -> np.ndarray:
        return self.theta_min.to_array()

    @property
    def upper(self) -> np.ndarray:
        return self.theta_max.to_array()


@dataclass(frozen=True)
class FitReport:
    iterations: int
    initial_loss: float
    final_loss: float
    grad_norm: float
    n_samples: int
    n_skipped: int
    converged: bool


def huber(z, delta):
    """Elementwise Huber function with threshold ``delta``."""
    a = np.abs(z)
    return np.where(a <= delta, 0.5 * z * z, delta * (a - 0.5 * delta))


def in_domain(states: np.ndarray) -> np.ndarray:
    """Mask of samples on which the model is defined."""
    v = np.hypot(states[:, 3], states[:, 4])
    return ((v > V_MIN) & (states[:, 6] >= OMEGA_MIN) & (states[:, 7] >= OMEGA_MIN)
            & np.all(np.isfinite(states), axis=1))


def predict_y(sample, theta: TyreParams, params: VehicleParams) -> np.ndarray:
    """Predicted ``[xddot, yddot, psiddot, omegadot_f, omegadot_r]``.

    ``sample`` is a :class:`Sample` or a ``(states, inputs)`` pair of arrays.
    """
    if isinstance(sample, Sample):
        X, U = sample.state, sample.input
    else:
        X, U = sample
    return state_derivative(X, U, params, theta)[..., 3:]


def barrier(theta, cfg: EstimatorConfig) -> float:
    p = np.asarray(theta, dtype=float)
    lo, hi = cfg.lower, cfg.upper
    if np.any(p <= lo) or np.any(p >= hi):
        raise BarrierDomainError(f"theta {p} is outside the open box ({lo}, {hi})")
    return float(-np.sum(np.log(p - lo) + np.log(hi - p)))


class _Objective:
    """Loss over a fixed snapshot of the dataset, domain-filtered once."""

    def __init__(self, data: SampleSet, cfg: EstimatorConfig, params: VehicleParams):
        X, U, Y = data.arrays()
        mask = in_domain(X) & np.all(np.isfinite(U), axis=1) & np.all(np.isfinite(Y), axis=1)
        self.X, self.U, self.Y = X[mask], U[mask], Y[mask]
        self.skipped = int((~mask).sum())
        self.cfg = cfg
        self.params = params

    def data_term(self, theta) -> float:
        th = theta if isinstance(theta, TyreParams) else _unchecked_tyre(theta)
        r = (predict_y((self.X, self.U), th, self.params) - self.Y) / self.cfg.residual_scale
        return float(np.sum(huber(r, self.cfg.huber_delta)))

    def __call__(self, theta) -> float:
        p = theta.to_array() if isinstance(theta, TyreParams) else np.asarray(theta, dtype=float)
        b = barrier(p, self.cfg)
        return self.data_term(p) + self.cfg.barrier_weight * b


def _unchecked_tyre(p) -> TyreParams:
    # the barrier box may extend past the TyreParams constructor box in custom configs
    t = object.__new__(TyreParams)
    object.__setattr__(t, "B", float(p[0]))
    object.__setattr__(t, "C", float(p[1]))
    object.__setattr__(t, "D", float(p[2]))
    return t


def loss(theta, data: SampleSet, cfg: EstimatorConfig, params: VehicleParams) -> float:
    """Huber prediction loss plus weighted log barrier.

    Raises:
        BarrierDomainError: if ``theta`` is not strictly inside the box.
    """
    return _Objective(data, cfg, params)(theta)


def numeric_gradient(f, p: np.ndarray, step) -> np.ndarray:
    """Central-difference gradient of a scalar function.

    Falls back to a one-sided difference when a probe lands where ``f`` is
    infinite, which happens within one step of the barrier wall.
    """
    p = np.asarray(p, dtype=float)
    step = np.broadcast_to(step, p.shape)
    g = np.empty_like(p)
    f0 = None
    for i in range(p.size):
        e = np.zeros_like(p)
        e[i] = step[i]
        fp, fm = f(p + e), f(p - e)
        if np.isfinite(fp) and np.isfinite(fm):
            g[i] = (fp - fm) / (2 * step[i])
            continue
        if f0 is None:
            f0 = f(p)
        if np.isfinite(fp):
            g[i] = (fp - f0) / step[i]
        elif np.isfinite(fm):
            g[i] = (f0 - fm) / step[i]
        else:
            g[i] = np.nan
    return g


def loss_gradient(theta, data: SampleSet, cfg: EstimatorConfig, params: VehicleParams,
                  rel_step: float = 1e-6) -> np.ndarray:
    """Gradient of :func:`loss` with respect to ``(B, C, D)``."""
    obj = _Objective(data, cfg, params)
    p = theta.to_array() if isinstance(theta, TyreParams) else np.asarray(theta, dtype=float)
    return numeric_gradient(obj, p, rel_step * (cfg.upper - cfg.lower))


def update(theta0: TyreParams, data: SampleSet, cfg: EstimatorConfig, params: VehicleParams,
           memory: int = 5):
    """Refit ``(B, C, D)`` on ``data`` starting from ``theta0``.

    Returns ``(theta_hat, FitReport)``. The loss at ``theta_hat`` never exceeds
    the loss at ``theta0``.

    Raises:
        EmptyDatasetError: if no in-domain samples are available.
        BarrierDomainError: if ``theta0`` is outside the open box.
    """
    obj = _Objective(data, cfg, params)
    if len(obj.X) == 0:
        raise EmptyDatasetError("no usable samples to fit tyre parameters")
    lo, hi = cfg.lower, cfg.upper
    width = hi - lo
    p0 = theta0.to_array()
    barrier(p0, cfg)

    def f(z):
        p = lo + z * width
        if np.any(p <= lo) or np.any(p >= hi):
            return np.inf
        return obj(p)

    h = 1e-6
    z = (p0 - lo) / width
    fz = f(z)
    L0 = fz
    g = numeric_gradient(f, z, h)
    S: list[np.ndarray] = []
    Yl: list[np.ndarray] = []
    it = 0
    converged = bool(np.linalg.norm(g) <= cfg.grad_tol)
    while not converged and it < cfg.max_opt_iters:
        it += 1
        # two-loop recursion for the quasi-Newton direction
        q = g.copy()
        alphas = []
        for s, y in zip(reversed(S), reversed(Yl)):
            a = (s @ q) / (y @ s)
            alphas.append(a)
            q -= a * y
        if S:
            q *= (S[-1] @ Yl[-1]) / (Yl[-1] @ Yl[-1])
        else:
            q *= 0.1 / max(np.linalg.norm(g), 1e-300)
        for (s, y), a in zip(zip(S, Yl), reversed(alphas)):
            b = (y @ q) / (y @ s)
            q += s * (a - b)
        d = -q
        if g @ d >= 0:
            d = -g * (0.1 / max(np.linalg.norm(g), 1e-300))
            S.clear()
            Yl.clear()
        t = 1.0
        accepted = False
        for _ in range(60):
            zn = z + t * d
            fn = f(zn)
            if np.isfinite(fn) and fn <= fz + 1e-4 * t * (g @ d):
                accepted = True
                break
            t *= 0.5
        if not accepted:
            break
        gn = numeric_gradient(f, zn, h)
        if not np.all(np.isfinite(gn)):
            z, fz = zn, fn
            break
        s, y = zn - z, gn - g
        if s @ y > 1e-12 * (s @ s):
            S.append(s)
            Yl.append(y)
            if len(S) > memory:
                S.pop(0)
                Yl.pop(0)
        z, fz, g = zn, fn, gn
        converged = bool(np.linalg.norm(g) <= cfg.grad_tol)

    theta = TyreParams.from_array(lo + z * width)
    return theta, FitReport(it, float(L0), float(fz), float(np.linalg.norm(g)),
                            len(obj.X), obj.skipped, converged)
