"""Rigid-body tracking MPC over body-frame friction forces.

The decision variables are the four body-frame forces
``[f_fx_b, f_rx_b, f_fy_b, f_ry_b]`` at each of ``T`` steps. The problem is
solved by single shooting: the RK4 rollout is differentiated in reverse mode
and the box-constrained cost is minimised by spectral projected gradient
with Armijo backtracking.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from numba import njit

from slipforge.errors import ConfigError, NonFiniteCostError, ReferenceWindowError
from slipforge.model import VehicleParams, wrap_angle

BODY_NAMES = ("x", "y", "psi", "xdot", "ydot", "psidot")
FORCE_NAMES = ("f_fx_b", "f_rx_b", "f_fy_b", "f_ry_b")

ARMIJO_C = 1e-4
BACKTRACK = 0.5
MAX_BACKTRACKS = 40


@dataclass(frozen=True)
class BodyState:
    x: float
    y: float
    psi: float
    xdot: float
    ydot: float
    psidot: float

    def to_array(self) -> np.ndarray:
        return np.array([self.x, self.y, self.psi, self.xdot, self.ydot, self.psidot])


@dataclass(frozen=True)
class ForceCommand:
    f_fx_b: float
    f_rx_b: float
    f_fy_b: float
    f_ry_b: float

    def to_array(self) -> np.ndarray:
        return np.array([self.f_fx_b, self.f_rx_b, self.f_fy_b, self.f_ry_b])

    @classmethod
    def from_array(cls, a) -> ForceCommand:
        return cls(*(float(v) for v in a))


@dataclass(frozen=True, eq=False)
class MpcConfig:
    horizon: int = 20
    Q: np.ndarray = field(default_factory=lambda: np.diag([10.0, 10.0, 1.0, 0.1, 0.1, 0.1]))
    R: np.ndarray = field(default_factory=lambda: 1e-8 * np.eye(4))
    f_lower: np.ndarray = field(default_factory=lambda: np.full(4, -1.2 * 0.5 * 1845 * 9.81 / 2))
    f_upper: np.ndarray = field(default_factory=lambda: np.full(4, 1.2 * 0.5 * 1845 * 9.81 / 2))
    max_iters: int = 200
    tol: float = 1e-3

    def __post_init__(self) -> None:
        Q = np.asarray(self.Q, dtype=float)
        R = np.asarray(self.R, dtype=float)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "f_lower", np.asarray(self.f_lower, dtype=float))
        object.__setattr__(self, "f_upper", np.asarray(self.f_upper, dtype=float))
        if self.horizon < 2:
            raise ConfigError("MPC horizon must be at least 2 steps")
        for name, M, n in (("Q", Q, 6), ("R", R, 4)):
            if M.shape != (n, n) or not np.allclose(M, M.T):
                raise ConfigError(f"{name} must be a symmetric {n}x{n} matrix")
            if np.linalg.eigvalsh(M).min() <= 0:
                raise ConfigError(f"{name} must be positive definite")
        if self.f_lower.shape != (4,) or self.f_upper.shape != (4,):
            raise ConfigError("force bounds must be 4-vectors")
        if np.any(self.f_lower >= self.f_upper):
            raise ConfigError("f_lower must be strictly below f_upper")

    @classmethod
    def for_friction(cls, params: VehicleParams, D: float, **kwargs) -> MpcConfig:
        """Config whose force box is +-1.2*D*m*g/2 per component."""
        bound = 1.2 * D * params.m * params.g / 2
        return cls(f_lower=np.full(4, -bound), f_upper=np.full(4, bound), **kwargs)

    def with_bounds_for(self, params: VehicleParams, D: float) -> MpcConfig:
        bound = 1.2 * D * params.m * params.g / 2
        return MpcConfig(self.horizon, self.Q, self.R, np.full(4, -bound), np.full(4, bound),
                         self.max_iters, self.tol)


@dataclass(frozen=True)
class MpcReport:
    cost: float
    zero_cost: float
    iterations: int
    pg_norm: float
    converged: bool
    forces: np.ndarray  # (T, 4) optimal sequence


def body_derivative(q, f, params: VehicleParams) -> np.ndarray:
    """Rigid-body derivative with body-frame friction forces as inputs."""
    q = np.asarray(q, dtype=float)
    f = np.asarray(f, dtype=float)
    psi = q[..., 2]
    Fx = f[..., 0] + f[..., 1]
    Fy = f[..., 2] + f[..., 3]
    c, s = np.cos(psi), np.sin(psi)
    return np.stack([
        q[..., 3], q[..., 4], q[..., 5],
        (Fx * c - Fy * s) / params.m,
        (Fx * s + Fy * c) / params.m,
        (f[..., 2] * params.l_f - f[..., 3] * params.l_r) / params.I_z,
    ], axis=-1)


def discretize_body(q, f, dt: float, params: VehicleParams) -> np.ndarray:
    """One RK4 step of the rigid body with ``f`` held constant."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    q = np.asarray(q, dtype=float)
    k1 = body_derivative(q, f, params)
    k2 = body_derivative(q + 0.5 * dt * k1, f, params)
    k3 = body_derivative(q + 0.5 * dt * k2, f, params)
    k4 = body_derivative(q + dt * k3, f, params)
    return q + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


@njit(cache=True)
def _deriv(q, f, m, I_z, l_f, l_r, out):
    Fx = f[0] + f[1]
    Fy = f[2] + f[3]
    c = np.cos(q[2])
    s = np.sin(q[2])
    out[0] = q[3]
    out[1] = q[4]
    out[2] = q[5]
    out[3] = (Fx * c - Fy * s) / m
    out[4] = (Fx * s + Fy * c) / m
    out[5] = (f[2] * l_f - f[3] * l_r) / I_z


@njit(cache=True)
def _jac(q, f, m, I_z, l_f, l_r, Jq, Jf):
    Fx = f[0] + f[1]
    Fy = f[2] + f[3]
    c = np.cos(q[2])
    s = np.sin(q[2])
    Jq[:] = 0.0
    Jf[:] = 0.0
    Jq[0, 3] = 1.0
    Jq[1, 4] = 1.0
    Jq[2, 5] = 1.0
    Jq[3, 2] = (-Fx * s - Fy * c) / m
    Jq[4, 2] = (Fx * c - Fy * s) / m
    Jf[3, 0] = c / m
    Jf[3, 1] = c / m
    Jf[3, 2] = -s / m
    Jf[3, 3] = -s / m
    Jf[4, 0] = s / m
    Jf[4, 1] = s / m
    Jf[4, 2] = c / m
    Jf[4, 3] = c / m
    Jf[5, 2] = l_f / I_z
    Jf[5, 3] = -l_r / I_z


@njit(cache=True)
def _rk4(q, f, dt, m, I_z, l_f, l_r):
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    _deriv(q, f, m, I_z, l_f, l_r, k1)
    _deriv(q + 0.5 * dt * k1, f, m, I_z, l_f, l_r, k2)
    _deriv(q + 0.5 * dt * k2, f, m, I_z, l_f, l_r, k3)
    _deriv(q + dt * k3, f, m, I_z, l_f, l_r, k4)
    return q + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


@njit(cache=True)
def _rk4_jac(q, f, dt, m, I_z, l_f, l_r):
    """RK4 step plus its sensitivities to the start state and the force."""
    I6 = np.eye(6)
    k1 = np.empty(6)
    k2 = np.empty(6)
    k3 = np.empty(6)
    k4 = np.empty(6)
    A = np.empty((6, 6))
    Bm = np.empty((6, 4))
    _deriv(q, f, m, I_z, l_f, l_r, k1)
    _jac(q, f, m, I_z, l_f, l_r, A, Bm)
    dk1q = A.copy()
    dk1f = Bm.copy()
    q2 = q + 0.5 * dt * k1
    _deriv(q2, f, m, I_z, l_f, l_r, k2)
    _jac(q2, f, m, I_z, l_f, l_r, A, Bm)
    dk2q = A @ (I6 + 0.5 * dt * dk1q)
    dk2f = A @ (0.5 * dt * dk1f) + Bm
    q3 = q + 0.5 * dt * k2
    _deriv(q3, f, m, I_z, l_f, l_r, k3)
    _jac(q3, f, m, I_z, l_f, l_r, A, Bm)
    dk3q = A @ (I6 + 0.5 * dt * dk2q)
    dk3f = A @ (0.5 * dt * dk2f) + Bm
    q4 = q + dt * k3
    _deriv(q4, f, m, I_z, l_f, l_r, k4)
    _jac(q4, f, m, I_z, l_f, l_r, A, Bm)
    dk4q = A @ (I6 + dt * dk3q)
    dk4f = A @ (dt * dk3f) + Bm
    w = dt / 6.0
    q_next = q + w * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    Aq = I6 + w * (dk1q + 2.0 * dk2q + 2.0 * dk3q + dk4q)
    Bf = w * (dk1f + 2.0 * dk2f + 2.0 * dk3f + dk4f)
    return q_next, Aq, Bf


@njit(cache=True)
def _wrap(a):
    return np.pi - np.mod(np.pi - a, 2.0 * np.pi)


@njit(cache=True)
def _cost(q0, ref, F, Q, R, dt, m, I_z, l_f, l_r):
    T = ref.shape[0]
    q = q0.copy()
    J = 0.0
    for t in range(T):
        if t > 0:
            q = _rk4(q, F[t - 1], dt, m, I_z, l_f, l_r)
        e = q - ref[t]
        e[2] = _wrap(e[2])
        J += e @ (Q @ e) + F[t] @ (R @ F[t])
    return J


@njit(cache=True)
def _cost_grad(q0, ref, F, Q, R, dt, m, I_z, l_f, l_r, want_diag):
    """Tracking cost, its adjoint gradient and (optionally) a Gauss-Newton diagonal."""
    T = ref.shape[0]
    qs = np.empty((T, 6))
    As = np.empty((T, 6, 6))
    Bs = np.empty((T, 6, 4))
    qs[0] = q0
    for t in range(T - 1):
        qn, A, Bm = _rk4_jac(qs[t], F[t], dt, m, I_z, l_f, l_r)
        qs[t + 1] = qn
        As[t] = A
        Bs[t] = Bm
    J = 0.0
    E = np.empty((T, 6))
    for t in range(T):
        e = qs[t] - ref[t]
        e[2] = _wrap(e[2])
        E[t] = e
        J += e @ (Q @ e) + F[t] @ (R @ F[t])
    grad = 2.0 * (F @ R)
    lam = 2.0 * (Q @ E[T - 1])
    for t in range(T - 2, -1, -1):
        grad[t] += Bs[t].T @ lam
        lam = 2.0 * (Q @ E[t]) + As[t].T @ lam
    # diag of sum_tau S^T 2Q S with S the sensitivity of q_tau to f_t
    hdiag = np.empty((T, 4))
    if not want_diag:
        return J, grad, hdiag
    for t in range(T):
        for j in range(4):
            hdiag[t, j] = 2.0 * R[j, j]
    for t in range(T - 1):
        S = Bs[t].copy()
        for tau in range(t + 1, T):
            QS = Q @ S
            for j in range(4):
                acc = 0.0
                for i in range(6):
                    acc += S[i, j] * QS[i, j]
                hdiag[t, j] += 2.0 * acc
            if tau < T - 1:
                S = As[tau] @ S
    return J, grad, hdiag


class TrackingProblem:
    """Tracking cost and its adjoint gradient for a fixed reference window."""

    def __init__(self, q0, ref, cfg: MpcConfig, params: VehicleParams, dt: float):
        ref = np.asarray(ref, dtype=float)
        if ref.ndim != 2 or ref.shape[1] != 6 or ref.shape[0] != cfg.horizon:
            raise ReferenceWindowError(
                f"reference window must be ({cfg.horizon}, 6), got {ref.shape}")
        self.q0 = np.asarray(q0, dtype=float)
        self.ref = np.ascontiguousarray(ref)
        self.cfg = cfg
        self.params = params
        self.dt = float(dt)
        self._consts = (self.dt, params.m, params.I_z, params.l_f, params.l_r)

    def rollout(self, F) -> np.ndarray:
        F = np.asarray(F, dtype=float)
        qs = np.empty((self.cfg.horizon, 6))
        qs[0] = self.q0
        for t in range(self.cfg.horizon - 1):
            qs[t + 1] = _rk4(qs[t], F[t], *self._consts)
        return qs

    def cost(self, F) -> float:
        F = np.ascontiguousarray(F, dtype=float)
        return float(_cost(self.q0, self.ref, F, self.cfg.Q, self.cfg.R, *self._consts))

    def cost_and_gradient(self, F):
        F = np.ascontiguousarray(F, dtype=float)
        J, g, _ = _cost_grad(self.q0, self.ref, F, self.cfg.Q, self.cfg.R, *self._consts, False)
        return float(J), g

    def cost_gradient_diag(self, F):
        F = np.ascontiguousarray(F, dtype=float)
        J, g, h = _cost_grad(self.q0, self.ref, F, self.cfg.Q, self.cfg.R, *self._consts, True)
        return float(J), g, h


def solve_mpc(q0, ref, cfg: MpcConfig, params: VehicleParams, dt: float = 0.1,
              warm_start: np.ndarray | None = None):
    """Minimise the tracking cost over a force sequence inside the box.

    Projected gradient descent runs in diagonally rescaled coordinates (a box
    stays a box under diagonal scaling) with Barzilai-Borwein trial steps and
    Armijo backtracking. Returns the first force of the best sequence found
    and a report; the reported cost never exceeds that of the all-zero
    sequence projected onto the box.

    Raises:
        ReferenceWindowError: if ``ref`` does not hold exactly ``horizon`` states.
        NonFiniteCostError: if the rollout cost is not finite at the start point.
    """
    prob = TrackingProblem(q0, ref, cfg, params, dt)
    T = cfg.horizon
    lo, hi = cfg.f_lower, cfg.f_upper

    zero = np.clip(np.zeros((T, 4)), lo, hi)
    J_zero = prob.cost(zero)
    if not np.isfinite(J_zero):
        raise NonFiniteCostError("tracking cost of the zero-force sequence is not finite")
    F = zero
    if warm_start is not None:
        Fw = np.clip(np.asarray(warm_start, dtype=float), lo, hi)
        Jw = prob.cost(Fw)
        if np.isfinite(Jw) and Jw < J_zero:
            F = Fw
    J, gF, hdiag = prob.cost_gradient_diag(F)
    if not np.isfinite(J):
        raise NonFiniteCostError("tracking cost is not finite at the start point")

    # variables z = F * w, w = sqrt of the Gauss-Newton diagonal
    w = np.sqrt(hdiag)
    lo_z, hi_z = lo * w, hi * w
    z = F * w
    g = gF / w

    alpha = 1.0
    it = 0
    pg_norm = float(np.linalg.norm(z - np.clip(z - g, lo_z, hi_z)))
    while pg_norm > cfg.tol and it < cfg.max_iters:
        it += 1
        accepted = False
        a = alpha
        for _ in range(MAX_BACKTRACKS):
            z_new = np.clip(z - a * g, lo_z, hi_z)
            J_new = prob.cost(z_new / w)
            if np.isfinite(J_new) and J_new <= J + ARMIJO_C * np.sum(g * (z_new - z)):
                accepted = True
                break
            a *= BACKTRACK
        if not accepted:
            break
        J_new, gF = prob.cost_and_gradient(z_new / w)
        g_new = gF / w
        s = (z_new - z).ravel()
        y = (g_new - g).ravel()
        sy = float(s @ y)
        alpha = float(s @ s) / sy if sy > 1e-16 else 1.0
        alpha = min(max(alpha, 1e-6), 1e6)
        z, J, g = z_new, J_new, g_new
        pg_norm = float(np.linalg.norm(z - np.clip(z - g, lo_z, hi_z)))

    F = np.clip(z / w, lo, hi)
    report = MpcReport(J, J_zero, it, pg_norm, pg_norm <= cfg.tol, F)
    return ForceCommand.from_array(F[0]), report


class BodyMpc:
    """Receding-horizon wrapper that keeps the previous plan as a warm start."""

    def __init__(self, cfg: MpcConfig, params: VehicleParams, dt: float = 0.1):
        self.cfg = cfg
        self.params = params
        self.dt = dt
        self._plan: np.ndarray | None = None

    def reset(self) -> None:
        self._plan = None

    def solve(self, q0, ref):
        warm = None
        if self._plan is not None:
            warm = np.vstack([self._plan[1:], self._plan[-1:]])
        f0, report = solve_mpc(q0, ref, self.cfg, self.params, self.dt, warm_start=warm)
        self._plan = report.forces
        return f0, report


def reference_window(ref_states: np.ndarray, k: int, T: int, dt: float | None = None) -> np.ndarray:
    """Rows ``k .. k+T-1`` of a reference, padded past its end.

    Without ``dt`` the final state is repeated. With ``dt`` the final state is
    extrapolated at constant velocity, which keeps a moving reference
    consistent with its own dynamics.
    """
    N = len(ref_states)
    if N == 0:
        raise ReferenceWindowError("empty reference")
    idx = np.arange(k, k + T)
    out = ref_states[np.minimum(idx, N - 1)].copy()
    if dt is not None:
        extra = np.maximum(idx - (N - 1), 0) * dt
        out[:, 0] += extra * out[:, 3]
        out[:, 1] += extra * out[:, 4]
        out[:, 2] += extra * out[:, 5]
    return out
