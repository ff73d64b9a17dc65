"""Compiled scalar transcription of the full model for the inner sub-step loop.

The numpy functions in :mod:`slipforge.model` remain the reference; these
kernels only speed up ``step_interval`` and are tested against them. A
kernel that leaves the model domain returns a status code instead of
raising, and the caller replays the failing sub-step through numpy to get
the proper exception.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from slipforge.model import DENOM_EPS, OMEGA_MIN, S_EPS, V_MIN

OK = 0
DOMAIN = 1
NONFINITE = 2


def pack_params(params) -> np.ndarray:
    return np.array([params.m, params.I_z, params.I_f, params.I_r, params.r_f, params.r_r,
                     params.l_f, params.l_r, params.h, params.g])


@njit(cache=True)
def _mu(sx, sy, B, C, D):
    s = np.hypot(sx, sy)
    if s < S_EPS:
        return 0.0, 0.0
    k = D * np.sin(C * np.arctan(B * s)) / s
    return -sx * k, -sy * k


@njit(cache=True)
def deriv(X, U, p, th, out):
    m, I_z, I_f, I_r, r_f, r_r, l_f, l_r, h, g = (p[0], p[1], p[2], p[3], p[4],
                                                   p[5], p[6], p[7], p[8], p[9])
    B, C, D = th[0], th[1], th[2]
    psi, xdot, ydot, psidot, wf, wr = X[2], X[3], X[4], X[5], X[6], X[7]
    delta, T_f, T_r = U[0], U[1], U[2]
    v = np.hypot(xdot, ydot)
    if not v > V_MIN or not wf >= OMEGA_MIN or not wr >= OMEGA_MIN:
        return DOMAIN
    a = np.arctan2(ydot, xdot) - psi
    beta = np.pi - np.mod(np.pi - a, 2 * np.pi)
    cd, sd = np.cos(delta), np.sin(delta)
    v_fx = v * np.cos(beta - delta) + psidot * l_f * sd
    v_fy = v * np.sin(beta - delta) + psidot * l_f * cd
    v_rx = v * np.cos(beta)
    v_ry = v * np.sin(beta) - psidot * l_r
    wfr = wf * r_f
    wrr = wr * r_r
    mu_fx, mu_fy = _mu((v_fx - wfr) / wfr, v_fy / wfr, B, C, D)
    mu_rx, mu_ry = _mu((v_rx - wrr) / wrr, v_ry / wrr, B, C, D)
    front_long = mu_fx * cd - mu_fy * sd
    den = l_f + l_r + (front_long - mu_rx) * h
    if not den > DENOM_EPS:
        return DOMAIN
    mg = m * g
    f_fz = (l_r - mu_rx * h) / den * mg
    f_rz = (l_f + front_long * h) / den * mg
    ffx, ffy = mu_fx * f_fz, mu_fy * f_fz
    frx, fry = mu_rx * f_rz, mu_ry * f_rz
    cpd, spd = np.cos(psi + delta), np.sin(psi + delta)
    cp, sp = np.cos(psi), np.sin(psi)
    out[0] = xdot
    out[1] = ydot
    out[2] = psidot
    out[3] = (ffx * cpd - ffy * spd + frx * cp - fry * sp) / m
    out[4] = (ffx * spd + ffy * cpd + frx * sp + fry * cp) / m
    out[5] = ((ffy * cd + ffx * sd) * l_f - fry * l_r) / I_z
    out[6] = (T_f - ffx * r_f) / I_f
    out[7] = (T_r - frx * r_r) / I_r
    return OK


@njit(cache=True)
def integrate(X0, U, h, n, p, th, trace):
    """``n`` RK4 sub-steps written into ``trace`` of shape ``(n + 1, 8)``.

    Returns ``(status, index)`` where ``index`` is the failing sub-step; rows
    past it are left unset.
    """
    k1 = np.empty(8)
    k2 = np.empty(8)
    k3 = np.empty(8)
    k4 = np.empty(8)
    tmp = np.empty(8)
    trace[0, :] = X0
    for i in range(n):
        X = trace[i]
        if deriv(X, U, p, th, k1) != OK:
            return DOMAIN, i
        for j in range(8):
            tmp[j] = X[j] + 0.5 * h * k1[j]
        if deriv(tmp, U, p, th, k2) != OK:
            return DOMAIN, i
        for j in range(8):
            tmp[j] = X[j] + 0.5 * h * k2[j]
        if deriv(tmp, U, p, th, k3) != OK:
            return DOMAIN, i
        for j in range(8):
            tmp[j] = X[j] + h * k3[j]
        if deriv(tmp, U, p, th, k4) != OK:
            return DOMAIN, i
        for j in range(8):
            trace[i + 1, j] = X[j] + (h / 6.0) * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j])
            if not np.isfinite(trace[i + 1, j]):
                return NONFINITE, i
    return OK, n
