"""Pure-Python/NumPy backend for the time-stepping loop.

Mirrors ``_core.pyx`` operation for operation; the compiled module is a
loop-level translation of this file.  Array layout shared by both:

``times[cap]``, ``Y/DL/DR[cap, m]`` hold history nodes (value, left and
right derivative), ``P[cap]`` the running integral of
``||A^{-1/2} u(s)||^2`` from ``times[0]``.  ``i_last`` indexes the newest
node.
"""
from __future__ import annotations

import math
from bisect import bisect_right

import numpy as np

# 4-point Gauss-Legendre on [0, 1]; exact for the degree-6 squared Hermite pieces
_GL_X = (0.5 * (1.0 + np.polynomial.legendre.leggauss(4)[0])).tolist()
_GL_W = (0.5 * np.polynomial.legendre.leggauss(4)[1]).tolist()

B_NICHOLSON, B_SATLIN, B_CONSTANT = 0, 1, 2
ETA_CONSTANT, ETA_HISTORY = 0, 1
OK, FP_FAIL, WINDOW_FAIL = 0, 1, 2

NAME = "python"


def _hermite(times, Y, DL, DR, j, s, deriv=False):
    t0 = times[j]
    hh = times[j + 1] - t0
    u = (s - t0) / hh
    u2 = u * u
    u3 = u2 * u
    if deriv:
        return ((6 * u2 - 6 * u) / hh * Y[j] + (3 * u2 - 4 * u + 1) * DR[j]
                + (-6 * u2 + 6 * u) / hh * Y[j + 1] + (3 * u2 - 2 * u) * DL[j + 1])
    return ((2 * u3 - 3 * u2 + 1) * Y[j] + (u3 - 2 * u2 + u) * hh * DR[j]
            + (-2 * u3 + 3 * u2) * Y[j + 1] + (u3 - u2) * hh * DL[j + 1])


def _locate(times, i_last, s):
    """Segment index j with times[j] <= s <= times[j+1], or -1 if outside."""
    lo, hi = times[0], times[i_last]
    tol = 1e-12 * max(1.0, abs(hi), hi - lo)
    if s < lo - tol or s > hi + tol:
        return -1, s
    s = min(max(s, lo), hi)
    j = bisect_right(times, s, 0, i_last + 1) - 1
    if j > i_last - 1:
        j = i_last - 1
    if j < 0:
        j = 0
    return j, s


def seg_energy(times, Y, DL, DR, inv_lam, j, a, b):
    """Integral of ||A^{-1/2} p(s)||^2 over [a, b] inside segment j."""
    if b <= a:
        return 0.0
    acc = 0.0
    for x, w in zip(_GL_X, _GL_W):
        v = _hermite(times, Y, DL, DR, j, a + x * (b - a))
        acc += w * float(np.dot(inv_lam, v * v))
    return acc * (b - a)


def prefix_energy(times, Y, DL, DR, inv_lam, P, start, stop):
    """Fill P[start+1 .. stop] from P[start]."""
    for j in range(start, stop):
        P[j + 1] = P[j] + seg_energy(times, Y, DL, DR, inv_lam, j, times[j], times[j + 1])


def window_energy(times, Y, DL, DR, P, inv_lam, i_last, a):
    j, a = _locate(times, i_last, a)
    if j < 0:
        return math.nan
    part = seg_energy(times, Y, DL, DR, inv_lam, j, a, times[j + 1])
    return part + (P[i_last] - P[j + 1])


def apply_b(z, b_kind, b_par):
    if b_kind == B_NICHOLSON:
        return b_par[0] * z * np.exp(-np.abs(z))
    if b_kind == B_SATLIN:
        return b_par[0] * np.clip(z, -b_par[1], b_par[1])
    return np.full_like(z, b_par[0])


def delay_at(times, Y, DL, DR, P, inv_lam, i_last, eta_kind, eta_par, r):
    if eta_kind == ETA_CONSTANT:
        return eta_par[0]
    energy = window_energy(times, Y, DL, DR, P, inv_lam, i_last, times[i_last] - r)
    if math.isnan(energy):
        return math.nan
    z = eta_par[1] * math.sqrt(max(energy, 0.0))
    return r * z / (1.0 + z)


def rhs_at(times, Y, DL, DR, P, inv_lam, i_last, Kq, Pq, b_kind, b_par,
           eta_kind, eta_par, r, out):
    """F1 of the history ending at node ``i_last``; writes into ``out``.

    Returns ``(status, tau)``.
    """
    tau = delay_at(times, Y, DL, DR, P, inv_lam, i_last, eta_kind, eta_par, r)
    if math.isnan(tau):
        return WINDOW_FAIL, tau
    j, s = _locate(times, i_last, times[i_last] - tau)
    if j < 0:
        return WINDOW_FAIL, tau
    w = _hermite(times, Y, DL, DR, j, s)
    out[:] = Pq @ apply_b(Kq @ w, b_kind, b_par)
    return OK, tau


def integrate(times, Y, DL, DR, P, i_last, t_base, k_base, F_last, F_prev,
              c, inv_lam, E1, PHI1, PHI2, Kq, Pq, b_kind, b_par, eta_kind, eta_par,
              r, h, fp_tol, fp_max_iter, n_steps, scheme, iters, trace):
    """Advance ``n_steps`` fixed steps.

    ``scheme`` 1 is exponential Euler, 2 the exponential trapezoidal rule
    (forcing linearly interpolated across the step, fixed-point in the
    end value, then one polishing pass at the corrected state).
    ``F_last``/``F_prev`` hold F1 at the two newest nodes and
    are updated in place.  Returns ``(status, i_last, step_index)``.
    """
    m = Y.shape[1]
    Fs = np.empty(m)
    Fnew = np.empty(m)
    for step in range(n_steps):
        n = i_last
        g_n = Y[n].copy()
        Fn = F_last.copy()
        t_new = t_base + (k_base + step + 1) * h
        # linear extrapolation of the forcing as initial guess
        Fs[:] = 2.0 * Fn - F_prev
        if scheme == 1:
            gs = E1 * g_n + PHI1 * Fn
        else:
            gs = E1 * g_n + PHI1 * Fn + PHI2 * (Fs - Fn)
        converged = False
        for it in range(fp_max_iter):
            times[n + 1] = t_new
            Y[n + 1] = gs
            DL[n + 1] = -c * gs + Fs
            DR[n + 1] = DL[n + 1]
            P[n + 1] = P[n] + seg_energy(times, Y, DL, DR, inv_lam, n, times[n], t_new)
            status, _ = rhs_at(times, Y, DL, DR, P, inv_lam, n + 1, Kq, Pq, b_kind, b_par,
                               eta_kind, eta_par, r, Fnew)
            if status != OK:
                return status, i_last, step
            if scheme == 1:
                gnew = gs
            else:
                gnew = E1 * g_n + PHI1 * Fn + PHI2 * (Fnew - Fn)
            dg = gnew - gs
            dF = Fnew - Fs
            delta = max(math.sqrt(float(np.dot(inv_lam, dg * dg))),
                        h * math.sqrt(float(np.dot(inv_lam, dF * dF))))
            trace[it] = delta
            Fs[:] = Fnew
            if delta < fp_tol:
                converged = True
                iters[k_base + step] = it + 1
                break
            gs = gnew
        if not converged:
            iters[k_base + step] = fp_max_iter
            return FP_FAIL, i_last, step
        # polish: accept the corrected state and re-evaluate F1 there so the
        # stored derivative is ODE-consistent at the accepted node
        if scheme != 1:
            Y[n + 1] = gnew
            DL[n + 1] = -c * gnew + Fnew
            DR[n + 1] = DL[n + 1]
            P[n + 1] = P[n] + seg_energy(times, Y, DL, DR, inv_lam, n, times[n], t_new)
            status, _ = rhs_at(times, Y, DL, DR, P, inv_lam, n + 1, Kq, Pq, b_kind, b_par,
                               eta_kind, eta_par, r, Fnew)
            if status != OK:
                return status, i_last, step
        DL[n + 1] = -c * Y[n + 1] + Fnew
        DR[n + 1] = DL[n + 1]
        P[n + 1] = P[n] + seg_energy(times, Y, DL, DR, inv_lam, n, times[n], t_new)
        F_prev[:] = Fn
        F_last[:] = Fnew
        i_last = n + 1
    return OK, i_last, n_steps
