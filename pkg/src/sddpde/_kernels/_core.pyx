# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled backend for the time-stepping loop.

Loop-level translation of ``_pycore.py``; see that module for the array
layout.  Everything below ``integrate`` runs without the GIL.
"""
from libc.math cimport exp, fabs, sqrt, fmax, fmin, NAN, isnan

import numpy as np

NAME = "cython"

cdef double GL_X[4]
cdef double GL_W[4]
_x, _w = np.polynomial.legendre.leggauss(4)
for _i in range(4):
    GL_X[_i] = 0.5 * (1.0 + _x[_i])
    GL_W[_i] = 0.5 * _w[_i]

cdef enum:
    B_NICHOLSON = 0
    B_SATLIN = 1
    B_CONSTANT = 2
    ETA_CONSTANT = 0
    ETA_HISTORY = 1
    OK = 0
    FP_FAIL = 1
    WINDOW_FAIL = 2


cdef inline void hermite(const double[::1] times, const double[:, ::1] Y, const double[:, ::1] DL,
                         const double[:, ::1] DR, Py_ssize_t j, double s, double[::1] out) noexcept nogil:
    cdef double t0 = times[j]
    cdef double hh = times[j + 1] - t0
    cdef double u = (s - t0) / hh
    cdef double u2 = u * u
    cdef double u3 = u2 * u
    cdef double a = 2 * u3 - 3 * u2 + 1
    cdef double b = (u3 - 2 * u2 + u) * hh
    cdef double c = -2 * u3 + 3 * u2
    cdef double d = (u3 - u2) * hh
    cdef Py_ssize_t k
    for k in range(Y.shape[1]):
        out[k] = a * Y[j, k] + b * DR[j, k] + c * Y[j + 1, k] + d * DL[j + 1, k]


cdef inline Py_ssize_t locate(const double[::1] times, Py_ssize_t i_last, double* s) noexcept nogil:
    cdef double lo = times[0]
    cdef double hi = times[i_last]
    cdef double tol = 1e-12 * fmax(1.0, fmax(fabs(hi), hi - lo))
    cdef double x = s[0]
    if x < lo - tol or x > hi + tol:
        return -1
    x = fmin(fmax(x, lo), hi)
    s[0] = x
    # largest j with times[j] <= x, then clipped to a valid segment
    cdef Py_ssize_t a = 0, b = i_last + 1, mid
    while a < b:
        mid = (a + b) // 2
        if x < times[mid]:
            b = mid
        else:
            a = mid + 1
    cdef Py_ssize_t j = a - 1
    if j > i_last - 1:
        j = i_last - 1
    if j < 0:
        j = 0
    return j


cdef double seg_energy_c(const double[::1] times, const double[:, ::1] Y, const double[:, ::1] DL,
                         const double[:, ::1] DR, const double[::1] inv_lam, Py_ssize_t j,
                         double a, double b, double[::1] work) noexcept nogil:
    if b <= a:
        return 0.0
    cdef double acc = 0.0, part
    cdef Py_ssize_t q, k
    for q in range(4):
        hermite(times, Y, DL, DR, j, a + GL_X[q] * (b - a), work)
        part = 0.0
        for k in range(Y.shape[1]):
            part += inv_lam[k] * work[k] * work[k]
        acc += GL_W[q] * part
    return acc * (b - a)


cdef double window_energy_c(const double[::1] times, const double[:, ::1] Y, const double[:, ::1] DL,
                            const double[:, ::1] DR, const double[::1] P, const double[::1] inv_lam,
                            Py_ssize_t i_last, double a, double[::1] work) noexcept nogil:
    cdef Py_ssize_t j = locate(times, i_last, &a)
    if j < 0:
        return NAN
    return seg_energy_c(times, Y, DL, DR, inv_lam, j, a, times[j + 1], work) + (P[i_last] - P[j + 1])


cdef double delay_c(const double[::1] times, const double[:, ::1] Y, const double[:, ::1] DL,
                    const double[:, ::1] DR, const double[::1] P, const double[::1] inv_lam,
                    Py_ssize_t i_last, int eta_kind, const double[::1] eta_par, double r,
                    double[::1] work) noexcept nogil:
    if eta_kind == ETA_CONSTANT:
        return eta_par[0]
    cdef double energy = window_energy_c(times, Y, DL, DR, P, inv_lam, i_last, times[i_last] - r, work)
    if isnan(energy):
        return NAN
    cdef double z = eta_par[1] * sqrt(fmax(energy, 0.0))
    return r * z / (1.0 + z)


cdef int rhs_c(const double[::1] times, const double[:, ::1] Y, const double[:, ::1] DL,
               const double[:, ::1] DR, const double[::1] P, const double[::1] inv_lam,
               Py_ssize_t i_last, const double[:, ::1] Kq, const double[:, ::1] Pq,
               int b_kind, const double[::1] b_par, int eta_kind, const double[::1] eta_par,
               double r, double[::1] out, double[::1] w, double[::1] zq, double* tau_out) noexcept nogil:
    cdef double tau = delay_c(times, Y, DL, DR, P, inv_lam, i_last, eta_kind, eta_par, r, w)
    tau_out[0] = tau
    if isnan(tau):
        return WINDOW_FAIL
    cdef double s = times[i_last] - tau
    cdef Py_ssize_t j = locate(times, i_last, &s)
    if j < 0:
        return WINDOW_FAIL
    hermite(times, Y, DL, DR, j, s, w)
    cdef Py_ssize_t q, k, nq = Kq.shape[0], m = Kq.shape[1]
    cdef double z, acc
    for q in range(nq):
        acc = 0.0
        for k in range(m):
            acc += Kq[q, k] * w[k]
        if b_kind == B_NICHOLSON:
            z = b_par[0] * acc * exp(-fabs(acc))
        elif b_kind == B_SATLIN:
            z = b_par[0] * fmin(fmax(acc, -b_par[1]), b_par[1])
        else:
            z = b_par[0]
        zq[q] = z
    for k in range(m):
        acc = 0.0
        for q in range(nq):
            acc += Pq[k, q] * zq[q]
        out[k] = acc
    return OK


cdef inline double wnorm(const double[::1] inv_lam, double[::1] a, double[::1] b, double scale) noexcept nogil:
    cdef double acc = 0.0, d
    cdef Py_ssize_t k
    for k in range(a.shape[0]):
        d = a[k] - b[k]
        acc += inv_lam[k] * d * d
    return scale * sqrt(acc)


# ------------------------------------------------------------------ python API
def seg_energy(const double[::1] times, const double[:, ::1] Y, const double[:, ::1] DL, const double[:, ::1] DR,
               const double[::1] inv_lam, Py_ssize_t j, double a, double b):
    cdef double[::1] work = np.empty(Y.shape[1])
    return seg_energy_c(times, Y, DL, DR, inv_lam, j, a, b, work)


def prefix_energy(const double[::1] times, const double[:, ::1] Y, const double[:, ::1] DL, const double[:, ::1] DR,
                  const double[::1] inv_lam, double[::1] P, Py_ssize_t start, Py_ssize_t stop):
    cdef double[::1] work = np.empty(Y.shape[1])
    cdef Py_ssize_t j
    with nogil:
        for j in range(start, stop):
            P[j + 1] = P[j] + seg_energy_c(times, Y, DL, DR, inv_lam, j, times[j], times[j + 1], work)


def window_energy(const double[::1] times, const double[:, ::1] Y, const double[:, ::1] DL, const double[:, ::1] DR,
                  const double[::1] P, const double[::1] inv_lam, Py_ssize_t i_last, double a):
    cdef double[::1] work = np.empty(Y.shape[1])
    return window_energy_c(times, Y, DL, DR, P, inv_lam, i_last, a, work)


def apply_b(z, int b_kind, b_par):
    z = np.asarray(z, dtype=float)
    if b_kind == B_NICHOLSON:
        return b_par[0] * z * np.exp(-np.abs(z))
    if b_kind == B_SATLIN:
        return b_par[0] * np.clip(z, -b_par[1], b_par[1])
    return np.full_like(z, b_par[0])


def delay_at(const double[::1] times, const double[:, ::1] Y, const double[:, ::1] DL, const double[:, ::1] DR,
             const double[::1] P, const double[::1] inv_lam, Py_ssize_t i_last, int eta_kind,
             const double[::1] eta_par, double r):
    cdef double[::1] work = np.empty(Y.shape[1])
    return delay_c(times, Y, DL, DR, P, inv_lam, i_last, eta_kind, eta_par, r, work)


def rhs_at(const double[::1] times, const double[:, ::1] Y, const double[:, ::1] DL, const double[:, ::1] DR,
           const double[::1] P, const double[::1] inv_lam, Py_ssize_t i_last, const double[:, ::1] Kq,
           const double[:, ::1] Pq, int b_kind, const double[::1] b_par, int eta_kind, const double[::1] eta_par,
           double r, double[::1] out):
    cdef double[::1] w = np.empty(Y.shape[1])
    cdef double[::1] zq = np.empty(Kq.shape[0])
    cdef double tau
    cdef int status = rhs_c(times, Y, DL, DR, P, inv_lam, i_last, Kq, Pq, b_kind, b_par,
                            eta_kind, eta_par, r, out, w, zq, &tau)
    return status, tau


def integrate(double[::1] times, double[:, ::1] Y, double[:, ::1] DL, double[:, ::1] DR,
              double[::1] P, Py_ssize_t i_last, double t_base, Py_ssize_t k_base,
              double[::1] F_last, double[::1] F_prev, const double[::1] c, const double[::1] inv_lam,
              const double[::1] E1, const double[::1] PHI1, const double[::1] PHI2,
              const double[:, ::1] Kq, const double[:, ::1] Pq, int b_kind, const double[::1] b_par,
              int eta_kind, const double[::1] eta_par, double r, double h, double fp_tol,
              int fp_max_iter, Py_ssize_t n_steps, int scheme, long[::1] iters, double[::1] trace):
    cdef Py_ssize_t m = Y.shape[1]
    cdef double[::1] g_n = np.empty(m)
    cdef double[::1] Fn = np.empty(m)
    cdef double[::1] Fs = np.empty(m)
    cdef double[::1] Fnew = np.empty(m)
    cdef double[::1] gnew = np.empty(m)
    cdef double[::1] w = np.empty(m)
    cdef double[::1] zq = np.empty(Kq.shape[0])
    cdef Py_ssize_t step, n, k, it
    cdef double t_new, tau, delta, dF
    cdef int status = OK, converged
    cdef Py_ssize_t done = n_steps
    with nogil:
        for step in range(n_steps):
            n = i_last
            for k in range(m):
                g_n[k] = Y[n, k]
                Fn[k] = F_last[k]
                Fs[k] = 2.0 * Fn[k] - F_prev[k]
            t_new = t_base + (k_base + step + 1) * h
            for k in range(m):
                if scheme == 1:
                    Y[n + 1, k] = E1[k] * g_n[k] + PHI1[k] * Fn[k]
                else:
                    Y[n + 1, k] = E1[k] * g_n[k] + PHI1[k] * Fn[k] + PHI2[k] * (Fs[k] - Fn[k])
            converged = 0
            for it in range(fp_max_iter):
                times[n + 1] = t_new
                for k in range(m):
                    DL[n + 1, k] = -c[k] * Y[n + 1, k] + Fs[k]
                    DR[n + 1, k] = DL[n + 1, k]
                P[n + 1] = P[n] + seg_energy_c(times, Y, DL, DR, inv_lam, n, times[n], t_new, w)
                status = rhs_c(times, Y, DL, DR, P, inv_lam, n + 1, Kq, Pq, b_kind, b_par,
                               eta_kind, eta_par, r, Fnew, w, zq, &tau)
                if status != OK:
                    break
                for k in range(m):
                    if scheme == 1:
                        gnew[k] = Y[n + 1, k]
                    else:
                        gnew[k] = E1[k] * g_n[k] + PHI1[k] * Fn[k] + PHI2[k] * (Fnew[k] - Fn[k])
                delta = wnorm(inv_lam, gnew, Y[n + 1], 1.0)
                dF = wnorm(inv_lam, Fnew, Fs, h)
                if dF > delta:
                    delta = dF
                trace[it] = delta
                for k in range(m):
                    Fs[k] = Fnew[k]
                if delta < fp_tol:
                    converged = 1
                    iters[k_base + step] = it + 1
                    break
                for k in range(m):
                    Y[n + 1, k] = gnew[k]
            if status != OK:
                done = step
                break
            if not converged:
                iters[k_base + step] = fp_max_iter
                status = FP_FAIL
                done = step
                break
            if scheme != 1:
                for k in range(m):
                    Y[n + 1, k] = gnew[k]
                    DL[n + 1, k] = -c[k] * gnew[k] + Fnew[k]
                    DR[n + 1, k] = DL[n + 1, k]
                P[n + 1] = P[n] + seg_energy_c(times, Y, DL, DR, inv_lam, n, times[n], t_new, w)
                status = rhs_c(times, Y, DL, DR, P, inv_lam, n + 1, Kq, Pq, b_kind, b_par,
                               eta_kind, eta_par, r, Fnew, w, zq, &tau)
                if status != OK:
                    done = step
                    break
            for k in range(m):
                DL[n + 1, k] = -c[k] * Y[n + 1, k] + Fnew[k]
                DR[n + 1, k] = DL[n + 1, k]
                F_prev[k] = Fn[k]
                F_last[k] = Fnew[k]
            P[n + 1] = P[n] + seg_energy_c(times, Y, DL, DR, inv_lam, n, times[n], t_new, w)
            i_last = n + 1
    return status, i_last, done
