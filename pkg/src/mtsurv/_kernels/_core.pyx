# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels: transition log-likelihood and conditional-time root solving.

Mirrors ``_fallback.py``; the two must agree to floating-point noise
(see tests/test_kernels.py). The cumulative hazard uses the same
Gauss-Jacobi construction: integrals from the baseline origin with the
tau^(gamma-1) factor folded into the quadrature weight.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, fabs, isfinite, log, pow

cnp.import_array()

BACKEND = "compiled"

# Must equal model.DECAY_SPAN: with a negative elapsed-time coefficient the
# integral is truncated after this many e-foldings of exponential decay.
cdef double DECAY_SPAN = 45.0


cdef double _from_origin(
    double lam, double gam, double scale, double d2, double off, double T,
    const double[::1] qx, const double[::1] qw,
) noexcept nogil:
    # int_0^T lam*gam*tau^(gam-1)*exp(scale + d2*(tau + off)) dtau
    cdef Py_ssize_t i, n = qx.shape[0]
    cdef double acc = 0.0
    cdef double tau
    if d2 < 0.0 and T > DECAY_SPAN / -d2:
        T = DECAY_SPAN / -d2
    if T <= 0.0:
        return 0.0
    for i in range(n):
        tau = 0.5 * T * (1.0 + qx[i])
        acc += qw[i] * exp(scale + d2 * (tau + off))
    return lam * gam * pow(0.5 * T, gam) * acc


cdef double _cumhaz_row(
    double lam, double gam, double lp, double d1, double d2,
    bint use_d1, bint use_d2, bint clock_reset,
    double r, double a, double b,
    const double[::1] qx, const double[::1] qw,
) noexcept nogil:
    cdef double scale = lp + (d1 * r if use_d1 else 0.0)
    cdef double ta, tb, r0, off
    if not use_d2:
        if clock_reset:
            ta = a - r
            tb = b - r
        else:
            ta = a
            tb = b
        return lam * (pow(tb, gam) - pow(ta, gam)) * exp(scale)
    if b <= a:
        return 0.0
    r0 = r if clock_reset else 0.0
    off = r0 - r
    cdef double diff = (
        _from_origin(lam, gam, scale, d2, off, b - r0, qx, qw)
        - _from_origin(lam, gam, scale, d2, off, a - r0, qx, qw)
    )
    return diff if diff > 0.0 else 0.0


cdef double _hazard_row(
    double lam, double gam, double lp, double d1, double d2,
    bint use_d1, bint use_d2, bint clock_reset, double r, double t,
) noexcept nogil:
    cdef double tau = t - r if clock_reset else t
    cdef double z = lp
    if use_d1:
        z += d1 * r
    if use_d2:
        z += d2 * (t - r)
    return lam * gam * pow(tau, gam - 1.0) * exp(z)


def transition_loglik(
    start, stop, status, entry, lp, double lam, double gam, double d1, double d2,
    bint use_d1, bint use_d2, bint clock_reset, qx, qw,
):
    """Sum of per-row contributions -H(start, stop) + d * log h(stop)."""
    cdef const double[::1] start_v = np.ascontiguousarray(start, dtype=np.float64)
    cdef const double[::1] stop_v = np.ascontiguousarray(stop, dtype=np.float64)
    cdef const long[::1] status_v = np.ascontiguousarray(status, dtype=np.int_)
    cdef const double[::1] entry_v = np.ascontiguousarray(entry, dtype=np.float64)
    cdef const double[::1] lp_v = np.ascontiguousarray(lp, dtype=np.float64)
    cdef const double[::1] qx_v = np.ascontiguousarray(qx, dtype=np.float64)
    cdef const double[::1] qw_v = np.ascontiguousarray(qw, dtype=np.float64)
    cdef Py_ssize_t i, n = stop_v.shape[0]
    cdef double ll = 0.0
    cdef double tau
    with nogil:
        for i in range(n):
            ll -= _cumhaz_row(
                lam, gam, lp_v[i], d1, d2, use_d1, use_d2, clock_reset,
                entry_v[i], start_v[i], stop_v[i], qx_v, qw_v,
            )
            if status_v[i] > 0:
                tau = stop_v[i] - entry_v[i] if clock_reset else stop_v[i]
                ll += log(lam * gam) + (gam - 1.0) * log(tau) + lp_v[i]
                if use_d1:
                    ll += d1 * entry_v[i]
                if use_d2:
                    ll += d2 * (stop_v[i] - entry_v[i])
    return float(ll)


def solve_conditional_times(
    double lam, double gam, lp, double d1, double d2,
    bint use_d1, bint use_d2, bint clock_reset, r, u, double tol, qx, qw,
    int max_doublings=40,
):
    """Solve exp(-H(r, T)) = u for T > r, elementwise.

    Safeguarded Newton within a bisection bracket; the target survival is
    strictly decreasing in T so the root is unique when it exists. Returns
    (times, plateau_mask) where plateau_mask marks rows whose survival never
    drops to u (no root; times undefined there).
    """
    r_arr = np.atleast_1d(np.asarray(r, dtype=np.float64))
    u_arr = np.atleast_1d(np.asarray(u, dtype=np.float64))
    lp_arr = np.ascontiguousarray(
        np.broadcast_to(np.asarray(lp, dtype=np.float64), r_arr.shape)
    )
    cdef const double[::1] r_v = np.ascontiguousarray(r_arr)
    cdef const double[::1] u_v = np.ascontiguousarray(u_arr)
    cdef const double[::1] lp_v = lp_arr
    cdef const double[::1] qx_v = np.ascontiguousarray(qx, dtype=np.float64)
    cdef const double[::1] qw_v = np.ascontiguousarray(qw, dtype=np.float64)
    cdef Py_ssize_t i, n = r_v.shape[0]
    times = np.empty(n, dtype=np.float64)
    plateau = np.zeros(n, dtype=bool)
    cdef double[::1] times_v = times
    cdef cnp.uint8_t[::1] plateau_v = plateau.view(np.uint8)
    cdef double ri, li, target, lo, hi, x, g, resid, hz, step, x_new, width_cap
    cdef int k, it
    with nogil:
        for i in range(n):
            ri = r_v[i]
            li = lp_v[i]
            target = -log(u_v[i])
            hi = ri + 1.0
            k = 0
            while (
                _cumhaz_row(lam, gam, li, d1, d2, use_d1, use_d2, clock_reset,
                            ri, ri, hi, qx_v, qw_v) < target
            ):
                k += 1
                if k > max_doublings:
                    break
                hi = ri + pow(2.0, k)
            if k > max_doublings:
                plateau_v[i] = 1
                times_v[i] = hi
                continue
            lo = ri
            x = 0.5 * (lo + hi)
            for it in range(200):
                g = _cumhaz_row(lam, gam, li, d1, d2, use_d1, use_d2, clock_reset,
                                ri, ri, x, qx_v, qw_v) - target
                resid = fabs(exp(-(g + target)) - u_v[i])
                width_cap = 1e-13 * (hi if hi > 1.0 else 1.0)
                if resid <= tol or (hi - lo) <= width_cap:
                    break
                if g > 0.0:
                    hi = x
                else:
                    lo = x
                hz = _hazard_row(lam, gam, li, d1, d2, use_d1, use_d2, clock_reset, ri, x)
                step = g / hz if hz > 0.0 else 0.0
                x_new = x - step
                if not isfinite(x_new) or x_new <= lo or x_new >= hi:
                    x_new = 0.5 * (lo + hi)
                x = x_new
            times_v[i] = x
    return times, plateau
