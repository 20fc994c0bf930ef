"""Pure-numpy kernels: transition log-likelihood and conditional-time root solving.

Mirrors the compiled extension in ``_core.pyx``; the two must agree to
floating-point noise (see tests/test_kernels.py).
"""

from __future__ import annotations

import numpy as np

from ..model import DECAY_SPAN

BACKEND = "python"


def _cumhaz(lam, gam, lp, d1, d2, use_d1, use_d2, clock_reset, r, a, b, qx, qw):
    """Vectorized integrated hazard over [a, b] per row.

    With an elapsed-time term the integral has no closed form; it is the
    difference of two integrals from the baseline origin, each evaluated by
    the Gauss-Jacobi rule (qx, qw) whose weight carries the tau^(gam-1)
    baseline factor. Must match model.cumulative_hazard node for node.
    """
    scale = lp + (d1 * r if use_d1 else 0.0)
    if not use_d2:
        if clock_reset:
            ta, tb = a - r, b - r
        else:
            ta, tb = a, b
        return lam * (tb**gam - ta**gam) * np.exp(scale)
    out = np.zeros_like(np.asarray(b, dtype=float))
    live = b > a
    if not np.any(live):
        return out
    a_, b_, r_ = a[live], b[live], r[live]
    scale_ = scale[live]
    r0 = r_ if clock_reset else np.zeros_like(r_)

    def from_origin(T):
        if d2 < 0.0:
            # Truncate where the exponential has fully decayed (DECAY_SPAN
            # e-foldings), so nodes stay on the integrand's support.
            T = np.minimum(T, DECAY_SPAN / -d2)
        tau = 0.5 * T[:, None] * (1.0 + qx)[None, :]
        vals = np.exp(scale_[:, None] + d2 * (tau + (r0 - r_)[:, None]))
        res = lam * gam * (0.5 * np.maximum(T, 0.0)) ** gam * (vals @ qw)
        return np.where(T > 0.0, res, 0.0)

    out[live] = np.maximum(from_origin(b_ - r0) - from_origin(a_ - r0), 0.0)
    return out


def _hazard(lam, gam, lp, d1, d2, use_d1, use_d2, clock_reset, r, t):
    tau = t - r if clock_reset else t
    z = lp + (d1 * r if use_d1 else 0.0) + (d2 * (t - r) if use_d2 else 0.0)
    return lam * gam * tau ** (gam - 1.0) * np.exp(z)


def transition_loglik(
    start, stop, status, entry, lp, lam, gam, d1, d2, use_d1, use_d2, clock_reset, qx, qw
):
    """Sum of per-row contributions -H(start, stop) + d * log h(stop)."""
    H = _cumhaz(lam, gam, lp, d1, d2, use_d1, use_d2, clock_reset, entry, start, stop, qx, qw)
    events = status > 0
    tau = (stop - entry) if clock_reset else stop
    ev = (
        np.log(lam * gam)
        + (gam - 1.0) * np.log(tau[events])
        + lp[events]
        + (d1 * entry[events] if use_d1 else 0.0)
        + (d2 * (stop[events] - entry[events]) if use_d2 else 0.0)
    )
    return float(-np.sum(H) + np.sum(ev))


def solve_conditional_times(
    lam, gam, lp, d1, d2, use_d1, use_d2, clock_reset, r, u, tol, qx, qw, max_doublings=40
):
    """Solve exp(-H(r, T)) = u for T > r, elementwise.

    Safeguarded Newton within a bisection bracket; the target survival is
    strictly decreasing in T so the root is unique when it exists. Returns
    (times, plateau_mask) where plateau_mask marks rows whose survival never
    drops to u (no root; times undefined there).
    """
    r = np.asarray(r, dtype=float)
    u = np.asarray(u, dtype=float)
    lp = np.broadcast_to(np.asarray(lp, dtype=float), r.shape).copy()
    target = -np.log(u)

    def H(b):
        return _cumhaz(lam, gam, lp, d1, d2, use_d1, use_d2, clock_reset, r, r, b, qx, qw)

    hi = r + 1.0
    need = H(hi) < target
    k = 0
    while np.any(need) and k < max_doublings:
        k += 1
        hi = np.where(need, r + 2.0**k, hi)
        need = need & (H(hi) < target)
    plateau = need.copy()
    lo = r.copy()
    x = 0.5 * (lo + hi)
    active = ~plateau
    for _ in range(200):
        if not np.any(active):
            break
        g = H(x) - target
        resid = np.abs(np.exp(-(g + target)) - u)
        width_ok = (hi - lo) <= 1e-13 * np.maximum(1.0, hi)
        active = active & (resid > tol) & ~width_ok
        if not np.any(active):
            break
        above = g > 0
        hi = np.where(active & above, x, hi)
        lo = np.where(active & ~above, x, lo)
        hz = _hazard(lam, gam, lp, d1, d2, use_d1, use_d2, clock_reset, r, x)
        with np.errstate(divide="ignore", invalid="ignore"):
            step = np.where(hz > 0, g / hz, 0.0)
        x_new = x - step
        bad = ~np.isfinite(x_new) | (x_new <= lo) | (x_new >= hi)
        x_new = np.where(bad, 0.5 * (lo + hi), x_new)
        x = np.where(active, x_new, x)
    return x, plateau
