"""State-occupancy probabilities and length of stay, with delta-method uncertainty.

Two routes are provided and are expected to agree: nested Gauss-Legendre
quadrature of the occupancy integrals, and plain cohort simulation with no
censoring. Only predictions from state 1 at time 0 are supported; general
conditional predictions from a later time are rejected.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd

from .errors import ConfigError, ConvergenceError, DomainError
from .estimation import FitResult, unpack_model
from .model import DECAY_SPAN, DEFAULT_QUAD, ModelSpec, QuadratureConfig
from .simulate import ROOT_TOL, _uniforms, latent_times

STATE_COLUMNS = ("state1", "state2", "state3")


@dataclass(frozen=True)
class PredictionGrid:
    """Occupancy probabilities and LOS over a time grid, one row per time."""

    times: np.ndarray
    probs: np.ndarray  # (n_times, 3)
    los: np.ndarray  # (n_times, 3)
    method: str
    probs_se: np.ndarray | None = None
    los_se: np.ndarray | None = None
    los_complement_gap: float = 0.0
    quad_error_estimate: float | None = None

    def to_frame(self, label: str = "", ci: "DeltaCI | None" = None) -> pd.DataFrame:
        """Tidy rows: time, state, measure, estimate, se, lower, upper, method, model."""
        rows = []
        for measure, values, ses in (
            ("prob", self.probs, self.probs_se),
            ("los", self.los, self.los_se),
        ):
            bounds = None
            if ci is not None:
                bounds = ci.prob_bounds if measure == "prob" else ci.los_bounds
                ses = ci.probs_se if measure == "prob" else ci.los_se
            for j, state in enumerate(STATE_COLUMNS):
                for i, t in enumerate(self.times):
                    rows.append(
                        {
                            "time": t,
                            "state": state,
                            "measure": measure,
                            "estimate": values[i, j],
                            "se": np.nan if ses is None else ses[i, j],
                            "lower": np.nan if bounds is None else bounds[0][i, j],
                            "upper": np.nan if bounds is None else bounds[1][i, j],
                            "method": self.method,
                            "model": label,
                        }
                    )
        return pd.DataFrame(rows)


def _validate_times(times, start_time):
    if start_time != 0.0:
        raise ConfigError(
            "only predictions from state 1 at time 0 are supported; "
            f"conditional predictions from u={start_time} are out of scope"
        )
    times = np.atleast_1d(np.asarray(times, dtype=float))
    if np.any(times < 0) or np.any(np.diff(times) < 0):
        raise DomainError("prediction times must be nondecreasing and nonnegative")
    return times


def _state1_exit_survival(model: ModelSpec, x, t):
    """exp(-H1(0,t) - H2(0,t)); transitions out of state 1 are clock-forward."""
    s1, s2 = model.transitions[0], model.transitions[1]
    lp1, lp2 = s1.linear_predictor(x), s2.linear_predictor(x)
    t = np.asarray(t, dtype=float)
    return np.exp(
        -s1.lam * t**s1.gamma * np.exp(lp1) - s2.lam * t**s2.gamma * np.exp(lp2)
    )


def _p12_batch(model: ModelSpec, x, ts, quad: QuadratureConfig, inner: QuadratureConfig):
    """p12(0, t) for an array of horizons, fully vectorized.

    Outer integral over the state-2 entry time v in [0, t]; the survival in
    state 2 from v to t is closed form unless the elapsed-time effect delta2
    is present, in which case an inner quadrature runs over [v, t].
    """
    s1, s2, s3 = model.transitions
    lp1, lp2, lp3 = (s.linear_predictor(x) for s in model.transitions)
    ts = np.asarray(ts, dtype=float)
    out = np.zeros(ts.shape)
    live = ts > 0
    if not np.any(live):
        return out
    t = ts[live][:, None]  # (n, 1)
    # Outer rule over the entry time v on [0, t]: Gauss-Jacobi with the
    # v^(gamma1-1) factor of the illness hazard folded into the weight.
    gx, gw = quad.jacobi_points(s1.gamma)
    v = 0.5 * t * (1.0 + gx[None, :])  # (n, m) entry-time nodes
    h1_smooth = s1.lam * s1.gamma * np.exp(lp1)  # h1(v) / v^(gamma1-1)
    p11_v = np.exp(
        -s1.lam * v**s1.gamma * np.exp(lp1) - s2.lam * v**s2.gamma * np.exp(lp2)
    )
    scale3 = lp3 + (s3.delta1 * v if s3.delta1 is not None else np.zeros_like(v))
    if s3.delta2 is None:
        if s3.clock == "reset":
            H3 = s3.lam * (t - v) ** s3.gamma * np.exp(scale3)
        else:
            H3 = s3.lam * (t**s3.gamma - v**s3.gamma) * np.exp(scale3)
    else:
        # Same Gauss-Jacobi construction as cumulative_hazard: integrals from
        # the baseline origin with tau^(gamma-1) folded into the weight.
        ix, iw = inner.jacobi_points(s3.gamma)
        d2 = s3.delta2

        def from_origin(T, u_offset):
            # int_0^T lam*gam*tau^(gam-1)*exp(scale3 + d2*(tau + u_offset)) dtau
            if d2 < 0.0:
                # Truncate where the exponential has fully decayed (DECAY_SPAN
                # e-foldings), so nodes stay on the integrand's support.
                T = np.minimum(T, DECAY_SPAN / -d2)
            tau = 0.5 * T[..., None] * (1.0 + ix)
            vals = np.exp(scale3[..., None] + d2 * (tau + u_offset[..., None]))
            return s3.lam * s3.gamma * (0.5 * T) ** s3.gamma * (vals @ iw)

        if s3.clock == "reset":
            H3 = from_origin(t - v, np.zeros_like(v))
        else:
            H3 = np.maximum(
                from_origin(np.broadcast_to(t, v.shape), -v) - from_origin(v, -v), 0.0
            )
    integrand = h1_smooth * p11_v * np.exp(-H3)
    out[live] = (0.5 * ts[live]) ** s1.gamma * (integrand @ gw)
    return out


def occupancy_quadrature(
    model: ModelSpec,
    x=None,
    times=(5.0,),
    quad: QuadratureConfig = DEFAULT_QUAD,
    inner: QuadratureConfig | None = None,
    start_time: float = 0.0,
    check: bool = True,
) -> PredictionGrid:
    """Occupancy probabilities and LOS on a grid by nested quadrature.

    p11 is closed form, p12 is the entry-time integral, p13 the complement.
    LOS integrates each occupancy curve over [0, t]; L3 is also
    cross-computed as t - L1 - L2 and the largest discrepancy is reported.
    A node-doubling self-check warns when the quadrature looks unconverged.
    """
    times = _validate_times(times, start_time)
    x = model.check_covariates(x)
    inner = inner or quad

    p11 = _state1_exit_survival(model, x, times)
    p11 = np.where(times == 0.0, 1.0, p11)
    p12 = _p12_batch(model, x, times, quad, inner)
    p13 = 1.0 - p11 - p12
    probs = np.column_stack([p11, p12, p13])

    gx, gw = quad.points()
    s_nodes = 0.5 * times[:, None] * (1.0 + gx[None, :])  # (n_t, m)
    p11_s = _state1_exit_survival(model, x, s_nodes)
    p12_s = _p12_batch(model, x, s_nodes.ravel(), quad, inner).reshape(s_nodes.shape)
    half_t = 0.5 * times
    L1 = half_t * (p11_s @ gw)
    L2 = half_t * (p12_s @ gw)
    L3_direct = half_t * ((1.0 - p11_s - p12_s) @ gw)
    L3_comp = times - L1 - L2
    gap = float(np.max(np.abs(L3_direct - L3_comp))) if times.size else 0.0
    los = np.column_stack([L1, L2, L3_direct])

    err = None
    if check and np.any(times > 0):
        t_ref = float(times[times > 0].max())
        dbl = QuadratureConfig(2 * quad.nodes)
        ref = _p12_batch(model, x, np.array([t_ref]), dbl, QuadratureConfig(2 * inner.nodes))
        cur = _p12_batch(model, x, np.array([t_ref]), quad, inner)
        err = float(abs(ref[0] - cur[0]))
        if err > 1e-6:
            warnings.warn(
                f"occupancy quadrature may be unconverged: doubling the nodes "
                f"moves p12({t_ref}) by {err:.3g}; increase quad nodes",
                stacklevel=2,
            )
    return PredictionGrid(
        times=times,
        probs=probs,
        los=los,
        method="quadrature",
        los_complement_gap=gap,
        quad_error_estimate=err,
    )


def occupancy_simulation(
    model: ModelSpec,
    x=None,
    times=(5.0,),
    n_paths: int = 100_000,
    seed: int = 0,
    quad: QuadratureConfig = DEFAULT_QUAD,
    start_time: float = 0.0,
) -> PredictionGrid:
    """Occupancy and LOS from simulated uncensored trajectories at fixed covariates.

    Probabilities are empirical state fractions (binomial SEs); LOS is the
    mean truncated time in state (SE from the per-path standard deviation).
    Deterministic given the seed.
    """
    times = _validate_times(times, start_time)
    x = model.check_covariates(x)
    if n_paths < 1:
        raise ConfigError("n_paths must be at least 1")
    u = _uniforms(seed, n_paths, 3)
    X = np.broadcast_to(x, (n_paths, x.size))
    T1, T2, T3, ill = latent_times(
        model, X, u[:, 0], u[:, 1], u[:, 2], quad, plateau_to_inf=True
    )
    exit1 = np.minimum(T1, T2)

    probs = np.empty((times.size, 3))
    probs_se = np.empty_like(probs)
    los = np.empty_like(probs)
    los_se = np.empty_like(probs)
    for i, t in enumerate(times):
        in1 = exit1 > t
        in2 = ill & (T1 <= t) & (T3 > t)
        p1, p2 = in1.mean(), in2.mean()
        probs[i] = (p1, p2, 1.0 - p1 - p2)
        probs_se[i] = np.sqrt(probs[i] * (1.0 - probs[i]) / n_paths)
        stay1 = np.minimum(exit1, t)
        stay2 = np.where(ill, np.clip(np.minimum(T3, t) - np.minimum(T1, t), 0.0, None), 0.0)
        stay3 = t - stay1 - stay2
        los[i] = (stay1.mean(), stay2.mean(), stay3.mean())
        los_se[i] = [s.std(ddof=1) / np.sqrt(n_paths) for s in (stay1, stay2, stay3)]
    return PredictionGrid(
        times=times,
        probs=probs,
        los=los,
        method="simulation",
        probs_se=probs_se,
        los_se=los_se,
    )


@dataclass(frozen=True)
class DeltaCI:
    """Delta-method SEs and 95% bounds; logit scale for probabilities, log for LOS."""

    probs_se: np.ndarray
    los_se: np.ndarray
    prob_bounds: tuple[np.ndarray, np.ndarray]
    los_bounds: tuple[np.ndarray, np.ndarray]


_Z95 = 1.959963984540054


def _logit_interval(p, se):
    lower = np.array(p, dtype=float)
    upper = np.array(p, dtype=float)
    interior = (p > 0.0) & (p < 1.0) & (se > 0.0)
    pi, si = p[interior], se[interior]
    half = _Z95 * si / (pi * (1.0 - pi))
    eta = np.log(pi / (1.0 - pi))
    lower[interior] = 1.0 / (1.0 + np.exp(-(eta - half)))
    upper[interior] = 1.0 / (1.0 + np.exp(-(eta + half)))
    return np.clip(lower, 0.0, 1.0), np.clip(upper, 0.0, 1.0)


def _log_interval(v, se):
    lower = np.array(v, dtype=float)
    upper = np.array(v, dtype=float)
    interior = (v > 0.0) & (se > 0.0)
    vi, si = v[interior], se[interior]
    f = np.exp(_Z95 * si / vi)
    lower[interior] = vi / f
    upper[interior] = vi * f
    return lower, upper


def prediction_ci_delta(
    fit: FitResult,
    x=None,
    times=(5.0,),
    quad: QuadratureConfig = DEFAULT_QUAD,
    rel_step: float = 1e-4,
    abs_floor: float = 1e-6,
    allow_unconverged: bool = False,
) -> DeltaCI:
    """Propagate the fit covariance through the quadrature predictor.

    Central-difference Jacobian of every predicted cell with respect to the
    internal parameter vector; SE = sqrt(J' Sigma J) per cell.
    """
    if not fit.converged and not allow_unconverged:
        raise ConvergenceError(
            "fit did not converge; predictions are blocked (pass allow_unconverged=True to override)"
        )
    times = _validate_times(times, 0.0)
    sigma = fit.covariance
    eigs = np.linalg.eigvalsh(0.5 * (sigma + sigma.T))
    if eigs.min() < -1e-8 * max(1.0, eigs.max()):
        raise DomainError("fit covariance is not positive semidefinite")
    theta = fit.theta

    def predict(th):
        grid = occupancy_quadrature(
            unpack_model(fit.model, th), x, times, quad, check=False
        )
        return np.concatenate([grid.probs.ravel(), grid.los.ravel()])

    n_out = times.size * 6
    J = np.empty((n_out, theta.size))
    for i in range(theta.size):
        h = max(rel_step * abs(theta[i]), abs_floor)
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        J[:, i] = (predict(up) - predict(dn)) / (2.0 * h)
    var = np.einsum("ij,jk,ik->i", J, sigma, J)
    se = np.sqrt(np.clip(var, 0.0, None))
    probs_se = se[: times.size * 3].reshape(times.size, 3)
    los_se = se[times.size * 3 :].reshape(times.size, 3)

    base = occupancy_quadrature(fit.model, x, times, quad, check=False)
    return DeltaCI(
        probs_se=probs_se,
        los_se=los_se,
        prob_bounds=_logit_interval(base.probs, probs_se),
        los_bounds=_log_interval(base.los, los_se),
    )
