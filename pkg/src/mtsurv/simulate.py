"""Cohort simulation under illness-death models with multiple timescales.

Survival times come from inverse-transform sampling wherever the conditional
survival function inverts in closed form, and from safeguarded root finding
when an elapsed-time effect makes it non-invertible. Illness and death times
out of the initial state are competing latent times from independent
uniforms; subjects whose illness time comes first enter state 2 and draw a
conditional death time from there.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from . import _kernels
from .errors import ConfigError, DomainError
from .model import (
    DEFAULT_QUAD,
    ILLNESS_DEATH_MATRIX,
    ModelSpec,
    QuadratureConfig,
    TransitionSpec,
)

ROOT_TOL = 1e-10


@dataclass(frozen=True)
class NormalCovariate:
    mean: float = 0.0
    sd: float = 1.0

    def from_uniform(self, u):
        from scipy.stats import norm

        return self.mean + self.sd * norm.ppf(u)

    def to_dict(self):
        return {"kind": "normal", "mean": self.mean, "sd": self.sd}


@dataclass(frozen=True)
class BernoulliCovariate:
    p: float = 0.5

    def from_uniform(self, u):
        return (u < self.p).astype(float)

    def to_dict(self):
        return {"kind": "bernoulli", "p": self.p}


def covariate_gen_from_dict(d: dict):
    kind = d.get("kind")
    if kind == "normal":
        return NormalCovariate(mean=d.get("mean", 0.0), sd=d.get("sd", 1.0))
    if kind == "bernoulli":
        return BernoulliCovariate(p=d.get("p", 0.5))
    raise ConfigError(f"unknown covariate generator kind {kind!r}")


@dataclass(frozen=True)
class SimulationConfig:
    n_subjects: int
    model: ModelSpec
    covariate_gen: tuple = ()
    censoring_time: float = 5.0
    seed: int = 0

    def __post_init__(self):
        if self.n_subjects < 1:
            raise ConfigError("n_subjects must be at least 1")
        if not self.censoring_time > 0:
            raise ConfigError("censoring_time must be positive")
        if len(self.covariate_gen) != len(self.model.covariate_names):
            raise ConfigError(
                f"{len(self.covariate_gen)} covariate generators for "
                f"{len(self.model.covariate_names)} covariates"
            )


def simulation_config_to_dict(cfg: SimulationConfig) -> dict:
    return {
        "schema_version": 1,
        "n_subjects": cfg.n_subjects,
        "censoring_time": cfg.censoring_time,
        "seed": cfg.seed,
        "model": cfg.model.to_dict(),
        "covariate_gen": [
            {"name": n, **g.to_dict()}
            for n, g in zip(cfg.model.covariate_names, cfg.covariate_gen)
        ],
    }


def simulation_config_from_dict(d: dict) -> SimulationConfig:
    try:
        if d.get("schema_version") != 1:
            raise ConfigError(
                f"unsupported simulation schema_version {d.get('schema_version')!r}"
            )
        model = ModelSpec.from_dict(d["model"])
        gens = tuple(covariate_gen_from_dict(e) for e in d.get("covariate_gen", []))
        return SimulationConfig(
            n_subjects=int(d["n_subjects"]),
            model=model,
            covariate_gen=gens,
            censoring_time=float(d.get("censoring_time", 5.0)),
            seed=int(d.get("seed", 0)),
        )
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"malformed simulation config: {exc}") from exc


@dataclass(frozen=True)
class SimulatedCohort:
    wide: pd.DataFrame
    long: pd.DataFrame
    config: SimulationConfig


def _check_u(u):
    u = np.asarray(u, dtype=float)
    if np.any((u <= 0.0) | (u >= 1.0)):
        raise DomainError("uniform draws must lie strictly inside (0, 1)")
    return u


def draw_weibull_time(lam: float, gamma: float, linpred, u):
    """Closed-form inverse of S(T) = u for the Weibull proportional-hazards model."""
    u = _check_u(u)
    return (-np.log(u) / (lam * np.exp(np.asarray(linpred, dtype=float)))) ** (1.0 / gamma)


def draw_case1_time(lam: float, gamma: float, linpred, delta1: float, r, u):
    """Inverse of S(T)/S(r) = u when the hazard adds a time-at-entry term.

    The entry-time effect scales the hazard by exp(delta1*r), leaving it
    invertible: T = (-log(u)/(lam*exp(lp + delta1*r)) + r^gamma)^(1/gamma).
    Always exceeds r.
    """
    u = _check_u(u)
    r = np.asarray(r, dtype=float)
    lp = np.asarray(linpred, dtype=float)
    return (-np.log(u) / (lam * np.exp(lp + delta1 * r)) + r**gamma) ** (1.0 / gamma)


def draw_root_time(
    spec: TransitionSpec,
    linpred,
    r,
    u,
    tol: float = ROOT_TOL,
    quad: QuadratureConfig = DEFAULT_QUAD,
    plateau_to_inf: bool = False,
):
    """Solve conditional_survival(T | r) = u by bracketed root finding.

    The target is strictly decreasing in T, so the root is unique whenever
    survival actually falls below u. A survival plateau above u (possible
    with a strongly negative delta2) means no finite transition time exists:
    by default that is a domain error, but with ``plateau_to_inf`` such draws
    come back as ``inf`` (the transition never occurs), which is the right
    semantics when simulating whole paths.
    """
    u = _check_u(u)
    r = np.asarray(r, dtype=float)
    scalar = r.ndim == 0 and np.asarray(u).ndim == 0
    r, u = np.atleast_1d(r), np.atleast_1d(u)
    lp = np.broadcast_to(np.asarray(linpred, dtype=float), r.shape)
    qx, qw = quad.jacobi_points(spec.gamma)
    times, plateau = _kernels.solve_conditional_times(
        spec.lam,
        spec.gamma,
        np.ascontiguousarray(lp),
        spec.delta1 if spec.delta1 is not None else 0.0,
        spec.delta2 if spec.delta2 is not None else 0.0,
        spec.delta1 is not None,
        spec.delta2 is not None,
        spec.clock == "reset",
        r,
        u,
        tol,
        qx,
        qw,
    )
    if np.any(plateau):
        if plateau_to_inf:
            times = np.where(plateau, np.inf, times)
        else:
            i = int(np.flatnonzero(plateau)[0])
            from .model import conditional_survival

            s_inf = conditional_survival(spec, float(r[i] + 2.0**40), float(r[i]), None, quad)
            raise DomainError(
                f"conditional survival plateaus near {s_inf:.6g} above u={u[i]:.6g} "
                f"for entry time r={r[i]:.6g}; no finite transition time exists"
            )
    return float(times[0]) if scalar else times


def draw_entry_conditional_time(
    spec: TransitionSpec,
    linpred,
    r,
    u,
    tol: float = ROOT_TOL,
    quad: QuadratureConfig = DEFAULT_QUAD,
    plateau_to_inf: bool = False,
):
    """Conditional transition time out of state 2, dispatched on the spec's case."""
    if spec.delta2 is not None:
        return draw_root_time(spec, linpred, r, u, tol, quad, plateau_to_inf)
    r = np.asarray(r, dtype=float)
    lp = np.asarray(linpred, dtype=float)
    if spec.clock == "reset":
        u = _check_u(u)
        d1 = spec.delta1 if spec.delta1 is not None else 0.0
        return r + (-np.log(u) / (spec.lam * np.exp(lp + d1 * r))) ** (1.0 / spec.gamma)
    return draw_case1_time(
        spec.lam, spec.gamma, lp, spec.delta1 if spec.delta1 is not None else 0.0, r, u
    )


def _uniforms(seed: int, n: int, k: int) -> np.ndarray:
    """(n, k) uniforms from a counter-based generator; row i belongs to subject i.

    All draws are materialized up front in a fixed order, so cohorts are
    reproducible no matter how downstream work is parallelized.
    """
    rng = np.random.Generator(np.random.Philox(seed))
    u = rng.random((n, k))
    return np.clip(u, 1e-300, 1.0 - 1e-16)


def latent_times(
    model: ModelSpec, X: np.ndarray, u1, u2, u3, quad=DEFAULT_QUAD, plateau_to_inf=False
):
    """Latent competing times (T1, T2) and the conditional T3 for ill subjects.

    T3 is NaN for subjects who never reach state 2; ties T1 == T2 break
    toward illness. With ``plateau_to_inf``, draws beyond a survival plateau
    yield T3 = inf instead of raising.
    """
    s1, s2, s3 = model.transitions
    lp = [X @ np.asarray(s.beta) if s.beta else np.zeros(len(X)) for s in (s1, s2, s3)]
    T1 = draw_weibull_time(s1.lam, s1.gamma, lp[0], u1)
    T2 = draw_weibull_time(s2.lam, s2.gamma, lp[1], u2)
    ill = T1 <= T2
    T3 = np.full(len(X), np.nan)
    if np.any(ill):
        r = T1[ill]
        T3[ill] = draw_entry_conditional_time(
            s3, lp[2][ill], r, u3[ill], quad=quad, plateau_to_inf=plateau_to_inf
        )
        # Samplers guarantee T3 > r mathematically; protect the stop > start
        # data invariant against rounding at u ~ 1.
        T3[ill] = np.maximum(T3[ill], np.nextafter(r, np.inf))
    return T1, T2, T3, ill


def simulate_cohort(cfg: SimulationConfig, quad: QuadratureConfig = DEFAULT_QUAD) -> SimulatedCohort:
    """Simulate a wide-format cohort and its deterministic long-format reshape."""
    if cfg.model.transition_matrix != ILLNESS_DEATH_MATRIX:
        raise ConfigError("simulate_cohort requires the 3-state illness-death structure")
    n = cfg.n_subjects
    p = len(cfg.model.covariate_names)
    u = _uniforms(cfg.seed, n, p + 3)
    X = np.column_stack(
        [g.from_uniform(u[:, j]) for j, g in enumerate(cfg.covariate_gen)]
    ) if p else np.zeros((n, 0))
    T1, T2, T3, ill = latent_times(cfg.model, X, u[:, p], u[:, p + 1], u[:, p + 2], quad)

    C = cfg.censoring_time
    ill = ill & (T1 < C)
    rf = np.where(ill, T1, np.minimum(T2, C))
    rfi = ill.astype(int)
    os_time = np.where(ill, np.minimum(T3, C), np.minimum(T2, C))
    osi = np.where(ill, T3 < C, T2 < C).astype(int)

    wide = pd.DataFrame({"id": np.arange(1, n + 1), "rf": rf, "rfi": rfi, "os": os_time, "osi": osi})
    for j, name in enumerate(cfg.model.covariate_names):
        wide[name] = X[:, j]

    from .io import reshape_wide_to_long

    long = reshape_wide_to_long(wide, covariate_names=cfg.model.covariate_names)
    return SimulatedCohort(wide=wide, long=long, config=cfg)
