"""Maximum-likelihood fitting of transition models from long-format data.

The likelihood factorizes over transitions, so each transition is maximized
on its own. Internally lambda and gamma live on the log scale (positivity
for free); covariances come from the inverse observed information, and
natural-scale standard errors via the delta method.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg
import scipy.optimize

from . import _kernels
from .errors import (
    ConfigError,
    ContractError,
    DataError,
    DomainError,
    SingularInformationError,
)
from .model import DEFAULT_QUAD, ModelSpec, QuadratureConfig, TransitionSpec

_CBRT_EPS = float(np.finfo(float).eps) ** (1.0 / 3.0)


@dataclass(frozen=True)
class LongRecord:
    """One transition-format row: at-risk interval, event indicator, covariates."""

    id: int
    start: float
    stop: float
    status: int
    trans: int
    entry_time_r: float | None = None
    covariates: tuple[float, ...] = ()

    def __post_init__(self):
        if not self.stop > self.start >= 0.0:
            raise DataError(
                f"record id={self.id} trans={self.trans}: need stop > start >= 0, "
                f"got start={self.start}, stop={self.stop}"
            )
        if self.status not in (0, 1):
            raise DataError(f"record id={self.id}: status must be 0 or 1")


class LongData:
    """Column-oriented view of a long-format dataset, grouped by transition."""

    def __init__(self, ids, start, stop, status, trans, entry, X):
        self.ids = np.asarray(ids)
        self.start = np.asarray(start, dtype=float)
        self.stop = np.asarray(stop, dtype=float)
        self.status = np.asarray(status, dtype=int)
        self.trans = np.asarray(trans, dtype=int)
        self.entry = np.asarray(entry, dtype=float)
        self.X = np.asarray(X, dtype=float)
        if np.any(self.stop <= self.start):
            bad = np.flatnonzero(self.stop <= self.start)[:5]
            raise DataError(f"stop <= start at rows {bad.tolist()}")
        if np.any((self.status != 0) & (self.status != 1)):
            raise DataError("status must be 0 or 1")

    def __len__(self):
        return self.start.size

    @classmethod
    def from_records(cls, records) -> "LongData":
        records = list(records)
        n = len(records)
        p = len(records[0].covariates) if n else 0
        X = np.array([r.covariates for r in records], dtype=float).reshape(n, p)
        entry = np.array(
            [r.entry_time_r if r.entry_time_r is not None else r.start for r in records],
            dtype=float,
        )
        return cls(
            ids=[r.id for r in records],
            start=[r.start for r in records],
            stop=[r.stop for r in records],
            status=[r.status for r in records],
            trans=[r.trans for r in records],
            entry=entry,
            X=X,
        )

    @classmethod
    def from_frame(cls, df, covariate_names) -> "LongData":
        cols = ["id", "start", "stop", "status", "trans", *covariate_names]
        missing = [c for c in cols if c not in df.columns]
        if missing:
            raise DataError(f"long data is missing columns {missing}")
        X = df[list(covariate_names)].to_numpy(dtype=float) if covariate_names else np.zeros(
            (len(df), 0)
        )
        return cls(
            ids=df["id"].to_numpy(),
            start=df["start"].to_numpy(dtype=float),
            stop=df["stop"].to_numpy(dtype=float),
            status=df["status"].to_numpy(dtype=int),
            trans=df["trans"].to_numpy(dtype=int),
            entry=df["start"].to_numpy(dtype=float),
            X=X,
        )

    def for_transition(self, k: int) -> "LongData":
        m = self.trans == k
        return LongData(
            self.ids[m], self.start[m], self.stop[m], self.status[m],
            self.trans[m], self.entry[m], self.X[m],
        )


def _as_longdata(data, covariate_names=()) -> LongData:
    if isinstance(data, LongData):
        return data
    if hasattr(data, "columns"):
        return LongData.from_frame(data, covariate_names)
    return LongData.from_records(data)


# --- parameter packing ----------------------------------------------------

def param_names(model: ModelSpec, k: int) -> list[str]:
    spec = model.transition(k)
    names = [f"log_lambda{k}", f"log_gamma{k}"]
    names += [f"beta_{c}{k}" for c in model.covariate_names]
    if spec.delta1 is not None:
        names.append(f"delta1_{k}")
    if spec.delta2 is not None:
        names.append(f"delta2_{k}")
    return names


def pack_transition(spec: TransitionSpec) -> np.ndarray:
    theta = [np.log(spec.lam), np.log(spec.gamma), *spec.beta]
    if spec.delta1 is not None:
        theta.append(spec.delta1)
    if spec.delta2 is not None:
        theta.append(spec.delta2)
    return np.array(theta, dtype=float)


def unpack_transition(spec: TransitionSpec, theta: np.ndarray) -> TransitionSpec:
    p = len(spec.beta)
    expected = 2 + p + (spec.delta1 is not None) + (spec.delta2 is not None)
    if theta.size != expected:
        raise ContractError(f"expected {expected} parameters, got {theta.size}")
    i = 2 + p
    d1 = d2 = None
    if spec.delta1 is not None:
        d1 = float(theta[i])
        i += 1
    if spec.delta2 is not None:
        d2 = float(theta[i])
    return replace(
        spec,
        lam=float(np.exp(theta[0])),
        gamma=float(np.exp(theta[1])),
        beta=tuple(theta[2 : 2 + p]),
        delta1=d1,
        delta2=d2,
    )


def pack_model(model: ModelSpec) -> np.ndarray:
    return np.concatenate([pack_transition(s) for s in model.transitions])


def unpack_model(model: ModelSpec, theta: np.ndarray) -> ModelSpec:
    out = []
    i = 0
    for s in model.transitions:
        n = 2 + len(s.beta) + (s.delta1 is not None) + (s.delta2 is not None)
        out.append(unpack_transition(s, theta[i : i + n]))
        i += n
    if i != theta.size:
        raise ContractError(f"parameter vector has {theta.size} entries, expected {i}")
    return replace(model, transitions=tuple(out))


# --- likelihood -----------------------------------------------------------

def _trans_loglik(
    spec: TransitionSpec,
    theta: np.ndarray,
    td: LongData,
    quad: QuadratureConfig,
    conditional: bool,
) -> float:
    s = unpack_transition(spec, theta)
    lp = td.X @ np.asarray(s.beta) if s.beta else np.zeros(len(td))
    start = td.start
    if not conditional:
        if s.clock == "reset":
            raise ConfigError("unconditional likelihood is undefined for clock-reset baselines")
        start = np.zeros_like(td.start)
    qx, qw = quad.jacobi_points(s.gamma)
    with np.errstate(over="ignore", invalid="ignore"):
        return _kernels.transition_loglik(
            start,
            td.stop,
            td.status,
            td.entry,
            lp,
            s.lam,
            s.gamma,
            s.delta1 if s.delta1 is not None else 0.0,
            s.delta2 if s.delta2 is not None else 0.0,
            s.delta1 is not None,
            s.delta2 is not None,
            s.clock == "reset",
            qx,
            qw,
        )


def log_likelihood(
    model: ModelSpec,
    theta: np.ndarray,
    data,
    quad: QuadratureConfig = DEFAULT_QUAD,
    conditional: bool = True,
) -> float:
    """Total log-likelihood at the internal parameter vector ``theta``.

    Left truncation enters by integrating each row's cumulative hazard from
    its start time; with ``conditional=False`` transition exposure is taken
    from time 0 instead (only meaningful for clock-forward baselines).
    """
    ld = _as_longdata(data, model.covariate_names)
    if np.any((ld.trans < 1) | (ld.trans > model.n_transitions)):
        raise DataError("data references transition ids outside the model")
    theta = np.asarray(theta, dtype=float)
    total = 0.0
    i = 0
    for k, s in enumerate(model.transitions, start=1):
        n = 2 + len(s.beta) + (s.delta1 is not None) + (s.delta2 is not None)
        total += _trans_loglik(s, theta[i : i + n], ld.for_transition(k), quad, conditional)
        i += n
    return total


def _finite_diff_grad(f, theta):
    g = np.empty_like(theta)
    for i in range(theta.size):
        h = _CBRT_EPS * max(1.0, abs(theta[i]))
        up, dn = theta.copy(), theta.copy()
        up[i] += h
        dn[i] -= h
        g[i] = (f(up) - f(dn)) / (2.0 * h)
    return g


def _finite_diff_hessian(f, theta, rel_step=1e-4, abs_floor=1e-6):
    n = theta.size
    h = np.maximum(rel_step * np.abs(theta), abs_floor)
    H = np.empty((n, n))
    f0 = f(theta)
    for i in range(n):
        ei = np.zeros(n)
        ei[i] = h[i]
        H[i, i] = (f(theta + ei) - 2.0 * f0 + f(theta - ei)) / h[i] ** 2
        for j in range(i + 1, n):
            ej = np.zeros(n)
            ej[j] = h[j]
            H[i, j] = H[j, i] = (
                f(theta + ei + ej) - f(theta + ei - ej) - f(theta - ei + ej) + f(theta - ei - ej)
            ) / (4.0 * h[i] * h[j])
    return 0.5 * (H + H.T)


def invert_information(H: np.ndarray) -> np.ndarray:
    """Invert an observed-information matrix, insisting on positive definiteness."""
    try:
        L = np.linalg.cholesky(H)
    except np.linalg.LinAlgError:
        cond = np.linalg.cond(H)
        raise SingularInformationError(
            f"observed information is not positive definite (condition number "
            f"{cond:.3g}); refit, simplify the model, or supply more events"
        ) from None
    identity = np.eye(H.shape[0])
    Linv = scipy.linalg.solve_triangular(L, identity, lower=True)
    return Linv.T @ Linv


def observed_information(
    model: ModelSpec,
    theta: np.ndarray,
    data,
    quad: QuadratureConfig = DEFAULT_QUAD,
    conditional: bool = True,
    rel_step: float = 1e-4,
    abs_floor: float = 1e-6,
) -> np.ndarray:
    """Covariance matrix: inverse numeric Hessian of -loglik at ``theta``."""
    theta = np.asarray(theta, dtype=float)
    f = lambda th: -log_likelihood(model, th, data, quad, conditional)
    H = _finite_diff_hessian(f, theta, rel_step, abs_floor)
    return invert_information(H)


# --- fitting ----------------------------------------------------------------

@dataclass(frozen=True)
class FitOptions:
    max_iter: int = 200
    gtol: float = 1e-6
    loglik_rtol: float = 1e-10
    quad: QuadratureConfig = DEFAULT_QUAD
    conditional: bool = True
    hessian_rel_step: float = 1e-4
    hessian_abs_floor: float = 1e-6
    jitter_scale: float = 0.1
    jitter_seed: int = 20260823


@dataclass(frozen=True)
class TransitionFit:
    trans: int
    param_names: tuple[str, ...]
    theta: np.ndarray
    covariance: np.ndarray
    loglik: float
    converged: bool
    n_obs: int
    n_events: int
    spec: TransitionSpec

    @property
    def estimates(self) -> dict[str, float]:
        """Natural-scale point estimates keyed by readable names."""
        out = {f"lambda{self.trans}": self.spec.lam, f"gamma{self.trans}": self.spec.gamma}
        for name, b in zip(self.param_names[2:], self.theta[2:]):
            out[name] = float(b)
        return out

    @property
    def standard_errors(self) -> dict[str, float]:
        """Delta-method SEs on the natural scale for lambda/gamma, direct otherwise."""
        se = np.sqrt(np.diag(self.covariance))
        out = {
            f"lambda{self.trans}": self.spec.lam * se[0],
            f"gamma{self.trans}": self.spec.gamma * se[1],
        }
        for name, s in zip(self.param_names[2:], se[2:]):
            out[name] = float(s)
        return out


@dataclass(frozen=True)
class FitResult:
    model: ModelSpec
    transition_fits: tuple[TransitionFit, ...]
    loglik: float
    converged: bool
    conditional: bool

    @property
    def theta(self) -> np.ndarray:
        return np.concatenate([tf.theta for tf in self.transition_fits])

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(n for tf in self.transition_fits for n in tf.param_names)

    @property
    def covariance(self) -> np.ndarray:
        """Block-diagonal covariance (transitions share no parameters)."""
        blocks = [tf.covariance for tf in self.transition_fits]
        return scipy.linalg.block_diag(*blocks)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "model": self.model.to_dict(),
            "loglik": self.loglik,
            "converged": self.converged,
            "conditional": self.conditional,
            "transitions": [
                {
                    "trans": tf.trans,
                    "param_names": list(tf.param_names),
                    "theta": tf.theta.tolist(),
                    "covariance": tf.covariance.tolist(),
                    "loglik": tf.loglik,
                    "converged": tf.converged,
                    "n_obs": tf.n_obs,
                    "n_events": tf.n_events,
                }
                for tf in self.transition_fits
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FitResult":
        try:
            if d.get("schema_version") != 1:
                raise ConfigError(
                    f"unsupported fit-file schema_version {d.get('schema_version')!r}"
                )
            model = ModelSpec.from_dict(d["model"])
            fits = tuple(
                TransitionFit(
                    trans=e["trans"],
                    param_names=tuple(e["param_names"]),
                    theta=np.asarray(e["theta"], dtype=float),
                    covariance=np.asarray(e["covariance"], dtype=float),
                    loglik=e["loglik"],
                    converged=e["converged"],
                    n_obs=e["n_obs"],
                    n_events=e["n_events"],
                    spec=model.transition(e["trans"]),
                )
                for e in d["transitions"]
            )
            return cls(
                model=model,
                transition_fits=fits,
                loglik=d["loglik"],
                converged=d["converged"],
                conditional=d["conditional"],
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed fit file: {exc}") from exc


_BIG = 1e12


def fit_transition(
    model: ModelSpec, k: int, data, opts: FitOptions = FitOptions()
) -> TransitionFit:
    """Maximize one transition's likelihood by quasi-Newton with numeric gradients.

    Deterministic start (log lambda from events per unit exposure, everything
    else at zero); one jittered restart on failure. The returned fit is
    flagged ``converged=False`` rather than raising when the gradient norm
    stays above tolerance.
    """
    spec = model.transition(k)
    ld = _as_longdata(data, model.covariate_names)
    td = ld.for_transition(k)
    if len(td) == 0:
        raise DataError(f"no rows for transition {k}")
    n_events = int(td.status.sum())
    if n_events == 0:
        raise DataError(f"transition {k} has no events; the likelihood has no maximum")

    def negloglik(theta):
        try:
            val = _trans_loglik(spec, theta, td, opts.quad, opts.conditional)
        except DomainError:
            return _BIG
        return -val if np.isfinite(val) else _BIG

    exposure = float(np.sum(td.stop - td.start))
    theta0 = np.zeros(2 + len(spec.beta) + (spec.delta1 is not None) + (spec.delta2 is not None))
    theta0[0] = np.log(n_events / exposure)

    def attempt(start_theta):
        res = scipy.optimize.minimize(
            negloglik,
            start_theta,
            jac=lambda th: _finite_diff_grad(negloglik, th),
            method="BFGS",
            options={"gtol": 1e-8, "maxiter": opts.max_iter},
        )
        theta, fval = res.x, res.fun
        rel_change = np.inf
        # Newton polish with the numeric Hessian; BFGS typically stops on
        # finite-difference noise well before the gradient tolerance here.
        for _ in range(20):
            g = _finite_diff_grad(negloglik, theta)
            if np.max(np.abs(g)) < opts.gtol and rel_change < opts.loglik_rtol:
                break
            H = _finite_diff_hessian(
                negloglik, theta, opts.hessian_rel_step, opts.hessian_abs_floor
            )
            try:
                step = np.linalg.solve(H, -g)
            except np.linalg.LinAlgError:
                break
            moved = False
            for _ in range(25):
                cand = theta + step
                fc = negloglik(cand)
                if fc <= fval + 1e-12 * max(1.0, abs(fval)):
                    rel_change = abs(fval - fc) / max(1.0, abs(fc))
                    theta, fval, moved = cand, fc, True
                    break
                step *= 0.5
            if not moved:
                rel_change = 0.0
        g = _finite_diff_grad(negloglik, theta)
        ok = np.max(np.abs(g)) < opts.gtol and rel_change <= opts.loglik_rtol
        return theta, fval, ok

    theta, fval, ok = attempt(theta0)
    if not ok:
        rng = np.random.default_rng(opts.jitter_seed + k)
        theta_r, fval_r, ok_r = attempt(
            theta0 + opts.jitter_scale * rng.standard_normal(theta0.size)
        )
        if fval_r < fval or ok_r:
            theta, fval, ok = theta_r, fval_r, ok_r

    f = negloglik
    H = _finite_diff_hessian(f, theta, opts.hessian_rel_step, opts.hessian_abs_floor)
    cov = invert_information(H)
    return TransitionFit(
        trans=k,
        param_names=tuple(param_names(model, k)),
        theta=theta,
        covariance=cov,
        loglik=-fval,
        converged=bool(ok),
        n_obs=len(td),
        n_events=n_events,
        spec=unpack_transition(spec, theta),
    )


def fit_model(model: ModelSpec, data, opts: FitOptions = FitOptions()) -> FitResult:
    """Fit every transition; the total loglik is the sum of the per-transition parts."""
    ld = _as_longdata(data, model.covariate_names)
    for k in range(1, model.n_transitions + 1):
        td = ld.for_transition(k)
        if len(td) == 0:
            raise DataError(f"no rows for transition {k}")
        if int(td.status.sum()) == 0:
            raise DataError(f"transition {k} has no events; the likelihood has no maximum")
    fits = []
    for k in range(1, model.n_transitions + 1):
        try:
            fits.append(fit_transition(model, k, ld, opts))
        except (DataError, SingularInformationError) as exc:
            raise type(exc)(f"transition {k}: {exc}") from exc
    fitted = model
    for tf in fits:
        fitted = fitted.replace_transition(tf.trans, **_spec_updates(tf.spec))
    return FitResult(
        model=fitted,
        transition_fits=tuple(fits),
        loglik=sum(tf.loglik for tf in fits),
        converged=all(tf.converged for tf in fits),
        conditional=opts.conditional,
    )


def _spec_updates(spec: TransitionSpec) -> dict:
    return {
        "lam": spec.lam,
        "gamma": spec.gamma,
        "beta": spec.beta,
        "delta1": spec.delta1,
        "delta2": spec.delta2,
    }
