"""Illness-death model structure and hazard arithmetic.

Transitions carry a Weibull baseline on time since origin (or time since
state entry when ``clock="reset"``), proportional covariate effects, and
optional linear terms in the state-2 entry time ``r`` and the elapsed time
``t - r``. Hazards, cumulative hazards and conditional survival are exact
(closed form) whenever the elapsed-time term is absent, and Gauss-Jacobi
quadrature (weight matched to the Weibull baseline) otherwise.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np

from .errors import ConfigError, ContractError, DomainError


class TimescaleCase(Enum):
    """Which extra timescales enter the log-hazard of a transition."""

    CLOCK_FORWARD = "clock_forward"
    TIME_AT_ENTRY = "time_at_entry"
    TIME_SINCE_ENTRY = "time_since_entry"
    BOTH = "both"


@lru_cache(maxsize=None)
def _leggauss(n: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(n)
    return x, w


@lru_cache(maxsize=512)
def _jacobi(n: int, gamma: float) -> tuple[np.ndarray, np.ndarray]:
    import scipy.special

    x, w = scipy.special.roots_jacobi(n, 0.0, gamma - 1.0)
    return x, w


@dataclass(frozen=True)
class QuadratureConfig:
    """Node counts for cumulative-hazard integrals.

    Integrals of the Weibull hazard use Gauss-Jacobi rules whose weight
    function absorbs the tau^(gamma-1) baseline factor, so the quadrature
    only ever sees the smooth exponential part; plain Gauss-Legendre rules
    are used for integrals with smooth integrands (outer occupancy
    integrals, length-of-stay).
    """

    nodes: int = 30

    def __post_init__(self):
        if self.nodes < 2:
            raise ConfigError("quadrature needs at least 2 nodes")

    def points(self) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Legendre nodes and weights on [-1, 1]."""
        return _leggauss(self.nodes)

    def jacobi_points(self, gamma: float) -> tuple[np.ndarray, np.ndarray]:
        """Gauss-Jacobi nodes/weights on [-1, 1] with weight (1+x)^(gamma-1)."""
        if not gamma > 0:
            raise DomainError(f"gamma must be positive, got {gamma}")
        return _jacobi(self.nodes, float(gamma))


DEFAULT_QUAD = QuadratureConfig()

# Hazard evaluation below this time is treated as "at zero" (singular for
# gamma < 1, identically zero for gamma > 1); callers clamp if they need to.
TIME_EPS = 1e-12

# With a negative elapsed-time coefficient the integrated hazard converges;
# beyond this many e-foldings of exponential decay the remaining tail is far
# below double precision, so integrals are truncated there. Every cumulative
# hazard implementation must share this constant to stay node-for-node
# consistent.
DECAY_SPAN = 45.0


@dataclass(frozen=True)
class TransitionSpec:
    """One directed transition with Weibull baseline and timescale terms.

    Parameters are on the natural scale: ``lam`` (scale, rate per
    time^gamma) and ``gamma`` (shape) must be positive. ``beta`` holds
    log-hazard ratios, ``delta1``/``delta2`` the optional linear
    coefficients on the entry time ``r`` and on ``t - r``. ``clock`` is
    ``"forward"`` (baseline timescale is time since origin) or ``"reset"``
    (time since state entry).
    """

    from_state: int
    to_state: int
    lam: float
    gamma: float
    beta: tuple[float, ...] = ()
    delta1: float | None = None
    delta2: float | None = None
    clock: str = "forward"

    def __post_init__(self):
        if not (self.lam > 0 and math.isfinite(self.lam)):
            raise DomainError(f"lam must be positive and finite, got {self.lam}")
        if not (self.gamma > 0 and math.isfinite(self.gamma)):
            raise DomainError(f"gamma must be positive and finite, got {self.gamma}")
        if self.from_state == self.to_state:
            raise ConfigError("self-transitions are not allowed")
        if self.clock not in ("forward", "reset"):
            raise ConfigError(f"clock must be 'forward' or 'reset', got {self.clock!r}")
        object.__setattr__(self, "beta", tuple(float(b) for b in self.beta))

    @property
    def timescale_case(self) -> TimescaleCase:
        if self.delta1 is None and self.delta2 is None:
            return TimescaleCase.CLOCK_FORWARD
        if self.delta2 is None:
            return TimescaleCase.TIME_AT_ENTRY
        if self.delta1 is None:
            return TimescaleCase.TIME_SINCE_ENTRY
        return TimescaleCase.BOTH

    @property
    def needs_entry_time(self) -> bool:
        return self.timescale_case is not TimescaleCase.CLOCK_FORWARD or self.clock == "reset"

    def linear_predictor(self, x) -> float:
        x = np.zeros(len(self.beta)) if x is None else np.asarray(x, dtype=float)
        if x.shape != (len(self.beta),):
            raise ContractError(
                f"covariate vector has length {x.size}, transition expects {len(self.beta)}"
            )
        return float(x @ np.asarray(self.beta)) if self.beta else 0.0


def _check_entry(spec: TransitionSpec, t: float, r: float | None) -> float:
    if spec.needs_entry_time:
        if r is None:
            raise ContractError(
                f"transition {spec.from_state}->{spec.to_state} "
                f"({spec.timescale_case.value}, clock={spec.clock}) requires an entry time r"
            )
        if not 0.0 <= r <= t:
            raise DomainError(f"entry time r={r} must satisfy 0 <= r <= t={t}")
        return float(r)
    return 0.0 if r is None else float(r)


def hazard(spec: TransitionSpec, t: float, r: float | None = None, x=None) -> float:
    """Transition intensity lam*gamma*tau^(gamma-1) * exp(x'beta + d1*r + d2*(t-r)).

    ``tau`` is ``t`` for clock-forward baselines and ``t - r`` after a clock
    reset. Evaluation at tau <= 0 is a domain error (the Weibull hazard is
    singular or identically zero there).
    """
    r = _check_entry(spec, t, r)
    tau = t - r if spec.clock == "reset" else t
    if tau <= 0.0:
        raise DomainError(f"hazard undefined at baseline time {tau} (needs > 0)")
    z = 0.0
    if spec.delta1 is not None:
        z += spec.delta1 * r
    if spec.delta2 is not None:
        z += spec.delta2 * (t - r)
    lp = spec.linear_predictor(x)
    return spec.lam * spec.gamma * tau ** (spec.gamma - 1.0) * math.exp(lp + z)


def cumulative_hazard(
    spec: TransitionSpec,
    a: float,
    b: float,
    r: float | None = None,
    x=None,
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> float:
    """Integrated hazard over [a, b].

    Closed form when the ``t - r`` term is absent; otherwise Gauss-Jacobi
    quadrature whose weight absorbs the ``tau^(gamma-1)`` baseline factor,
    which keeps spectral accuracy even when the exposure starts at the
    baseline origin (where that factor is singular for gamma < 1).
    """
    if not 0.0 <= a <= b:
        raise DomainError(f"need 0 <= a <= b, got a={a}, b={b}")
    if a == b:
        return 0.0
    r = _check_entry(spec, b, r)
    if spec.clock == "reset" and a < r:
        raise DomainError(f"clock-reset exposure starts at entry: a={a} < r={r}")
    lp = spec.linear_predictor(x)
    scale = lp + (spec.delta1 * r if spec.delta1 is not None else 0.0)
    if spec.delta2 is None:
        ta, tb = (a - r, b - r) if spec.clock == "reset" else (a, b)
        return spec.lam * (tb**spec.gamma - ta**spec.gamma) * math.exp(scale)
    nodes, weights = quad.jacobi_points(spec.gamma)
    r0 = r if spec.clock == "reset" else 0.0

    # Integral from the baseline origin, computed with the tau^(gamma-1)
    # factor folded into the Jacobi weight so the nodes only see the smooth
    # exponential: int_0^T lam*gam*tau^(gam-1)*exp(scale + d2*(tau+r0-r)) dtau.
    # A negative d2 caps the total integral; past DECAY_SPAN e-foldings the
    # tail is below double precision, and truncating there keeps the nodes
    # on the integrand's support even for astronomically large T.
    def from_origin(T: float) -> float:
        if spec.delta2 < 0.0:
            T = min(T, DECAY_SPAN / -spec.delta2)
        if T <= 0.0:
            return 0.0
        tau = 0.5 * T * (1.0 + nodes)
        vals = np.exp(scale + spec.delta2 * (tau + r0 - r))
        return spec.lam * spec.gamma * (0.5 * T) ** spec.gamma * float(weights @ vals)

    return max(0.0, from_origin(b - r0) - from_origin(a - r0))


def conditional_survival(
    spec: TransitionSpec,
    t: float,
    r: float,
    x=None,
    quad: QuadratureConfig = DEFAULT_QUAD,
) -> float:
    """P(no transition by t | at risk from entry time r); equals 1 at t = r."""
    if not 0.0 <= r <= t:
        raise DomainError(f"need 0 <= r <= t, got r={r}, t={t}")
    return math.exp(-cumulative_hazard(spec, r, t, r, x, quad))


@dataclass(frozen=True)
class ModelSpec:
    """A full multi-state model: states, transition matrix and transitions.

    ``transition_matrix[i][j]`` is the 1-based id of the transition from
    state i+1 to state j+1, or None. ``transitions[k-1]`` is the spec with
    id k. For the illness-death model the matrix is
    ((None,1,2),(None,None,3),(None,None,None)).
    """

    states: tuple[str, ...]
    transition_matrix: tuple[tuple[int | None, ...], ...]
    transitions: tuple[TransitionSpec, ...]
    covariate_names: tuple[str, ...] = ()

    def __post_init__(self):
        object.__setattr__(self, "states", tuple(self.states))
        object.__setattr__(
            self, "transition_matrix", tuple(tuple(row) for row in self.transition_matrix)
        )
        object.__setattr__(self, "transitions", tuple(self.transitions))
        object.__setattr__(self, "covariate_names", tuple(self.covariate_names))
        n = len(self.states)
        if len(self.transition_matrix) != n or any(
            len(row) != n for row in self.transition_matrix
        ):
            raise ConfigError("transition matrix must be square over the states")
        seen: dict[int, tuple[int, int]] = {}
        for i, row in enumerate(self.transition_matrix):
            for j, k in enumerate(row):
                if k is None:
                    continue
                if i == j:
                    raise ConfigError("self-transitions are not allowed")
                if k in seen:
                    raise ConfigError(f"transition id {k} appears more than once")
                seen[k] = (i + 1, j + 1)
        ids = sorted(seen)
        if ids != list(range(1, len(self.transitions) + 1)):
            raise ConfigError(
                f"transition ids must be 1..{len(self.transitions)}, got {ids}"
            )
        for k, spec in enumerate(self.transitions, start=1):
            if (spec.from_state, spec.to_state) != seen[k]:
                raise ConfigError(
                    f"transition {k} is {spec.from_state}->{spec.to_state} "
                    f"but the matrix places it at {seen[k]}"
                )
            if len(spec.beta) != len(self.covariate_names):
                raise ConfigError(
                    f"transition {k} has {len(spec.beta)} coefficients for "
                    f"{len(self.covariate_names)} covariates"
                )
            if spec.from_state == 1 and (
                spec.delta1 is not None or spec.delta2 is not None or spec.clock == "reset"
            ):
                raise ConfigError(
                    f"transition {k} leaves the initial state; entry-time terms "
                    "and clock resets are only meaningful after state 1"
                )

    @property
    def n_transitions(self) -> int:
        return len(self.transitions)

    def transition(self, k: int) -> TransitionSpec:
        if not 1 <= k <= len(self.transitions):
            raise ConfigError(f"unknown transition id {k}")
        return self.transitions[k - 1]

    def check_covariates(self, x) -> np.ndarray:
        x = np.zeros(len(self.covariate_names)) if x is None else np.asarray(x, dtype=float)
        if x.shape != (len(self.covariate_names),):
            raise ContractError(
                f"covariate vector has length {x.size}, model expects "
                f"{len(self.covariate_names)}"
            )
        return x

    def replace_transition(self, k: int, **changes) -> "ModelSpec":
        new = dataclasses.replace(self.transition(k), **changes)
        transitions = list(self.transitions)
        transitions[k - 1] = new
        return dataclasses.replace(self, transitions=tuple(transitions))

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "states": list(self.states),
            "transition_matrix": [list(row) for row in self.transition_matrix],
            "covariates": list(self.covariate_names),
            "transitions": [
                {
                    "id": k,
                    "from": s.from_state,
                    "to": s.to_state,
                    "lambda": s.lam,
                    "gamma": s.gamma,
                    "beta": dict(zip(self.covariate_names, s.beta)),
                    "delta1": s.delta1,
                    "delta2": s.delta2,
                    "clock": s.clock,
                }
                for k, s in enumerate(self.transitions, start=1)
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ModelSpec":
        try:
            if d.get("schema_version") != 1:
                raise ConfigError(
                    f"unsupported schema_version {d.get('schema_version')!r} (expected 1)"
                )
            covs = tuple(d.get("covariates", ()))
            entries = sorted(d["transitions"], key=lambda e: e["id"])
            transitions = tuple(
                TransitionSpec(
                    from_state=e["from"],
                    to_state=e["to"],
                    lam=e["lambda"],
                    gamma=e["gamma"],
                    beta=tuple(float(e.get("beta", {}).get(c, 0.0)) for c in covs),
                    delta1=e.get("delta1"),
                    delta2=e.get("delta2"),
                    clock=e.get("clock", "forward"),
                )
                for e in entries
            )
            matrix = tuple(
                tuple(None if v is None else int(v) for v in row)
                for row in d["transition_matrix"]
            )
            return cls(
                states=tuple(d["states"]),
                transition_matrix=matrix,
                transitions=transitions,
                covariate_names=covs,
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed model config: {exc}") from exc


ILLNESS_DEATH_MATRIX: tuple[tuple[int | None, ...], ...] = (
    (None, 1, 2),
    (None, None, 3),
    (None, None, None),
)


def illness_death_model(
    lam=(0.1, 0.1, 0.1),
    gamma=(1.3, 1.3, 1.3),
    beta=((), (), ()),
    delta1: float | None = None,
    delta2: float | None = None,
    covariate_names: tuple[str, ...] = (),
    clock3: str = "forward",
    states: tuple[str, str, str] = ("healthy", "ill", "dead"),
) -> ModelSpec:
    """Three-state illness-death model; entry-time terms act on transition 3 only."""
    edges = ((1, 2), (1, 3), (2, 3))
    transitions = tuple(
        TransitionSpec(
            from_state=f,
            to_state=t,
            lam=lam[k],
            gamma=gamma[k],
            beta=tuple(beta[k]),
            delta1=delta1 if k == 2 else None,
            delta2=delta2 if k == 2 else None,
            clock=clock3 if k == 2 else "forward",
        )
        for k, (f, t) in enumerate(edges)
    )
    return ModelSpec(
        states=states,
        transition_matrix=ILLNESS_DEATH_MATRIX,
        transitions=transitions,
        covariate_names=covariate_names,
    )
