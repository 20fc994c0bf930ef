"""Monte Carlo study harness: repeated simulate / fit / predict cycles.

Each scenario simulates cohorts from a true model, fits one or more model
variants (typically the correctly specified one and a Markov one ignoring
the extra timescales), and aggregates bias, empirical SE and coverage with
Monte Carlo standard errors. True probability and LOS estimands are
precomputed once from a large uncensored simulation.
"""

from __future__ import annotations

import dataclasses
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd
import scipy.stats
from joblib import Parallel, delayed

from .errors import ConfigError, ConvergenceError, DataError, MtsurvError
from .estimation import FitOptions, fit_model
from .model import DEFAULT_QUAD, ModelSpec, QuadratureConfig, illness_death_model
from .predict import occupancy_simulation, occupancy_quadrature, prediction_ci_delta
from .simulate import (
    BernoulliCovariate,
    NormalCovariate,
    SimulationConfig,
    covariate_gen_from_dict,
    simulate_cohort,
)

_Z95 = 1.959963984540054

FITTED_VARIANTS = ("correct", "markov")


@dataclass(frozen=True)
class Scenario:
    label: str
    true_model: ModelSpec
    covariate_gen: tuple = ()
    fitted_models: tuple[str, ...] = FITTED_VARIANTS
    n_subjects: int = 2000
    n_sim: int = 200
    base_seed: int = 1
    estimand_times: tuple[float, ...] = (5.0,)
    censoring_time: float = 5.0
    n_truth_paths: int = 1_000_000
    fit_options: FitOptions = FitOptions()

    def __post_init__(self):
        if self.n_sim < 2:
            raise ConfigError("n_sim must be at least 2")
        if len(set(self.fitted_models)) != len(self.fitted_models):
            raise ConfigError("fitted model labels must be unique")
        unknown = [m for m in self.fitted_models if m not in FITTED_VARIANTS]
        if unknown:
            raise ConfigError(f"unknown fitted-model variants {unknown}")

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "label": self.label,
            "true_model": self.true_model.to_dict(),
            "covariate_gen": [
                {"name": n, **g.to_dict()}
                for n, g in zip(self.true_model.covariate_names, self.covariate_gen)
            ],
            "fitted_models": list(self.fitted_models),
            "n_subjects": self.n_subjects,
            "n_sim": self.n_sim,
            "base_seed": self.base_seed,
            "estimand_times": list(self.estimand_times),
            "censoring_time": self.censoring_time,
            "n_truth_paths": self.n_truth_paths,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Scenario":
        try:
            if d.get("schema_version") != 1:
                raise ConfigError(
                    f"unsupported scenario schema_version {d.get('schema_version')!r}"
                )
            model = ModelSpec.from_dict(d["true_model"])
            gens = []
            for e in d.get("covariate_gen", []):
                gens.append(covariate_gen_from_dict(e))
            if len(gens) != len(model.covariate_names):
                raise ConfigError("covariate_gen must match the model covariates")
            return cls(
                label=d["label"],
                true_model=model,
                covariate_gen=tuple(gens),
                fitted_models=tuple(d.get("fitted_models", FITTED_VARIANTS)),
                n_subjects=int(d.get("n_subjects", 2000)),
                n_sim=int(d.get("n_sim", 200)),
                base_seed=int(d.get("base_seed", 1)),
                estimand_times=tuple(d.get("estimand_times", (5.0,))),
                censoring_time=float(d.get("censoring_time", 5.0)),
                n_truth_paths=int(d.get("n_truth_paths", 1_000_000)),
            )
        except (KeyError, TypeError) as exc:
            raise ConfigError(f"malformed scenario config: {exc}") from exc


@dataclass(frozen=True)
class PerformanceMeasures:
    bias: float
    emp_se: float
    coverage: float
    mcse_bias: float
    mcse_coverage: float
    n_used: int


def performance_measures(estimates, ses, truth: float, level: float = 0.95) -> PerformanceMeasures:
    """Bias, empirical SE, Wald-CI coverage, and their Monte Carlo SEs."""
    est = np.asarray(estimates, dtype=float)
    ses = np.asarray(ses, dtype=float)
    if est.size < 2:
        raise DataError("performance measures need at least 2 replicates")
    n = est.size
    bias = float(est.mean() - truth)
    emp_se = float(est.std(ddof=1))
    z = float(scipy.stats.norm.ppf(0.5 + level / 2.0))
    cover = float(np.mean((est - z * ses <= truth) & (truth <= est + z * ses)))
    if emp_se == 0.0:
        warnings.warn("zero variance across replicates; mcse_bias is 0", stacklevel=2)
    return PerformanceMeasures(
        bias=bias,
        emp_se=emp_se,
        coverage=cover,
        mcse_bias=emp_se / math.sqrt(n),
        mcse_coverage=math.sqrt(cover * (1.0 - cover) / n),
        n_used=n,
    )


def coverage_mcse(coverage: float, n_sim: int) -> float:
    """Binomial MCSE of a coverage estimate: sqrt(c(1-c)/n_sim)."""
    return math.sqrt(coverage * (1.0 - coverage) / n_sim)


def fitted_skeleton(true_model: ModelSpec, variant: str) -> ModelSpec:
    """Model structure to fit: the truth's timescale structure, or Markov."""
    if variant == "markov":
        return true_model.replace_transition(3, delta1=None, delta2=None, clock="forward")
    if variant == "correct":
        return true_model
    raise ConfigError(f"unknown fitted-model variant {variant!r}")


def _parameter_truth(model: ModelSpec) -> dict[str, float]:
    out = {}
    for k, s in enumerate(model.transitions, start=1):
        out[f"lambda{k}"] = s.lam
        out[f"gamma{k}"] = s.gamma
        for name, b in zip(model.covariate_names, s.beta):
            out[f"beta_{name}{k}"] = b
        if s.delta1 is not None:
            out[f"delta1_{k}"] = s.delta1
        if s.delta2 is not None:
            out[f"delta2_{k}"] = s.delta2
    return out


def _prediction_estimands(times) -> list[str]:
    names = []
    for t in times:
        names += [f"p1{j}(0,{t:g})" for j in (1, 2, 3)]
        names += [f"los{j}(0,{t:g})" for j in (1, 2, 3)]
    return names


def _replicate(scenario: Scenario, rep: int, quad: QuadratureConfig):
    """One simulate/fit/predict cycle; returns (rows, failures)."""
    rows, failures = [], []
    cfg = SimulationConfig(
        n_subjects=scenario.n_subjects,
        model=scenario.true_model,
        covariate_gen=scenario.covariate_gen,
        censoring_time=scenario.censoring_time,
        seed=scenario.base_seed + rep,
    )
    cohort = simulate_cohort(cfg, quad)
    times = np.asarray(scenario.estimand_times, dtype=float)
    x0 = np.zeros(len(scenario.true_model.covariate_names))
    for variant in scenario.fitted_models:
        skeleton = fitted_skeleton(scenario.true_model, variant)
        try:
            fit = fit_model(skeleton, cohort.long, scenario.fit_options)
            if not fit.converged:
                raise ConvergenceError("optimizer did not reach tolerance")
            for tf in fit.transition_fits:
                se = np.sqrt(np.diag(tf.covariance))
                natural = tf.estimates
                nat_se = tf.standard_errors
                for j, name in enumerate(tf.param_names):
                    if name.startswith("log_"):
                        key = name.removeprefix("log_")
                        lo, hi = np.exp(tf.theta[j] - _Z95 * se[j]), np.exp(
                            tf.theta[j] + _Z95 * se[j]
                        )
                        est = natural[key]
                        s_nat = nat_se[key]
                    else:
                        key = name
                        est = tf.theta[j]
                        s_nat = se[j]
                        lo, hi = est - _Z95 * se[j], est + _Z95 * se[j]
                    rows.append((rep, variant, key, est, s_nat, lo, hi))
            grid = occupancy_quadrature(fit.model, x0, times, quad, check=False)
            ci = prediction_ci_delta(fit, x0, times, quad)
            for i, t in enumerate(times):
                for j in range(3):
                    rows.append(
                        (
                            rep,
                            variant,
                            f"p1{j + 1}(0,{t:g})",
                            grid.probs[i, j],
                            ci.probs_se[i, j],
                            ci.prob_bounds[0][i, j],
                            ci.prob_bounds[1][i, j],
                        )
                    )
                    rows.append(
                        (
                            rep,
                            variant,
                            f"los{j + 1}(0,{t:g})",
                            grid.los[i, j],
                            ci.los_se[i, j],
                            ci.los_bounds[0][i, j],
                            ci.los_bounds[1][i, j],
                        )
                    )
        except MtsurvError as exc:
            failures.append({"replicate": rep, "model": variant, "reason": str(exc)})
    return rows, failures


@dataclass(frozen=True)
class ScenarioResult:
    scenario: Scenario
    replicates: pd.DataFrame
    aggregate: pd.DataFrame
    truth: dict[str, float]
    failures: list[dict]
    flagged: bool


def run_scenario(
    scenario: Scenario,
    quad: QuadratureConfig = DEFAULT_QUAD,
    threads: int = 1,
    progress: bool = False,
) -> ScenarioResult:
    """Run a full scenario; deterministic given the scenario (incl. seeds).

    Replicate r uses simulation seed base_seed + r. Replicates whose fit
    fails or does not converge are excluded from the aggregates for that
    fitted model and reported; a scenario with more than 5% failures is
    flagged.
    """
    truth = dict(_parameter_truth(scenario.true_model))
    x0 = np.zeros(len(scenario.true_model.covariate_names))
    truth_grid = occupancy_simulation(
        scenario.true_model,
        x0,
        scenario.estimand_times,
        n_paths=scenario.n_truth_paths,
        seed=scenario.base_seed * 1_000_003 + 17,
        quad=quad,
    )
    for i, t in enumerate(scenario.estimand_times):
        for j in range(3):
            truth[f"p1{j + 1}(0,{t:g})"] = float(truth_grid.probs[i, j])
            truth[f"los{j + 1}(0,{t:g})"] = float(truth_grid.los[i, j])

    reps = range(1, scenario.n_sim + 1)
    if threads > 1:
        results = Parallel(n_jobs=threads)(
            delayed(_replicate)(scenario, r, quad) for r in reps
        )
    else:
        results = []
        for r in reps:
            results.append(_replicate(scenario, r, quad))
            if progress and r % 25 == 0:
                print(f"[{scenario.label}] replicate {r}/{scenario.n_sim}")

    rows = [row for rws, _ in results for row in rws]
    failures = [f for _, fls in results for f in fls]
    replicates = pd.DataFrame(
        rows, columns=["replicate", "model", "estimand", "estimate", "se", "lower", "upper"]
    )

    agg_rows = []
    for (variant, estimand), grp in replicates.groupby(["model", "estimand"], sort=False):
        tv = truth.get(estimand)
        if tv is None:
            continue
        est = grp["estimate"].to_numpy()
        n = est.size
        bias = float(est.mean() - tv)
        emp_se = float(est.std(ddof=1)) if n > 1 else float("nan")
        cover = float(np.mean((grp["lower"] <= tv) & (tv <= grp["upper"])))
        agg_rows.append(
            {
                "model": variant,
                "estimand": estimand,
                "truth": tv,
                "n_used": n,
                "bias": bias,
                "emp_se": emp_se,
                "coverage": cover,
                "mcse_bias": emp_se / math.sqrt(n) if n > 1 else float("nan"),
                "mcse_coverage": coverage_mcse(cover, n),
            }
        )
    aggregate = pd.DataFrame(agg_rows)
    flagged = len(failures) > 0.05 * scenario.n_sim * len(scenario.fitted_models)
    if flagged:
        warnings.warn(
            f"scenario {scenario.label!r}: {len(failures)} replicate failures "
            f"out of {scenario.n_sim * len(scenario.fitted_models)} fits",
            stacklevel=2,
        )
    return ScenarioResult(
        scenario=scenario,
        replicates=replicates,
        aggregate=aggregate,
        truth=truth,
        failures=failures,
        flagged=flagged,
    )


def reference_scenarios(
    n_sim: int = 200,
    n_subjects: int = 2000,
    base_seed: int = 1000,
    n_truth_paths: int = 1_000_000,
    delta: float = 0.1,
) -> dict[str, Scenario]:
    """The four data-generating mechanisms at the reference parameter values.

    Weibull scale 0.1 and shape 1.3 on every transition, effects 0.01 on a
    standard-normal covariate and 0.5 on a Bernoulli(0.5) covariate, and
    entry-time / elapsed-time effects of 0.1 where present.
    """

    def model(delta1, delta2):
        return illness_death_model(
            lam=(0.1, 0.1, 0.1),
            gamma=(1.3, 1.3, 1.3),
            beta=((0.01, 0.5),) * 3,
            delta1=delta1,
            delta2=delta2,
            covariate_names=("age", "treatment"),
        )

    gens = (NormalCovariate(0.0, 1.0), BernoulliCovariate(0.5))
    # Seed offsets keep the per-scenario replicate seed ranges disjoint
    # (replicate r of a scenario uses base_seed + r, r <= n_sim).
    cases = {
        "clock_forward": (None, None, 0),
        "time_at_entry": (delta, None, 100_000),
        "time_since_entry": (None, delta, 202_000),
        "both": (delta, delta, 302_000),
    }
    out = {}
    for label, (d1, d2, offset) in cases.items():
        out[label] = Scenario(
            label=label,
            true_model=model(d1, d2),
            covariate_gen=gens,
            n_subjects=n_subjects,
            n_sim=n_sim,
            base_seed=base_seed + offset,
            n_truth_paths=n_truth_paths,
        )
    return out
