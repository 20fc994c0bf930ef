"""Command-line surface: reshape, fit, predict, simulate, study.

Exit codes: 0 success, 2 usage errors (click), 3 data/config/IO problems,
4 numeric problems (non-convergence, domain failures). Failures also emit
one machine-readable JSON object on stderr.
"""

from __future__ import annotations

import functools
import json
import sys

import click
import numpy as np

from . import io as io_
from .errors import (
    ConfigError,
    ConvergenceError,
    DataError,
    DomainError,
    MtsurvError,
    SingularInformationError,
)
from .estimation import FitOptions, FitResult, fit_model
from .model import ModelSpec, QuadratureConfig
from .predict import occupancy_quadrature, occupancy_simulation, prediction_ci_delta
from .simulate import simulate_cohort, simulation_config_from_dict
from .study import Scenario, reference_scenarios, run_scenario

EXIT_DATA = 3
EXIT_NUMERIC = 4


def _fail(exc: Exception, code: int):
    payload = {"error": type(exc).__name__, "message": str(exc)}
    click.echo(json.dumps(payload), err=True)
    sys.exit(code)


def handle_errors(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except (DataError, ConfigError) as exc:
            _fail(exc, EXIT_DATA)
        except OSError as exc:
            _fail(exc, EXIT_DATA)
        except (ConvergenceError, SingularInformationError, DomainError) as exc:
            _fail(exc, EXIT_NUMERIC)
        except MtsurvError as exc:
            _fail(exc, EXIT_NUMERIC)

    return wrapper


@click.group()
@click.option("--seed", type=int, default=None, help="Override config seeds.")
@click.option("--quad-nodes", type=int, default=30, show_default=True)
@click.option("--tol", type=float, default=1e-10, show_default=True, help="Root-finding tolerance.")
@click.option("--threads", type=int, default=1, show_default=True)
@click.pass_context
def main(ctx, seed, quad_nodes, tol, threads):
    """Multi-timescale illness-death survival modelling."""
    ctx.obj = {
        "seed": seed,
        "quad": QuadratureConfig(quad_nodes),
        "tol": tol,
        "threads": threads,
    }


@main.command()
@click.option("--wide", "wide_path", required=True, type=click.Path(exists=True))
@click.option("--out", required=True, type=click.Path())
@handle_errors
def reshape(wide_path, out):
    """Reshape a wide CSV (id,rf,rfi,os,osi,...) into transition-long format."""
    wide = io_.read_wide_csv(wide_path)
    long = io_.reshape_wide_to_long(wide)
    io_.write_csv(long, out)
    click.echo(f"wrote {len(long)} rows to {out}")


@main.command()
@click.option("--data", "data_path", required=True, type=click.Path(exists=True))
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option(
    "--likelihood",
    type=click.Choice(["conditional", "unconditional"]),
    default="conditional",
    show_default=True,
    help="Exposure for delayed-entry rows: from their start time, or from 0.",
)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
@handle_errors
def fit(ctx, data_path, config_path, likelihood, out):
    """Fit all transitions of the configured model to long-format data."""
    model = ModelSpec.from_dict(io_.load_json(config_path))
    data = io_.read_long_csv(data_path)
    opts = FitOptions(quad=ctx.obj["quad"], conditional=likelihood == "conditional")
    result = fit_model(model, data, opts)
    io_.save_json(result.to_dict(), out)
    click.echo(_fit_table(result))
    click.echo(f"loglik = {result.loglik:.6f}  converged = {result.converged}")
    click.echo(f"wrote fit to {out}")
    if not result.converged:
        raise ConvergenceError("one or more transitions did not converge")


def _fit_table(result: FitResult) -> str:
    lines = [f"{'parameter':<18}{'estimate':>14}{'std.err':>14}"]
    for tf in result.transition_fits:
        est, se = tf.estimates, tf.standard_errors
        for name in est:
            lines.append(f"{name:<18}{est[name]:>14.6f}{se[name]:>14.6f}")
    return "\n".join(lines)


def _parse_at(model: ModelSpec, at: tuple[str, ...]) -> np.ndarray:
    x = np.zeros(len(model.covariate_names))
    for item in at:
        if "=" not in item:
            raise ConfigError(f"--at expects name=value, got {item!r}")
        name, _, value = item.partition("=")
        if name not in model.covariate_names:
            raise ConfigError(
                f"unknown covariate {name!r}; model has {list(model.covariate_names)}"
            )
        x[model.covariate_names.index(name)] = float(value)
    return x


@main.command()
@click.option("--fit", "fit_path", required=True, type=click.Path(exists=True))
@click.option("--times", default=None, help="Comma-separated grid, e.g. 0,1,2.5,5.")
@click.option("--tmax", type=float, default=5.0, show_default=True)
@click.option("--steps", type=int, default=101, show_default=True)
@click.option(
    "--method",
    type=click.Choice(["quadrature", "simulation"]),
    default="quadrature",
    show_default=True,
)
@click.option("--ci", type=click.Choice(["delta", "none"]), default="none", show_default=True)
@click.option("--at", multiple=True, help="Covariate value, name=value; repeatable.")
@click.option("--n-paths", type=int, default=100_000, show_default=True)
@click.option("--label", default="fitted", show_default=True)
@click.option("--allow-unconverged", is_flag=True)
@click.option("--out", required=True, type=click.Path())
@click.pass_context
@handle_errors
def predict(ctx, fit_path, times, tmax, steps, method, ci, at, n_paths, label, allow_unconverged, out):
    """Predict state-occupancy probabilities and LOS from a fitted model."""
    result = FitResult.from_dict(io_.load_json(fit_path))
    if not result.converged and not allow_unconverged:
        raise ConvergenceError(
            "fit file is flagged unconverged; rerun fit or pass --allow-unconverged"
        )
    grid_times = (
        np.array([float(v) for v in times.split(",")])
        if times
        else np.linspace(0.0, tmax, steps)
    )
    x = _parse_at(result.model, at)
    quad = ctx.obj["quad"]
    if method == "quadrature":
        grid = occupancy_quadrature(result.model, x, grid_times, quad)
    else:
        seed = ctx.obj["seed"] if ctx.obj["seed"] is not None else 0
        grid = occupancy_simulation(result.model, x, grid_times, n_paths, seed, quad)
    bounds = None
    if ci == "delta":
        bounds = prediction_ci_delta(
            result, x, grid_times, quad, allow_unconverged=allow_unconverged
        )
    io_.write_csv(grid.to_frame(label=label, ci=bounds), out)
    click.echo(f"wrote predictions to {out}")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(exists=True))
@click.option("--out-prefix", required=True)
@click.pass_context
@handle_errors
def simulate(ctx, config_path, out_prefix):
    """Simulate a cohort; writes <prefix>_wide.csv and <prefix>_long.csv."""
    cfg = simulation_config_from_dict(io_.load_json(config_path))
    if ctx.obj["seed"] is not None:
        import dataclasses

        cfg = dataclasses.replace(cfg, seed=ctx.obj["seed"])
    cohort = simulate_cohort(cfg, ctx.obj["quad"])
    io_.write_csv(cohort.wide, f"{out_prefix}_wide.csv")
    io_.write_csv(cohort.long, f"{out_prefix}_long.csv")
    click.echo(
        f"simulated {cfg.n_subjects} subjects "
        f"({int(cohort.wide['rfi'].sum())} intermediate events) -> {out_prefix}_*.csv"
    )


@main.command()
@click.option("--config", "config_path", type=click.Path(exists=True), default=None)
@click.option(
    "--builtin",
    type=click.Choice(["clock_forward", "time_at_entry", "time_since_entry", "both"]),
    default=None,
    help="Run a built-in reference scenario instead of a config file.",
)
@click.option("--full-scale", is_flag=True, help="Use 1000 replicates instead of the desk-scale 200.")
@click.option("--out-prefix", required=True)
@click.pass_context
@handle_errors
def study(ctx, config_path, builtin, full_scale, out_prefix):
    """Run an ADEMP-style simulation study scenario; writes replicate and aggregate CSVs."""
    import dataclasses

    if (config_path is None) == (builtin is None):
        raise ConfigError("provide exactly one of --config or --builtin")
    if builtin:
        scenario = reference_scenarios()[builtin]
    else:
        scenario = Scenario.from_dict(io_.load_json(config_path))
    if full_scale:
        scenario = dataclasses.replace(scenario, n_sim=1000)
    if ctx.obj["seed"] is not None:
        scenario = dataclasses.replace(scenario, base_seed=ctx.obj["seed"])
    result = run_scenario(scenario, ctx.obj["quad"], threads=ctx.obj["threads"], progress=True)
    io_.write_csv(result.replicates, f"{out_prefix}_replicates.csv")
    io_.write_csv(result.aggregate, f"{out_prefix}_aggregate.csv")
    n_fail = len(result.failures)
    click.echo(
        f"scenario {scenario.label!r}: {scenario.n_sim} replicates, "
        f"{n_fail} failures{' (FLAGGED)' if result.flagged else ''} -> {out_prefix}_*.csv"
    )


if __name__ == "__main__":
    main()
