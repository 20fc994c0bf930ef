"""State-occupancy probabilities, length of stay, and delta-method intervals."""

import dataclasses
import math

import numpy as np
import pytest

from mtsurv import (
    ConfigError,
    ConvergenceError,
    DomainError,
    QuadratureConfig,
    fit_model,
    illness_death_model,
    occupancy_quadrature,
    occupancy_simulation,
    prediction_ci_delta,
)
from mtsurv.simulate import BernoulliCovariate, NormalCovariate, SimulationConfig, simulate_cohort

TIMES = np.array([0.0, 1.0, 2.5, 5.0])


@pytest.fixture(scope="module", params=["clock_forward", "time_at_entry", "time_since_entry", "both", "reset"])
def case_model(request):
    kwargs = {
        "clock_forward": {},
        "time_at_entry": {"delta1": 0.1},
        "time_since_entry": {"delta2": 0.1},
        "both": {"delta1": 0.1, "delta2": 0.1},
        "reset": {"delta2": 0.1, "clock3": "reset"},
    }[request.param]
    return illness_death_model(**kwargs)


class TestOccupancyQuadrature:
    def test_grid_starts_in_initial_state(self, case_model):
        grid = occupancy_quadrature(case_model, times=TIMES, check=False)
        assert np.allclose(grid.probs[0], [1.0, 0.0, 0.0])
        assert np.allclose(grid.los[0], [0.0, 0.0, 0.0])

    def test_healthy_state_probability_is_closed_form(self, case_model):
        grid = occupancy_quadrature(case_model, times=TIMES, check=False)
        expected = np.exp(-2 * 0.1 * TIMES**1.3)
        assert np.allclose(grid.probs[:, 0], expected, atol=1e-12)

    def test_probabilities_normalize_and_stay_in_range(self, case_model):
        grid = occupancy_quadrature(case_model, times=TIMES, check=False)
        assert np.allclose(grid.probs.sum(axis=1), 1.0, atol=1e-12)
        assert np.all(grid.probs >= -1e-12) and np.all(grid.probs <= 1 + 1e-12)

    def test_length_of_stay_partitions_elapsed_time(self, case_model):
        grid = occupancy_quadrature(case_model, times=TIMES, check=False)
        assert np.allclose(grid.los.sum(axis=1), TIMES, atol=1e-8)
        assert grid.los_complement_gap < 1e-8
        assert np.all(grid.los >= -1e-12)

    def test_occupancy_monotone_where_expected(self, case_model):
        times = np.linspace(0.0, 5.0, 41)
        grid = occupancy_quadrature(case_model, times=times, check=False)
        assert np.all(np.diff(grid.probs[:, 0]) < 0)  # healthy share falls
        assert np.all(np.diff(grid.probs[:, 2]) > -1e-12)  # dead share grows
        assert np.all(np.diff(grid.los, axis=0) >= -1e-12)  # time in state accrues

    def test_self_check_converges_at_default_nodes(self, case_model):
        grid = occupancy_quadrature(case_model, times=np.array([5.0]))
        assert grid.quad_error_estimate is not None
        assert grid.quad_error_estimate < 1e-6

    def test_matches_simulated_trajectories(self, case_model):
        grid = occupancy_quadrature(case_model, times=TIMES, check=False)
        sim = occupancy_simulation(case_model, times=TIMES, n_paths=200_000, seed=17)
        se = np.where(sim.probs_se > 0, sim.probs_se, np.inf)
        z = np.abs(grid.probs - sim.probs) / se
        assert z.max() < 3.0, f"max z = {z.max():.2f}"
        lse = np.where(sim.los_se > 0, sim.los_se, np.inf)
        zl = np.abs(grid.los - sim.los) / lse
        assert zl.max() < 3.5, f"max LOS z = {zl.max():.2f}"

    def test_zero_elapsed_time_coefficient_matches_absent_one(self):
        with_zero = illness_death_model(delta1=0.1, delta2=0.0)
        without = illness_death_model(delta1=0.1)
        a = occupancy_quadrature(with_zero, times=TIMES, check=False)
        b = occupancy_quadrature(without, times=TIMES, check=False)
        assert np.allclose(a.probs, b.probs, atol=1e-10)
        assert np.allclose(a.los, b.los, atol=1e-9)

    def test_nonzero_start_time_rejected(self, case_model):
        with pytest.raises(ConfigError):
            occupancy_quadrature(case_model, times=TIMES, start_time=1.0)
        with pytest.raises(ConfigError):
            occupancy_simulation(case_model, times=TIMES, start_time=1.0)

    def test_negative_times_rejected(self, case_model):
        with pytest.raises(DomainError):
            occupancy_quadrature(case_model, times=np.array([-1.0, 2.0]))

    def test_tidy_frame_layout(self, case_model):
        grid = occupancy_quadrature(case_model, times=TIMES, check=False)
        frame = grid.to_frame(label="demo")
        assert set(frame.columns) == {
            "time", "state", "measure", "estimate", "se", "lower", "upper", "method", "model",
        }
        assert len(frame) == TIMES.size * 6  # 3 states x {probability, los}
        assert set(frame.measure) == {"prob", "los"}


@pytest.fixture(scope="module")
def fitted(two_covariate_model):
    cfg = SimulationConfig(
        2000, two_covariate_model, (NormalCovariate(), BernoulliCovariate()), seed=99
    )
    cohort = simulate_cohort(cfg)
    return fit_model(two_covariate_model, cohort.long)


class TestDeltaMethod:
    def test_ses_positive_and_bounds_ordered(self, fitted):
        x = np.array([0.5, 1.0])
        times = np.array([1.0, 2.5, 5.0])
        ci = prediction_ci_delta(fitted, x, times)
        assert np.all(ci.probs_se > 0) and np.all(ci.los_se > 0)
        lo, hi = ci.prob_bounds
        assert np.all(lo <= hi) and np.all(lo >= 0) and np.all(hi <= 1)
        llo, lhi = ci.los_bounds
        assert np.all(llo <= lhi) and np.all(llo >= 0)
        base = occupancy_quadrature(fitted.model, x, times, check=False)
        assert np.all((lo <= base.probs) & (base.probs <= hi))
        assert np.all((llo <= base.los) & (base.los <= lhi))

    def test_zero_covariance_gives_zero_ses(self, fitted):
        frozen = dataclasses.replace(
            fitted,
            transition_fits=tuple(
                dataclasses.replace(tf, covariance=np.zeros_like(tf.covariance))
                for tf in fitted.transition_fits
            ),
        )
        ci = prediction_ci_delta(frozen, np.zeros(2), np.array([2.0, 5.0]))
        assert np.all(ci.probs_se == 0.0) and np.all(ci.los_se == 0.0)

    def test_unconverged_fit_blocked(self, fitted):
        broken = dataclasses.replace(
            fitted,
            transition_fits=tuple(
                dataclasses.replace(tf, converged=False) for tf in fitted.transition_fits
            ),
            converged=False,
        )
        with pytest.raises(ConvergenceError):
            prediction_ci_delta(broken, np.zeros(2), np.array([5.0]))
        ci = prediction_ci_delta(broken, np.zeros(2), np.array([5.0]), allow_unconverged=True)
        assert np.all(np.isfinite(ci.probs_se))

    def test_se_magnitude_matches_monte_carlo_spread(self, two_covariate_model):
        # 30 refits: the delta-method SE should agree with the empirical
        # spread of the point predictions within sampling error.
        times = np.array([5.0])
        x = np.zeros(2)
        preds, ses = [], []
        for rep in range(30):
            cfg = SimulationConfig(
                1000, two_covariate_model, (NormalCovariate(), BernoulliCovariate()),
                seed=300 + rep,
            )
            cohort = simulate_cohort(cfg)
            fit = fit_model(two_covariate_model, cohort.long)
            if not fit.converged:
                continue
            grid = occupancy_quadrature(fit.model, x, times, check=False)
            ci = prediction_ci_delta(fit, x, times)
            preds.append(grid.probs[0])
            ses.append(ci.probs_se[0])
        preds, ses = np.array(preds), np.array(ses)
        assert len(preds) >= 25
        emp = preds.std(axis=0, ddof=1)
        ratio = ses.mean(axis=0) / emp
        assert np.all((0.55 < ratio) & (ratio < 1.8)), f"SE/empirical ratios {ratio}"
