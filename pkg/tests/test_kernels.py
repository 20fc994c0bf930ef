"""Compiled and pure-python kernel backends must agree."""

import numpy as np
import pytest

from mtsurv._kernels import BACKEND, get_backends
from mtsurv.model import QuadratureConfig


@pytest.fixture(scope="module")
def backends():
    return get_backends()


def _dataset(n=3000, seed=5):
    rng = np.random.default_rng(seed)
    entry = rng.uniform(0, 3, n) * (rng.random(n) < 0.8)
    start = entry.copy()
    stop = start + rng.uniform(0.01, 5, n)
    status = (rng.random(n) < 0.6).astype(int)
    lp = rng.normal(scale=0.4, size=n)
    u = rng.uniform(1e-6, 1 - 1e-6, n)
    return start, stop, status, entry, lp, u


def test_compiled_backend_is_available(backends):
    assert "python" in backends
    assert "compiled" in backends, "the compiled extension failed to build or import"
    assert BACKEND in backends


@pytest.mark.parametrize("gam", [0.7, 1.0, 1.3, 2.2])
@pytest.mark.parametrize("use_d1,use_d2,clock_reset", [
    (False, False, False),
    (True, False, False),
    (False, True, False),
    (True, True, False),
    (True, True, True),
])
def test_loglik_parity(backends, gam, use_d1, use_d2, clock_reset):
    if "compiled" not in backends:
        pytest.skip("compiled backend unavailable")
    start, stop, status, entry, lp, _ = _dataset()
    qx, qw = QuadratureConfig(30).jacobi_points(gam)
    args = (start, stop, status, entry, lp, 0.12, gam, 0.1, 0.15,
            use_d1, use_d2, clock_reset, qx, qw)
    v_py = backends["python"].transition_loglik(*args)
    v_c = backends["compiled"].transition_loglik(*args)
    assert v_c == pytest.approx(v_py, rel=1e-12)


@pytest.mark.parametrize("gam", [0.7, 1.3, 2.2])
@pytest.mark.parametrize("clock_reset", [False, True])
def test_root_solver_parity(backends, gam, clock_reset):
    if "compiled" not in backends:
        pytest.skip("compiled backend unavailable")
    _, _, _, entry, lp, u = _dataset()
    qx, qw = QuadratureConfig(30).jacobi_points(gam)
    args = (0.12, gam, lp, 0.1, 0.15, True, True, clock_reset, entry, u, 1e-10, qx, qw)
    t_py, p_py = backends["python"].solve_conditional_times(*args)
    t_c, p_c = backends["compiled"].solve_conditional_times(*args)
    assert np.array_equal(p_py, p_c)
    assert np.max(np.abs(t_py - t_c)) < 1e-9


def test_root_solver_plateau_parity(backends):
    if "compiled" not in backends:
        pytest.skip("compiled backend unavailable")
    # Hazard decays so that the total cumulative hazard caps at 2: survival
    # plateaus at exp(-2), above u = 1e-6 but below u = 0.9.
    qx, qw = QuadratureConfig(30).jacobi_points(1.0)
    r = np.array([0.5, 0.5])
    u = np.array([1e-6, 0.9])
    args = (1.0, 1.0, np.zeros(2), 0.0, -0.5, False, True, False, r, u, 1e-10, qx, qw)
    _, p_py = backends["python"].solve_conditional_times(*args)
    _, p_c = backends["compiled"].solve_conditional_times(*args)
    assert p_py.tolist() == p_c.tolist() == [True, False]


def test_forced_fallback_env_selects_python_backend():
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "import mtsurv; print(mtsurv.KERNEL_BACKEND)"],
        env={"MTSURV_PURE_PYTHON": "1", "PATH": "/usr/bin:/bin"},
        capture_output=True,
        text=True,
        check=True,
    )
    assert out.stdout.strip() == "python"
