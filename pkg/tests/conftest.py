import numpy as np
import pytest

from mtsurv import illness_death_model


@pytest.fixture(scope="session")
def two_covariate_model():
    """Illness-death model with both extra timescales on the 2->3 hazard."""
    return illness_death_model(
        lam=(0.1, 0.1, 0.1),
        gamma=(1.3, 1.3, 1.3),
        beta=((0.01, 0.5), (0.01, 0.5), (0.01, 0.5)),
        delta1=0.1,
        delta2=0.1,
        covariate_names=("age", "treatment"),
    )


@pytest.fixture
def rng():
    return np.random.default_rng(20260823)
