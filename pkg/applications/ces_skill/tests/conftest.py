import numpy as np
import pytest

from ces_skill.models.production import InputBundle, ProductionParams, WedgeBundle
from ces_skill.models.simulation import SimConfig
from ces_skill.services.simulation import simulate_panel

# small enough for the default suite, large enough to identify every parameter
SMALL = SimConfig(seed=11, countries=6, years=20, industries=4)


def _substitution(rng: np.random.Generator) -> float:
    value = rng.uniform(-1.5, 0.8)
    return value + 0.25 if abs(value) < 0.1 else value


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240601)


@pytest.fixture
def random_point(rng):
    """Callable drawing (params, inputs, wedges) at a random valid point."""

    def draw() -> tuple[ProductionParams, InputBundle, WedgeBundle]:
        params = ProductionParams(
            alpha=rng.uniform(0.2, 0.45),
            sigma=_substitution(rng),
            rho=_substitution(rng),
            A=rng.uniform(0.5, 2.0),
            lambda_share=rng.uniform(0.2, 0.8),
            mu_share=rng.uniform(0.2, 0.8),
        )
        x = InputBundle(*rng.uniform(0.5, 3.0, size=4))
        wedges = WedgeBundle(*np.exp(rng.normal(0.0, 0.1, size=4)))
        return params, x, wedges

    return draw


@pytest.fixture(scope="session")
def small_sim():
    return simulate_panel(SMALL)


@pytest.fixture(scope="session")
def wedged_sim():
    return simulate_panel(SMALL.model_copy(update={"wedge_sd": 0.02, "wedge_level_hu": 0.05}))


@pytest.fixture(scope="session")
def noisy_sim():
    return simulate_panel(SMALL.model_copy(update={"wedge_sd": 0.01}))
