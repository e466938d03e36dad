import numpy as np
import pytest

from autotune.param_space import ConfigurationSpace, ParameterSpec, spark_space
from autotune.target_harness import Landscape, Platform, SyntheticSurface, bundled_surface


@pytest.fixture(scope="session")
def space():
    return spark_space()


@pytest.fixture(scope="session")
def surface(space):
    return bundled_surface(space)


@pytest.fixture
def platforms(surface):
    return Platform(surface, 1 / 16, 5, "TB"), Platform(surface, 1.0, 5, "PS")


def bowl_space(optimum=0.3):
    """One real parameter on [0, 1] with a quadratic bowl at ``optimum``."""
    sp = ConfigurationSpace("bowl", (ParameterSpec("x", "real", 0.0, 1.0, default=0.9),))
    land = Landscape(sp, {"x": optimum}, {"x": 4.0}, {})
    return sp, SyntheticSurface(sp, land, land, theta=(0.0, 1000.0, 0.0, 0.0))


@pytest.fixture
def bowl():
    return bowl_space()


@pytest.fixture
def mixed_space():
    return ConfigurationSpace("mixed", (
        ParameterSpec("r", "real", -1.0, 2.0, default=0.0),
        ParameterSpec("i", "integer", 1, 9, default=3),
        ParameterSpec("c", "categorical", categories=("a", "b", "c"), default="b"),
        ParameterSpec("flag", "boolean", default=True),
    ))


def rng(seed=0):
    return np.random.default_rng(seed)
