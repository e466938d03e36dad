import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autotune.doe_sampling import (
    Region, bound_region, lhs, lhs_points, lhs_unit, sample_region, uniform,
)
from autotune.param_space import Configuration, encode, encode_many, validate


@pytest.mark.parametrize("h", [1, 2, 5, 64])
@pytest.mark.parametrize("n", [1, 2, 13])
def test_one_point_per_interval(h, n):
    u = lhs_unit(n, h, seed=7)
    assert u.shape == (h, n)
    assert np.all((u >= 0) & (u < 1))
    for j in range(n):
        counts = np.bincount(np.floor(u[:, j] * h).astype(int), minlength=h)
        assert np.all(counts == 1)


def test_lhs_is_deterministic_per_seed():
    assert np.array_equal(lhs_unit(4, 10, 3), lhs_unit(4, 10, 3))
    assert not np.array_equal(lhs_unit(4, 10, 3), lhs_unit(4, 10, 4))


def test_lhs_rejects_empty_design():
    with pytest.raises(ValueError):
        lhs_unit(3, 0)


def test_lhs_points_respect_box():
    pts = lhs_points([10, -1], [20, 1], 50, seed=1)
    assert pts[:, 0].min() >= 10 and pts[:, 0].max() < 20
    assert pts[:, 1].min() >= -1 and pts[:, 1].max() < 1


def test_lhs_configurations_are_valid(space):
    for cfg in lhs(space, 40, seed=2):
        assert validate(space, cfg) == []


def test_bound_region_uses_strict_neighbours(mixed_space):
    inc = Configuration((0.5, 5, "b", True))
    pool = [inc, Configuration((0.0, 5, "a", True)), Configuration((1.5, 8, "c", True)),
            Configuration((0.2, 2, "b", True))]
    reg = bound_region(inc, pool, mixed_space)
    assert reg.lower == (0.2, 2.0, 0.0, 0.0)
    assert reg.upper == (1.5, 8.0, 2.0, 2.0)
    assert reg.contains(encode(mixed_space, inc))


def test_bound_region_falls_back_to_space_bounds(mixed_space):
    inc = Configuration((0.5, 5, "b", True))
    reg = bound_region(inc, [inc], mixed_space)
    assert reg == Region.full(mixed_space)
    with pytest.raises(ValueError):
        bound_region(inc, [], mixed_space)


@settings(max_examples=60, deadline=None)
@given(st.integers(0, 10_000), st.integers(2, 20), st.integers(1, 10))
def test_bound_region_shrinks_as_pool_grows(seed, n, extra):
    from autotune.param_space import spark_space
    sp = spark_space()
    pts = uniform(sp, n + extra, seed)
    inc = pts[0]
    small = bound_region(inc, pts[:n], sp)
    large = bound_region(inc, pts, sp)
    assert large.within(small)
    assert small.within(Region.full(sp))
    assert large.contains(encode(sp, inc))


def test_sample_region_stays_inside(space):
    pool = uniform(space, 20, 0)
    reg = bound_region(pool[0], pool, space)
    X = encode_many(space, sample_region(space, reg, 30, seed=5))
    lo, hi = np.array(reg.lower), np.array(reg.upper)
    assert np.all(X >= np.floor(lo) - 1e-12)
    assert np.all(X <= np.ceil(hi) + 1e-12)


def test_uniform_per_dimension_chi_square(mixed_space):
    from scipy.stats import chisquare
    draws = uniform(mixed_space, 10_000, seed=11)
    ints = np.array([c[1] for c in draws])
    cats = np.array(["abc".index(c[2]) for c in draws])
    flags = np.array([int(c[3]) for c in draws])
    reals = np.array([c[0] for c in draws])
    for codes, k in ((ints - 1, 9), (cats, 3), (flags, 2), (np.floor((reals + 1) / 3 * 10).astype(int), 10)):
        assert chisquare(np.bincount(codes, minlength=k)).pvalue > 0.001
