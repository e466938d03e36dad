import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from autotune.param_space import (
    Configuration, ConfigurationSpace, DimensionMismatch, ParameterSpec, SpaceError,
    decode, default_configuration, encode, spark_space, validate,
)


def test_bundled_space_has_thirteen_parameters(space):
    assert space.dim == 13
    kinds = [p.kind for p in space.params]
    assert kinds.count("boolean") == 4
    assert kinds.count("categorical") == 2
    assert validate(space, default_configuration(space)) == []


def test_space_json_round_trip(space, tmp_path):
    path = tmp_path / "space.json"
    space.save(path)
    assert ConfigurationSpace.load(path) == space
    assert json.loads(path.read_text())["name"] == space.name


@pytest.mark.parametrize("kwargs", [
    dict(name="x", kind="real", lower=1.0, upper=1.0, default=1.0),
    dict(name="x", kind="integer", lower=0.5, upper=3, default=1),
    dict(name="x", kind="categorical", categories=("a",), default="a"),
    dict(name="x", kind="categorical", categories=("a", "a"), default="a"),
    dict(name="x", kind="real", lower=0.0, upper=1.0, default=2.0),
    dict(name="x", kind="complex", lower=0.0, upper=1.0, default=0.5),
])
def test_invalid_specs_are_rejected(kwargs):
    with pytest.raises(SpaceError):
        ParameterSpec(**kwargs)


def test_from_dict_rejects_unknown_fields():
    with pytest.raises(SpaceError):
        ParameterSpec.from_dict({"name": "x", "kind": "real", "lower": 0, "upper": 1,
                                 "default": 0.5, "step": 0.1})


def test_validate_lists_each_violation(mixed_space):
    cfg = Configuration((5.0, 0, "z", True))
    bad = {v.param for v in validate(mixed_space, cfg)}
    assert bad == {"r", "i", "c"}
    with pytest.raises(DimensionMismatch):
        validate(mixed_space, Configuration((0.0,)))


def test_bounds_are_inclusive(mixed_space):
    assert validate(mixed_space, Configuration((-1.0, 9, "c", False))) == []
    assert validate(mixed_space, Configuration((2.0, 1, "a", False))) == []


def test_materialize_rounding(mixed_space):
    r, i, c, flag = mixed_space.params
    assert i.materialize(2.5) == 3
    assert i.materialize(2.49) == 2
    assert i.materialize(100.0) == 9
    assert c.materialize(2.999) == "c"
    assert c.materialize(3.0) == "c"
    assert c.materialize(-0.5) == "a"
    assert flag.materialize(0.7) is False
    assert r.materialize(7.0) == 2.0


def test_categorical_encoding_spans_half_open_codes(mixed_space):
    assert mixed_space.params[2].encoded_bounds == (0.0, 3.0)
    assert list(mixed_space.upper) == [2.0, 9.0, 3.0, 2.0]


@settings(max_examples=200, deadline=None)
@given(st.floats(-1, 2), st.integers(1, 9), st.sampled_from("abc"), st.booleans())
def test_encode_decode_round_trip(r, i, c, flag):
    sp = ConfigurationSpace("mixed", (
        ParameterSpec("r", "real", -1.0, 2.0, default=0.0),
        ParameterSpec("i", "integer", 1, 9, default=3),
        ParameterSpec("c", "categorical", categories=("a", "b", "c"), default="b"),
        ParameterSpec("flag", "boolean", default=True),
    ))
    cfg = Configuration((r, i, c, flag))
    assert decode(sp, encode(sp, cfg)) == cfg


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=13, max_size=13))
def test_decode_always_yields_valid_configurations(x):
    sp = spark_space()
    assert validate(sp, decode(sp, np.array(x))) == []
