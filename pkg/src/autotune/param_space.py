"""Mixed continuous/integer/categorical configuration spaces.

A space is loaded from a JSON definition file::

    {
      "name": "spark",
      "params": [
        {"name": "spark.executor.cores", "kind": "integer",
         "lower": 1, "upper": 8, "default": 4},
        {"name": "spark.io.compression.codec", "kind": "categorical",
         "categories": ["lz4", "lzf", "snappy"], "default": "lz4"},
        {"name": "spark.rdd.compress", "kind": "boolean", "default": false}
      ]
    }

Bounds are inclusive. Categorical codes follow declaration order, so the
file is the single source of truth for the encoding.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Sequence

import numpy as np

KINDS = ("real", "integer", "categorical", "boolean")


class SpaceError(ValueError):
    """Raised for malformed parameter or space definitions."""


class DimensionMismatch(ValueError):
    """A configuration has the wrong number of values for its space."""


@dataclass(frozen=True)
class ParameterSpec:
    name: str
    kind: str
    lower: float | None = None
    upper: float | None = None
    categories: tuple = ()
    default: Any = None

    def __post_init__(self) -> None:
        if self.kind not in KINDS:
            raise SpaceError(f"{self.name}: unknown kind {self.kind!r}")
        if self.kind == "boolean":
            object.__setattr__(self, "categories", (False, True))
        if self.is_numeric:
            if self.lower is None or self.upper is None:
                raise SpaceError(f"{self.name}: numeric parameter needs lower and upper")
            if not self.lower < self.upper:
                raise SpaceError(f"{self.name}: lower ({self.lower}) must be < upper ({self.upper})")
            if self.kind == "integer" and not (
                float(self.lower).is_integer() and float(self.upper).is_integer()
            ):
                raise SpaceError(f"{self.name}: integer bounds must be whole numbers")
        else:
            cats = tuple(self.categories)
            object.__setattr__(self, "categories", cats)
            if len(cats) < 2 or len(set(cats)) != len(cats):
                raise SpaceError(f"{self.name}: need at least 2 distinct categories")
        if self.default is None:
            raise SpaceError(f"{self.name}: missing default")
        if not self.contains(self.default):
            raise SpaceError(f"{self.name}: default {self.default!r} outside its bounds")

    @property
    def is_numeric(self) -> bool:
        return self.kind in ("real", "integer")

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    def contains(self, value: Any) -> bool:
        if self.kind == "boolean":
            return isinstance(value, (bool, np.bool_))
        if self.kind == "categorical":
            return value in self.categories
        if isinstance(value, (bool, np.bool_)) or not isinstance(value, (int, float, np.number)):
            return False
        if not math.isfinite(value):
            return False
        if self.kind == "integer" and not float(value).is_integer():
            return False
        return self.lower <= value <= self.upper

    @property
    def encoded_bounds(self) -> tuple[float, float]:
        """Sampling box of this dimension in encoded coordinates.

        Categorical dimensions span the half-open code range ``[0, K)``.
        """
        if self.is_numeric:
            return float(self.lower), float(self.upper)
        return 0.0, float(self.n_categories)

    def encode(self, value: Any) -> float:
        if self.is_numeric:
            return float(value)
        return float(self.categories.index(bool(value) if self.kind == "boolean" else value))

    def materialize(self, x: float) -> Any:
        """Map an encoded coordinate back to a legal value.

        Integers round half away from zero; categorical codes are floored.
        Results are clipped to the parameter's bounds.
        """
        if self.kind == "real":
            return float(min(max(x, self.lower), self.upper))
        if self.kind == "integer":
            r = math.floor(abs(x) + 0.5) * (1 if x >= 0 else -1)
            return int(min(max(r, self.lower), self.upper))
        idx = min(max(int(math.floor(x)), 0), self.n_categories - 1)
        return self.categories[idx]

    def to_dict(self) -> dict:
        d: dict[str, Any] = {"name": self.name, "kind": self.kind}
        if self.is_numeric:
            d["lower"], d["upper"] = self.lower, self.upper
        elif self.kind == "categorical":
            d["categories"] = list(self.categories)
        d["default"] = self.default
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ParameterSpec":
        unknown = set(d) - {"name", "kind", "lower", "upper", "categories", "default"}
        if unknown:
            raise SpaceError(f"{d.get('name')}: unknown fields {sorted(unknown)}")
        kind = d.get("kind")
        if kind not in KINDS:
            raise SpaceError(f"{d.get('name')}: unknown kind {kind!r}")
        default = d.get("default")
        if kind == "integer" and isinstance(default, float) and default.is_integer():
            default = int(default)
        return cls(
            name=d["name"],
            kind=kind,
            lower=d.get("lower"),
            upper=d.get("upper"),
            categories=tuple(d.get("categories", ())),
            default=default,
        )


@dataclass(frozen=True)
class Configuration:
    """One concrete assignment, positionally aligned with its space."""

    values: tuple

    def __post_init__(self) -> None:
        object.__setattr__(self, "values", tuple(self.values))

    def __len__(self) -> int:
        return len(self.values)

    def __getitem__(self, i: int) -> Any:
        return self.values[i]

    def as_dict(self, space: "ConfigurationSpace") -> dict:
        return dict(zip(space.names, self.values))


@dataclass(frozen=True)
class Violation:
    param: str
    value: Any
    bound: Any


@dataclass(frozen=True)
class ConfigurationSpace:
    name: str
    params: tuple[ParameterSpec, ...]
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self) -> None:
        object.__setattr__(self, "params", tuple(self.params))
        if not self.params:
            raise SpaceError("a configuration space needs at least one parameter")
        names = [p.name for p in self.params]
        if len(set(names)) != len(names):
            raise SpaceError("parameter names must be unique")
        object.__setattr__(self, "_index", {n: i for i, n in enumerate(names)})

    @property
    def dim(self) -> int:
        return len(self.params)

    @property
    def names(self) -> list[str]:
        return [p.name for p in self.params]

    def index(self, name: str) -> int:
        return self._index[name]

    @property
    def lower(self) -> np.ndarray:
        return np.array([p.encoded_bounds[0] for p in self.params])

    @property
    def upper(self) -> np.ndarray:
        return np.array([p.encoded_bounds[1] for p in self.params])

    def to_dict(self) -> dict:
        return {"name": self.name, "params": [p.to_dict() for p in self.params]}

    @classmethod
    def from_dict(cls, d: dict) -> "ConfigurationSpace":
        if "params" not in d:
            raise SpaceError("space definition needs a 'params' list")
        return cls(d.get("name", "space"), tuple(ParameterSpec.from_dict(p) for p in d["params"]))

    @classmethod
    def load(cls, path: str | Path) -> "ConfigurationSpace":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")


def spark_space() -> ConfigurationSpace:
    """The bundled 13-parameter Spark space."""
    text = resources.files("autotune.data").joinpath("spark_space.json").read_text("utf-8")
    return ConfigurationSpace.from_dict(json.loads(text))


def validate(space: ConfigurationSpace, config: Configuration) -> list[Violation]:
    """Return one violation per out-of-bounds value; empty means valid.

    Raises:
        DimensionMismatch: if the configuration length differs from the space.
    """
    if len(config) != space.dim:
        raise DimensionMismatch(f"configuration has {len(config)} values, space has {space.dim}")
    out = []
    for p, v in zip(space.params, config.values):
        if not p.contains(v):
            bound = (p.lower, p.upper) if p.is_numeric else p.categories
            out.append(Violation(p.name, v, bound))
    return out


def default_configuration(space: ConfigurationSpace) -> Configuration:
    return Configuration(tuple(p.default for p in space.params))


def encode(space: ConfigurationSpace, config: Configuration) -> np.ndarray:
    if len(config) != space.dim:
        raise DimensionMismatch(f"configuration has {len(config)} values, space has {space.dim}")
    return np.array([p.encode(v) for p, v in zip(space.params, config.values)], dtype=float)


def encode_many(space: ConfigurationSpace, configs: Sequence[Configuration]) -> np.ndarray:
    if not configs:
        return np.empty((0, space.dim))
    return np.vstack([encode(space, c) for c in configs])


def decode(space: ConfigurationSpace, x: Sequence[float]) -> Configuration:
    """Turn an encoded (possibly fractional) vector into a valid configuration."""
    if len(x) != space.dim:
        raise DimensionMismatch(f"vector has {len(x)} entries, space has {space.dim}")
    return Configuration(tuple(p.materialize(float(v)) for p, v in zip(space.params, x)))
