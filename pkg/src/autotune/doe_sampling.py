"""Latin hypercube sampling and the bound-and-sample region around incumbents."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .param_space import Configuration, ConfigurationSpace, decode, encode, encode_many


def as_generator(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


@dataclass(frozen=True)
class Region:
    """Axis-aligned box in encoded coordinates."""

    lower: tuple[float, ...]
    upper: tuple[float, ...]

    def __post_init__(self) -> None:
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        if len(lo) != len(hi):
            raise ValueError("lower and upper must have the same length")
        if any(a > b for a, b in zip(lo, hi)):
            raise ValueError("region lower bound exceeds upper bound")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def full(cls, space: ConfigurationSpace) -> "Region":
        return cls(tuple(space.lower), tuple(space.upper))

    @property
    def dim(self) -> int:
        return len(self.lower)

    @property
    def widths(self) -> np.ndarray:
        return np.asarray(self.upper) - np.asarray(self.lower)

    def contains(self, x: Sequence[float]) -> bool:
        return all(a <= v <= b for a, v, b in zip(self.lower, x, self.upper))

    def within(self, other: "Region") -> bool:
        return all(
            oa <= a and b <= ob
            for a, b, oa, ob in zip(self.lower, self.upper, other.lower, other.upper)
        )


def lhs_unit(n_dims: int, h: int, seed=None) -> np.ndarray:
    """Permutation LHS on the unit cube.

    Row ``j`` takes, in dimension ``i``, a uniform draw from interval
    ``perm_i[j]`` of ``h`` equal-width intervals.

    Returns:
        Array of shape ``(h, n_dims)`` with entries in ``[0, 1)``.
    """
    if h < 1:
        raise ValueError(f"interval count h must be >= 1, got {h}")
    rng = as_generator(seed)
    perms = np.column_stack([rng.permutation(h) for _ in range(n_dims)]) if n_dims else np.empty((h, 0))
    jitter = rng.random((h, n_dims))
    return (perms + jitter) / h


def lhs_points(lower: Sequence[float], upper: Sequence[float], h: int, seed=None) -> np.ndarray:
    lo = np.asarray(lower, dtype=float)
    hi = np.asarray(upper, dtype=float)
    return lo + lhs_unit(lo.size, h, seed) * (hi - lo)


def lhs(space: ConfigurationSpace, h: int, seed=None, region: Region | None = None) -> list[Configuration]:
    """Draw ``h`` latin-hypercube configurations over the space (or a sub-region)."""
    region = region or Region.full(space)
    pts = lhs_points(region.lower, region.upper, h, seed)
    return [decode(space, row) for row in pts]


def sample_region(space: ConfigurationSpace, region: Region, h: int, seed=None) -> list[Configuration]:
    """LHS restricted to ``region``; zero-width dimensions stay constant."""
    return lhs(space, h, seed, region=region)


def bound_region(
    incumbent: Configuration,
    pool: Sequence[Configuration],
    space: ConfigurationSpace,
) -> Region:
    """Box spanned by the nearest pool neighbours of ``incumbent`` on each axis.

    Per dimension the lower bound is the largest pool value strictly below the
    incumbent's, the upper bound the smallest strictly above. Missing
    neighbours fall back to the space bounds. Categorical parameters are
    bounded on their integer codes.
    """
    if not pool:
        raise ValueError("pool must be non-empty")
    x = encode(space, incumbent)
    vals = encode_many(space, list(pool))
    lo = space.lower.copy()
    hi = space.upper.copy()
    for j in range(space.dim):
        col = vals[:, j]
        below = col[col < x[j]]
        above = col[col > x[j]]
        if below.size:
            lo[j] = below.max()
        if above.size:
            hi[j] = above.min()
    return Region(tuple(lo), tuple(hi))


def uniform(space: ConfigurationSpace, n: int, seed=None) -> list[Configuration]:
    """Independent uniform draws per parameter (integers and categories equally likely)."""
    rng = as_generator(seed)
    cols = []
    for p in space.params:
        if p.kind == "real":
            cols.append([float(v) for v in rng.uniform(p.lower, p.upper, n)])
        elif p.kind == "integer":
            cols.append([int(v) for v in rng.integers(int(p.lower), int(p.upper) + 1, n)])
        else:
            cols.append([p.categories[int(k)] for k in rng.integers(p.n_categories, size=n)])
    return [Configuration(tuple(row)) for row in zip(*cols)]
