"""Random-forest regression surrogate.

Trees are grown to purity (minimum leaf size 1) on bootstrap resamples,
considering every feature at every split. Splits minimise the summed squared
error of the two children; thresholds sit at the midpoint between adjacent
distinct feature values. Impurity ties go to the lowest feature index, then
the lowest threshold.
"""

from __future__ import annotations

import hashlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from numba import njit

from .param_space import Configuration, ConfigurationSpace, encode_many

FORMAT_VERSION = 1
DEFAULT_TREES = 100


class TrainingError(ValueError):
    pass


@njit(cache=True, nogil=True)
def _sort_pair(keys, vals, m):
    """Stable in-place sort of ``keys[:m]``, carrying ``vals`` along."""
    if m <= 64:
        for i in range(1, m):
            k = keys[i]
            v = vals[i]
            j = i - 1
            while j >= 0 and keys[j] > k:
                keys[j + 1] = keys[j]
                vals[j + 1] = vals[j]
                j -= 1
            keys[j + 1] = k
            vals[j + 1] = v
        return
    perm = np.argsort(keys[:m], kind="mergesort")
    k2 = keys[:m][perm]
    v2 = vals[:m][perm]
    keys[:m] = k2
    vals[:m] = v2


@njit(cache=True, nogil=True)
def _grow(X, y, sample):
    n = sample.size
    d = X.shape[1]
    cap = 2 * n + 1
    feature = np.full(cap, -1, dtype=np.int64)
    threshold = np.zeros(cap)
    left = np.full(cap, -1, dtype=np.int64)
    right = np.full(cap, -1, dtype=np.int64)
    value = np.zeros(cap)

    order = sample.copy()
    xs_s = np.empty(n)
    yc = np.empty(n)
    buf = np.empty(n, dtype=np.int64)
    st_node = np.empty(cap, dtype=np.int64)
    st_lo = np.empty(cap, dtype=np.int64)
    st_hi = np.empty(cap, dtype=np.int64)
    sp = 0
    st_node[0] = 0
    st_lo[0] = 0
    st_hi[0] = n
    sp = 1
    n_nodes = 1

    while sp > 0:
        sp -= 1
        node = st_node[sp]
        lo = st_lo[sp]
        hi = st_hi[sp]
        m = hi - lo
        seg = order[lo:hi]
        ys = y[seg]
        mean = ys.mean()
        value[node] = mean
        if m < 2 or ys.max() == ys.min():
            continue

        yc_all = ys - mean
        tot = yc_all.sum()
        totsq = (yc_all * yc_all).sum()
        best = np.inf
        best_f = -1
        best_thr = 0.0
        for f in range(d):
            for i in range(m):
                xs_s[i] = X[seg[i], f]
                yc[i] = yc_all[i]
            _sort_pair(xs_s, yc, m)
            cum = 0.0
            cumsq = 0.0
            for k in range(1, m):
                v = yc[k - 1]
                cum += v
                cumsq += v * v
                if xs_s[k - 1] < xs_s[k]:
                    rs = tot - cum
                    sse = (cumsq - cum * cum / k) + ((totsq - cumsq) - rs * rs / (m - k))
                    if sse < best:
                        best = sse
                        best_f = f
                        thr = 0.5 * (xs_s[k - 1] + xs_s[k])
                        if thr >= xs_s[k]:
                            thr = xs_s[k - 1]
                        best_thr = thr
        if best_f < 0:
            continue

        # stable partition of the node's rows around the threshold
        nl = 0
        for i in range(m):
            if X[seg[i], best_f] <= best_thr:
                buf[nl] = seg[i]
                nl += 1
        j = nl
        for i in range(m):
            if X[seg[i], best_f] > best_thr:
                buf[j] = seg[i]
                j += 1
        order[lo:hi] = buf[:m]

        feature[node] = best_f
        threshold[node] = best_thr
        left[node] = n_nodes
        right[node] = n_nodes + 1
        st_node[sp] = n_nodes
        st_lo[sp] = lo
        st_hi[sp] = lo + nl
        sp += 1
        st_node[sp] = n_nodes + 1
        st_lo[sp] = lo + nl
        st_hi[sp] = hi
        sp += 1
        n_nodes += 2

    return (feature[:n_nodes].copy(), threshold[:n_nodes].copy(),
            left[:n_nodes].copy(), right[:n_nodes].copy(), value[:n_nodes].copy())


@njit(cache=True, nogil=True)
def _predict(offsets, feature, threshold, left, right, value, X):
    n_trees = offsets.size - 1
    out = np.zeros(X.shape[0])
    for r in range(X.shape[0]):
        acc = 0.0
        for t in range(n_trees):
            base = offsets[t]
            node = 0
            while feature[base + node] >= 0:
                if X[r, feature[base + node]] <= threshold[base + node]:
                    node = left[base + node]
                else:
                    node = right[base + node]
            acc += value[base + node]
        out[r] = acc / n_trees
    return out


@dataclass(frozen=True)
class RegressionTree:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.feature.size

    def predict(self, X: np.ndarray) -> np.ndarray:
        offsets = np.array([0, self.n_nodes], dtype=np.int64)
        return _predict(offsets, self.feature, self.threshold, self.left, self.right,
                        self.value, np.atleast_2d(np.asarray(X, dtype=float)))


@dataclass(frozen=True)
class Forest:
    """Trained, immutable ensemble. Prediction is the mean of the trees."""

    offsets: np.ndarray
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    seeds: np.ndarray
    n_features: int
    fingerprint: str

    @property
    def n_trees(self) -> int:
        return self.offsets.size - 1

    def tree(self, t: int) -> RegressionTree:
        a, b = self.offsets[t], self.offsets[t + 1]
        return RegressionTree(self.feature[a:b], self.threshold[a:b], self.left[a:b],
                              self.right[a:b], self.value[a:b])

    def predict(self, X) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return _predict(self.offsets, self.feature, self.threshold, self.left,
                        self.right, self.value, X)

    def save(self, path: str | Path) -> None:
        np.savez(
            path,
            format_version=np.int64(FORMAT_VERSION),
            offsets=self.offsets, feature=self.feature, threshold=self.threshold,
            left=self.left, right=self.right, value=self.value, seeds=self.seeds,
            n_features=np.int64(self.n_features), fingerprint=np.str_(self.fingerprint),
        )

    @classmethod
    def load(cls, path: str | Path) -> "Forest":
        with np.load(path, allow_pickle=False) as z:
            version = int(z["format_version"])
            if version != FORMAT_VERSION:
                raise ValueError(f"unsupported forest format version {version}")
            return cls(
                offsets=z["offsets"], feature=z["feature"], threshold=z["threshold"],
                left=z["left"], right=z["right"], value=z["value"], seeds=z["seeds"],
                n_features=int(z["n_features"]), fingerprint=str(z["fingerprint"]),
            )


def tree_seeds(seed, n_trees: int) -> np.ndarray:
    """Per-tree bootstrap seeds, fixed up front from the master seed."""
    children = np.random.SeedSequence(seed).spawn(n_trees)
    return np.array([c.generate_state(1, dtype=np.uint64)[0] for c in children], dtype=np.uint64)


def _fingerprint(X: np.ndarray, y: np.ndarray) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(X).tobytes())
    h.update(np.ascontiguousarray(y).tobytes())
    return h.hexdigest()[:16]


def train(X, y, n_trees: int = DEFAULT_TREES, seed=0, n_jobs: int = 1) -> Forest:
    """Fit a forest on encoded configurations ``X`` and execution times ``y``."""
    X = np.ascontiguousarray(np.atleast_2d(np.asarray(X, dtype=float)))
    y = np.ascontiguousarray(np.asarray(y, dtype=float))
    if X.shape[0] < 2:
        raise TrainingError(f"need at least 2 samples, got {X.shape[0]}")
    if X.shape[0] != y.size:
        raise TrainingError("X and y lengths differ")
    if not np.all(np.isfinite(y)) or np.any(y <= 0):
        raise TrainingError("targets must be finite and positive")
    if n_trees < 1:
        raise TrainingError("need at least one tree")

    n = y.size
    seeds = tree_seeds(seed, n_trees)

    def grow(s):
        sample = np.random.default_rng(int(s)).integers(0, n, size=n).astype(np.int64)
        return _grow(X, y, sample)

    if n_jobs > 1:
        with ThreadPoolExecutor(n_jobs) as ex:
            trees = list(ex.map(grow, seeds))
    else:
        trees = [grow(s) for s in seeds]

    sizes = [t[0].size for t in trees]
    offsets = np.zeros(n_trees + 1, dtype=np.int64)
    offsets[1:] = np.cumsum(sizes)
    cat = [np.concatenate([t[i] for t in trees]) for i in range(5)]
    return Forest(offsets, *cat, seeds=seeds, n_features=X.shape[1], fingerprint=_fingerprint(X, y))


def train_configs(space: ConfigurationSpace, configs: Sequence[Configuration], times,
                  n_trees: int = DEFAULT_TREES, seed=0, n_jobs: int = 1) -> Forest:
    return train(encode_many(space, list(configs)), times, n_trees, seed, n_jobs)


def predict(forest: Forest, x) -> float | np.ndarray:
    x = np.asarray(x, dtype=float)
    out = forest.predict(x)
    return float(out[0]) if x.ndim == 1 else out


def argbest(forest: Forest, space: ConfigurationSpace, candidates: Sequence[Configuration]) -> Configuration:
    """Candidate with the lowest predicted time; the first one wins ties."""
    if not candidates:
        raise ValueError("candidates must be non-empty")
    preds = forest.predict(encode_many(space, list(candidates)))
    return candidates[int(np.argmin(preds))]
