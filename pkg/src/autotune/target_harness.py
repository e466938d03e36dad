"""Target systems (simulator and replay) and the trial-log format.

Trial logs are JSON Lines. The first line is a header::

    {"schema": "autotune.trial-log", "version": 1, "space": "spark",
     "params": ["spark.executor.cores", ...], "meta": {...}}

and every following line is one execution::

    {"i": 0, "phase": "init", "platform": "TB", "iteration": 0,
     "config": [4, 1024, 0.6, ...], "ds": 0.0625, "nm": 5,
     "time_ms": 5120.3, "rep": 0, "seed": 1234, "charged_ms": 5120.3,
     "elapsed_ms": 5120.3, "reused": false}

``charged_ms`` is the budget actually spent (zero for reused results) and
``elapsed_ms`` the running total, so it doubles as a monotone timestamp.
"""

from __future__ import annotations

import json
import logging
import math
import threading
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Iterable, Protocol, runtime_checkable

import numpy as np

from .param_space import Configuration, ConfigurationSpace, default_configuration, encode

log = logging.getLogger(__name__)

LOG_SCHEMA = "autotune.trial-log"
LOG_VERSION = 1
SURFACE_VERSION = 1
PHASES = ("init", "explore", "exploit", "validate")
PLATFORMS = ("TB", "PS")


class ReplayMiss(LookupError):
    """The replay log holds no sample for the requested execution."""


class LogFormatError(ValueError):
    pass


@dataclass(frozen=True)
class WorkloadSpec:
    program: str
    dataset_gb: float

    def __post_init__(self) -> None:
        if self.dataset_gb <= 0:
            raise ValueError("dataset size must be positive")


@dataclass(frozen=True)
class EnvironmentSpec:
    cores: int
    cpu_ghz: float
    memory_gb: float
    disk_gb: float
    network_gbps: float
    machines: int

    def __post_init__(self) -> None:
        if min(self.cores, self.cpu_ghz, self.memory_gb, self.disk_gb,
               self.network_gbps, self.machines) <= 0:
            raise ValueError("environment quantities must be positive")


@runtime_checkable
class TargetSystem(Protocol):
    space: ConfigurationSpace
    deterministic: bool

    def execute(self, config: Configuration, ds: float, nm: int, seed: int | None = None) -> float:
        ...


@dataclass(frozen=True)
class Platform:
    """A target pinned to one scale: the testbed or the production system."""

    target: TargetSystem
    ds: float
    nm: int
    name: str = "TB"

    def execute(self, config: Configuration, seed: int | None = None) -> float:
        return self.target.execute(config, self.ds, self.nm, seed)


def _check_scale(ds: float, nm: int) -> None:
    if not 0 < ds <= 1:
        raise ValueError(f"data scale must be in (0, 1], got {ds}")
    if nm < 1:
        raise ValueError(f"machine count must be >= 1, got {nm}")


# --------------------------------------------------------------------------- #
# synthetic surface

@dataclass
class Landscape:
    """``1 + quadratic bowl + categorical offsets`` over a space.

    The bowl lives on numeric parameters normalised to ``[0, 1]``; its
    Hessian must be positive definite so the minimiser is ``optimum``.
    """

    space: ConfigurationSpace
    optimum: dict[str, float]
    weights: dict[str, float]
    offsets: dict[str, list[float]]
    interactions: list[tuple[str, str, float]] = field(default_factory=list)

    def __post_init__(self) -> None:
        sp = self.space
        self._num = [i for i, p in enumerate(sp.params) if p.is_numeric]
        self._cat = [i for i, p in enumerate(sp.params) if not p.is_numeric]
        names = [sp.params[i].name for i in self._num]
        if set(self.optimum) != set(names) or set(self.weights) != set(names):
            raise ValueError("optimum and weights must cover exactly the numeric parameters")
        for i in self._cat:
            p = sp.params[i]
            offs = self.offsets.get(p.name)
            if offs is None or len(offs) != p.n_categories or min(offs) < 0:
                raise ValueError(f"{p.name}: need one non-negative offset per category")
        self._lo = np.array([sp.params[i].lower for i in self._num], dtype=float)
        self._w = np.array([sp.params[i].upper - sp.params[i].lower for i in self._num], dtype=float)
        self._opt = (np.array([self.optimum[n] for n in names]) - self._lo) / self._w
        pos = {n: k for k, n in enumerate(names)}
        H = np.diag([self.weights[n] for n in names]).astype(float)
        for a, b, c in self.interactions:
            H[pos[a], pos[b]] += c / 2
            H[pos[b], pos[a]] += c / 2
        if names and np.linalg.eigvalsh(H).min() <= 0:
            raise ValueError("quadratic part must be positive definite")
        self._H = H

    def value(self, config: Configuration) -> float:
        x = encode(self.space, config)
        u = (x[self._num] - self._lo) / self._w - self._opt
        v = 1.0 + float(u @ self._H @ u)
        for i in self._cat:
            v += self.offsets[self.space.params[i].name][int(x[i])]
        return v

    def optimum_configuration(self) -> Configuration:
        vals = []
        for p in self.space.params:
            if p.is_numeric:
                v = self.optimum[p.name]
                vals.append(int(v) if p.kind == "integer" else float(v))
            else:
                offs = self.offsets[p.name]
                vals.append(p.categories[int(np.argmin(offs))])
        return Configuration(tuple(vals))

    def to_dict(self) -> dict:
        return {
            "optimum": self.optimum,
            "weights": self.weights,
            "offsets": self.offsets,
            "interactions": [list(t) for t in self.interactions],
        }

    @classmethod
    def from_dict(cls, space: ConfigurationSpace, d: dict) -> "Landscape":
        return cls(
            space,
            optimum={k: float(v) for k, v in d["optimum"].items()},
            weights={k: float(v) for k, v in d["weights"].items()},
            offsets={k: [float(o) for o in v] for k, v in d["offsets"].items()},
            interactions=[(a, b, float(c)) for a, b, c in d.get("interactions", [])],
        )

    @classmethod
    def generate(cls, space: ConfigurationSpace, rng: np.random.Generator,
                 weight_range=(0.5, 3.0), offset_max: float = 0.4,
                 n_interactions: int = 4) -> "Landscape":
        optimum, weights, offsets = {}, {}, {}
        for p in space.params:
            if p.is_numeric:
                v = p.lower + rng.uniform(0.15, 0.85) * (p.upper - p.lower)
                optimum[p.name] = float(round(v)) if p.kind == "integer" else float(v)
                weights[p.name] = float(rng.uniform(*weight_range))
            else:
                offs = rng.uniform(0, offset_max, p.n_categories)
                offs[rng.integers(p.n_categories)] = 0.0
                offsets[p.name] = [float(o) for o in offs]
        numeric = [p.name for p in space.params if p.is_numeric]
        inter = []
        if len(numeric) >= 2:
            for _ in range(n_interactions):
                a, b = rng.choice(len(numeric), 2, replace=False)
                # keeps the Hessian diagonally dominant
                c = rng.uniform(-0.5, 0.5) * min(weights[numeric[a]], weights[numeric[b]]) / n_interactions
                inter.append((numeric[a], numeric[b], float(c)))
        return cls(space, optimum, weights, offsets, inter)


@dataclass
class SyntheticSurface:
    """Desk-scale workload simulator with a known optimum.

    ``time = law(ds, nm) * blend(config)`` where ``law`` is the four-term
    scaling model with coefficients ``theta`` and ``blend`` mixes the true
    landscape with an unrelated decoy landscape. The decoy weight is
    ``(1 - fidelity) * min(1, log2(1/ds) / ds_octaves + nm_penalty * |nm - production_nm| / production_nm)``,
    so testbeds far from production rank configurations less faithfully.
    The decoy is rescaled to agree with the true landscape at the default
    configuration, whose times therefore follow the scaling law exactly.
    Noise is multiplicative lognormal with log-sd ``noise``.
    """

    space: ConfigurationSpace
    base: Landscape
    decoy: Landscape
    theta: tuple[float, float, float, float] = (100.0, 160000.0, 50.0, 20.0)
    fidelity: float = 1.0
    noise: float = 0.0
    production_nm: int = 5
    ds_octaves: float = 5.0
    nm_penalty: float = 1.0

    def __post_init__(self) -> None:
        self.theta = tuple(float(t) for t in self.theta)
        if len(self.theta) != 4 or min(self.theta) < 0 or self.theta[0] + self.theta[1] <= 0:
            raise ValueError("theta must be four non-negative coefficients")
        if not 0 <= self.fidelity <= 1:
            raise ValueError("fidelity must be in [0, 1]")
        if self.noise < 0:
            raise ValueError("noise must be non-negative")
        anchor = default_configuration(self.space)
        self._decoy_scale = self.base.value(anchor) / self.decoy.value(anchor)

    @property
    def deterministic(self) -> bool:
        return self.noise == 0

    def law(self, ds: float, nm: int) -> float:
        t0, t1, t2, t3 = self.theta
        return t0 + t1 * ds / nm + t2 * math.log(nm) + t3 * nm

    def decoy_weight(self, ds: float, nm: int) -> float:
        w = math.log2(1.0 / ds) / self.ds_octaves
        w += self.nm_penalty * abs(nm - self.production_nm) / self.production_nm
        return (1.0 - self.fidelity) * min(1.0, w)

    def expected(self, config: Configuration, ds: float, nm: int) -> float:
        """Noise-free execution time."""
        _check_scale(ds, nm)
        lam = self.decoy_weight(ds, nm)
        b = self.base.value(config)
        if lam > 0:
            b = (1 - lam) * b + lam * self._decoy_scale * self.decoy.value(config)
        return self.law(ds, nm) * b

    def execute(self, config: Configuration, ds: float, nm: int, seed: int | None = None) -> float:
        t = self.expected(config, ds, nm)
        if self.noise > 0:
            t *= math.exp(self.noise * np.random.default_rng(seed).standard_normal())
        return t

    def optimum(self) -> Configuration:
        return self.base.optimum_configuration()

    def to_dict(self) -> dict:
        return {
            "version": SURFACE_VERSION,
            "space": self.space.name,
            "theta": list(self.theta),
            "fidelity": self.fidelity,
            "noise": self.noise,
            "production_nm": self.production_nm,
            "ds_octaves": self.ds_octaves,
            "nm_penalty": self.nm_penalty,
            "base": self.base.to_dict(),
            "decoy": self.decoy.to_dict(),
        }

    @classmethod
    def from_dict(cls, space: ConfigurationSpace, d: dict) -> "SyntheticSurface":
        if d.get("version") != SURFACE_VERSION:
            raise ValueError(f"unsupported surface version {d.get('version')}")
        if d.get("space") not in (None, space.name):
            raise ValueError(f"surface is for space {d['space']!r}, not {space.name!r}")
        return cls(
            space,
            base=Landscape.from_dict(space, d["base"]),
            decoy=Landscape.from_dict(space, d["decoy"]),
            theta=tuple(d["theta"]),
            fidelity=float(d["fidelity"]),
            noise=float(d["noise"]),
            production_nm=int(d["production_nm"]),
            ds_octaves=float(d.get("ds_octaves", 5.0)),
            nm_penalty=float(d.get("nm_penalty", 1.0)),
        )

    @classmethod
    def load(cls, space: ConfigurationSpace, path: str | Path) -> "SyntheticSurface":
        return cls.from_dict(space, json.loads(Path(path).read_text(encoding="utf-8")))

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n", encoding="utf-8")

    @classmethod
    def generate(cls, space: ConfigurationSpace, seed=0, **kwargs) -> "SyntheticSurface":
        rng = np.random.default_rng(seed)
        base = Landscape.generate(space, rng)
        decoy = Landscape.generate(space, rng)
        return cls(space, base, decoy, **kwargs)


def bundled_surface(space: ConfigurationSpace | None = None) -> SyntheticSurface:
    from .param_space import spark_space

    space = space or spark_space()
    text = resources.files("autotune.data").joinpath("spark_surface.json").read_text("utf-8")
    return SyntheticSurface.from_dict(space, json.loads(text))


def repeat_and_average(target: TargetSystem, config: Configuration, ds: float, nm: int,
                       reps: int = 5, seed=0) -> tuple[float, float]:
    """Mean and sample standard deviation of ``reps`` seeded executions."""
    if reps < 1:
        raise ValueError("reps must be >= 1")
    if reps == 1:
        return target.execute(config, ds, nm, seed), 0.0
    seeds = [int(s.generate_state(1)[0]) for s in np.random.SeedSequence(seed).spawn(reps)]
    times = np.array([target.execute(config, ds, nm, s) for s in seeds])
    return float(times.mean()), float(times.std(ddof=1))


# --------------------------------------------------------------------------- #
# samples and logs

@dataclass(frozen=True)
class Sample:
    config: Configuration
    platform: str
    ds: float
    nm: int
    time_ms: float
    rep: int = 0
    seed: int | None = None
    phase: str = "init"
    iteration: int = 0
    index: int = 0
    charged_ms: float = 0.0
    elapsed_ms: float = 0.0
    reused: bool = False

    def __post_init__(self) -> None:
        if not self.time_ms > 0 or not math.isfinite(self.time_ms):
            raise ValueError(f"execution time must be positive and finite, got {self.time_ms}")
        if self.platform not in PLATFORMS:
            raise ValueError(f"unknown platform {self.platform!r}")
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")

    def to_record(self) -> dict:
        return {
            "i": self.index, "phase": self.phase, "platform": self.platform,
            "iteration": self.iteration, "config": list(self.config.values),
            "ds": self.ds, "nm": self.nm, "time_ms": self.time_ms, "rep": self.rep,
            "seed": self.seed, "charged_ms": self.charged_ms,
            "elapsed_ms": self.elapsed_ms, "reused": self.reused,
        }

    @classmethod
    def from_record(cls, r: dict) -> "Sample":
        return cls(
            config=Configuration(tuple(r["config"])), platform=r["platform"],
            ds=float(r["ds"]), nm=int(r["nm"]), time_ms=float(r["time_ms"]),
            rep=int(r.get("rep", 0)), seed=r.get("seed"), phase=r["phase"],
            iteration=int(r.get("iteration", 0)), index=int(r["i"]),
            charged_ms=float(r.get("charged_ms", 0.0)),
            elapsed_ms=float(r.get("elapsed_ms", 0.0)), reused=bool(r.get("reused", False)),
        )


def _dumps(obj: Any) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


@dataclass
class TrialLog:
    """Append-only record of executions; all budget accounting derives from it."""

    space_name: str
    params: list[str]
    meta: dict = field(default_factory=dict)
    samples: list[Sample] = field(default_factory=list)

    def __post_init__(self) -> None:
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.samples)

    def __iter__(self):
        return iter(self.samples)

    @classmethod
    def for_space(cls, space: ConfigurationSpace, **meta) -> "TrialLog":
        return cls(space.name, space.names, dict(meta))

    def append(self, sample: Sample) -> None:
        with self._lock:
            if self.samples and sample.elapsed_ms < self.samples[-1].elapsed_ms:
                raise ValueError("elapsed time must be non-decreasing")
            self.samples.append(sample)

    @property
    def charged_ms(self) -> float:
        return float(sum(s.charged_ms for s in self.samples))

    def header(self) -> dict:
        return {"schema": LOG_SCHEMA, "version": LOG_VERSION, "space": self.space_name,
                "params": self.params, "meta": self.meta}

    def dumps(self) -> str:
        lines = [_dumps(self.header())] + [_dumps(s.to_record()) for s in self.samples]
        return "\n".join(lines) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.dumps(), encoding="utf-8")

    def filter(self, *, phase: str | None = None, platform: str | None = None) -> list[Sample]:
        return [s for s in self.samples
                if (phase is None or s.phase == phase) and (platform is None or s.platform == platform)]


def record(log: TrialLog, sample: Sample, path: str | Path | None = None) -> None:
    """Append ``sample`` to the log and, if given, to the file at ``path``."""
    log.append(sample)
    if path is not None:
        p = Path(path)
        with log._lock:
            new = not p.exists() or p.stat().st_size == 0
            with p.open("a", encoding="utf-8") as fh:
                if new:
                    fh.write(_dumps(log.header()) + "\n")
                fh.write(_dumps(sample.to_record()) + "\n")


def load_log(path: str | Path) -> TrialLog:
    """Read a trial log, validating the header and every record.

    A truncated final line (no newline, unparsable) is dropped with a
    warning so interrupted runs can be resumed.
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.split("\n")
    complete_tail = text.endswith("\n")
    if complete_tail:
        lines = lines[:-1]
    if not lines or not lines[0].strip():
        raise LogFormatError(f"{path}: empty log")
    try:
        head = json.loads(lines[0])
    except json.JSONDecodeError as e:
        raise LogFormatError(f"{path}:1: bad header ({e})") from e
    if head.get("schema") != LOG_SCHEMA:
        raise LogFormatError(f"{path}:1: not a trial log")
    if head.get("version") != LOG_VERSION:
        raise LogFormatError(f"{path}:1: unsupported log version {head.get('version')}")
    tl = TrialLog(head["space"], list(head["params"]), dict(head.get("meta", {})))
    for lineno, line in enumerate(lines[1:], start=2):
        last = lineno == len(lines)
        try:
            rec = json.loads(line)
            s = Sample.from_record(rec)
            if len(s.config) != len(tl.params):
                raise ValueError("config length does not match header params")
            tl.append(s)
        except (json.JSONDecodeError, KeyError, TypeError, ValueError) as e:
            if last and not complete_tail:
                log.warning("%s:%d: dropping truncated final record", path, lineno)
                break
            raise LogFormatError(f"{path}:{lineno}: {e}") from e
    return tl


class ReplayTarget:
    """Answers executions from recorded samples.

    Matches on configuration, data scale and machine count; among several
    matches the one with the requested seed wins, otherwise the earliest.
    """

    def __init__(self, space: ConfigurationSpace, samples: Iterable[Sample]):
        self.space = space
        self._by_key: dict[tuple, list[Sample]] = {}
        for s in samples:
            if s.reused:
                continue
            self._by_key.setdefault((s.config.values, s.nm), []).append(s)

    deterministic = True

    @classmethod
    def from_log(cls, space: ConfigurationSpace, log_or_path: TrialLog | str | Path) -> "ReplayTarget":
        tl = log_or_path if isinstance(log_or_path, TrialLog) else load_log(log_or_path)
        return cls(space, tl.samples)

    def execute(self, config: Configuration, ds: float, nm: int, seed: int | None = None) -> float:
        cands = [s for s in self._by_key.get((tuple(config.values), int(nm)), [])
                 if math.isclose(s.ds, ds, rel_tol=1e-12)]
        if not cands:
            raise ReplayMiss(f"no recorded sample for ds={ds}, nm={nm}, config={config.values}")
        for s in cands:
            if seed is not None and s.seed == seed:
                return s.time_ms
        return cands[0].time_ms
