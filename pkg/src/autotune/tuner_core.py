"""Budgeted configuration search on a testbed with production validation.

All searchers share one protocol so they can be compared at equal cost:

1. Probe the default configuration once on the testbed and once on
   production. The probes estimate per-run times and make the default a
   candidate, so the answer never loses to it.
2. Search on the testbed while the charged time stays below the time
   constraint minus a validation reserve of ``q`` production runs.
3. Run the best ``q`` testbed configurations on production and return the
   fastest production measurement.

Budget is charged in the targets' reported (simulated) milliseconds. A run
is started only while the charged total is below the phase limit, so the
overshoot is at most one run.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from . import surrogate_rf
from .doe_sampling import bound_region, lhs, sample_region, uniform, Region
from .param_space import Configuration, ConfigurationSpace, default_configuration
from .target_harness import Platform, Sample, TrialLog, record

log = logging.getLogger(__name__)

ALGORITHMS = ("autotune", "random", "rbs")


class BudgetError(ValueError):
    pass


@dataclass(frozen=True)
class TuningBudget:
    """Time constraint, its phase split, and the derived search sizes.

    ``h`` is the LHS size, ``b`` the incumbent-set size and ``q`` the number
    of production validations.
    """

    tc: float
    alpha: float
    beta: float
    gamma: float
    t_tb: float
    t_ps: float
    iters: int
    h: int
    b: int
    q: int
    notes: tuple[str, ...] = ()

    def __post_init__(self) -> None:
        fr = (self.alpha, self.beta, self.gamma)
        if any(not 0 <= v <= 1 for v in fr):
            raise BudgetError("phase fractions must lie in [0, 1]")
        if abs(sum(fr) - 1) > 1e-9:
            raise BudgetError(f"phase fractions must sum to 1, got {sum(fr)}")
        if self.tc <= 0 or self.t_tb <= 0 or self.t_ps <= 0 or self.iters <= 0:
            raise BudgetError("TC, run-time estimates and iteration count must be positive")
        if min(self.h, self.b, self.q) < 1:
            raise BudgetError("h, b and q must be >= 1")
        if self.b > self.h:
            raise BudgetError("b must not exceed h")


def derive_budget(tc: float, alpha: float, beta: float, gamma: float,
                  t_tb: float, t_ps: float, iters: int = 5) -> TuningBudget:
    """``h = floor(alpha*TC/t_tb)``, ``q = floor(beta*TC/t_ps)``,
    ``b = floor(gamma*TC/(iters*t_tb))``, each clamped to at least 1 and
    ``b`` to at most ``h``."""
    if abs(alpha + beta + gamma - 1) > 1e-9:
        raise BudgetError(f"phase fractions must sum to 1, got {alpha + beta + gamma}")
    if tc <= 0 or t_tb <= 0 or t_ps <= 0 or iters <= 0:
        raise BudgetError("TC, run-time estimates and iteration count must be positive")
    h = math.floor(alpha * tc / t_tb)
    q = math.floor(beta * tc / t_ps)
    b = math.floor(gamma * tc / (iters * t_tb))
    notes = []
    if gamma == 0:
        notes.append("no E&E budget (gamma = 0)")
    for name, v in (("h", h), ("b", b), ("q", q)):
        if v < 1:
            notes.append(f"{name} clamped from {v} to 1")
    h, b, q = max(h, 1), max(b, 1), max(q, 1)
    if b > h:
        notes.append(f"b clamped from {b} to h={h}")
        b = h
    for n in notes:
        log.warning(n)
    return TuningBudget(tc, alpha, beta, gamma, t_tb, t_ps, iters, h, b, q, tuple(notes))


def top_b(samples: Sequence[Sample], b: int) -> list[Sample]:
    """Best ``b`` distinct configurations by (time, trial index)."""
    best: dict[tuple, Sample] = {}
    for s in samples:
        key = s.config.values
        cur = best.get(key)
        if cur is None or (s.time_ms, s.index) < (cur.time_ms, cur.index):
            best[key] = s
    return sorted(best.values(), key=lambda s: (s.time_ms, s.index))[:b]


@dataclass
class TuneResult:
    algorithm: str
    best: Configuration
    best_time_ms: float
    default_time_ms: float
    log: TrialLog
    budget: TuningBudget
    incumbents: list[list[int]] = field(default_factory=list)

    @property
    def spent_ms(self) -> float:
        return self.log.charged_ms

    @property
    def improvement_over_default(self) -> float:
        return (self.best_time_ms - self.default_time_ms) / self.default_time_ms * 100.0


class _Session:
    """Executes runs, charges the budget and appends to the trial log.

    Every run gets a seed derived from the master seed and its trial index,
    so results do not depend on the dispatch width.
    """

    def __init__(self, space: ConfigurationSpace, seed: int, log: TrialLog,
                 parallel: int = 1, resume: TrialLog | None = None,
                 log_path: str | Path | None = None):
        self.space = space
        self.seed = seed
        self.log = log
        self.parallel = max(1, parallel)
        self.resume = list(resume.samples) if resume is not None else []
        self.log_path = log_path
        self.spent = 0.0
        self._cache: dict[tuple, float] = {}

    def run_seed(self, index: int) -> int:
        return int(np.random.SeedSequence([self.seed, index]).generate_state(1)[0])

    def _measure(self, platform: Platform, config: Configuration, index: int) -> float:
        if index < len(self.resume):
            old = self.resume[index]
            if old.config.values != config.values or old.platform != platform.name:
                raise ValueError(f"resume log diverges at trial {index}")
            return old.time_ms
        return platform.execute(config, self.run_seed(index))

    def run(self, platform: Platform, configs: Sequence[Configuration], phase: str,
            iteration: int, limit: float) -> list[Sample]:
        """Run ``configs`` in order, stopping once the charged time reaches ``limit``."""
        if not configs:
            return []
        deterministic = getattr(platform.target, "deterministic", False)
        start = len(self.log)
        plan = []
        for k, c in enumerate(configs):
            key = (platform.name, c.values)
            plan.append((c, start + k, deterministic and key in self._cache))
        fresh = [(c, i) for c, i, reused in plan if not reused]
        if self.parallel > 1 and len(fresh) > 1:
            with ThreadPoolExecutor(self.parallel) as ex:
                times = list(ex.map(lambda ci: self._measure(platform, *ci), fresh))
        else:
            times = None
        measured = {}
        out = []
        it_times = iter(times) if times is not None else None
        for c, idx, reused in plan:
            if self.spent >= limit:
                break
            key = (platform.name, c.values)
            if reused:
                t, charged = self._cache[key], 0.0
            else:
                t = next(it_times) if it_times is not None else self._measure(platform, c, idx)
                charged = t
                if deterministic:
                    self._cache.setdefault(key, t)
                measured[idx] = t
            self.spent += charged
            s = Sample(c, platform.name, platform.ds, platform.nm, t, seed=None if reused else self.run_seed(idx),
                       phase=phase, iteration=iteration, index=idx, charged_ms=charged,
                       elapsed_ms=self.spent, reused=reused)
            record(self.log, s, self.log_path)
            out.append(s)
        return out


def _check_platforms(testbed: Platform, production: Platform) -> None:
    if testbed.name != "TB" or production.name != "PS":
        raise ValueError("testbed must be named 'TB' and production 'PS'")


def _setup(algorithm, testbed, production, space, tc, alpha, beta, gamma, iters, seed,
           budget, parallel, resume, log_path):
    _check_platforms(testbed, production)
    if tc <= 0:
        raise BudgetError("time constraint must be positive")
    if log_path is not None:
        Path(log_path).unlink(missing_ok=True)
    tl = TrialLog.for_space(space, algorithm=algorithm, seed=seed, tc=tc,
                            testbed={"ds": testbed.ds, "nm": testbed.nm},
                            production={"ds": production.ds, "nm": production.nm})
    session = _Session(space, seed, tl, parallel, resume, log_path)
    default = default_configuration(space)
    tb0 = session.run(testbed, [default], "init", 0, tc)
    ps0 = session.run(production, [default], "validate", 0, tc)
    if not tb0 or not ps0:
        raise BudgetError("time constraint too small to probe the default configuration")
    if budget is None:
        budget = derive_budget(tc, alpha, beta, gamma, tb0[0].time_ms, ps0[0].time_ms, iters)
    return session, budget, tb0[0], ps0[0]


def _validate(session: _Session, production: Platform, budget: TuningBudget,
              pool: Sequence[Sample], ps0: Sample, iteration: int) -> tuple[Configuration, float]:
    top = top_b(pool, budget.q)
    runs = session.run(production, [s.config for s in top], "validate", iteration, budget.tc)
    best = min([ps0] + runs, key=lambda s: (s.time_ms, s.index))
    return best.config, best.time_ms


def tune(
    testbed: Platform,
    production: Platform,
    space: ConfigurationSpace,
    tc: float,
    *,
    alpha: float = 0.2,
    beta: float = 0.2,
    gamma: float = 0.6,
    iters: int = 5,
    seed: int = 0,
    budget: TuningBudget | None = None,
    n_trees: int = surrogate_rf.DEFAULT_TREES,
    parallel: int = 1,
    resume: TrialLog | None = None,
    log_path: str | Path | None = None,
) -> TuneResult:
    """Surrogate-assisted search with multiple bound-and-search exploitation.

    After an LHS initialisation of ``h`` configurations, each iteration runs
    ``b`` configurations picked at random from a fresh LHS design
    (exploration), refits the random forest on every testbed result, and
    for each incumbent runs the forest's favourite among ``h`` LHS points
    drawn inside the incumbent's neighbour-bounded box (exploitation). The
    incumbent set keeps the best ``b`` distinct configurations.
    """
    session, budget, tb0, ps0 = _setup("autotune", testbed, production, space, tc, alpha, beta,
                                       gamma, iters, seed, budget, parallel, resume, log_path)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    h, b = budget.h, budget.b
    tb_limit = budget.tc - budget.q * budget.t_ps

    T = [tb0] + session.run(testbed, lhs(space, h, rng), "init", 0, tb_limit)
    B = top_b(T, b)
    history = [[s.index for s in B]]
    it = 0
    while session.spent < tb_limit:
        it += 1
        design = lhs(space, h, rng)
        pick = rng.choice(h, size=min(b, h), replace=False)
        EP = session.run(testbed, [design[i] for i in pick], "explore", it, tb_limit)
        T += EP
        EI: list[Sample] = []
        if len(T) >= 2:
            model = surrogate_rf.train_configs(space, [s.config for s in T], [s.time_ms for s in T],
                                               n_trees, int(rng.integers(2**63)))
            pool = [s.config for s in B] + [s.config for s in EP]
            for inc in B:
                if session.spent >= tb_limit:
                    break
                region = bound_region(inc.config, pool, space)
                cand = surrogate_rf.argbest(model, space, sample_region(space, region, h, rng))
                EI += session.run(testbed, [cand], "exploit", it, tb_limit)
        B = top_b(B + EP + EI, b)
        T += EI
        history.append([s.index for s in B])
        if not EP and not EI:
            break

    best, best_t = _validate(session, production, budget, B, ps0, it + 1)
    return TuneResult("autotune", best, best_t, ps0.time_ms, session.log, budget, history)


def random_search(testbed: Platform, production: Platform, space: ConfigurationSpace, tc: float,
                  *, alpha=0.2, beta=0.2, gamma=0.6, iters=5, seed=0, budget=None,
                  parallel=1, resume=None, log_path=None, **_) -> TuneResult:
    """Uniform random search on the testbed under the shared protocol."""
    session, budget, tb0, ps0 = _setup("random", testbed, production, space, tc, alpha, beta,
                                       gamma, iters, seed, budget, parallel, resume, log_path)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    tb_limit = budget.tc - budget.q * budget.t_ps
    T = [tb0]
    batch = max(1, parallel)
    while session.spent < tb_limit:
        got = session.run(testbed, uniform(space, batch, rng), "explore", len(T), tb_limit)
        if not got:
            break
        T += got
    best, best_t = _validate(session, production, budget, T, ps0, 1)
    return TuneResult("random", best, best_t, ps0.time_ms, session.log, budget,
                      [[s.index for s in top_b(T, budget.b)]])


def _rbs_rounds(session: _Session, platform: Platform, space: ConfigurationSpace, k: int,
                rng: np.random.Generator, limit: float, seeded: Sequence[Sample] = ()) -> list[Sample]:
    """Divide-and-diverge sampling with recursive bound-and-search.

    Round 0 is an LHS design of ``k`` points over the whole space. Each
    later round re-bounds around the incumbent using the previous round's
    points and samples ``k`` more inside; a box with no width restarts from
    the whole space.
    """
    full = Region.full(space)
    T = list(seeded)
    region = full
    prev: list[Sample] = []
    rnd = 0
    while session.spent < limit:
        got = session.run(platform, sample_region(space, region, k, rng), "explore", rnd, limit)
        if not got:
            break
        T += got
        prev = got
        inc = top_b(T, 1)[0]
        region = bound_region(inc.config, [s.config for s in prev] + [inc.config], space)
        if not np.any(region.widths > 0):
            region = full
        rnd += 1
    return T


def rbs_search(testbed: Platform, production: Platform, space: ConfigurationSpace, tc: float,
               *, k: int | None = None, alpha=0.2, beta=0.2, gamma=0.6, iters=5, seed=0,
               budget=None, parallel=1, resume=None, log_path=None, **_) -> TuneResult:
    """Recursive bound-and-search on the testbed under the shared protocol."""
    session, budget, tb0, ps0 = _setup("rbs", testbed, production, space, tc, alpha, beta,
                                       gamma, iters, seed, budget, parallel, resume, log_path)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    tb_limit = budget.tc - budget.q * budget.t_ps
    T = _rbs_rounds(session, testbed, space, k or budget.h, rng, tb_limit, [tb0])
    best, best_t = _validate(session, production, budget, T, ps0, 1)
    return TuneResult("rbs", best, best_t, ps0.time_ms, session.log, budget,
                      [[s.index for s in top_b(T, budget.b)]])


def run_algorithm(algorithm: str, testbed: Platform, production: Platform,
                  space: ConfigurationSpace, tc: float, **kw) -> TuneResult:
    if algorithm == "autotune":
        kw.pop("k", None)
        return tune(testbed, production, space, tc, **kw)
    if algorithm == "random":
        return random_search(testbed, production, space, tc, **kw)
    if algorithm == "rbs":
        return rbs_search(testbed, production, space, tc, **kw)
    raise ValueError(f"unknown algorithm {algorithm!r}; choose from {ALGORITHMS}")


# --------------------------------------------------------------------------- #
# count-budgeted baselines on a single platform

@dataclass
class SearchResult:
    best: Configuration
    best_time_ms: float
    samples: list[Sample]


def _count_session(platform: Platform, space: ConfigurationSpace, seed: int) -> _Session:
    return _Session(space, seed, TrialLog.for_space(space))


def baseline_random(platform: Platform, space: ConfigurationSpace, n_evals: int,
                    seed: int = 0) -> SearchResult:
    """Best of ``n_evals`` uniform random configurations."""
    if n_evals < 1:
        raise ValueError("n_evals must be >= 1")
    session = _count_session(platform, space, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    samples = session.run(platform, uniform(space, n_evals, rng), "explore", 0, math.inf)
    best = top_b(samples, 1)[0]
    return SearchResult(best.config, best.time_ms, samples)


def baseline_rbs(platform: Platform, space: ConfigurationSpace, n_evals: int, k: int,
                 seed: int = 0) -> SearchResult:
    """Recursive bound-and-search with ``k`` samples per round, ``n_evals`` runs in total."""
    if n_evals < 1 or k < 1:
        raise ValueError("n_evals and k must be >= 1")
    session = _count_session(platform, space, seed)
    rng = np.random.default_rng(np.random.SeedSequence([seed, 0x5EED]))
    full = Region.full(space)
    T: list[Sample] = []
    region = full
    rnd = 0
    while len(T) < n_evals:
        m = min(k, n_evals - len(T))
        got = session.run(platform, sample_region(space, region, m, rng), "explore", rnd, math.inf)
        T += got
        inc = top_b(T, 1)[0]
        region = bound_region(inc.config, [s.config for s in got] + [inc.config], space)
        if not np.any(region.widths > 0):
            region = full
        rnd += 1
    best = top_b(T, 1)[0]
    return SearchResult(best.config, best.time_ms, T)
