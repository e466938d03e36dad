"""Command-line driver: ``plan-testbed``, ``tune`` and ``report``.

Exit codes:

* 0  success
* 2  usage error (bad flags, missing files, invalid fractions)
* 3  empty testbed plan or time constraint exhausted
* 4  replay miss (a replayed log has no record for a requested run)
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

from . import eval_metrics
from .param_space import ConfigurationSpace, SpaceError, default_configuration, spark_space
from .scaling_testbed import plan_testbeds
from .target_harness import (
    LogFormatError, Platform, ReplayMiss, ReplayTarget, SyntheticSurface, TrialLog,
    bundled_surface, load_log,
)
from .tuner_core import ALGORITHMS, BudgetError, run_algorithm

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_BUDGET = 3
EXIT_REPLAY_MISS = 4

log = logging.getLogger("autotune")


class UsageError(Exception):
    pass


@dataclass(frozen=True)
class ExperimentConfig:
    space_path: Path | None
    surface_path: Path | None
    replay_path: Path | None
    tc: float
    alpha: float
    beta: float
    gamma: float
    delta: int
    scale_factor: float
    rc_max_nm: int | None
    rc_max_ds: float
    iters: int
    algorithm: str
    seed: int
    out: Path
    parallel: int
    resume: Path | None
    testbed_ds: float
    testbed_nm: int
    production_nm: int

    def __post_init__(self) -> None:
        for p in (self.space_path, self.surface_path, self.replay_path, self.resume):
            if p is not None and not Path(p).is_file():
                raise UsageError(f"file not found: {p}")
        if self.surface_path is not None and self.replay_path is not None:
            raise UsageError("--surface and --replay are mutually exclusive")
        if abs(self.alpha + self.beta + self.gamma - 1) > 1e-9:
            raise UsageError("--alpha, --beta and --gamma must sum to 1")
        if min(self.alpha, self.beta, self.gamma) < 0:
            raise UsageError("phase fractions must be non-negative")
        if self.algorithm not in ALGORITHMS:
            raise UsageError(f"--algorithm must be one of {', '.join(ALGORITHMS)}")
        if self.delta < 1 or self.iters < 1 or self.parallel < 1:
            raise UsageError("--delta, --iters and --parallel must be positive")
        if not 0 < self.scale_factor <= 1:
            raise UsageError("--scale-factor must lie in (0, 1]")

    @classmethod
    def from_args(cls, a: argparse.Namespace) -> "ExperimentConfig":
        opt = lambda v: None if v is None else Path(v)
        return cls(
            space_path=opt(a.space), surface_path=opt(a.surface), replay_path=opt(a.replay),
            tc=a.tc, alpha=a.alpha, beta=a.beta, gamma=a.gamma, delta=a.delta,
            scale_factor=a.scale_factor, rc_max_nm=a.rc_max_nm, rc_max_ds=a.rc_max_ds,
            iters=a.iters, algorithm=a.algorithm, seed=a.seed, out=Path(a.out),
            parallel=a.parallel, resume=opt(a.resume), testbed_ds=a.testbed_ds,
            testbed_nm=a.testbed_nm, production_nm=a.production_nm,
        )

    def load_space(self) -> ConfigurationSpace:
        if self.space_path is None:
            return spark_space()
        try:
            return ConfigurationSpace.load(self.space_path)
        except (SpaceError, ValueError, KeyError, json.JSONDecodeError) as e:
            raise UsageError(f"invalid space file {self.space_path}: {e}") from e

    def load_target(self, space: ConfigurationSpace):
        if self.replay_path is not None:
            try:
                return ReplayTarget.from_log(space, self.replay_path)
            except LogFormatError as e:
                raise UsageError(str(e)) from e
        if self.surface_path is not None:
            try:
                return SyntheticSurface.load(space, self.surface_path)
            except (ValueError, KeyError, json.JSONDecodeError) as e:
                raise UsageError(f"invalid surface file {self.surface_path}: {e}") from e
        if self.space_path is not None:
            raise UsageError("a custom --space needs a matching --surface or --replay")
        return bundled_surface(space)


def _fmt_config(space: ConfigurationSpace, config) -> str:
    return "\n".join(f"  {n} = {v}" for n, v in zip(space.names, config.values))


def cmd_plan_testbed(cfg: ExperimentConfig, stream=None) -> int:
    space = cfg.load_space()
    target = cfg.load_target(space)
    cfg.out.mkdir(parents=True, exist_ok=True)
    if cfg.tc <= 0:
        report = None
        text = "empty plan: time constraint must be positive\n"
        payload = {"settings": [], "choice": None, "diagnostics": ["time constraint must be positive"]}
    else:
        report = plan_testbeds(
            target, cfg.tc, cfg.scale_factor, production_nm=cfg.production_nm,
            max_nm=cfg.rc_max_nm, max_ds=cfg.rc_max_ds, delta=cfg.delta, seed=cfg.seed,
            config=default_configuration(space),
        )
        text = report.to_text().rstrip("\n") + "\n"
        payload = report.to_dict()
    (cfg.out / "plan.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    (cfg.out / "plan.txt").write_text(text)
    (stream or sys.stdout).write(text)
    return EXIT_OK if report is not None and report.settings else EXIT_BUDGET


def cmd_tune(cfg: ExperimentConfig, stream=None) -> int:
    space = cfg.load_space()
    target = cfg.load_target(space)
    if cfg.tc <= 0:
        raise UsageError("--tc must be positive")
    resume = None
    if cfg.resume is not None:
        try:
            resume = load_log(cfg.resume)
        except LogFormatError as e:
            raise UsageError(str(e)) from e
        if resume.space_name != space.name or resume.params != space.names:
            raise UsageError("resume log was recorded over a different space")
    cfg.out.mkdir(parents=True, exist_ok=True)
    log_path = cfg.out / "trials.jsonl"
    testbed = Platform(target, cfg.testbed_ds, cfg.testbed_nm, "TB")
    production = Platform(target, 1.0, cfg.production_nm, "PS")
    res = run_algorithm(
        cfg.algorithm, testbed, production, space, cfg.tc, alpha=cfg.alpha, beta=cfg.beta,
        gamma=cfg.gamma, iters=cfg.iters, seed=cfg.seed, parallel=cfg.parallel,
        resume=resume, log_path=log_path,
    )
    summary = {
        "algorithm": res.algorithm,
        "best": dict(zip(space.names, res.best.values)),
        "best_time_ms": res.best_time_ms,
        "default_time_ms": res.default_time_ms,
        "improvement_pct": res.improvement_over_default,
        "spent_ms": res.spent_ms,
        "tc_ms": cfg.tc,
        "budget": {"h": res.budget.h, "b": res.budget.b, "q": res.budget.q,
                   "notes": list(res.budget.notes)},
        "log": str(log_path),
    }
    (cfg.out / "result.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    (stream or sys.stdout).write(
        f"{res.algorithm}: best production time {res.best_time_ms:.1f} ms "
        f"(default {res.default_time_ms:.1f} ms, {res.improvement_over_default:+.2f}%)\n"
        f"budget h={res.budget.h} b={res.budget.b} q={res.budget.q}, "
        f"charged {res.spent_ms:.0f} of {cfg.tc:.0f} ms\n"
        f"best configuration:\n{_fmt_config(space, res.best)}\n"
        f"trial log: {log_path}\n"
    )
    return EXIT_OK


# --------------------------------------------------------------------------- #
# report

def _best_validated(tl: TrialLog) -> float:
    ps = tl.filter(platform="PS", phase="validate")
    if not ps:
        raise UsageError("log has no production validation records")
    return min(s.time_ms for s in ps)


def _default_ps(tl: TrialLog) -> float | None:
    ps = tl.filter(platform="PS")
    return ps[0].time_ms if ps else None


def _tb_ps_ndcg(tl: TrialLog) -> float | None:
    """nDCG of the testbed ranking against production over configurations run on both."""
    tb: dict[tuple, float] = {}
    for s in tl.filter(platform="TB"):
        tb.setdefault(s.config.values, s.time_ms)
    ps: dict[tuple, float] = {}
    for s in tl.filter(platform="PS"):
        ps.setdefault(s.config.values, s.time_ms)
    both = [k for k in ps if k in tb]
    if len(both) < 2:
        return None
    return eval_metrics.ndcg_from_times([tb[k] for k in both], [ps[k] for k in both])


def imp_table(rows: Sequence[dict]) -> list[dict]:
    """Imp of a testbed-tuned time against its production-only counterpart, per row.

    Rows carry ``app``, ``algorithm``, ``tb`` and ``ps`` (milliseconds).
    """
    out = []
    for r in rows:
        out.append({**r, "imp_pct": eval_metrics.improvement(r["tb"], r["ps"])})
    return out


def build_report(logs: Sequence[TrialLog], names: Sequence[str]) -> dict:
    if not logs:
        raise UsageError("report needs at least one log")
    ref = logs[0]
    for tl, name in zip(logs, names):
        if tl.space_name != ref.space_name or tl.params != ref.params:
            raise UsageError(f"log {name} was recorded over a different space")
    bests = [_best_validated(tl) for tl in logs]
    base = bests[0]
    rows = []
    for tl, name, best in zip(logs, names, bests):
        default = _default_ps(tl)
        nd = _tb_ps_ndcg(tl)
        n_tb = len(tl.filter(platform="TB"))
        rows.append({
            "log": name,
            "algorithm": tl.meta.get("algorithm", "?"),
            "seed": tl.meta.get("seed"),
            "best_ms": best,
            "default_ms": default,
            "imp_vs_default_pct": eval_metrics.improvement(best, default) if default else None,
            "imp_vs_first_pct": eval_metrics.improvement(best, base),
            "ndcg_tb_ps": nd,
            "tb_runs": n_tb,
            "charged_ms": tl.charged_ms,
        })
    self_test = eval_metrics.ndcg([2, 1, 3], [1, 2, 3])
    return {"rows": rows, "ndcg_self_test": self_test}


def _fmt(v, spec=".2f") -> str:
    return "-" if v is None else format(v, spec)


def cmd_report(paths: Sequence[str], out: Path, table: Path | None = None, stream=None) -> int:
    logs = []
    for p in paths:
        if not Path(p).is_file():
            raise UsageError(f"file not found: {p}")
        try:
            logs.append(load_log(p))
        except LogFormatError as e:
            raise UsageError(str(e)) from e
    rep = build_report(logs, [str(p) for p in paths]) if logs else {"rows": [], "ndcg_self_test":
                                                                   eval_metrics.ndcg([2, 1, 3], [1, 2, 3])}
    if table is not None:
        try:
            fixture = json.loads(Path(table).read_text())
        except (OSError, json.JSONDecodeError) as e:
            raise UsageError(f"cannot read table {table}: {e}") from e
        rep["imp_table"] = imp_table(fixture["rows"])

    lines = [f"{'algorithm':<10} {'seed':>5} {'best ms':>12} {'default ms':>12} "
             f"{'imp/def %':>10} {'imp/1st %':>10} {'nDCG':>6} {'charged ms':>12}"]
    for r in rep["rows"]:
        lines.append(
            f"{r['algorithm']:<10} {_fmt(r['seed'], '')!s:>5} {r['best_ms']:>12.1f} "
            f"{_fmt(r['default_ms'], '.1f'):>12} {_fmt(r['imp_vs_default_pct']):>10} "
            f"{r['imp_vs_first_pct']:>10.2f} {_fmt(r['ndcg_tb_ps']):>6} {r['charged_ms']:>12.0f}"
        )
    lines.append(f"nDCG self-test (r=(2,1,3) vs (1,2,3)): {rep['ndcg_self_test']:.2f}")
    for r in rep.get("imp_table", []):
        lines.append(f"{r['app']:<5} {r['algorithm']:<10} TB {r['tb']:>9} PS {r['ps']:>9} "
                     f"Imp {r['imp_pct']:+.2f}%")
    text = "\n".join(lines) + "\n"

    out.mkdir(parents=True, exist_ok=True)
    (out / "report.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    with open(out / "report.csv", "w", newline="") as fh:
        cols = ["log", "algorithm", "seed", "best_ms", "default_ms", "imp_vs_default_pct",
                "imp_vs_first_pct", "ndcg_tb_ps", "tb_runs", "charged_ms"]
        w = csv.DictWriter(fh, fieldnames=cols)
        w.writeheader()
        w.writerows(rep["rows"])
    (out / "report.txt").write_text(text)
    (stream or sys.stdout).write(text)
    return EXIT_OK


# --------------------------------------------------------------------------- #

def _add_experiment_args(p: argparse.ArgumentParser) -> None:
    p.add_argument("--space", help="configuration space JSON (default: bundled Spark space)")
    p.add_argument("--surface", help="simulator surface JSON (default: bundled surface)")
    p.add_argument("--replay", help="trial log to replay as the target")
    p.add_argument("--tc", type=float, default=3.6e6, help="time constraint in ms")
    p.add_argument("--alpha", type=float, default=0.2, help="initialisation share of TC")
    p.add_argument("--beta", type=float, default=0.2, help="validation share of TC")
    p.add_argument("--gamma", type=float, default=0.6, help="exploration/exploitation share of TC")
    p.add_argument("--delta", type=int, default=5, help="settings measured per planning round")
    p.add_argument("--scale-factor", type=float, default=1 / 16,
                   help="target testbed/production time ratio")
    p.add_argument("--rc-max-nm", type=int, default=None, help="largest testbed machine count")
    p.add_argument("--rc-max-ds", type=float, default=1.0, help="largest testbed data scale")
    p.add_argument("--iters", type=int, default=5, help="planned exploration/exploitation rounds")
    p.add_argument("--algorithm", default="autotune", help="autotune, random or rbs")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", default="out", help="output directory")
    p.add_argument("--parallel", type=int, default=1, help="batch dispatch width")
    p.add_argument("--resume", help="trial log of an interrupted run to continue")
    p.add_argument("--testbed-ds", type=float, default=1 / 16)
    p.add_argument("--testbed-nm", type=int, default=5)
    p.add_argument("--production-nm", type=int, default=5)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="autotune", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_experiment_args(sub.add_parser("plan-testbed", help="plan reduced-scale testbeds"))
    _add_experiment_args(sub.add_parser("tune", help="tune on a testbed, validate on production"))
    rp = sub.add_parser("report", help="compare trial logs")
    rp.add_argument("logs", nargs="*")
    rp.add_argument("--out", default="out")
    rp.add_argument("--table", help="JSON rows of testbed/production times to compare")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code == 0 else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "report":
            return cmd_report(args.logs, Path(args.out), Path(args.table) if args.table else None)
        cfg = ExperimentConfig.from_args(args)
        if args.command == "plan-testbed":
            return cmd_plan_testbed(cfg)
        return cmd_tune(cfg)
    except UsageError as e:
        print(f"autotune: error: {e}", file=sys.stderr)
        return EXIT_USAGE
    except BudgetError as e:
        print(f"autotune: budget exhausted: {e}", file=sys.stderr)
        return EXIT_BUDGET
    except ReplayMiss as e:
        print(f"autotune: replay miss: {e}", file=sys.stderr)
        return EXIT_REPLAY_MISS


if __name__ == "__main__":
    sys.exit(main())
