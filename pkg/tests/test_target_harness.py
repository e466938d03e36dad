import json
import math

import numpy as np
import pytest

from autotune.doe_sampling import uniform
from autotune.eval_metrics import ndcg_from_times
from autotune.param_space import default_configuration
from autotune.target_harness import (
    LogFormatError, Platform, ReplayMiss, ReplayTarget, Sample, SyntheticSurface, TargetSystem,
    TrialLog, load_log, record, repeat_and_average,
)


def test_surface_satisfies_protocol(surface):
    assert isinstance(surface, TargetSystem)
    assert surface.deterministic is False


def test_default_follows_scaling_law(surface, space):
    d = default_configuration(space)
    base = surface.base.value(d)
    for ds, nm in ((1 / 32, 1), (0.25, 3), (1.0, 5)):
        assert surface.expected(d, ds, nm) == pytest.approx(surface.law(ds, nm) * base)


def test_optimum_is_the_true_minimum(surface, space):
    opt = surface.base.value(surface.optimum())
    assert all(surface.base.value(c) >= opt for c in uniform(space, 500, 0))


def test_noise_is_seeded(surface, space):
    c = default_configuration(space)
    assert surface.execute(c, 1.0, 5, 3) == surface.execute(c, 1.0, 5, 3)
    assert surface.execute(c, 1.0, 5, 3) != surface.execute(c, 1.0, 5, 4)


def test_repeat_and_average(surface, space):
    c = default_configuration(space)
    mean, sd = repeat_and_average(surface, c, 1.0, 5, reps=5, seed=1)
    assert sd > 0
    assert repeat_and_average(surface, c, 1.0, 5, reps=1, seed=1) == (surface.execute(c, 1.0, 5, 1), 0.0)


def test_scale_arguments_are_checked(surface, space):
    with pytest.raises(ValueError):
        surface.execute(default_configuration(space), 0.0, 5)
    with pytest.raises(ValueError):
        surface.execute(default_configuration(space), 0.5, 0)


def test_fidelity_orders_testbed_rankings(space):
    cfgs = uniform(space, 30, 5)
    scores = []
    for phi in (0.0, 0.5, 1.0):
        s = SyntheticSurface.generate(space, 1, fidelity=phi)
        scores.append(ndcg_from_times([s.expected(c, 1 / 16, 5) for c in cfgs],
                                      [s.expected(c, 1.0, 5) for c in cfgs]))
    assert scores == sorted(scores) and scores[-1] == 1.0


def test_surface_round_trip(surface, space, tmp_path):
    surface.save(tmp_path / "s.json")
    again = SyntheticSurface.load(space, tmp_path / "s.json")
    c = uniform(space, 1, 0)[0]
    assert again.expected(c, 0.5, 3) == surface.expected(c, 0.5, 3)


def _log_with(space, n=3):
    tl = TrialLog.for_space(space, seed=1)
    for i, c in enumerate(uniform(space, n, 0)):
        tl.append(Sample(c, "TB", 0.5, 2, 100.0 + i, seed=i, index=i, charged_ms=100.0 + i,
                         elapsed_ms=sum(100.0 + k for k in range(i + 1))))
    return tl


def test_log_round_trip_is_exact(space, tmp_path):
    tl = _log_with(space)
    tl.write(tmp_path / "log.jsonl")
    again = load_log(tmp_path / "log.jsonl")
    assert again.samples == tl.samples and again.meta == tl.meta
    assert again.dumps() == tl.dumps()


def test_incremental_record_matches_write(space, tmp_path):
    tl = _log_with(space)
    fresh = TrialLog.for_space(space, seed=1)
    for s in tl:
        record(fresh, s, tmp_path / "inc.jsonl")
    tl.write(tmp_path / "all.jsonl")
    assert (tmp_path / "inc.jsonl").read_bytes() == (tmp_path / "all.jsonl").read_bytes()


def test_truncated_last_line_is_dropped(space, tmp_path, caplog):
    path = tmp_path / "log.jsonl"
    _log_with(space).write(path)
    text = path.read_text()
    path.write_text(text + '{"i": 3, "phase"')
    assert len(load_log(path)) == 3
    assert "truncated" in caplog.text


def test_corrupt_line_names_location(space, tmp_path):
    path = tmp_path / "log.jsonl"
    _log_with(space).write(path)
    lines = path.read_text().splitlines()
    lines[2] = "not json"
    path.write_text("\n".join(lines) + "\n")
    with pytest.raises(LogFormatError, match="log.jsonl:3"):
        load_log(path)


def test_elapsed_must_be_monotone(space):
    tl = _log_with(space)
    c = tl.samples[0].config
    with pytest.raises(ValueError):
        tl.append(Sample(c, "TB", 0.5, 2, 1.0, elapsed_ms=0.0))


def test_replay_target(space):
    tl = _log_with(space)
    rt = ReplayTarget.from_log(space, tl)
    s = tl.samples[1]
    assert rt.execute(s.config, 0.5, 2) == s.time_ms
    with pytest.raises(ReplayMiss):
        rt.execute(s.config, 0.5, 3)
    with pytest.raises(ReplayMiss):
        rt.execute(default_configuration(space), 0.5, 2)
