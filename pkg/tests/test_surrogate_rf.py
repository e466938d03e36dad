import numpy as np
import pytest

from autotune.doe_sampling import uniform
from autotune.eval_metrics import spearman
from autotune.param_space import encode_many
from autotune.surrogate_rf import Forest, TrainingError, argbest, predict, train, tree_seeds


def test_constant_target_predicts_constant():
    X = np.random.default_rng(0).random((30, 3))
    f = train(X, np.full(30, 7.0), n_trees=10)
    assert np.allclose(f.predict(np.random.default_rng(1).random((5, 3))), 7.0)
    assert all(f.tree(t).n_nodes == 1 for t in range(f.n_trees))


def test_step_function_is_learned():
    rng = np.random.default_rng(1)
    X = rng.random((200, 2))
    y = np.where(X[:, 0] > 0.5, 3.0, 1.0)
    f = train(X, y, n_trees=50, seed=2)
    Xt = rng.random((500, 2))
    Xt = Xt[np.abs(Xt[:, 0] - 0.5) > 0.02]
    assert np.mean(np.abs(f.predict(Xt) - np.where(Xt[:, 0] > 0.5, 3.0, 1.0))) < 0.05


def test_predictions_stay_within_training_range():
    rng = np.random.default_rng(3)
    X = rng.random((60, 4))
    y = 1 + rng.random(60) * 5
    p = train(X, y, n_trees=20).predict(rng.normal(0, 3, (200, 4)))
    assert p.min() >= y.min() - 1e-12 and p.max() <= y.max() + 1e-12


def test_training_is_deterministic_and_seed_sensitive():
    rng = np.random.default_rng(4)
    X, y = rng.random((40, 3)), 1 + rng.random(40)
    a, b, c = train(X, y, seed=9), train(X, y, seed=9), train(X, y, seed=10)
    assert np.array_equal(a.threshold, b.threshold) and np.array_equal(a.seeds, b.seeds)
    assert not np.array_equal(a.seeds, c.seeds)


def test_threads_do_not_change_the_forest():
    rng = np.random.default_rng(5)
    X, y = rng.random((50, 3)), 1 + rng.random(50)
    a, b = train(X, y, n_trees=16, seed=1), train(X, y, n_trees=16, seed=1, n_jobs=4)
    assert np.array_equal(a.feature, b.feature) and np.array_equal(a.value, b.value)


def test_tie_break_prefers_lowest_feature():
    # two identical columns: every split must use column 0
    x = np.arange(8, dtype=float)
    f = train(np.column_stack([x, x]), 1 + (x > 3), n_trees=5)
    assert set(f.feature[f.feature >= 0]) == {0}


def test_midpoint_threshold():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    f = train(X, np.array([1.0, 1.0, 5.0, 5.0]), n_trees=1, seed=0)
    thr = f.threshold[f.feature >= 0]
    assert np.all(np.isin(thr, [0.5, 1.5, 2.5]))


def test_tree_seeds_are_spawned_up_front():
    assert np.array_equal(tree_seeds(3, 10)[:5], tree_seeds(3, 5))


def test_rejects_bad_training_sets():
    with pytest.raises(TrainingError):
        train(np.zeros((1, 2)), [1.0])
    with pytest.raises(TrainingError):
        train(np.zeros((3, 2)), [1.0, -1.0, 2.0])
    f = train(np.random.default_rng(0).random((5, 2)), np.ones(5) + np.arange(5), n_trees=2)
    with pytest.raises(ValueError):
        f.predict(np.zeros((1, 3)))


def test_save_load_round_trip(tmp_path):
    rng = np.random.default_rng(6)
    X, y = rng.random((30, 3)), 1 + rng.random(30)
    f = train(X, y, n_trees=8)
    f.save(tmp_path / "forest.npz")
    g = Forest.load(tmp_path / "forest.npz")
    assert g.fingerprint == f.fingerprint
    assert np.array_equal(g.predict(X), f.predict(X))
    assert predict(g, X[0]) == pytest.approx(f.predict(X[:1])[0])


def test_ranks_a_thirteen_dimensional_quadratic(space, surface):
    train_cfg = uniform(space, 300, 0)
    test_cfg = uniform(space, 200, 1)
    truth = lambda cs: np.array([surface.base.value(c) for c in cs])
    f = train(encode_many(space, train_cfg), truth(train_cfg), seed=0)
    assert spearman(f.predict(encode_many(space, test_cfg)), truth(test_cfg)) > 0.8


def test_argbest_is_invariant_to_target_scaling(space, surface):
    cfgs = uniform(space, 80, 2)
    y = np.array([surface.base.value(c) for c in cfgs])
    X = encode_many(space, cfgs)
    cand = uniform(space, 50, 3)
    a = argbest(train(X, y, n_trees=20, seed=1), space, cand)
    b = argbest(train(X, 1000 * y, n_trees=20, seed=1), space, cand)
    assert a == b
    with pytest.raises(ValueError):
        argbest(train(X, y, n_trees=2), space, [])
