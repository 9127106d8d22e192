import math
import random

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from humanchess.core import PositionHistory, legal_moves
from humanchess.encoding import N_MOVES
from humanchess.errors import DegenerateFeatures, EmptyStream, OneClassOnly
from humanchess.models.baselines import ForestConfig, LogitConfig, select_forest, train_forest, train_logit
from humanchess.models.blunder import (
    BalancedSampler, BlunderCnnConfig, BlunderFcConfig, accuracy_of, make_blunder_net, train_blunder,
)
from humanchess.models.policy import (
    MaiaConfig, PolicyNet, PolicyPredictor, predict_batch, predict_move, train_policy,
)
from humanchess.nn import load_checkpoint, save_checkpoint
from humanchess.synthetic import GreedyPolicy, population_instances, random_history


@pytest.fixture(scope="module")
def greedy_instances():
    return population_instances(GreedyPolicy(), 400, seed=2)


def test_untrained_predictions_are_legal_distributions():
    net = PolicyNet(1, 8, 4, 8, seed=1)
    hs = [random_history(random.Random(s), 60) for s in range(12)]
    hs = [h for h in hs if legal_moves(h.current)]
    preds, values = predict_batch(net, hs, with_value=True)
    for h, (best, dist) in zip(hs, preds):
        assert set(dist) == set(legal_moves(h.current))
        assert math.isclose(sum(dist.values()), 1.0, abs_tol=1e-9)
        assert best in dist and dist[best] == max(dist.values())
    assert values.shape == (len(hs),) and np.all(np.abs(values) <= 1)


def test_untrained_policy_is_near_uniform():
    net = PolicyNet(2, 16, seed=0)
    out = net(np.zeros((1, 162, 8, 8), dtype=np.float32))["policy"]
    assert out.shape == (1, N_MOVES) and np.abs(out).max() < 0.5


def test_predict_move_from_checkpoint(tmp_path):
    net = PolicyNet(1, 8, 4, 8, seed=4)
    path = tmp_path / "p.ckpt"
    save_checkpoint(net, path)
    h = PositionHistory.start()
    assert predict_move(path, h) == predict_move(net, h)
    assert PolicyPredictor.from_path(path).predict(h) == predict_move(net, h)[0]


def test_predictor_batches_agree_with_single_calls(greedy_instances):
    p = PolicyPredictor(PolicyNet(1, 8, 4, 8, seed=2), batch_size=7)
    hs = [i.history for i in greedy_instances[:30]]
    assert p.predict_many(hs) == [p.predict(h) for h in hs]


def test_short_training_run_improves_and_is_deterministic(greedy_instances):
    cfg = MaiaConfig.desk(blocks=1, channels=8, steps=60, batch_size=32, eval_every=30)
    a = train_policy(greedy_instances, greedy_instances[:100], cfg, seed=3)
    b = train_policy(greedy_instances, greedy_instances[:100], cfg, seed=3)
    assert a.loss_trace == b.loss_trace
    assert math.isfinite(a.initial_policy_loss)
    assert np.mean(a.loss_trace[-10:]) < np.mean(a.loss_trace[:10])
    assert [r["step"] for r in a.metrics if r["val_accuracy"] != ""] == [30, 60]


def test_unmasked_start_loss_is_log_move_count(greedy_instances):
    cfg = MaiaConfig.desk(blocks=1, channels=8, steps=1, batch_size=32, mask_illegal=False)
    r = train_policy(greedy_instances, None, cfg, seed=0)
    assert abs(r.initial_policy_loss - math.log(N_MOVES)) / math.log(N_MOVES) < 0.02


def test_empty_training_stream():
    with pytest.raises(EmptyStream):
        train_policy([], None, MaiaConfig.desk(steps=5))


def test_config_validation():
    with pytest.raises(ValueError):
        MaiaConfig(blocks=0)
    with pytest.raises(ValueError):
        MaiaConfig(sample_prob=0)
    with pytest.raises(ValueError):
        BlunderCnnConfig(batch_size=63)
    assert MaiaConfig.desk(steps=400).lr_drop_steps == (200, 300)
    assert MaiaConfig.from_dict(MaiaConfig.desk().to_dict()) == MaiaConfig.desk()


# -- blunder nets ----------------------------------------------------------------

@settings(max_examples=30, deadline=None)
@given(st.integers(1, 40), st.integers(1, 40), st.sampled_from([2, 4, 8, 16]), st.integers(0, 2**31))
def test_balanced_sampler(n_pos, n_neg, batch, seed):
    y = np.array([1] * n_pos + [0] * n_neg)
    s = BalancedSampler(y, batch, np.random.default_rng(seed))
    seen = set()
    for _ in range(5):
        idx = s.batch()
        assert len(idx) == batch and int(y[idx].sum()) == batch // 2
        seen.update(idx.tolist())
    if 5 * batch // 2 >= max(n_pos, n_neg):
        assert seen == set(range(n_pos + n_neg))  # each epoch draws every index once


def test_sampler_rejects_odd_batches_and_one_class():
    with pytest.raises(ValueError):
        BalancedSampler(np.array([0, 1]), 3, np.random.default_rng(0))
    with pytest.raises(OneClassOnly):
        BalancedSampler(np.array([1, 1]), 2, np.random.default_rng(0))


def planes_task(n, planes, seed):
    """Label = whether plane 0 holds more than 32 ones."""
    rng = np.random.default_rng(seed)
    x = (rng.random((n, planes, 8, 8)) < 0.5).astype(np.float32)
    x[:, 0] = (rng.random((n, 1, 1)) < rng.uniform(0.2, 0.8, (n, 1, 1))).astype(np.float32)
    y = (x[:, 0].sum(axis=(1, 2)) > 32).astype(np.float32)
    return x, y


def test_fc_learns_a_simple_rule():
    x, y = planes_task(600, 17, 0)
    cfg = BlunderFcConfig.desk(hidden=(32, 16), steps=300, batch_size=64, eval_every=100)
    r = train_blunder(x[:400], y[:400], cfg, seed=1, valid=(x[400:], y[400:]))
    assert r.best_accuracy >= 0.85
    again = train_blunder(x[:400], y[:400], cfg, seed=1, valid=(x[400:], y[400:]))
    assert r.metrics == again.metrics


def test_early_stopping_restores_best():
    x, y = planes_task(300, 17, 1)
    cfg = BlunderFcConfig.desk(hidden=(16,), steps=400, batch_size=32, eval_every=10, early_stopping=True,
                               patience=3, lr=0.05)
    r = train_blunder(x[:200], y[:200], cfg, seed=0, valid=(x[200:], y[200:]))
    evals = [m for m in r.metrics if m["val_accuracy"] != ""]
    assert r.best_accuracy == max(m["val_accuracy"] for m in evals)
    assert accuracy_of(r.net, x[200:], y[200:]) == r.best_accuracy
    if r.stopped_early:
        assert evals[-1]["step"] < 400


def test_blunder_cnn_shapes_and_checkpoint(tmp_path):
    cfg = BlunderCnnConfig.desk(metadata=True)
    net = make_blunder_net(cfg, seed=3)
    x = np.random.default_rng(0).random((5, 22, 8, 8)).astype(np.float32)
    p = net.predict_proba(x)
    assert p.shape == (5,) and np.all((p > 0) & (p < 1))
    save_checkpoint(net, tmp_path / "b.ckpt")
    assert np.array_equal(load_checkpoint(tmp_path / "b.ckpt").predict_proba(x), p)


# -- classical baselines -------------------------------------------------------

def test_logit_separable():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((400, 5))
    y = (x[:, 0] - 2 * x[:, 3] > 0).astype(float)
    m = train_logit(x, y)
    assert np.mean(m.predict(x) == y) >= 0.97


def test_logit_cannot_fit_xor_but_forest_can():
    rng = np.random.default_rng(1)
    x = rng.uniform(-1, 1, (2000, 2))
    y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(float)
    logit = train_logit(x[:1000], y[:1000])
    assert np.mean(logit.predict(x[1000:]) == y[1000:]) < 0.7
    forest = train_forest(x[:1000], y[:1000], ForestConfig(n_trees=50, seed=0))
    assert np.mean(forest.predict(x[1000:]) == y[1000:]) >= 0.95
    same = train_forest(x[:1000], y[:1000], ForestConfig(n_trees=50, seed=0))
    assert np.array_equal(same.predict_proba(x[1000:]), forest.predict_proba(x[1000:]))


def test_logit_constant_columns():
    x = np.zeros((10, 3))
    x[:, 1] = np.arange(10)
    y = (np.arange(10) > 4).astype(float)
    m = train_logit(x, y, LogitConfig(max_iter=200))
    assert m.constant_columns == [0, 2] and m.weights[0] == m.weights[2] == 0
    with pytest.raises(DegenerateFeatures):
        train_logit(np.ones((4, 2)), [0, 1, 0, 1])
    with pytest.raises(OneClassOnly):
        train_logit(x, np.ones(10))


def test_forest_selection_keeps_best_validation_auc():
    rng = np.random.default_rng(2)
    x = rng.uniform(-1, 1, (600, 3))
    y = ((x[:, 0] > 0) ^ (x[:, 1] > 0)).astype(float)
    forest, rows = select_forest(x[:400], y[:400], x[400:], y[400:], grid=[(5, 1), (30, None)])
    assert len(rows) == 2 and rows[1]["val_auc"] > rows[0]["val_auc"]
    assert forest.cfg.n_trees == 30
