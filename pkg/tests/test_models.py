import numpy as np
import pytest

from bwim_lab.dataset import SampleSet, slice_windows
from bwim_lab.errors import ConfigError
from bwim_lab.models import (
    MLP,
    DoviConfig,
    DoviModel,
    LogisticRegression,
    dovi_forward,
    make_model,
    pick_threshold,
    predict_label,
    train,
)


def toy(n=600, l=4, n_sensors=3, seed=0, col=1):
    rng = np.random.default_rng(seed)
    v = rng.normal(size=(n, n_sensors))
    y = (v[:, col] > 0).astype(np.int8)
    s = slice_windows(v, y, l)
    return s.subset(0, 400), s.subset(400, len(s))


def test_config_validation():
    with pytest.raises(ConfigError):
        DoviConfig(l=2, s=3)
    with pytest.raises(ConfigError):
        DoviConfig(k=0)
    with pytest.raises(ConfigError):
        DoviConfig(threshold=1.0)


def test_dovi_shape_contract():
    m = DoviModel(15, DoviConfig(l=8, k=64))
    X = np.random.default_rng(0).normal(size=(8, 15))
    p = dovi_forward(m, X)
    assert np.ndim(p) == 0 and 0 < p < 1
    assert m.scores(np.stack([X, X])).shape == (2,)
    with pytest.raises(ValueError):
        m.scores(np.zeros((7, 15)))


def test_parameter_names():
    m = DoviModel(4, DoviConfig(c=2, k=8))
    assert sorted(m.store.params) == sorted(
        ["map.filters", "map.bias", "tcn0.filters", "tcn0.bias", "tcn1.filters", "tcn1.bias",
         "head.w", "head.b"])
    assert m.store["tcn0.filters"].shape == (8, 24)


def test_window_containment():
    # Only the window's own values matter; padding never reaches outside it.
    m = DoviModel(3, DoviConfig(l=8, k=8, seed=1))
    v = np.random.default_rng(2).normal(size=(30, 3))
    w = slice_windows(v, np.zeros(30), 8).windows[10]
    v2 = v.copy()
    v2[:10] += 100.0
    v2[18:] -= 100.0
    w2 = slice_windows(v2, np.zeros(30), 8).windows[10]
    assert m.scores(w) == m.scores(w2)


def test_pruned_forward_matches_full():
    m = DoviModel(4, DoviConfig(l=8, k=16, seed=4))
    X = np.random.default_rng(3).normal(size=(50, 8, 4))
    np.testing.assert_allclose(m.forward(X).data, m.forward(X, full=True).data, rtol=0, atol=1e-14)


def test_predict_label_is_strict():
    assert predict_label(0.7, 0.5) == 1
    assert predict_label(0.5, 0.5) == 0
    assert predict_label(np.array([0.2, 0.51]), 0.5).tolist() == [0, 1]


def test_zero_epochs_keeps_init():
    tr, va = toy()
    m = DoviModel(3, DoviConfig(l=4, s=2, k=4, epochs=0))
    before = m.store.snapshot()
    rep = train(m, tr, va)
    assert rep.epochs == [] and rep.best_epoch is None
    for k, v in before.items():
        np.testing.assert_array_equal(m.store[k].data, v)


def test_lr_learns_sign_rule():
    tr, va = toy(col=1)
    m = LogisticRegression(3, DoviConfig(l=4, s=2, epochs=60, lr=0.05, batch_size=32))
    rep = train(m, tr, va)
    from bwim_lab.evaluation import prf1

    assert prf1(predict_label(m.scores(va.windows), rep.threshold), va.labels).f1 == 1.0


def test_training_is_deterministic():
    tr, va = toy()
    cfg = DoviConfig(l=4, s=2, k=4, epochs=3, batch_size=32, seed=7)
    a, b = DoviModel(3, cfg), DoviModel(3, cfg)
    ra, rb = train(a, tr, va), train(b, tr, va)
    assert ra.epochs == rb.epochs and ra.best_epoch == rb.best_epoch
    for k in a.store.params:
        np.testing.assert_array_equal(a.store[k].data, b.store[k].data)


def test_best_epoch_is_restored():
    tr, va = toy()
    m = DoviModel(3, DoviConfig(l=4, s=2, k=4, epochs=6, batch_size=64))
    rep = train(m, tr, va)
    best = max(e["val_f1"] for e in rep.epochs)
    assert rep.f1_val == best
    assert rep.epochs[rep.best_epoch]["val_f1"] == best
    thr, f1 = pick_threshold(m.scores(va.windows), va.labels, m.config)
    assert f1 == pytest.approx(best)


def test_patience_stops_early():
    tr, va = toy()
    m = DoviModel(3, DoviConfig(l=4, s=2, k=4, epochs=200, batch_size=64, patience=2))
    rep = train(m, tr, va)
    assert len(rep.epochs) < 200
    assert len(rep.epochs) - 1 - rep.best_epoch == 2


def test_threshold_tuning_uses_grid():
    cfg = DoviConfig(tune_threshold=True)
    scores = np.array([0.15, 0.25, 0.35, 0.8])
    labels = np.array([0, 1, 1, 1])
    t, f1 = pick_threshold(scores, labels, cfg)
    assert t == pytest.approx(0.2) and f1 == 1.0


def test_loss_decreases_early():
    tr, va = toy(n=1500, seed=3)
    m = DoviModel(3, DoviConfig(l=4, s=2, k=8, epochs=5, batch_size=64, lr=0.002))
    losses = [e["train_loss"] for e in train(m, tr, va).epochs]
    assert all(b <= a + 1e-3 for a, b in zip(losses, losses[1:]))


def test_mlp_and_factory():
    assert isinstance(make_model("mlp", 3, DoviConfig(l=4, s=2)), MLP)
    with pytest.raises(ConfigError):
        make_model("rnn", 3, DoviConfig())


def test_empty_split_rejected():
    tr, va = toy()
    with pytest.raises(ConfigError):
        train(DoviModel(3, DoviConfig(l=4, s=2, k=4)), tr, va.subset(0, 0))
