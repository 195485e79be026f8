import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn.metrics import accuracy_score, f1_score
from threadpoolctl import threadpool_limits

from rphgnn.encoder import EncoderConfig, init_params
from rphgnn.trainer import (
    TrainConfig,
    classification_metrics,
    evaluate,
    linear_fit_r2,
    time_epoch,
    train,
    write_history_csv,
)

from helpers import naive_metrics


def _toy(seed=0, n=120, classes=3, K=2, G=2, dg=4, signal=2.0):
    rng = np.random.default_rng(seed)
    labels = rng.integers(classes, size=n)
    centers = rng.standard_normal((classes, dg)) * signal
    groups = [(centers[labels] + rng.standard_normal((K, n, dg))).astype(np.float32)
              for _ in range(G)]
    idx = rng.permutation(n)
    split = {"train": idx[: n // 2], "valid": idx[n // 2: 3 * n // 4], "test": idx[3 * n // 4:]}
    return groups, labels, split


def test_hand_example_metrics():
    m = classification_metrics([0, 0, 1, 1], [0, 0, 0, 0])
    assert m.accuracy == 0.5 and m.micro_f1 == 0.5
    assert abs(m.macro_f1 - 1 / 3) < 1e-12
    perfect = classification_metrics([2, 0, 1], [2, 0, 1])
    assert perfect.macro_f1 == perfect.micro_f1 == perfect.accuracy == 1.0


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 10_000), st.integers(1, 80), st.integers(2, 6))
def test_metrics_match_confusion_oracle(seed, n, classes):
    rng = np.random.default_rng(seed)
    y, p = rng.integers(classes, size=n), rng.integers(classes, size=n)
    m = classification_metrics(y, p, classes)
    macro, acc = naive_metrics(list(y), list(p))
    assert m.macro_f1 == pytest.approx(macro, abs=1e-12)
    assert m.accuracy == pytest.approx(acc, abs=1e-12)
    present = sorted(set(y) | set(p))
    assert m.macro_f1 == pytest.approx(f1_score(y, p, average="macro", labels=present), abs=1e-12)
    assert m.micro_f1 == pytest.approx(accuracy_score(y, p), abs=1e-12)
    perm = rng.permutation(n)
    assert classification_metrics(y[perm], p[perm], classes) == m


def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(patience=10, max_epochs=5)
    with pytest.raises(ValueError):
        TrainConfig(batch_size=0)


def test_early_stop_when_metric_never_improves():
    groups, labels, split = _toy()
    cfg = EncoderConfig(hidden_dim=8, num_classes=3, dropout_hidden=0.0)
    _, history = train(groups, labels, split, cfg, TrainConfig(lr=0.0, patience=1, max_epochs=50))
    assert [h["epoch"] for h in history] == [1, 2]
    assert history[-1]["best_epoch"] == 1


def test_zero_lr_leaves_params_unchanged():
    groups, labels, split = _toy(1)
    cfg = EncoderConfig(hidden_dim=8, num_classes=3, dropout_hidden=0.0)
    start = init_params(cfg, [(2, 4)] * 2, seed=4)
    copy = {k: v.copy() for k, v in start.items()}
    best, history = train(groups, labels, split, cfg,
                          TrainConfig(lr=0.0, patience=3, max_epochs=3), params=start)
    for k in copy:
        np.testing.assert_array_equal(best[k], copy[k])
    assert len({h["valid_metric"] for h in history}) == 1


def test_training_learns_and_returns_best():
    groups, labels, split = _toy(2, n=300)
    cfg = EncoderConfig(hidden_dim=16, num_classes=3, dropout_hidden=0.1)
    tcfg = TrainConfig(lr=1e-2, batch_size=32, patience=5, max_epochs=40, seed=3)
    best, history = train(groups, labels, split, cfg, tcfg)
    valid = [h["valid_metric"] for h in history]
    best_epoch = history[-1]["best_epoch"]
    assert valid[best_epoch - 1] == max(valid)
    assert evaluate(best, groups, labels, split["valid"], cfg).accuracy == max(valid)
    assert evaluate(best, groups, labels, split["test"], cfg).accuracy > 0.8


def test_history_is_deterministic():
    groups, labels, split = _toy(3)
    cfg = EncoderConfig(hidden_dim=8, num_classes=3, dropout_input=0.2, dropout_hidden=0.3)
    tcfg = TrainConfig(lr=5e-3, batch_size=16, patience=4, max_epochs=8, seed=1)
    a_params, a = train(groups, labels, split, cfg, tcfg)
    b_params, b = train(groups, labels, split, cfg, tcfg)
    strip = lambda hist: [{k: v for k, v in h.items() if k != "seconds"} for h in hist]
    assert strip(a) == strip(b)
    for k in a_params:
        assert a_params[k].tobytes() == b_params[k].tobytes()


def test_split_errors():
    groups, labels, split = _toy()
    cfg = EncoderConfig(num_classes=3)
    with pytest.raises(ValueError):
        train(groups, labels, {"train": [], "valid": [1]}, cfg, TrainConfig())
    with pytest.raises(ValueError):
        train(groups, labels, {"train": [1, 2], "valid": [2]}, cfg, TrainConfig())


def test_history_csv(tmp_path):
    groups, labels, split = _toy()
    cfg = EncoderConfig(hidden_dim=4, num_classes=3)
    _, history = train(groups, labels, split, cfg, TrainConfig(max_epochs=3, patience=3))
    write_history_csv(history, tmp_path / "h.csv")
    rows = list(csv.reader(open(tmp_path / "h.csv")))
    assert rows[0] == ["epoch", "train_loss", "valid_metric", "seconds"]
    assert [int(r[0]) for r in rows[1:]] == [1, 2, 3]
    assert float(rows[1][1]) == history[0]["train_loss"]


def test_linear_fit():
    a, b, r2 = linear_fit_r2([1, 2, 4, 8], [3, 5, 9, 17])
    assert (a, b) == pytest.approx((1.0, 2.0)) and r2 == pytest.approx(1.0)
    assert linear_fit_r2([1, 2, 3], [1, 3, 2])[2] < 0.5


def test_epoch_time_doubles_with_n():
    rng = np.random.default_rng(0)
    cfg = EncoderConfig(hidden_dim=16, num_classes=5, dropout_input=0.3)
    tcfg = TrainConfig(batch_size=500)
    small = [rng.standard_normal((2, 2000, 256)).astype(np.float32) for _ in range(6)]
    large = [np.concatenate([g, g], axis=1) for g in small]
    with threadpool_limits(1):
        t1 = time_epoch(small, cfg, tcfg, repeats=7)
        t2 = time_epoch(large, cfg, tcfg, repeats=7)
    assert t1 > 0
    assert 1.6 <= t2 / t1 <= 2.6
