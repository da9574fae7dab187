"""Boosted-tree classifier: capacity, determinism, importances, decomposition."""

import json

import numpy as np
import pytest

from contagion_lab.calibrate import NEVER, AdoptionLog
from contagion_lab.errors import DataError, ParseError
from contagion_lab.mechclass import (
    BoostedForest,
    classification_metrics,
    decompose,
    gain_importance,
    macro_f1_score,
    predict_label,
    predict_proba,
    train,
)
from contagion_lab.netgraph import DirectedGraph
from contagion_lab.shocks import ShockSchedule


def synth_rows(n_per_class, seed=0, classes=("Simple", "Complex", "Spontaneous", "Shock")):
    """Feature rows with class-typical geometry, mimicking cascade output."""
    rng = np.random.default_rng(seed)
    rows, labels = [], []
    for label in classes:
        for _ in range(n_per_class):
            if label == "Simple":
                k = rng.integers(20, 120)
                m = rng.integers(1, 5)
                dur = rng.integers(1, 20)
                rec = rng.integers(1, min(dur + 1, 6))
                rows.append([m, k, m / k, dur, rec, 0.0, -1.0])
            elif label == "Complex":
                k = rng.integers(3, 15)
                m = max(1, int(np.ceil(0.25 * k)) + rng.integers(0, 3))
                m = min(m, k)
                dur = rng.integers(1, 10)
                rows.append([m, k, m / k, dur, 1.0, 0.0, -1.0])
            elif label == "Spontaneous":
                k = rng.integers(0, 40)
                rows.append([0, k, 0.0, -1.0, -1.0, 0.0, -1.0])
            else:  # Shock
                k = rng.integers(0, 40)
                lam = rng.uniform(0.3, 1.0)
                rows.append([0, k, 0.0, -1.0, -1.0, lam, rng.integers(0, 4)])
            labels.append(label)
    return np.array(rows, dtype=float), np.array(labels)


def test_overfit_tiny_duplicated_set():
    Xs, ys = synth_rows(13, seed=1)  # 52 distinct rows
    X = np.tile(Xs, (4, 1))[:200]
    y = np.tile(ys, 4)[:200]
    res = train(X, y, n_rounds=200, max_depth=6, seed=0)
    pred = predict_label(res.model, X)
    assert macro_f1_score(y, pred, res.model.classes) == 1.0


def test_determinism_same_seed():
    X, y = synth_rows(30, seed=2)
    a = train(X, y, n_rounds=20, seed=5)
    b = train(X, y, n_rounds=20, seed=5)
    assert json.dumps(a.model.trees) == json.dumps(b.model.trees)
    assert a.macro_f1 == b.macro_f1
    assert a.per_class == b.per_class


def test_row_order_invariance():
    X, y = synth_rows(25, seed=3)
    res = train(X, y, n_rounds=15, seed=7)
    perm = np.random.default_rng(0).permutation(len(X))
    res2 = train(X[perm], y[perm], n_rounds=15, seed=7)
    assert json.dumps(res.model.trees) == json.dumps(res2.model.trees)
    assert res.macro_f1 == res2.macro_f1
    probe, _ = synth_rows(5, seed=99)
    assert np.array_equal(predict_proba(res.model, probe), predict_proba(res2.model, probe))


def test_probabilities_sum_to_one():
    X, y = synth_rows(20, seed=4)
    res = train(X, y, n_rounds=10, seed=1)
    p = predict_proba(res.model, X)
    assert np.all(np.abs(p.sum(axis=1) - 1.0) < 1e-9)
    assert np.all(p > 0) and np.all(p < 1)


def test_training_loss_non_increasing():
    X, y = synth_rows(40, seed=5)
    res = train(X, y, n_rounds=40, seed=2)
    curve = np.array(res.model.loss_curve)
    assert np.all(np.diff(curve) <= 1e-12)


def test_more_rounds_extend_same_prefix():
    X, y = synth_rows(30, seed=6)
    short = train(X, y, n_rounds=8, seed=3)
    long = train(X, y, n_rounds=16, seed=3)
    assert json.dumps(long.model.trees[:8]) == json.dumps(short.model.trees)
    assert long.model.loss_curve[7] == short.model.loss_curve[7]


def test_shock_features_dominate_shock_world():
    # only the two shock columns separate the classes
    rng = np.random.default_rng(7)
    n = 400
    lam = np.concatenate([rng.uniform(0.4, 1.0, n // 2), np.zeros(n // 2)])
    rec = np.concatenate([rng.integers(0, 4, n // 2), np.full(n // 2, -1.0)])
    X = np.column_stack(
        [
            rng.integers(0, 4, n),
            rng.integers(1, 50, n),
            rng.random(n) * 0.1,
            rng.integers(-1, 10, n),
            rng.integers(-1, 5, n),
            lam,
            rec,
        ]
    ).astype(float)
    y = np.array(["Shock"] * (n // 2) + ["Spontaneous"] * (n // 2))
    res = train(X, y, n_rounds=30, seed=0)
    imp = gain_importance(res.model)
    assert imp[5] + imp[6] > 0.8
    assert imp.sum() == pytest.approx(1.0)
    assert np.all(imp >= 0)


def test_argmax_behaviors():
    X, y = synth_rows(150, seed=8)
    res = train(X, y, n_rounds=60, seed=1)
    shock_row = np.array([0, 10, 0.0, -1.0, -1.0, 1.0, 0.0])
    assert predict_label(res.model, shock_row)[0] == "Shock"
    complex_row = np.array([4, 8, 0.5, 3.0, 1.0, 0.0, -1.0])
    p = predict_proba(res.model, complex_row)[0]
    ci = res.model.classes.index("Complex")
    si = res.model.classes.index("Simple")
    assert p[ci] > p[si]


def test_stump_importance_single_feature():
    rng = np.random.default_rng(9)
    n = 200
    X = np.zeros((n, 7))
    X[:, 0] = rng.integers(0, 10, n)  # only m varies
    y = np.where(X[:, 0] >= 5, "Simple", "Spontaneous")
    res = train(X, y, n_rounds=5, max_depth=1, seed=0)
    imp = gain_importance(res.model)
    assert imp[0] == 1.0


def test_single_class_raises():
    X = np.random.default_rng(0).random((50, 7))
    with pytest.raises(DataError):
        train(X, np.array(["Simple"] * 50))


def test_empty_input_raises():
    with pytest.raises(DataError):
        train(np.empty((0, 7)), np.array([]))


def test_wrong_arity_raises():
    X, y = synth_rows(10, seed=1)
    res = train(X, y, n_rounds=3, seed=0)
    with pytest.raises(DataError):
        predict_proba(res.model, np.ones((2, 5)))


def test_model_json_round_trip(tmp_path):
    X, y = synth_rows(20, seed=10)
    res = train(X, y, n_rounds=10, seed=4)
    path = tmp_path / "model.json"
    res.model.save(path)
    back = BoostedForest.load(path)
    assert back.classes == res.model.classes
    assert np.array_equal(predict_proba(back, X), predict_proba(res.model, X))
    assert back.loss_curve == res.model.loss_curve


def test_model_bad_format(tmp_path):
    path = tmp_path / "bad.json"
    path.write_text('{"format": "other", "version": 3}')
    with pytest.raises(ParseError):
        BoostedForest.load(path)


def test_metrics_hand_case():
    y_true = np.array(["A", "A", "B", "B", "B"])
    y_pred = np.array(["A", "B", "B", "B", "A"])
    m = classification_metrics(y_true, y_pred, ("A", "B"))
    assert m["A"]["precision"] == pytest.approx(0.5)
    assert m["A"]["recall"] == pytest.approx(0.5)
    assert m["B"]["precision"] == pytest.approx(2 / 3)
    assert m["B"]["recall"] == pytest.approx(2 / 3)
    assert m["A"]["support"] == 2 and m["B"]["support"] == 3
    assert macro_f1_score(y_true, y_pred, ("A", "B")) == pytest.approx(
        (0.5 + 2 / 3) / 2
    )


def test_decompose_report_shapes():
    X, y = synth_rows(60, seed=11)
    res = train(X, y, n_rounds=30, seed=2)
    g = DirectedGraph.from_edges(
        np.array([(0, 1), (0, 2), (3, 0), (3, 1), (4, 3)]), n_nodes=5
    )
    log = AdoptionLog(np.array([3, 1, 1, 5, 8]), last_day=9)
    rep = decompose(res.model, log, g, ShockSchedule.empty())
    assert len(rep.labels) == 5
    shares = rep.overall_shares()
    assert sum(shares.values()) == pytest.approx(1.0)
    for day, props in rep.daily_proportions().items():
        assert sum(props.values()) == pytest.approx(1.0, abs=1e-9)
    counts = rep.daily_table()
    assert sum(sum(v.values()) for v in counts.values()) == 5


def test_decompose_single_adopter_one_hot():
    X, y = synth_rows(40, seed=12)
    res = train(X, y, n_rounds=20, seed=3)
    g = DirectedGraph.from_edges(np.array([(0, 1)]), n_nodes=2)
    log = AdoptionLog(np.array([4, NEVER]), last_day=9)
    rep = decompose(res.model, log, g, ShockSchedule.empty())
    shares = rep.overall_shares()
    assert sorted(shares.values()) == [0.0, 0.0, 0.0, 1.0]


def test_decompose_empty_log_raises():
    X, y = synth_rows(10, seed=13)
    res = train(X, y, n_rounds=3, seed=0)
    g = DirectedGraph.from_edges(np.array([(0, 1)]), n_nodes=2)
    log = AdoptionLog(np.array([NEVER, NEVER]), last_day=3)
    with pytest.raises(DataError):
        decompose(res.model, log, g, ShockSchedule.empty())
