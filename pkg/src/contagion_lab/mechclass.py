"""Mechanism classifier: gradient-boosted decision trees, written here.

Multi-class boosting with a softmax cross-entropy objective.  Each round
fits one regression tree per class to that class's gradients; splits
maximize the second-order gain

    0.5 * (GL^2/(HL+lam) + GR^2/(HR+lam) - G^2/(H+lam))

over histogram-binned feature values (at most 256 bins per feature, bin
edges taken from training-data quantiles, thresholds stored as real feature
values).  Leaf weights are -lr * G/(H+lam).  Deterministic throughout:
training rows are put in a canonical sort order before the seeded
stratified split, and split ties break to the lowest feature index, then
the lowest threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .calibrate import AdoptionLog
from .cascade import MECHANISMS
from .errors import DataError, ParseError
from .features import FEATURE_NAMES, extract_features_log
from .netgraph import DirectedGraph
from .rngstream import TRAIN_SPLIT, stream
from .shocks import ShockSchedule

MODEL_FORMAT = "contagion-lab-gbdt"
MODEL_VERSION = 1

MIN_SPLIT_GAIN = 1e-12


@dataclass(frozen=True)
class BoostedForest:
    """Per-round, per-class trees plus the hyperparameters that built them.

    A tree is a nested dict: either {"leaf": value} or
    {"feature": f, "threshold": t, "gain": g, "left": ..., "right": ...}
    with the rule x[f] <= t going left.
    """

    classes: tuple[str, ...]
    feature_names: tuple[str, ...]
    trees: list  # trees[round][class_index] -> node dict
    learning_rate: float
    max_depth: int
    min_child_weight: float
    reg_lambda: float
    seed: int
    loss_curve: tuple[float, ...] = field(default=())

    @property
    def n_rounds(self) -> int:
        return len(self.trees)

    def save(self, path) -> None:
        payload = {
            "format": MODEL_FORMAT,
            "version": MODEL_VERSION,
            "classes": list(self.classes),
            "feature_names": list(self.feature_names),
            "learning_rate": self.learning_rate,
            "max_depth": self.max_depth,
            "min_child_weight": self.min_child_weight,
            "reg_lambda": self.reg_lambda,
            "seed": self.seed,
            "loss_curve": list(self.loss_curve),
            "trees": self.trees,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")

    @classmethod
    def load(cls, path) -> "BoostedForest":
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e}", path=str(path)) from e
        if d.get("format") != MODEL_FORMAT or d.get("version") != MODEL_VERSION:
            raise ParseError("unrecognized model format", path=str(path))
        return cls(
            classes=tuple(d["classes"]),
            feature_names=tuple(d["feature_names"]),
            trees=d["trees"],
            learning_rate=float(d["learning_rate"]),
            max_depth=int(d["max_depth"]),
            min_child_weight=float(d["min_child_weight"]),
            reg_lambda=float(d["reg_lambda"]),
            seed=int(d["seed"]),
            loss_curve=tuple(d.get("loss_curve", ())),
        )


# -- binning ---------------------------------------------------------------------


def _bin_edges(col: np.ndarray, max_bins: int) -> np.ndarray:
    """Candidate split thresholds for one feature, all real data values."""
    vals = np.unique(col)
    if len(vals) <= 1:
        return vals[:0]
    if len(vals) <= max_bins - 1:
        return vals[:-1]  # split between consecutive distinct values
    qs = np.linspace(0.0, 1.0, max_bins)
    edges = np.unique(np.quantile(col, qs, method="lower"))
    return edges[:-1]


def _binize(X: np.ndarray, edges: list[np.ndarray]) -> np.ndarray:
    """Bin index per value: bin(x) <= b exactly when x <= edges[b]."""
    B = np.empty(X.shape, dtype=np.int32)
    for f in range(X.shape[1]):
        B[:, f] = np.searchsorted(edges[f], X[:, f], side="left")
    return B


# -- tree growing -----------------------------------------------------------------


def _fit_tree(
    B: np.ndarray,
    edges: list[np.ndarray],
    g: np.ndarray,
    h: np.ndarray,
    idx: np.ndarray,
    depth: int,
    max_depth: int,
    min_child_weight: float,
    reg_lambda: float,
    learning_rate: float,
    deltas: np.ndarray,
) -> dict:
    G = float(g[idx].sum())
    H = float(h[idx].sum())

    def close_leaf():
        value = -learning_rate * G / (H + reg_lambda)
        deltas[idx] = value
        return {"leaf": value}

    if depth >= max_depth or len(idx) < 2:
        return close_leaf()

    base = G * G / (H + reg_lambda)
    best_gain = MIN_SPLIT_GAIN
    best_f = best_b = -1
    for f in range(B.shape[1]):
        n_edges = len(edges[f])
        if n_edges == 0:
            continue
        gb = np.bincount(B[idx, f], weights=g[idx], minlength=n_edges + 1)
        hb = np.bincount(B[idx, f], weights=h[idx], minlength=n_edges + 1)
        GL = np.cumsum(gb)[:-1]
        HL = np.cumsum(hb)[:-1]
        GR = G - GL
        HR = H - HL
        valid = (HL >= min_child_weight) & (HR >= min_child_weight)
        if not valid.any():
            continue
        gains = 0.5 * (
            GL * GL / (HL + reg_lambda) + GR * GR / (HR + reg_lambda) - base
        )
        gains[~valid] = -np.inf
        b = int(np.argmax(gains))  # first max: lowest threshold wins ties
        if gains[b] > best_gain:  # strict: lowest feature wins ties
            best_gain = float(gains[b])
            best_f, best_b = f, b

    if best_f < 0:
        return close_leaf()

    threshold = float(edges[best_f][best_b])
    go_left = B[idx, best_f] <= best_b
    left_idx = idx[go_left]
    right_idx = idx[~go_left]
    args = (B, edges, g, h)
    kw = dict(
        max_depth=max_depth,
        min_child_weight=min_child_weight,
        reg_lambda=reg_lambda,
        learning_rate=learning_rate,
        deltas=deltas,
    )
    return {
        "feature": best_f,
        "threshold": threshold,
        "gain": best_gain,
        "left": _fit_tree(*args, left_idx, depth + 1, **kw),
        "right": _fit_tree(*args, right_idx, depth + 1, **kw),
    }


def _route_accumulate(node: dict, X: np.ndarray, idx: np.ndarray, out: np.ndarray):
    if "leaf" in node:
        out[idx] += node["leaf"]
        return
    go_left = X[idx, node["feature"]] <= node["threshold"]
    _route_accumulate(node["left"], X, idx[go_left], out)
    _route_accumulate(node["right"], X, idx[~go_left], out)


def _log_softmax(F: np.ndarray) -> np.ndarray:
    z = F - F.max(axis=1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


# -- training ------------------------------------------------------------------------


@dataclass(frozen=True)
class TrainResult:
    model: BoostedForest
    macro_f1: float
    per_class: dict
    n_train: int
    n_test: int


def _canonical_order(X: np.ndarray, y_codes: np.ndarray) -> np.ndarray:
    keys = (y_codes,) + tuple(X[:, c] for c in range(X.shape[1] - 1, -1, -1))
    return np.lexsort(keys)


def _stratified_split(y_codes, n_classes, test_fraction, seed):
    rng = stream(seed, TRAIN_SPLIT)
    train_idx, test_idx = [], []
    for c in range(n_classes):
        pos = np.flatnonzero(y_codes == c)
        perm = rng.permutation(len(pos))
        n_test = int(np.floor(test_fraction * len(pos)))
        if len(pos) >= 2 and n_test == 0:
            n_test = 1
        test_idx.append(pos[perm[:n_test]])
        train_idx.append(pos[perm[n_test:]])
    return np.sort(np.concatenate(train_idx)), np.sort(np.concatenate(test_idx))


def train(
    X: np.ndarray,
    y: np.ndarray,
    learning_rate: float = 0.1,
    max_depth: int = 6,
    n_rounds: int = 300,
    min_child_weight: float = 1.0,
    reg_lambda: float = 1.0,
    max_bins: int = 256,
    test_fraction: float = 0.2,
    seed: int = 0,
) -> TrainResult:
    """Fit the boosted forest on a stratified 80/20 split.

    Row order does not matter: rows are sorted into a canonical order
    before the seeded split, so shuffled inputs give identical models.
    """
    X = np.asarray(X, dtype=float)
    y = np.asarray(y)
    if X.ndim != 2 or len(X) != len(y):
        raise DataError("feature matrix and labels misaligned")
    if len(X) == 0:
        raise DataError("empty training set")
    classes = tuple(m for m in MECHANISMS if m in set(y))
    extra = sorted(set(y) - set(MECHANISMS))
    if extra:
        classes = classes + tuple(extra)
    if len(classes) < 2:
        raise DataError("need at least 2 classes to train")
    class_index = {c: k for k, c in enumerate(classes)}
    y_codes = np.array([class_index[v] for v in y], dtype=np.int64)

    order = _canonical_order(X, y_codes)
    Xc, yc = X[order], y_codes[order]
    train_rows, test_rows = _stratified_split(
        yc, len(classes), test_fraction, seed
    )
    Xtr, ytr = Xc[train_rows], yc[train_rows]
    Xte, yte = Xc[test_rows], yc[test_rows]

    model = _boost(
        Xtr,
        ytr,
        n_classes=len(classes),
        classes=classes,
        learning_rate=learning_rate,
        max_depth=max_depth,
        n_rounds=n_rounds,
        min_child_weight=min_child_weight,
        reg_lambda=reg_lambda,
        max_bins=max_bins,
        seed=seed,
    )
    if len(Xte):
        pred = predict_label(model, Xte)
        true = np.array([classes[c] for c in yte])
        per_class = classification_metrics(true, pred, classes)
        macro = float(np.mean([per_class[c]["f1"] for c in classes]))
    else:
        per_class = {}
        macro = float("nan")
    return TrainResult(
        model=model,
        macro_f1=macro,
        per_class=per_class,
        n_train=len(Xtr),
        n_test=len(Xte),
    )


def _boost(
    Xtr,
    ytr,
    n_classes,
    classes,
    learning_rate,
    max_depth,
    n_rounds,
    min_child_weight,
    reg_lambda,
    max_bins,
    seed,
) -> BoostedForest:
    n = len(Xtr)
    d = Xtr.shape[1]
    edges = [_bin_edges(Xtr[:, f], max_bins) for f in range(d)]
    B = _binize(Xtr, edges)
    Y = np.zeros((n, n_classes))
    Y[np.arange(n), ytr] = 1.0
    F = np.zeros((n, n_classes))
    all_idx = np.arange(n)

    trees = []
    loss_curve = []
    for _ in range(n_rounds):
        logp = _log_softmax(F)
        p = np.exp(logp)
        round_trees = []
        for k in range(n_classes):
            gk = p[:, k] - Y[:, k]
            hk = p[:, k] * (1.0 - p[:, k])
            deltas = np.zeros(n)
            node = _fit_tree(
                B,
                edges,
                gk,
                hk,
                all_idx,
                0,
                max_depth,
                min_child_weight,
                reg_lambda,
                learning_rate,
                deltas,
            )
            F[:, k] += deltas
            round_trees.append(node)
        trees.append(round_trees)
        loss_curve.append(float(-_log_softmax(F)[np.arange(n), ytr].mean()))
    return BoostedForest(
        classes=classes,
        feature_names=FEATURE_NAMES,
        trees=trees,
        learning_rate=learning_rate,
        max_depth=max_depth,
        min_child_weight=min_child_weight,
        reg_lambda=reg_lambda,
        seed=seed,
        loss_curve=tuple(loss_curve),
    )


# -- prediction --------------------------------------------------------------------


def predict_proba(model: BoostedForest, X: np.ndarray) -> np.ndarray:
    """Class probabilities, rows summing to 1."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    if X.shape[1] != len(model.feature_names):
        raise DataError(
            f"expected {len(model.feature_names)} features, got {X.shape[1]}"
        )
    F = np.zeros((len(X), len(model.classes)))
    idx = np.arange(len(X))
    for round_trees in model.trees:
        for k, node in enumerate(round_trees):
            _route_accumulate(node, X, idx, F[:, k])
    return np.exp(_log_softmax(F))


def predict_label(model: BoostedForest, X: np.ndarray) -> np.ndarray:
    p = predict_proba(model, X)
    return np.array([model.classes[k] for k in p.argmax(axis=1)])


# -- metrics -----------------------------------------------------------------------


def classification_metrics(y_true, y_pred, classes) -> dict:
    """Per-class precision/recall/F1/support."""
    out = {}
    y_true = np.asarray(y_true)
    y_pred = np.asarray(y_pred)
    for c in classes:
        tp = int(np.sum((y_pred == c) & (y_true == c)))
        fp = int(np.sum((y_pred == c) & (y_true != c)))
        fn = int(np.sum((y_pred != c) & (y_true == c)))
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1 = 2 * prec * rec / (prec + rec) if prec + rec else 0.0
        out[c] = {
            "precision": prec,
            "recall": rec,
            "f1": f1,
            "support": int(np.sum(y_true == c)),
        }
    return out


def macro_f1_score(y_true, y_pred, classes) -> float:
    m = classification_metrics(y_true, y_pred, classes)
    return float(np.mean([m[c]["f1"] for c in classes]))


# -- importances --------------------------------------------------------------------


def gain_importance(model: BoostedForest) -> np.ndarray:
    """Per-feature mean split gain, normalized to sum 1."""
    sums = np.zeros(len(model.feature_names))
    counts = np.zeros(len(model.feature_names))

    def walk(node):
        if "leaf" in node:
            return
        sums[node["feature"]] += node["gain"]
        counts[node["feature"]] += 1
        walk(node["left"])
        walk(node["right"])

    for round_trees in model.trees:
        for node in round_trees:
            walk(node)
    if counts.sum() == 0:
        raise DataError("model has no splits")
    means = np.zeros_like(sums)
    np.divide(sums, counts, out=means, where=counts > 0)
    return means / means.sum()


# -- decomposition ------------------------------------------------------------------


@dataclass(frozen=True)
class DecompositionReport:
    """Classifier-attributed mechanism mix of an adoption log."""

    nodes: np.ndarray
    days: np.ndarray
    labels: np.ndarray
    probabilities: np.ndarray
    classes: tuple[str, ...]

    def daily_table(self) -> dict:
        """day -> {class: count} over days with at least one adoption."""
        table = {}
        for day in np.unique(self.days):
            sel = self.days == day
            table[int(day)] = {
                c: int(np.sum(self.labels[sel] == c)) for c in self.classes
            }
        return table

    def daily_proportions(self) -> dict:
        out = {}
        for day, counts in self.daily_table().items():
            total = sum(counts.values())
            out[day] = {c: counts[c] / total for c in self.classes}
        return out

    def overall_shares(self) -> dict:
        n = len(self.labels)
        return {c: float(np.sum(self.labels == c)) / n for c in self.classes}

    def to_json(self, path) -> None:
        payload = {
            "classes": list(self.classes),
            "overall_shares": self.overall_shares(),
            "daily_counts": {
                str(d): v for d, v in self.daily_table().items()
            },
            "daily_proportions": {
                str(d): v for d, v in self.daily_proportions().items()
            },
            "events": [
                {
                    "node": int(u),
                    "day": int(t),
                    "label": str(lbl),
                    "probabilities": [float(x) for x in p],
                }
                for u, t, lbl, p in zip(
                    self.nodes, self.days, self.labels, self.probabilities
                )
            ],
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")


def decompose(
    model: BoostedForest,
    log: AdoptionLog,
    g: DirectedGraph,
    shocks: ShockSchedule,
) -> DecompositionReport:
    """Attribute each adoption in the log to a mechanism via the classifier."""
    nodes, X = extract_features_log(g, log, shocks)
    proba = predict_proba(model, X)
    labels = np.array([model.classes[k] for k in proba.argmax(axis=1)])
    return DecompositionReport(
        nodes=nodes,
        days=log.adoption_day[nodes],
        labels=labels,
        probabilities=proba,
        classes=model.classes,
    )
