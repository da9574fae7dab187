"""Dynamic matched-sample estimation of peer-influence risk ratios.

Builds daily risk-set panels from an adoption log, fits (generalized)
propensity scores by Newton iteration, matches treated egos to same-day
controls under a propensity-logit caliper with Mahalanobis tie-breaking,
and pools daily 2x2 tables into a risk ratio with a small-cell correction.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy import stats
from scipy.special import expit

from .calibrate import NEVER, AdoptionLog
from .errors import ConvergenceError, DataError, ParseError
from .netgraph import DirectedGraph
from .rngstream import PLACEBO, stream

DIRECTIONS = ("followee", "follower", "mutual")
DOSE_LEVELS = ("0", "1", "2", "3", "3+")
BINARY_LEVELS = ("0", "1")
DOSE_WINDOW = 7
Z_95 = 1.96

CORE_COVARIATES = (
    "followee_adopted_count",
    "follower_adopted_count",
    "mutual_adopted_count",
    "followee_adopted_frac",
    "follower_adopted_frac",
    "mutual_adopted_frac",
    "in_degree",
    "out_degree",
    "mutual_degree",
    "total_degree",
    "log_total_degree",
)


def _check_direction(direction):
    if direction not in DIRECTIONS:
        raise DataError(f"unknown direction {direction!r}; expected one of {DIRECTIONS}")


@dataclass(frozen=True)
class Timing:
    """Treated iff >= 1 neighbor adopted within the last d days (same day excluded)."""

    d: int
    direction: str = "followee"

    def __post_init__(self):
        if not 1 <= self.d <= 6:
            raise DataError(f"timing window d must be in 1..6, got {self.d}")
        _check_direction(self.direction)

    @property
    def label(self):
        return f"timing(d={self.d},direction={self.direction})"


@dataclass(frozen=True)
class Dose:
    """Neighbor adoptions over the trailing week, binned 0/1/2/3/3+."""

    direction: str = "followee"

    def __post_init__(self):
        _check_direction(self.direction)

    @property
    def label(self):
        return f"dose(window={DOSE_WINDOW},direction={self.direction})"


@dataclass(frozen=True)
class PlaceboFuture:
    """Counterfeit treatment from the mirrored future window [day+1, day+d]."""

    d: int
    direction: str = "followee"

    def __post_init__(self):
        if not 1 <= self.d <= 6:
            raise DataError(f"placebo window d must be in 1..6, got {self.d}")
        _check_direction(self.direction)

    @property
    def label(self):
        return f"placebo_future(d={self.d},direction={self.direction})"


@dataclass(frozen=True)
class PlaceboPermuted:
    """Seeded within-day permutation of a base design's treatment column."""

    base: object
    seed: int = 0

    @property
    def direction(self):
        return self.base.direction

    @property
    def label(self):
        return f"placebo_permuted(base={self.base.label},seed={self.seed})"


class CovariateTable:
    """Per-ego covariates measured `lag` days before each panel day.

    Columns: adopted-neighbor counts and fractions for the three tie
    directions as of day-lag, then five network-size columns. Optional
    static per-node columns are appended after the core block.
    """

    def __init__(self, g: DirectedGraph, log: AdoptionLog, lag: int = 7, static=None):
        if lag < 0:
            raise DataError(f"covariate lag must be >= 0, got {lag}")
        self.lag = lag
        self._n = g.node_count
        self._first = log.first_day
        self._h = log.horizon_days
        names = list(CORE_COVARIATES)
        self._prefix = {
            d: _prefix_counts(_neighbor_adoption_matrix(g, log, d)) for d in DIRECTIONS
        }
        in_deg = g.in_degree.astype(float)
        out_deg = g.out_degree.astype(float)
        mu_deg = g.mutual_degree.astype(float)
        total = in_deg + out_deg
        self._net = np.column_stack([in_deg, out_deg, mu_deg, total, np.log1p(total)])
        self._deg = {"followee": in_deg, "follower": out_deg, "mutual": mu_deg}
        if static is not None:
            extra_names, extra = static
            extra = np.atleast_2d(np.asarray(extra, dtype=float))
            if extra.shape[0] == 1 and self._n != 1:
                extra = extra.T
            if extra.shape[0] != self._n or extra.shape[1] != len(extra_names):
                raise DataError("static covariate block does not match node count")
            names.extend(extra_names)
            self._static = extra
        else:
            self._static = None
        self.names = tuple(names)
        self.core_idx = tuple(range(len(CORE_COVARIATES)))

    def values(self, day: int) -> np.ndarray:
        if not self._first <= day <= self._first + self._h - 1:
            raise DataError(f"covariates requested for day {day} outside the log horizon")
        cutoff = day - self.lag
        col = int(np.clip(cutoff - self._first + 1, 0, self._h))
        blocks = []
        fracs = []
        for d in DIRECTIONS:
            cnt = self._prefix[d][:, col].astype(float)
            blocks.append(cnt)
            deg = self._deg[d]
            frac = np.zeros(self._n)
            np.divide(cnt, deg, out=frac, where=deg > 0)
            fracs.append(frac)
        cols = blocks + fracs + [self._net]
        if self._static is not None:
            cols.append(self._static)
        return np.column_stack(cols)


def _neighbor_adoption_matrix(g: DirectedGraph, log: AdoptionLog, direction: str):
    """A[u, t] = number of u's direction-neighbors adopting exactly on day t."""
    _check_direction(direction)
    n = g.node_count
    h = log.horizon_days
    A = np.zeros((n, h), dtype=np.int64)
    days = log.adoption_day
    for v in log.adopters():
        t = days[v] - log.first_day
        if direction == "followee":
            nbrs = g.followers(v)  # v is a followee of those who follow v
        elif direction == "follower":
            nbrs = g.followees(v)
        else:
            nbrs = g.mutual(v)
        if len(nbrs):
            A[nbrs, t] += 1
    return A


def _prefix_counts(A: np.ndarray) -> np.ndarray:
    P = np.zeros((A.shape[0], A.shape[1] + 1), dtype=np.int64)
    np.cumsum(A, axis=1, out=P[:, 1:])
    return P


@dataclass(frozen=True)
class TreatmentPanel:
    """Daily risk-set rows: (ego, day, treatment level code, outcome, covariates)."""

    ego: np.ndarray
    day: np.ndarray
    treatment: np.ndarray
    outcome: np.ndarray
    X: np.ndarray
    names: tuple
    core_idx: tuple
    levels: tuple
    kind_label: str = ""

    def __post_init__(self):
        n = len(self.ego)
        for arr in (self.day, self.treatment, self.outcome):
            if len(arr) != n:
                raise DataError("panel columns have mismatched lengths")
        if self.X.shape != (n, len(self.names)):
            raise DataError("covariate matrix does not match the schema")
        if n:
            if self.outcome.min() < 0 or self.outcome.max() > 1:
                raise DataError("outcomes must be 0/1")
            if self.treatment.min() < 0 or self.treatment.max() >= len(self.levels):
                raise DataError("treatment codes outside the level set")
            keys = self.ego.astype(np.int64) * (self.day.max() + 1) + self.day
            if len(np.unique(keys)) != n:
                raise DataError("duplicate (ego, day) rows in panel")
        for arr in (self.ego, self.day, self.treatment, self.outcome, self.X):
            arr.setflags(write=False)

    @property
    def n_rows(self) -> int:
        return len(self.ego)

    def days(self) -> np.ndarray:
        return np.unique(self.day)

    def level_counts(self) -> np.ndarray:
        return np.bincount(self.treatment, minlength=len(self.levels))

    def to_csv(self, path, schema_path=None) -> None:
        with open(path, "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(
                ["ego", "day", "outcome", "treatment"]
                + [f"cov_{i + 1}" for i in range(len(self.names))]
            )
            for i in range(self.n_rows):
                w.writerow(
                    [
                        int(self.ego[i]),
                        int(self.day[i]),
                        int(self.outcome[i]),
                        self.levels[self.treatment[i]],
                    ]
                    + [repr(float(x)) for x in self.X[i]]
                )
        if schema_path is None:
            schema_path = str(path) + ".schema.json"
        with open(schema_path, "w") as f:
            json.dump(
                {
                    "covariates": list(self.names),
                    "core": list(self.core_idx),
                    "levels": list(self.levels),
                    "kind": self.kind_label,
                },
                f,
                indent=2,
            )
            f.write("\n")

    @classmethod
    def from_csv(cls, path, schema_path=None) -> "TreatmentPanel":
        import os

        if schema_path is None:
            cand = str(path) + ".schema.json"
            schema_path = cand if os.path.exists(cand) else None
        schema = None
        if schema_path is not None:
            with open(schema_path) as f:
                schema = json.load(f)
        egos, days, outs, treats, rows = [], [], [], [], []
        with open(path, newline="") as f:
            r = csv.reader(f)
            header = next(r, None)
            if header is None or header[:4] != ["ego", "day", "outcome", "treatment"]:
                raise ParseError(
                    "expected header ego,day,outcome,treatment,cov_...", path=str(path)
                )
            p = len(header) - 4
            for ln, rec in enumerate(r, start=2):
                if not rec:
                    continue
                if len(rec) != 4 + p:
                    raise ParseError("wrong field count", path=str(path), line=ln)
                try:
                    egos.append(int(rec[0]))
                    days.append(int(rec[1]))
                    outs.append(int(rec[2]))
                    treats.append(rec[3])
                    rows.append([float(x) for x in rec[4:]])
                except ValueError as e:
                    raise ParseError(str(e), path=str(path), line=ln) from None
        if schema is not None:
            names = tuple(schema["covariates"])
            core = tuple(schema["core"])
            levels = tuple(schema["levels"])
            kind_label = schema.get("kind", "")
        else:
            names = tuple(header[4:])
            core = tuple(range(min(len(CORE_COVARIATES), len(names))))
            levels = (
                DOSE_LEVELS if any(t not in BINARY_LEVELS for t in treats) else BINARY_LEVELS
            )
            kind_label = ""
        lut = {lv: i for i, lv in enumerate(levels)}
        try:
            codes = np.array([lut[t] for t in treats], dtype=np.int64)
        except KeyError as e:
            raise ParseError(f"treatment level {e} not in schema", path=str(path)) from None
        X = np.array(rows, dtype=float) if rows else np.empty((0, len(names)))
        return cls(
            ego=np.array(egos, dtype=np.int64),
            day=np.array(days, dtype=np.int64),
            treatment=codes,
            outcome=np.array(outs, dtype=np.int64),
            X=X,
            names=names,
            core_idx=core,
            levels=levels,
            kind_label=kind_label,
        )


def build_panel(
    g: DirectedGraph,
    log: AdoptionLog,
    covariates: CovariateTable,
    kind,
    days=None,
) -> TreatmentPanel:
    """Assemble the daily risk-set panel for one treatment design.

    Egos leave the risk set the day after adopting; covariates come from
    `covariates.values(day)` (measured `lag` days earlier) and must predate
    the treatment window.
    """
    if isinstance(kind, PlaceboPermuted):
        base = build_panel(g, log, covariates, kind.base, days=days)
        return permute_within_day(base, kind.seed, label=kind.label)

    lag = getattr(covariates, "lag", None)
    if isinstance(kind, Timing) and lag is not None and lag <= kind.d:
        raise DataError(
            f"covariate lag {lag} does not predate the {kind.d}-day treatment window"
        )
    if isinstance(kind, Dose) and lag is not None and lag < DOSE_WINDOW:
        raise DataError(
            f"covariate lag {lag} does not predate the {DOSE_WINDOW}-day dose window"
        )

    first, h = log.first_day, log.horizon_days
    last = first + h - 1
    if days is None:
        start = first + (lag if lag is not None else DOSE_WINDOW)
        if start > last:
            raise DataError("log horizon too short for the covariate lag")
        days = range(start, last + 1)
    A = _neighbor_adoption_matrix(g, log, kind.direction)
    P = _prefix_counts(A)
    ad = log.adoption_day

    if isinstance(kind, Timing):
        window = lambda D: (D - kind.d, D - 1)
        levels = BINARY_LEVELS
    elif isinstance(kind, Dose):
        window = lambda D: (D - DOSE_WINDOW, D - 1)
        levels = DOSE_LEVELS
    elif isinstance(kind, PlaceboFuture):
        window = lambda D: (D + 1, D + kind.d)
        levels = BINARY_LEVELS
    else:
        raise DataError(f"unknown treatment kind {kind!r}")

    egos, day_col, treat, out, xs = [], [], [], [], []
    for D in days:
        if not first <= D <= last:
            raise DataError(f"panel day {D} outside the log horizon")
        risk = np.flatnonzero((ad == NEVER) | (ad >= D))
        if risk.size == 0:
            continue
        lo, hi = window(D)
        ia = max(lo - first, 0)
        ib = min(hi - first, h - 1)
        cnt = P[risk, ib + 1] - P[risk, ia] if ib >= ia else np.zeros(risk.size, np.int64)
        if isinstance(kind, Dose):
            codes = np.minimum(cnt, len(DOSE_LEVELS) - 1)
        else:
            codes = (cnt > 0).astype(np.int64)
        Xd = covariates.values(D)
        if Xd.shape[0] != g.node_count:
            raise DataError("covariate matrix does not cover every node")
        egos.append(risk)
        day_col.append(np.full(risk.size, D, dtype=np.int64))
        treat.append(codes)
        out.append((ad[risk] == D).astype(np.int64))
        xs.append(Xd[risk])
    if not egos:
        raise DataError("empty panel: no risk-set rows on the requested days")
    names = getattr(covariates, "names", None)
    core = getattr(covariates, "core_idx", None)
    X = np.concatenate(xs)
    if names is None:
        names = tuple(f"cov_{i + 1}" for i in range(X.shape[1]))
    if core is None:
        core = tuple(range(min(len(CORE_COVARIATES), X.shape[1])))
    return TreatmentPanel(
        ego=np.concatenate(egos),
        day=np.concatenate(day_col),
        treatment=np.concatenate(treat),
        outcome=np.concatenate(out),
        X=X,
        names=tuple(names),
        core_idx=tuple(core),
        levels=levels,
        kind_label=kind.label,
    )


def permute_within_day(panel: TreatmentPanel, seed: int, label=None) -> TreatmentPanel:
    """Shuffle treatment labels within each day, preserving daily level counts."""
    rng = stream(seed, PLACEBO)
    treat = np.array(panel.treatment)
    for D in panel.days():
        idx = np.flatnonzero(panel.day == D)
        treat[idx] = treat[idx][rng.permutation(idx.size)]
    return replace(
        panel,
        ego=np.array(panel.ego),
        day=np.array(panel.day),
        treatment=treat,
        outcome=np.array(panel.outcome),
        X=np.array(panel.X),
        kind_label=label if label is not None else panel.kind_label,
    )


@dataclass(frozen=True)
class PropensityModel:
    """Fitted treatment model: per-row probabilities and realized-level logits."""

    kind: str  # "binary" | "multinomial"
    levels: tuple
    classes: tuple  # level codes the model was fit over
    coef: np.ndarray  # (n_classes-1, p+1) rows vs the reference class
    mean: np.ndarray
    scale: np.ndarray
    probs: np.ndarray  # (n_rows, n_levels); absent levels get zero columns
    logits: np.ndarray  # logit of each row's realized-level probability
    auc: float | None
    iterations: int

    def level_logits(self, level: int) -> np.ndarray:
        p = np.clip(self.probs[:, level], 1e-12, 1 - 1e-12)
        return np.log(p) - np.log1p(-p)


def _rank_auc(scores: np.ndarray, positive: np.ndarray) -> float | None:
    n1 = int(positive.sum())
    n0 = len(positive) - n1
    if n1 == 0 or n0 == 0:
        return None
    r = stats.rankdata(scores)
    return float((r[positive].sum() - n1 * (n1 + 1) / 2.0) / (n1 * n0))


def _penalized_nll_binary(D, y, theta, pen):
    eta = D @ theta
    return float(np.logaddexp(0.0, eta).sum() - y @ eta + 0.5 * (pen * theta * theta).sum())


def fit_propensity(
    panel: TreatmentPanel,
    ridge: float = 1e-6,
    tol: float = 1e-8,
    max_iter: int = 100,
    min_level_rows: int = 20,
) -> PropensityModel:
    """Maximum-likelihood (multinomial) logistic fit of treatment on covariates.

    Newton iteration with an L2 ridge on the slopes (intercept unpenalized)
    so perfectly separable panels stay finite; step halving guards the
    penalized likelihood. Requires at least two levels meeting the row floor.
    """
    counts = panel.level_counts()
    if np.count_nonzero(counts >= min_level_rows) < 2:
        raise DataError(
            f"need >= 2 treatment levels with >= {min_level_rows} rows; "
            f"level counts {counts.tolist()}"
        )
    classes = tuple(int(c) for c in np.flatnonzero(counts > 0))
    mean = panel.X.mean(axis=0)
    scale = panel.X.std(axis=0)
    scale = np.where(scale == 0, 1.0, scale)
    Z = (panel.X - mean) / scale
    n, p = Z.shape
    D = np.column_stack([np.ones(n), Z])
    pen = np.full(p + 1, ridge)
    pen[0] = 0.0  # intercept unpenalized
    code_of = {c: i for i, c in enumerate(classes)}
    y = np.array([code_of[int(t)] for t in panel.treatment])
    K = len(classes)

    if K == 2:
        yb = (y == 1).astype(float)
        theta = np.zeros(p + 1)
        nll = _penalized_nll_binary(D, yb, theta, pen)
        it = 0
        for it in range(1, max_iter + 1):
            eta = D @ theta
            prob = expit(eta)
            grad = D.T @ (yb - prob) - pen * theta
            w = prob * (1.0 - prob)
            H = D.T @ (D * w[:, None]) + np.diag(pen)
            step = np.linalg.solve(H, grad)
            t = 1.0
            for _ in range(30):
                cand = theta + t * step
                new = _penalized_nll_binary(D, yb, cand, pen)
                if new <= nll + 1e-12:
                    break
                t *= 0.5
            theta = theta + t * step
            nll = _penalized_nll_binary(D, yb, theta, pen)
            if np.max(np.abs(t * step)) < tol:
                break
        else:
            raise ConvergenceError("propensity fit did not converge", iterations=max_iter)
        eta = D @ theta
        p1 = expit(eta)
        probs = np.zeros((n, len(panel.levels)))
        probs[:, classes[0]] = 1.0 - p1
        probs[:, classes[1]] = p1
        realized = np.where(yb == 1, p1, 1.0 - p1)
        realized = np.clip(realized, 1e-12, 1 - 1e-12)
        logits = np.log(realized) - np.log1p(-realized)
        auc = _rank_auc(eta, yb == 1)
        return PropensityModel(
            kind="binary",
            levels=panel.levels,
            classes=classes,
            coef=theta[None, :],
            mean=mean,
            scale=scale,
            probs=probs,
            logits=logits,
            auc=auc,
            iterations=it,
        )

    # multinomial: reference class = classes[0], parameters for the rest
    q = p + 1
    theta = np.zeros((K - 1) * q)
    pen_full = np.tile(pen, K - 1)
    Y = np.zeros((n, K))
    Y[np.arange(n), y] = 1.0

    def probs_of(th):
        T = th.reshape(K - 1, q)
        eta = np.column_stack([np.zeros(n), D @ T.T])
        eta -= eta.max(axis=1, keepdims=True)
        e = np.exp(eta)
        return e / e.sum(axis=1, keepdims=True)

    def pnll(th):
        P = probs_of(th)
        ll = np.log(np.clip(P[np.arange(n), y], 1e-300, None)).sum()
        return float(-ll + 0.5 * (pen_full * th * th).sum())

    nll = pnll(theta)
    it = 0
    for it in range(1, max_iter + 1):
        P = probs_of(theta)
        grad = np.empty((K - 1) * q)
        for k in range(1, K):
            gk = D.T @ (Y[:, k] - P[:, k])
            grad[(k - 1) * q : k * q] = gk
        grad -= pen_full * theta
        H = np.zeros(((K - 1) * q, (K - 1) * q))
        for k in range(1, K):
            for l in range(k, K):
                w = P[:, k] * ((1.0 if k == l else 0.0) - P[:, l])
                blk = D.T @ (D * w[:, None])
                H[(k - 1) * q : k * q, (l - 1) * q : l * q] = blk
                if l != k:
                    H[(l - 1) * q : l * q, (k - 1) * q : k * q] = blk
        H += np.diag(pen_full)
        step = np.linalg.solve(H, grad)
        t = 1.0
        for _ in range(30):
            if pnll(theta + t * step) <= nll + 1e-12:
                break
            t *= 0.5
        theta = theta + t * step
        nll = pnll(theta)
        if np.max(np.abs(t * step)) < tol:
            break
    else:
        raise ConvergenceError("propensity fit did not converge", iterations=max_iter)
    P = probs_of(theta)
    probs = np.zeros((n, len(panel.levels)))
    for j, c in enumerate(classes):
        probs[:, c] = P[:, j]
    realized = np.clip(P[np.arange(n), y], 1e-12, 1 - 1e-12)
    logits = np.log(realized) - np.log1p(-realized)
    return PropensityModel(
        kind="multinomial",
        levels=panel.levels,
        classes=classes,
        coef=theta.reshape(K - 1, q),
        mean=mean,
        scale=scale,
        probs=probs,
        logits=logits,
        auc=None,
        iterations=it,
    )


@dataclass(frozen=True)
class MatchedPair:
    day: int
    treated: int
    control: int
    logit_gap: float  # treated minus control, signed
    mahalanobis: float
    treated_outcome: int | None = None
    control_outcome: int | None = None


@dataclass(frozen=True)
class DayMatchResult:
    day: int
    pairs: tuple
    n_treated: int
    n_matched: int
    skip_reason: str | None = None

    @property
    def overlap(self) -> float | None:
        if self.n_treated == 0:
            return None
        return self.n_matched / self.n_treated


@dataclass(frozen=True)
class MatchRun:
    results: tuple

    @property
    def pairs(self) -> tuple:
        return tuple(p for r in self.results for p in r.pairs)

    @property
    def skipped(self) -> tuple:
        return tuple(r for r in self.results if r.skip_reason is not None)


class _MatchContext:
    """Panel-wide quantities shared by every day's matching pass."""

    def __init__(self, panel, model, level, core):
        self.panel = panel
        self.scores = model.level_logits(level)
        C = panel.X[:, list(core)]
        mu = C.mean(axis=0) if len(C) else np.zeros(C.shape[1])
        sd = C.std(axis=0) if len(C) else np.ones(C.shape[1])
        sd = np.where(sd == 0, 1.0, sd)
        self.Z = (C - mu) / sd
        if len(self.Z) >= 2:
            S = np.cov(self.Z, rowvar=False, ddof=1)
            S = np.atleast_2d(S) + 1e-9 * np.eye(self.Z.shape[1])
            self.VI = np.linalg.inv(S)
        else:
            self.VI = np.eye(self.Z.shape[1])


def _match_day(ctx, day, caliper_mult, level, control_level, shortlist):
    panel = ctx.panel
    rows = np.flatnonzero(panel.day == day)
    if rows.size == 0:
        return DayMatchResult(day, (), 0, 0, "no risk-set rows")
    s = ctx.scores[rows]
    sd = float(np.std(s, ddof=1)) if rows.size > 1 else 0.0
    caliper = caliper_mult * sd
    t_rows = rows[panel.treatment[rows] == level]
    c_rows = rows[panel.treatment[rows] == control_level]
    if t_rows.size == 0 or c_rows.size == 0:
        return DayMatchResult(
            day, (), int(t_rows.size), 0, "insufficient treated or control counts"
        )
    t_rows = t_rows[np.argsort(panel.ego[t_rows], kind="stable")]
    st = ctx.scores[t_rows]
    sc = ctx.scores[c_rows]
    Zt = ctx.Z[t_rows]
    Zc = ctx.Z[c_rows]
    c_ego = panel.ego[c_rows]
    available = np.ones(c_rows.size, dtype=bool)
    pairs = []
    for i in range(t_rows.size):
        avail = np.flatnonzero(available)
        if avail.size == 0:
            break
        diff = Zc[avail] - Zt[i]
        if shortlist is not None and avail.size > shortlist:
            eu = np.einsum("ij,ij->i", diff, diff)
            keep = np.lexsort((c_ego[avail], eu))[:shortlist]
            cand = avail[keep]
            diff = diff[keep]
        else:
            cand = avail
        ok = np.abs(sc[cand] - st[i]) <= caliper
        if not ok.any():
            continue
        cand = cand[ok]
        diff = diff[ok]
        d2 = np.einsum("ij,jk,ik->i", diff, ctx.VI, diff)
        md = np.sqrt(np.maximum(d2, 0.0))
        j = np.lexsort((c_ego[cand], md))[0]
        pick = cand[j]
        available[pick] = False
        pairs.append(
            MatchedPair(
                day=int(day),
                treated=int(panel.ego[t_rows[i]]),
                control=int(c_ego[pick]),
                logit_gap=float(st[i] - sc[pick]),
                mahalanobis=float(md[j]),
                treated_outcome=int(panel.outcome[t_rows[i]]),
                control_outcome=int(panel.outcome[c_rows[pick]]),
            )
        )
    return DayMatchResult(day, tuple(pairs), int(t_rows.size), len(pairs), None)


def match_day(
    panel: TreatmentPanel,
    model: PropensityModel,
    day: int,
    caliper_mult: float = 0.1,
    core_features=None,
    level: int = 1,
    control_level: int = 0,
    shortlist: int | None = None,
) -> DayMatchResult:
    """Greedily match treated egos (ascending id) to same-day controls.

    Candidates must sit within `caliper_mult` x SD of the day's logits; the
    closest by standardized Mahalanobis distance wins, ties to the lowest
    control id, each control used at most once.
    """
    core = tuple(core_features) if core_features is not None else panel.core_idx
    ctx = _MatchContext(panel, model, level, core)
    return _match_day(ctx, day, caliper_mult, level, control_level, shortlist)


def match_all_days(
    panel: TreatmentPanel,
    model: PropensityModel,
    caliper_mult: float = 0.1,
    core_features=None,
    level: int = 1,
    control_level: int = 0,
    shortlist: int | None = None,
) -> MatchRun:
    core = tuple(core_features) if core_features is not None else panel.core_idx
    ctx = _MatchContext(panel, model, level, core)
    results = [
        _match_day(ctx, int(D), caliper_mult, level, control_level, shortlist)
        for D in panel.days()
    ]
    return MatchRun(tuple(results))


@dataclass(frozen=True)
class RiskTable:
    """Pooled 2x2 adoption table with risk ratio and Katz 95% CI."""

    a: float  # treated adopters
    b: float  # treated non-adopters
    c: float  # control adopters
    d: float  # control non-adopters
    rr: float
    ci_low: float
    ci_high: float
    corrected: bool

    @classmethod
    def from_counts(cls, a, b, c, d) -> "RiskTable":
        if min(a, b, c, d) < 0:
            raise DataError("negative cell count")
        if a + b == 0 or c + d == 0:
            raise DataError("empty treated or control arm")
        corrected = min(a, b, c, d) == 0
        aa, bb, cc, dd = (
            (a + 0.5, b + 0.5, c + 0.5, d + 0.5) if corrected else (a, b, c, d)
        )
        rr = (aa / (aa + bb)) / (cc / (cc + dd))
        se = math.sqrt(1.0 / aa - 1.0 / (aa + bb) + 1.0 / cc - 1.0 / (cc + dd))
        lo = math.exp(math.log(rr) - Z_95 * se)
        hi = math.exp(math.log(rr) + Z_95 * se)
        return cls(
            a=float(a), b=float(b), c=float(c), d=float(d),
            rr=rr, ci_low=lo, ci_high=hi, corrected=corrected,
        )

    def corrected_cells(self) -> tuple:
        if self.corrected:
            return (self.a + 0.5, self.b + 0.5, self.c + 0.5, self.d + 0.5)
        return (self.a, self.b, self.c, self.d)

    def to_dict(self) -> dict:
        return {
            "a": self.a, "b": self.b, "c": self.c, "d": self.d,
            "rr": self.rr, "ci_low": self.ci_low, "ci_high": self.ci_high,
            "corrected": self.corrected,
        }

    def to_json(self, path) -> None:
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=2)
            f.write("\n")

    @classmethod
    def from_json(cls, path) -> "RiskTable":
        with open(path) as f:
            d = json.load(f)
        return cls(**d)


def pool_risk_ratio(pairs) -> RiskTable:
    """Sum matched-pair outcomes across days into one corrected 2x2 table."""
    pairs = list(pairs)
    if not pairs:
        raise DataError("no matched pairs to pool")
    if any(p.treated_outcome is None or p.control_outcome is None for p in pairs):
        raise DataError("pairs lack outcomes; re-derive them from the panel")
    a = sum(p.treated_outcome for p in pairs)
    c = sum(p.control_outcome for p in pairs)
    n = len(pairs)
    return RiskTable.from_counts(a, n - a, c, n - c)


def naive_risk_table(panel: TreatmentPanel, level: int = 1, control_level: int = 0) -> RiskTable:
    """Unmatched risk ratio over the whole panel (benchmark, not an estimate)."""
    t = panel.treatment == level
    c = panel.treatment == control_level
    if not t.any() or not c.any():
        raise DataError("panel lacks treated or control rows at the requested levels")
    a = int(panel.outcome[t].sum())
    b = int(t.sum()) - a
    cc = int(panel.outcome[c].sum())
    dd = int(c.sum()) - cc
    return RiskTable.from_counts(a, b, cc, dd)


def diagnostics(
    panel: TreatmentPanel,
    model: PropensityModel,
    run: MatchRun,
    level: int = 1,
    control_level: int = 0,
) -> dict:
    """Balance and overlap summary: per-day AUC, logit gaps, match distances."""
    scores = model.level_logits(level)
    aucs = []
    for D in panel.days():
        rows = np.flatnonzero(panel.day == D)
        grp = panel.treatment[rows]
        use = (grp == level) | (grp == control_level)
        if use.any():
            auc = _rank_auc(scores[rows[use]], grp[use] == level)
            if auc is not None:
                aucs.append(auc)
    gaps = np.array([abs(p.logit_gap) for p in run.pairs])
    dists = np.array([p.mahalanobis for p in run.pairs])
    overlaps = [r.overlap for r in run.results if r.skip_reason is None]
    q = lambda arr, frac: float(np.quantile(arr, frac)) if arr.size else None
    return {
        "level": panel.levels[level],
        "n_pairs": len(run.pairs),
        "n_days_matched": sum(1 for r in run.results if r.skip_reason is None),
        "n_days_skipped": len(run.skipped),
        "auc_median": float(np.median(aucs)) if aucs else None,
        "auc_min": float(np.min(aucs)) if aucs else None,
        "dlogit_p50": q(gaps, 0.5),
        "dlogit_p90": q(gaps, 0.9),
        "distance_p50": q(dists, 0.5),
        "distance_p90": q(dists, 0.9),
        "overlap_median": float(np.median(overlaps)) if overlaps else None,
    }


def write_pairs(pairs, path) -> None:
    with open(path, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["day", "treated", "control", "logit_gap", "mahalanobis"])
        for p in pairs:
            w.writerow([p.day, p.treated, p.control, repr(p.logit_gap), repr(p.mahalanobis)])


def read_pairs(path, panel: TreatmentPanel | None = None):
    """Read a pairs CSV; outcomes are restored when the source panel is given."""
    lookup = None
    if panel is not None:
        lookup = {
            (int(panel.ego[i]), int(panel.day[i])): int(panel.outcome[i])
            for i in range(panel.n_rows)
        }
    out = []
    with open(path, newline="") as f:
        r = csv.reader(f)
        header = next(r, None)
        if header != ["day", "treated", "control", "logit_gap", "mahalanobis"]:
            raise ParseError(
                "expected header day,treated,control,logit_gap,mahalanobis", path=str(path)
            )
        for ln, rec in enumerate(r, start=2):
            if not rec:
                continue
            if len(rec) != 5:
                raise ParseError("wrong field count", path=str(path), line=ln)
            try:
                day, t, c = int(rec[0]), int(rec[1]), int(rec[2])
                gap, md = float(rec[3]), float(rec[4])
            except ValueError as e:
                raise ParseError(str(e), path=str(path), line=ln) from None
            to = lookup.get((t, day)) if lookup else None
            co = lookup.get((c, day)) if lookup else None
            out.append(MatchedPair(day, t, c, gap, md, to, co))
    return out
