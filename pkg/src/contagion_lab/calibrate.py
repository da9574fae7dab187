"""Estimate mechanism parameters from an observed adoption log.

Exposure is always measured at adoption eve: a followee counts toward m only
if it adopted strictly before the adopter's day.  When the log carries a
shock-day mask, adopters inside shock periods are excluded from the
transmission, threshold, and background pools (their person-time still
counts in the background denominator).
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError, ParseError
from .netgraph import DirectedGraph
from .rngstream import PARAM_ASSIGNMENT, stream
from .shocks import ShockSchedule

NEVER = -1  # sentinel adoption day for nodes that never adopt

DEFAULT_ACTIVITY_MEAN = 0.032


@dataclass(frozen=True)
class AdoptionLog:
    """Per-node adoption days over a fixed horizon.

    adoption_day[i] is the day node i adopted, or NEVER (-1).  The horizon
    is inclusive on both ends.  shock_mask, when present, marks shock days
    over [first_day, last_day].
    """

    adoption_day: np.ndarray
    first_day: int = 0
    last_day: int | None = None
    shock_mask: np.ndarray | None = None

    def __post_init__(self):
        days = np.asarray(self.adoption_day, dtype=np.int64)
        object.__setattr__(self, "adoption_day", days)
        last = int(days.max()) if self.last_day is None else int(self.last_day)
        object.__setattr__(self, "last_day", last)
        object.__setattr__(self, "first_day", int(self.first_day))
        if self.first_day > self.last_day:
            raise DataError("empty horizon")
        real = days[days != NEVER]
        if len(real) and (real.min() < self.first_day or real.max() > self.last_day):
            raise DataError("adoption day outside horizon")
        if np.any(days < NEVER):
            raise DataError(f"adoption days must be >= 0 or {NEVER}")
        if self.shock_mask is not None:
            mask = np.asarray(self.shock_mask, dtype=bool)
            if len(mask) != self.horizon_days:
                raise DataError("shock mask length must equal horizon length")
            object.__setattr__(self, "shock_mask", mask)

    @property
    def n_nodes(self) -> int:
        return len(self.adoption_day)

    @property
    def horizon_days(self) -> int:
        return self.last_day - self.first_day + 1

    def adopters(self) -> np.ndarray:
        """Adopter node ids, ascending."""
        return np.flatnonzero(self.adoption_day != NEVER)

    def in_shock(self, day: int) -> bool:
        if self.shock_mask is None:
            return False
        return bool(self.shock_mask[day - self.first_day])

    def to_csv(self, path, g: DirectedGraph | None = None) -> None:
        """Write adopter records as ``node,day`` (external ids if g given)."""
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(["node", "day"])
            for i in self.adopters():
                label = g.node_ids[i] if g is not None else str(i)
                w.writerow([label, int(self.adoption_day[i])])

    @classmethod
    def from_csv(
        cls,
        path,
        g: DirectedGraph,
        first_day: int = 0,
        last_day: int | None = None,
    ) -> "AdoptionLog":
        days = np.full(g.node_count, NEVER, dtype=np.int64)
        seen: set[int] = set()
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if header is None or [h.strip() for h in header[:2]] != ["node", "day"]:
                raise ParseError("expected header 'node,day'", path=str(path), line=1)
            for lineno, row in enumerate(reader, start=2):
                if not row or (len(row) == 1 and not row[0].strip()):
                    continue
                try:
                    node = g.index_of(row[0].strip())
                    day = int(row[1])
                except (KeyError, ValueError, IndexError) as e:
                    raise ParseError(
                        f"malformed record {row!r}", path=str(path), line=lineno
                    ) from e
                if node in seen:
                    raise ParseError(
                        f"duplicate record for node {row[0]!r}",
                        path=str(path),
                        line=lineno,
                    )
                seen.add(node)
                days[node] = day
        if not seen:
            raise ParseError("no adoption records", path=str(path))
        return cls(days, first_day=first_day, last_day=last_day)


def daily_counts(log: AdoptionLog) -> np.ndarray:
    """Adoptions per day over the horizon (index 0 = first_day)."""
    counts = np.zeros(log.horizon_days, dtype=np.int64)
    days = log.adoption_day[log.adoption_day != NEVER]
    np.add.at(counts, days - log.first_day, 1)
    return counts


def exposure_on_eve(g: DirectedGraph, log: AdoptionLog, u: int, day: int) -> int:
    """Number of u's followees adopted strictly before `day`."""
    t_v = log.adoption_day[g.followees(u)]
    return int(np.count_nonzero((t_v != NEVER) & (t_v < day)))


@dataclass(frozen=True)
class PoolResult:
    """Empirical parameter pool with summary stats."""

    values: np.ndarray  # one entry per qualifying adopter, ascending node id
    nodes: np.ndarray  # the adopters the values came from

    @property
    def n(self) -> int:
        return len(self.values)

    @property
    def mean(self) -> float:
        return float(self.values.mean())

    def summary(self) -> dict:
        return {
            "n": self.n,
            "mean": self.mean,
            "min": float(self.values.min()),
            "max": float(self.values.max()),
        }


def _qualifying_adopters(log: AdoptionLog) -> np.ndarray:
    """Adopters outside shock periods, ascending node id."""
    out = []
    for u in log.adopters():
        if not log.in_shock(int(log.adoption_day[u])):
            out.append(u)
    return np.array(out, dtype=np.int64)


def calibrate_transmission(g: DirectedGraph, log: AdoptionLog) -> PoolResult:
    """Per-adopter transmission rates: reciprocal of adoption-eve exposure.

    Adopters with zero exposure (or inside shock periods) are excluded.
    """
    nodes, values = [], []
    for u in _qualifying_adopters(log):
        m = exposure_on_eve(g, log, int(u), int(log.adoption_day[u]))
        if m > 0:
            nodes.append(int(u))
            values.append(1.0 / m)
    if not values:
        raise DataError("no adopter with positive adoption-eve exposure")
    return PoolResult(np.array(values), np.array(nodes, dtype=np.int64))


def calibrate_thresholds(g: DirectedGraph, log: AdoptionLog) -> PoolResult:
    """Per-adopter thresholds: exposed-followee fraction at adoption eve.

    Restricted to adopters with positive degree and positive exposure (the
    same exposed subset the transmission pool draws from), so every value
    lands in (0, 1].
    """
    k = g.in_degree
    nodes, values = [], []
    for u in _qualifying_adopters(log):
        if k[u] == 0:
            continue
        m = exposure_on_eve(g, log, int(u), int(log.adoption_day[u]))
        if m > 0:
            nodes.append(int(u))
            values.append(m / k[u])
    if not values:
        raise DataError("no adopter with positive degree and exposure")
    return PoolResult(np.array(values), np.array(nodes, dtype=np.int64))


def calibrate_background(g: DirectedGraph, log: AdoptionLog) -> float:
    """Spontaneous daily rate: zero-exposure adopters per susceptible-day.

    Susceptible-days of a node count the horizon days strictly before its
    adoption (never-adopters contribute the full horizon).  The numerator
    honors the shock mask; the denominator is raw person-time.
    """
    days = log.adoption_day
    sus = np.where(days == NEVER, log.horizon_days, days - log.first_day)
    total = int(sus.sum())
    if total <= 0:
        raise DataError("zero susceptible-days in horizon")
    zero_exposure = 0
    for u in _qualifying_adopters(log):
        if exposure_on_eve(g, log, int(u), int(days[u])) == 0:
            zero_exposure += 1
    return zero_exposure / total


def calibrate_activity(
    post_counts, target_mean: float = DEFAULT_ACTIVITY_MEAN
) -> np.ndarray:
    """Per-node daily check-in probabilities from posting volumes.

    log1p-transform, then rescale by one positive factor so the mean hits
    target_mean; results clipped to [0, 1] (a node with zero posts keeps
    activity 0).
    """
    counts = np.asarray(post_counts, dtype=float)
    if np.any(counts < 0):
        raise DataError("posting volumes must be non-negative")
    raw = np.log1p(counts)
    if raw.sum() == 0:
        raise DataError("all posting volumes are zero")
    if not 0 < target_mean <= 1:
        raise DataError("target mean activity must lie in (0, 1]")
    return np.clip(raw * (target_mean / raw.mean()), 0.0, 1.0)


@dataclass(frozen=True)
class MechanismParams:
    """Everything the cascade engine needs, per node plus globals."""

    beta: np.ndarray  # per-node transmission in [0, 1]
    phi: np.ndarray  # per-node threshold > 0 (values > 1 disable the rule)
    r: float  # global spontaneous daily rate
    activity: np.ndarray  # per-node daily check-in probability in [0, 1]
    shock_schedule: ShockSchedule = field(default_factory=ShockSchedule.empty)
    shock_prob_at_peak: float = 0.0

    def __post_init__(self):
        beta = np.asarray(self.beta, dtype=float)
        phi = np.asarray(self.phi, dtype=float)
        act = np.asarray(self.activity, dtype=float)
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "activity", act)
        if not (len(beta) == len(phi) == len(act)):
            raise DataError("per-node parameter arrays differ in length")
        if np.any(beta < 0) or np.any(beta > 1):
            raise DataError("transmission rates must lie in [0, 1]")
        if np.any(phi <= 0):
            raise DataError("thresholds must be positive")
        if np.any(act < 0) or np.any(act > 1):
            raise DataError("activity must lie in [0, 1]")
        if not 0 <= self.r <= 1:
            raise DataError("spontaneous rate must lie in [0, 1]")
        if not 0 <= self.shock_prob_at_peak <= 1:
            raise DataError("peak shock probability must lie in [0, 1]")

    @property
    def n_nodes(self) -> int:
        return len(self.beta)

    def to_json(self, path) -> None:
        payload = {
            "beta": self.beta.tolist(),
            "phi": self.phi.tolist(),
            "r": self.r,
            "activity": self.activity.tolist(),
            "shock_schedule": [
                {"tau": int(t), "gamma": float(g), "alpha": float(a)}
                for t, g, a in zip(
                    self.shock_schedule.tau,
                    self.shock_schedule.gamma,
                    self.shock_schedule.alpha,
                )
            ],
            "shock_prob_at_peak": self.shock_prob_at_peak,
        }
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh)
            fh.write("\n")

    @classmethod
    def from_json(cls, path) -> "MechanismParams":
        with open(path, encoding="utf-8") as fh:
            try:
                d = json.load(fh)
            except json.JSONDecodeError as e:
                raise ParseError(f"invalid JSON: {e}", path=str(path)) from e
        try:
            sched = d["shock_schedule"]
            schedule = ShockSchedule(
                np.array([s["tau"] for s in sched], dtype=np.int64),
                np.array([s["gamma"] for s in sched], dtype=float),
                np.array([s["alpha"] for s in sched], dtype=float),
            )
            return cls(
                beta=np.array(d["beta"], dtype=float),
                phi=np.array(d["phi"], dtype=float),
                r=float(d["r"]),
                activity=np.array(d["activity"], dtype=float),
                shock_schedule=schedule,
                shock_prob_at_peak=float(d["shock_prob_at_peak"]),
            )
        except (KeyError, TypeError) as e:
            raise ParseError(f"params file missing field: {e}", path=str(path)) from e


def assign_from_pools(
    n_nodes: int,
    beta_pool: np.ndarray,
    phi_pool: np.ndarray,
    r: float,
    activity: np.ndarray,
    shock_schedule: ShockSchedule | None = None,
    shock_prob_at_peak: float = 0.0,
    seed: int = 0,
) -> MechanismParams:
    """Draw per-node transmission and threshold values i.i.d. from pools."""
    rng = stream(seed, PARAM_ASSIGNMENT)
    beta_pool = np.asarray(beta_pool, dtype=float)
    phi_pool = np.asarray(phi_pool, dtype=float)
    if len(beta_pool) == 0 or len(phi_pool) == 0:
        raise DataError("parameter pools must be non-empty")
    return MechanismParams(
        beta=rng.choice(beta_pool, size=n_nodes, replace=True),
        phi=rng.choice(phi_pool, size=n_nodes, replace=True),
        r=r,
        activity=np.asarray(activity, dtype=float),
        shock_schedule=shock_schedule or ShockSchedule.empty(),
        shock_prob_at_peak=shock_prob_at_peak,
    )
