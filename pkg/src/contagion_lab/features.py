"""Egocentric features measured at adoption time.

Seven values per adopter, all computed from state strictly before the
adoption day (same-day peers never count):

  active_influences  m: followees adopted before day t
  degree             k: followee count
  peer_saturation    m/k, or 0 when k = 0
  exposure_duration  days since the earliest prior followee adoption (-1 if m = 0)
  influence_recency  days since the latest prior followee adoption (-1 if m = 0)
  shock_intensity    decay-schedule intensity on day t
  shock_recency      days since the most recent shock peak (-1 before any peak)
"""

from __future__ import annotations

import csv

import numpy as np

from .calibrate import NEVER, AdoptionLog
from .errors import DataError, ParseError
from .netgraph import DirectedGraph
from .shocks import ShockSchedule, shock_intensity

FEATURE_NAMES = (
    "m",
    "k",
    "saturation",
    "exposure_duration",
    "influence_recency",
    "shock_intensity",
    "shock_recency",
)


def extract_features(
    g: DirectedGraph,
    adoption_day: np.ndarray,
    shocks: ShockSchedule,
    u: int,
    t_u: int,
) -> np.ndarray:
    """Feature vector for node u adopting on day t_u.

    adoption_day holds each node's adoption day or NEVER; entries at days
    >= t_u are ignored (no lookahead).
    """
    if t_u < 0:
        raise DataError("adoption day must be non-negative")
    followees = g.followees(u)  # raises IndexError when u out of range
    t_v = adoption_day[followees]
    earlier = t_v[(t_v != NEVER) & (t_v < t_u)]
    m = len(earlier)
    k = len(followees)
    sat = m / k if k > 0 else 0.0
    dur = float(t_u - earlier.min()) if m > 0 else -1.0
    rec = float(t_u - earlier.max()) if m > 0 else -1.0
    lam = shock_intensity(shocks, t_u)
    tau = shocks.tau
    if len(tau) == 0 or t_u < tau[0]:
        shock_rec = -1.0
    else:
        j = int(np.searchsorted(tau, t_u, side="right")) - 1
        shock_rec = float(t_u - tau[j])
    return np.array([m, k, sat, dur, rec, lam, shock_rec], dtype=float)


def extract_features_log(
    g: DirectedGraph, log: AdoptionLog, shocks: ShockSchedule
) -> tuple[np.ndarray, np.ndarray]:
    """Feature matrix for every adopter in the log, ascending node id.

    Returns (nodes, X) where X rows align with the adopter ids.
    """
    nodes = log.adopters()
    if len(nodes) == 0:
        raise DataError("log has no adopters")
    X = np.empty((len(nodes), len(FEATURE_NAMES)), dtype=float)
    for row, u in enumerate(nodes):
        X[row] = extract_features(
            g, log.adoption_day, shocks, int(u), int(log.adoption_day[u])
        )
    return nodes, X


def events_feature_matrix(events) -> tuple[np.ndarray, np.ndarray]:
    """Stack logged event features into (X, labels)."""
    if not events:
        raise DataError("no events")
    X = np.stack([e.features for e in events])
    y = np.array([e.mechanism for e in events])
    return X, y


def write_feature_csv(X: np.ndarray, path, labels=None) -> None:
    """Feature matrix CSV in canonical column order, label column optional."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 2 or X.shape[1] != len(FEATURE_NAMES):
        raise DataError(f"feature matrix must have {len(FEATURE_NAMES)} columns")
    if labels is not None and len(labels) != len(X):
        raise DataError("labels length must match feature rows")
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        header = list(FEATURE_NAMES) + (["label"] if labels is not None else [])
        w.writerow(header)
        for i, row in enumerate(X):
            out = [repr(float(v)) for v in row]
            if labels is not None:
                out.append(str(labels[i]))
            w.writerow(out)


def read_feature_csv(path) -> tuple[np.ndarray, np.ndarray | None]:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", path=str(path))
        header = [h.strip() for h in header]
        if tuple(header[: len(FEATURE_NAMES)]) != FEATURE_NAMES:
            raise ParseError(
                f"expected columns {','.join(FEATURE_NAMES)}", path=str(path), line=1
            )
        has_label = len(header) > len(FEATURE_NAMES) and header[len(FEATURE_NAMES)] == "label"
        rows, labels = [], []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            try:
                rows.append([float(x) for x in row[: len(FEATURE_NAMES)]])
                if has_label:
                    labels.append(row[len(FEATURE_NAMES)])
            except (ValueError, IndexError) as e:
                raise ParseError(
                    f"malformed record {row!r}", path=str(path), line=lineno
                ) from e
    if not rows:
        raise ParseError("no feature rows", path=str(path))
    X = np.array(rows, dtype=float)
    return X, (np.array(labels) if has_label else None)
