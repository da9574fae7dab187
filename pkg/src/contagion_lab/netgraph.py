"""Directed follower graph: load, validate, serve adjacency in both directions.

Edges are stored twice in CSR form (followees and followers), sorted
ascending, so degree lookups are O(1) and neighbor iteration is
deterministic.  Nodes carry dense 0-based integer ids assigned in sorted
external-id order; the external-id dictionary travels with the graph.

Conventions: a record (source, target) means source follows target, so
target is one of source's followees (information sources) and source is one
of target's followers (audience).  in_degree(i) counts followees of i.
"""

from __future__ import annotations

import csv
import io
import logging
import os
import zipfile
from dataclasses import dataclass

import numpy as np

from .errors import DataError, ParseError

log = logging.getLogger(__name__)

CACHE_FORMAT = "contagion-lab-graph"
CACHE_VERSION = 1


@dataclass(frozen=True)
class LoadReport:
    """Bookkeeping from an edge-list load."""

    records: int
    edges: int
    duplicates: int
    self_loops: int


class DirectedGraph:
    """Immutable directed graph with CSR adjacency in both directions."""

    def __init__(
        self,
        followee_indptr: np.ndarray,
        followee_ids: np.ndarray,
        follower_indptr: np.ndarray,
        follower_ids: np.ndarray,
        node_ids: tuple[str, ...],
        load_report: LoadReport | None = None,
    ):
        self._fe_ptr = followee_indptr
        self._fe = followee_ids
        self._fo_ptr = follower_indptr
        self._fo = follower_ids
        self.node_ids = node_ids
        self.load_report = load_report
        for a in (self._fe_ptr, self._fe, self._fo_ptr, self._fo):
            a.setflags(write=False)

    # -- construction ------------------------------------------------------

    @classmethod
    def from_edges(
        cls,
        edges: np.ndarray,
        node_ids: tuple[str, ...] | None = None,
        n_nodes: int | None = None,
        report_counts: tuple[int, int] | None = None,
    ) -> "DirectedGraph":
        """Build from an (m, 2) integer array of (source, target) pairs.

        Self-loops are dropped and duplicates collapsed; both are counted in
        the load report.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        n_records = len(edges)
        keep = edges[:, 0] != edges[:, 1]
        n_self = int(n_records - keep.sum())
        edges = edges[keep]
        if len(edges):
            edges = np.unique(edges, axis=0)
        n_dup = int(n_records - n_self - len(edges))
        if n_self:
            log.warning("dropped %d self-loop record(s)", n_self)
        if n_dup:
            log.warning("collapsed %d duplicate record(s)", n_dup)

        if n_nodes is None:
            n_nodes = int(edges.max()) + 1 if len(edges) else 0
        if node_ids is None:
            # zero-pad so lexical order equals numeric order across reloads
            w = len(str(max(n_nodes - 1, 0)))
            node_ids = tuple(f"{i:0{w}d}" for i in range(n_nodes))
        if len(node_ids) != n_nodes:
            raise DataError(f"expected {n_nodes} node ids, got {len(node_ids)}")
        if len(edges) and (edges.min() < 0 or edges.max() >= n_nodes):
            raise DataError("edge endpoint out of node range")

        # followees of i: targets of records with source i
        fe_ptr, fe = _csr(edges[:, 0], edges[:, 1], n_nodes)
        # followers of i: sources of records with target i
        fo_ptr, fo = _csr(edges[:, 1], edges[:, 0], n_nodes)
        if report_counts is not None:
            n_records, extra_self = report_counts[0], report_counts[1]
            n_self += extra_self
        report = LoadReport(
            records=n_records, edges=len(edges), duplicates=n_dup, self_loops=n_self
        )
        return cls(fe_ptr, fe, fo_ptr, fo, node_ids, report)

    # -- basic accessors ----------------------------------------------------

    @property
    def node_count(self) -> int:
        return len(self._fe_ptr) - 1

    @property
    def edge_count(self) -> int:
        return len(self._fe)

    def followees(self, i: int) -> np.ndarray:
        """Nodes i follows (i's information sources), ascending."""
        self._check(i)
        return self._fe[self._fe_ptr[i] : self._fe_ptr[i + 1]]

    def followers(self, i: int) -> np.ndarray:
        """Nodes following i (i's audience), ascending."""
        self._check(i)
        return self._fo[self._fo_ptr[i] : self._fo_ptr[i + 1]]

    def mutual(self, i: int) -> np.ndarray:
        """Reciprocated ties of i, ascending."""
        return np.intersect1d(self.followees(i), self.followers(i))

    def neighbors(self, i: int, direction: str = "followee") -> np.ndarray:
        if direction == "followee":
            return self.followees(i)
        if direction == "follower":
            return self.followers(i)
        if direction == "mutual":
            return self.mutual(i)
        raise ValueError(f"unknown direction: {direction!r}")

    @property
    def in_degree(self) -> np.ndarray:
        """Per-node followee count (the exposure channel size k_i)."""
        return np.diff(self._fe_ptr)

    @property
    def out_degree(self) -> np.ndarray:
        """Per-node follower count."""
        return np.diff(self._fo_ptr)

    @property
    def mutual_degree(self) -> np.ndarray:
        return np.array([len(self.mutual(i)) for i in range(self.node_count)])

    def edges(self) -> np.ndarray:
        """All (source, target) pairs, sorted by (source, target)."""
        src = np.repeat(np.arange(self.node_count), self.in_degree)
        return np.column_stack([src, self._fe])

    def index_of(self, external_id: str) -> int:
        try:
            return self._id_map[external_id]
        except AttributeError:
            self._id_map = {x: i for i, x in enumerate(self.node_ids)}
            return self._id_map[external_id]

    def followee_csr(self) -> tuple[np.ndarray, np.ndarray]:
        return self._fe_ptr, self._fe

    def follower_csr(self) -> tuple[np.ndarray, np.ndarray]:
        return self._fo_ptr, self._fo

    def _check(self, i: int) -> None:
        if not 0 <= i < self.node_count:
            raise IndexError(f"node id {i} out of range [0, {self.node_count})")

    def __eq__(self, other) -> bool:
        if not isinstance(other, DirectedGraph):
            return NotImplemented
        return (
            self.node_ids == other.node_ids
            and np.array_equal(self._fe_ptr, other._fe_ptr)
            and np.array_equal(self._fe, other._fe)
        )

    def __repr__(self) -> str:
        return f"DirectedGraph(nodes={self.node_count}, edges={self.edge_count})"

    # -- serialization -------------------------------------------------------

    def save(self, path) -> None:
        """Write the versioned binary cache (npz).

        Entries carry a fixed zip date so identical graphs produce
        byte-identical files regardless of wall-clock time.
        """
        arrays = {
            "format": np.array(CACHE_FORMAT),
            "version": np.array(CACHE_VERSION),
            "followee_indptr": self._fe_ptr,
            "followee_ids": self._fe,
            "follower_indptr": self._fo_ptr,
            "follower_ids": self._fo,
            "node_ids": np.array(self.node_ids, dtype=object),
        }
        path = os.fspath(path)
        if not path.endswith(".npz"):
            path += ".npz"
        with zipfile.ZipFile(path, "w", zipfile.ZIP_DEFLATED) as zf:
            for name, arr in arrays.items():
                buf = io.BytesIO()
                np.lib.format.write_array(buf, np.asanyarray(arr), allow_pickle=True)
                info = zipfile.ZipInfo(name + ".npy", date_time=(1980, 1, 1, 0, 0, 0))
                info.compress_type = zipfile.ZIP_DEFLATED
                info.external_attr = 0o600 << 16
                zf.writestr(info, buf.getvalue())

    @classmethod
    def load(cls, path) -> "DirectedGraph":
        with np.load(path, allow_pickle=True) as z:
            if str(z["format"]) != CACHE_FORMAT or int(z["version"]) != CACHE_VERSION:
                raise DataError(f"unrecognized graph cache format in {path}")
            return cls(
                z["followee_indptr"],
                z["followee_ids"],
                z["follower_indptr"],
                z["follower_ids"],
                tuple(str(x) for x in z["node_ids"]),
            )


def _csr(keys: np.ndarray, values: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray]:
    """CSR arrays for `values` grouped by `keys`, both ascending."""
    order = np.lexsort((values, keys))
    keys, values = keys[order], values[order]
    indptr = np.zeros(n + 1, dtype=np.int64)
    np.add.at(indptr, keys + 1, 1)
    np.cumsum(indptr, out=indptr)
    return indptr, values.astype(np.int64)


def load_edge_list(path) -> DirectedGraph:
    """Load an edge-list CSV (header ``source,target``) into a graph.

    External ids are opaque strings; dense ids are assigned in sorted
    external-id order.  Duplicates collapse, self-loops drop (both counted in
    the attached load report).
    """
    pairs: list[tuple[str, str]] = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            raise ParseError("empty file", path=str(path))
        if [h.strip() for h in header[:2]] != ["source", "target"]:
            raise ParseError("expected header 'source,target'", path=str(path), line=1)
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != 2 or not row[0].strip() or not row[1].strip():
                raise ParseError(f"malformed record {row!r}", path=str(path), line=lineno)
            pairs.append((row[0].strip(), row[1].strip()))
    if not pairs:
        raise ParseError("no edge records", path=str(path))

    node_ids = tuple(sorted({x for pair in pairs for x in pair}))
    id_map = {x: i for i, x in enumerate(node_ids)}
    edges = np.array([(id_map[s], id_map[t]) for s, t in pairs], dtype=np.int64)
    return DirectedGraph.from_edges(edges, node_ids=node_ids, n_nodes=len(node_ids))


def save_edge_list(g: DirectedGraph, path) -> None:
    """Write the canonical edge-list CSV (sorted, external ids)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["source", "target"])
        for s, t in g.edges():
            w.writerow([g.node_ids[s], g.node_ids[t]])


def save_id_map(g: DirectedGraph, path) -> None:
    """Persist the dense-id dictionary as CSV (``id,external``)."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["id", "external"])
        for i, x in enumerate(g.node_ids):
            w.writerow([i, x])


def degrees(g: DirectedGraph) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Per-node (in_degree, out_degree, mutual_degree)."""
    return g.in_degree.copy(), g.out_degree.copy(), g.mutual_degree


def neighbors(g: DirectedGraph, i: int, direction: str = "followee") -> np.ndarray:
    return g.neighbors(i, direction)
