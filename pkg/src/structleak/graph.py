"""Immutable undirected graphs, ingestion, ego networks and motif enumeration.

Every per-edge vector in the package (masks, keep probabilities, relaxed
weights) is indexed by the canonical edge list ``Graph.edges``: pairs
``(u, v)`` with ``u < v`` in lexicographic order.
"""
from __future__ import annotations

import csv
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, ParseError, RangeError, ResourceError

log = logging.getLogger(__name__)

MOTIF_KINDS = ("triangle", "4-cycle", "chordal-4-cycle", "4-clique")
DEFAULT_MOTIF_BUDGET = 1e8


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected simple graph in CSR form with node features.

    ``edge_id[p]`` is the canonical edge index of CSR entry ``p``; both
    directions of an undirected edge share the id.
    """

    n: int
    indptr: np.ndarray
    indices: np.ndarray
    edge_id: np.ndarray
    edges: np.ndarray
    features: np.ndarray

    @classmethod
    def from_edges(cls, n: int, edges, features=None) -> "Graph":
        n = int(n)
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= n):
            raise RangeError(f"edge endpoint outside [0, {n})")
        e = e[e[:, 0] != e[:, 1]]
        e = np.sort(e, axis=1)
        if len(e):
            e = np.unique(e, axis=0)
        m = len(e)
        src = np.concatenate([e[:, 0], e[:, 1]])
        dst = np.concatenate([e[:, 1], e[:, 0]])
        eid = np.concatenate([np.arange(m), np.arange(m)])
        order = np.lexsort((dst, src))
        src, dst, eid = src[order], dst[order], eid[order]
        indptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(np.bincount(src, minlength=n), out=indptr[1:])
        if features is None:
            x = np.ones((n, 1))
        else:
            x = np.array(features, dtype=np.float64, copy=True)
            if x.ndim != 2 or x.shape[0] != n:
                raise ContractError(f"features must have shape ({n}, m), got {x.shape}")
        return cls(n, _frozen(indptr), _frozen(dst.astype(np.int64)), _frozen(eid.astype(np.int64)),
                   _frozen(e.reshape(-1, 2)), _frozen(x))

    @property
    def m(self) -> int:
        return len(self.edges)

    @property
    def degrees(self) -> np.ndarray:
        return np.diff(self.indptr)

    @property
    def rows(self) -> np.ndarray:
        """Source node of every CSR entry."""
        return np.repeat(np.arange(self.n), self.degrees)

    def neighbors(self, u: int) -> np.ndarray:
        return self.indices[self.indptr[u]:self.indptr[u + 1]]

    def edge_ids(self, us, vs) -> np.ndarray:
        """Canonical ids of edges (us[i], vs[i]); -1 where no edge exists."""
        us = np.asarray(us, dtype=np.int64)
        vs = np.asarray(vs, dtype=np.int64)
        keys = self.rows * self.n + self.indices
        q = us * self.n + vs
        pos = np.searchsorted(keys, q)
        pos = np.minimum(pos, max(len(keys) - 1, 0))
        if len(keys) == 0:
            return np.full(q.shape, -1, dtype=np.int64)
        hit = keys[pos] == q
        return np.where(hit, self.edge_id[pos], -1)

    def adjacency(self, weights=None) -> sp.csr_matrix:
        """Sparse adjacency; ``weights`` is an optional per-canonical-edge vector."""
        data = np.ones(len(self.indices)) if weights is None else np.asarray(weights, dtype=np.float64)[self.edge_id]
        return sp.csr_matrix((data, self.indices, self.indptr), shape=(self.n, self.n))

    def with_features(self, features) -> "Graph":
        return Graph.from_edges(self.n, self.edges, features)


@dataclass(frozen=True, eq=False)
class NodeLabels:
    """Private (or utility) labels; ``label == -1`` marks an absent label."""

    label: np.ndarray
    known_mask: np.ndarray
    class_count: int

    def __post_init__(self):
        lab = np.asarray(self.label, dtype=np.int64)
        known = np.asarray(self.known_mask, dtype=bool)
        if lab.shape != known.shape:
            raise ContractError("label and known_mask lengths differ")
        if np.any(known & (lab < 0)):
            raise ContractError("known node without a label")
        if np.any(lab >= self.class_count) or np.any(lab < -1):
            raise RangeError(f"label outside [0, {self.class_count})")
        object.__setattr__(self, "label", _frozen(lab.copy()))
        object.__setattr__(self, "known_mask", _frozen(known.copy()))

    @property
    def n(self) -> int:
        return len(self.label)

    @property
    def known(self) -> np.ndarray:
        return np.flatnonzero(self.known_mask)

    @property
    def hidden(self) -> np.ndarray:
        """Nodes with a ground-truth label that the adversary does not see."""
        return np.flatnonzero(~self.known_mask & (self.label >= 0))

    def require_each_class_known(self):
        seen = np.bincount(self.label[self.known_mask], minlength=self.class_count)
        if np.any(seen == 0):
            missing = np.flatnonzero(seen == 0).tolist()
            raise ContractError(f"no known node for classes {missing}")


@dataclass(frozen=True, eq=False)
class Subgraph:
    """Induced k-hop ego network; local ids index ``local_nodes`` (sorted)."""

    center: int
    local_nodes: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    edge_ids: np.ndarray = field(repr=False)
    hop_count: int = 1

    @property
    def size(self) -> int:
        return len(self.local_nodes)

    @property
    def center_local(self) -> int:
        return int(np.searchsorted(self.local_nodes, self.center))

    @property
    def edge_count(self) -> int:
        return len(self.indices) // 2

    def adjacency(self) -> np.ndarray:
        a = np.zeros((self.size, self.size))
        rows = np.repeat(np.arange(self.size), np.diff(self.indptr))
        a[rows, self.indices] = 1.0
        return a


def bfs_nodes(graph: Graph, node: int, k: int) -> np.ndarray:
    seen = np.zeros(graph.n, dtype=bool)
    seen[node] = True
    frontier = np.array([node])
    for _ in range(k):
        if not len(frontier):
            break
        nxt = np.concatenate([graph.neighbors(u) for u in frontier])
        nxt = np.unique(nxt[~seen[nxt]])
        seen[nxt] = True
        frontier = nxt
    return np.flatnonzero(seen)


def ego_network(graph: Graph, node: int, k: int = 2) -> Subgraph:
    if not 0 <= node < graph.n:
        raise ContractError(f"node {node} outside [0, {graph.n})")
    if k < 1:
        raise ContractError("hop count k must be >= 1")
    local = bfs_nodes(graph, node, k)
    inside = np.zeros(graph.n, dtype=bool)
    inside[local] = True
    starts, ends = graph.indptr[local], graph.indptr[local + 1]
    counts = ends - starts
    pos = np.concatenate([np.arange(s, e) for s, e in zip(starts, ends)]) if len(local) else np.zeros(0, np.int64)
    src_local = np.repeat(np.arange(len(local)), counts)
    keep = inside[graph.indices[pos]]
    pos, src_local = pos[keep], src_local[keep]
    indices = np.searchsorted(local, graph.indices[pos])
    indptr = np.zeros(len(local) + 1, dtype=np.int64)
    np.cumsum(np.bincount(src_local, minlength=len(local)), out=indptr[1:])
    return Subgraph(int(node), local, indptr, indices, graph.edge_id[pos], int(k))


def ego_networks(graph: Graph, k: int = 2) -> list[Subgraph]:
    return [ego_network(graph, i, k) for i in range(graph.n)]


def normalized_laplacian(sub) -> np.ndarray:
    """I - D^-1/2 A D^-1/2 with all-zero rows/cols for isolated nodes.

    Accepts a ``Subgraph`` or a dense symmetric adjacency matrix.
    """
    a = sub.adjacency() if isinstance(sub, Subgraph) else np.asarray(sub, dtype=np.float64)
    deg = a.sum(axis=1)
    live = deg > 0
    inv = np.zeros_like(deg)
    inv[live] = 1.0 / np.sqrt(deg[live])
    return np.diag(live.astype(np.float64)) - inv[:, None] * a * inv[None, :]


def triangle_counts(graph: Graph) -> np.ndarray:
    a = graph.adjacency()
    return np.asarray((a @ a).multiply(a).sum(axis=1)).ravel() / 2.0


def clustering_coefficients(graph: Graph) -> np.ndarray:
    deg = graph.degrees.astype(np.float64)
    tri = triangle_counts(graph)
    out = np.zeros(graph.n)
    ok = deg >= 2
    out[ok] = 2.0 * tri[ok] / (deg[ok] * (deg[ok] - 1))
    return out


def clustering_coefficient(graph: Graph, node: int) -> float:
    if not 0 <= node < graph.n:
        raise ContractError(f"node {node} outside [0, {graph.n})")
    nb = graph.neighbors(node)
    d = len(nb)
    if d < 2:
        return 0.0
    nbset = np.zeros(graph.n, dtype=bool)
    nbset[nb] = True
    links = sum(int(nbset[graph.neighbors(u)].sum()) for u in nb) / 2
    return 2.0 * links / (d * (d - 1))


def enumerate_motifs(graph: Graph, catalog=MOTIF_KINDS, budget: float = DEFAULT_MOTIF_BUDGET) -> dict[str, np.ndarray]:
    """Exact (non-induced) motif instances as rows of canonical edge ids.

    An instance is identified by its edge set, so K4 holds 4 triangles,
    3 four-cycles, 6 chordal four-cycles and one 4-clique.
    """
    unknown = set(catalog) - set(MOTIF_KINDS)
    if unknown:
        raise ContractError(f"unknown motif kinds {sorted(unknown)}")
    dbar = 2.0 * graph.m / graph.n if graph.n else 0.0
    cost = graph.n * dbar ** 3
    if cost > budget:
        raise ResourceError(f"motif enumeration cost n*d^3={cost:.3g} exceeds budget {budget:.3g}")

    nbrs = [set(graph.neighbors(u).tolist()) for u in range(graph.n)]
    eid = {}
    for i, (u, v) in enumerate(graph.edges.tolist()):
        eid[(u, v)] = i

    def e(a, b):
        return eid[(a, b) if a < b else (b, a)]

    found: dict[str, list] = {kind: [] for kind in catalog}
    want = set(catalog)
    if want & {"triangle", "4-clique", "chordal-4-cycle"}:
        for u, v in graph.edges.tolist():
            common = sorted(nbrs[u] & nbrs[v])
            if "chordal-4-cycle" in want:
                for i, a in enumerate(common):
                    for b in common[i + 1:]:
                        found["chordal-4-cycle"].append(sorted((e(u, v), e(u, a), e(v, a), e(u, b), e(v, b))))
            for w in common:
                if w <= v:
                    continue
                if "triangle" in want:
                    found["triangle"].append(sorted((e(u, v), e(u, w), e(v, w))))
                if "4-clique" in want:
                    for x in sorted(nbrs[u] & nbrs[v] & nbrs[w]):
                        if x > w:
                            found["4-clique"].append(sorted((e(u, v), e(u, w), e(u, x), e(v, w), e(v, x), e(w, x))))
    if "4-cycle" in want:
        for u in range(graph.n):
            # u is the smallest node of the cycle and w its opposite corner
            two_hop: dict[int, list[int]] = {}
            for v in sorted(nbrs[u]):
                if v <= u:
                    continue
                for w in nbrs[v]:
                    if w > u:
                        two_hop.setdefault(w, []).append(v)
            for w in sorted(two_hop):
                mids = two_hop[w]
                for i, v in enumerate(mids):
                    for x in mids[i + 1:]:
                        found["4-cycle"].append(sorted((e(u, v), e(v, w), e(w, x), e(u, x))))
    width = {"triangle": 3, "4-cycle": 4, "chordal-4-cycle": 5, "4-clique": 6}
    return {kind: np.array(sorted(found[kind]), dtype=np.int64).reshape(-1, width[kind]) for kind in catalog}


def apply_edge_mask(graph: Graph, keep) -> Graph:
    keep = np.asarray(keep, dtype=bool)
    if keep.shape != (graph.m,):
        raise ContractError(f"mask length {keep.shape} does not match edge count {graph.m}")
    return Graph.from_edges(graph.n, graph.edges[keep], graph.features)


# ---------------------------------------------------------------- file formats

def _read_edge_file(path):
    edges = []
    declared = None
    with open(path, newline="") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0].rstrip(":") == "nodes":
                    try:
                        declared = int(parts[1])
                    except ValueError:
                        raise ParseError(f"bad node-count header {line!r}", str(path), lineno) from None
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"expected 'u v', got {line!r}", str(path), lineno)
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise ParseError(f"non-integer node id in {line!r}", str(path), lineno) from None
            if u < 0 or v < 0:
                raise ParseError(f"negative node id in {line!r}", str(path), lineno)
            edges.append((u, v, lineno))
    return edges, declared


def _read_csv(path, header_prefix):
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [h.strip() for h in rows[0][:len(header_prefix)]] != header_prefix:
        raise ParseError(f"header must start with {','.join(header_prefix)}", str(path), 1)
    return rows[0], [(i + 2, r) for i, r in enumerate(rows[1:]) if any(c.strip() for c in r)]


def load_graph(edge_path, feature_path=None, label_path=None, num_nodes: int | None = None):
    """Read the edge list plus optional features/labels files.

    The node count is ``num_nodes`` if given, else a ``# nodes N`` header in
    the edge file, else one past the largest id seen in any file.  Returns
    ``(graph, labels)``; ``labels`` is None without a label file.
    """
    raw_edges, declared = _read_edge_file(edge_path)
    if num_nodes is not None:
        declared = int(num_nodes)

    feat_rows = []
    dim = 1
    if feature_path is not None:
        header, feat_rows = _read_csv(feature_path, ["node"])
        dim = len(header) - 1
        if dim < 1:
            raise ParseError("features file has no feature columns", str(feature_path), 1)
    label_rows = []
    if label_path is not None:
        _, label_rows = _read_csv(label_path, ["node", "label", "known"])

    def check_id(node, path, lineno):
        if declared is not None and node >= declared:
            raise RangeError(f"{path}:{lineno}: node id {node} >= declared count {declared}")

    max_id = -1
    for u, v, lineno in raw_edges:
        check_id(max(u, v), edge_path, lineno)
        max_id = max(max_id, u, v)

    parsed_feats = []
    for lineno, r in feat_rows:
        if len(r) != dim + 1:
            raise ParseError(f"expected {dim + 1} columns, got {len(r)}", str(feature_path), lineno)
        try:
            node = int(r[0])
            vals = [float(c) for c in r[1:]]
        except ValueError:
            raise ParseError("non-numeric feature row", str(feature_path), lineno) from None
        if node < 0:
            raise ParseError("negative node id", str(feature_path), lineno)
        check_id(node, feature_path, lineno)
        max_id = max(max_id, node)
        parsed_feats.append((node, vals))

    parsed_labels = []
    for lineno, r in label_rows:
        if len(r) != 3:
            raise ParseError(f"expected 3 columns, got {len(r)}", str(label_path), lineno)
        try:
            node = int(r[0])
            lab = int(r[1]) if r[1].strip() else -1
            known = int(r[2])
        except ValueError:
            raise ParseError("non-integer label row", str(label_path), lineno) from None
        if known not in (0, 1) or node < 0 or (known and lab < 0):
            raise ParseError("invalid label row", str(label_path), lineno)
        check_id(node, label_path, lineno)
        max_id = max(max_id, node)
        parsed_labels.append((node, lab, known))

    n = declared if declared is not None else max_id + 1
    if feature_path is None:
        x = np.ones((n, 1))
    else:
        x = np.zeros((n, dim))
        for node, vals in parsed_feats:
            x[node] = vals
    graph = Graph.from_edges(n, [(u, v) for u, v, _ in raw_edges], x)

    labels = None
    if label_path is not None:
        lab = np.full(n, -1, dtype=np.int64)
        known = np.zeros(n, dtype=bool)
        for node, c, k in parsed_labels:
            lab[node] = c
            known[node] = bool(k)
        classes = int(lab.max()) + 1 if (lab >= 0).any() else 0
        labels = NodeLabels(lab, known, classes)
    log.info("loaded graph n=%d m=%d from %s", graph.n, graph.m, edge_path)
    return graph, labels


def write_edge_list(path, graph: Graph):
    lines = [f"# nodes {graph.n}"] + [f"{u} {v}" for u, v in graph.edges.tolist()]
    Path(path).write_text("\n".join(lines) + "\n")


def write_features(path, graph: Graph):
    dim = graph.features.shape[1]
    lines = ["node," + ",".join(f"f{j}" for j in range(dim))]
    for i, row in enumerate(graph.features.tolist()):
        lines.append(f"{i}," + ",".join(repr(v) for v in row))
    Path(path).write_text("\n".join(lines) + "\n")


def write_labels(path, labels: NodeLabels):
    lines = ["node,label,known"]
    for i, (c, k) in enumerate(zip(labels.label.tolist(), labels.known_mask.tolist())):
        lines.append(f"{i},{'' if c < 0 else c},{int(k)}")
    Path(path).write_text("\n".join(lines) + "\n")
