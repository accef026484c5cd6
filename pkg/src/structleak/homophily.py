"""Node-level homophily ratios: proximity (adjacency) and structure-role (degree).

A ratio is *absent* when its denominator set is empty.  Vector forms return
``(values, present)`` pairs; ``values`` is 0.0 wherever ``present`` is False
and callers must consult the mask.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError
from .graph import Graph, NodeLabels

LABEL_MODES = ("known-only", "pseudo-augmented")


@dataclass(frozen=True)
class HomophilyConfig:
    degree_threshold: int = 5
    label_mode: str = "known-only"

    def __post_init__(self):
        if self.degree_threshold < 0:
            raise ContractError("degree_threshold must be non-negative")
        if self.label_mode not in LABEL_MODES:
            raise ContractError(f"label_mode must be one of {LABEL_MODES}")


def effective_labels(labels: NodeLabels, cfg: HomophilyConfig, pseudo=None):
    """Labels used for counting and the mask of nodes whose label counts.

    In pseudo-augmented mode ``pseudo`` supplies a class for every node; known
    nodes keep their true label.
    """
    if cfg.label_mode == "known-only":
        lab = np.where(labels.known_mask, labels.label, -1)
        return lab, labels.known_mask.copy()
    if pseudo is None:
        raise ContractError("pseudo-augmented mode needs pseudo-labels")
    pseudo = np.asarray(pseudo, dtype=np.int64)
    if pseudo.shape != (labels.n,):
        raise ContractError("pseudo-labels must cover every node")
    lab = np.where(labels.known_mask, labels.label, pseudo)
    if np.any(lab < 0) or np.any(lab >= labels.class_count):
        raise ContractError("pseudo-labels outside class range")
    return lab, np.ones(labels.n, dtype=bool)


def prox_ratios(graph: Graph, lab: np.ndarray, counted: np.ndarray):
    rows = graph.rows
    cols = graph.indices
    use = counted[cols]
    denom = np.bincount(rows, weights=use, minlength=graph.n)
    same = np.bincount(rows, weights=use & (lab[cols] == lab[rows]), minlength=graph.n)
    present = counted & (denom > 0)
    vals = np.zeros(graph.n)
    vals[present] = same[present] / denom[present]
    return vals, present


def role_ratios(degrees: np.ndarray, lab: np.ndarray, counted: np.ndarray, theta: int, class_count: int):
    """Structure-role ratios via per-class degree histograms (exact integer counts)."""
    degrees = np.asarray(degrees, dtype=np.int64)
    n = len(degrees)
    top = int(degrees.max()) if n else 0
    # prefix[c, d + 1] = number of counted nodes of class c with degree <= d
    prefix = np.zeros((class_count, top + 2), dtype=np.int64)
    for c in range(class_count):
        sel = counted & (lab == c)
        prefix[c, 1:] = np.cumsum(np.bincount(degrees[sel], minlength=top + 1))
    hi = np.minimum(degrees + theta, top) + 1
    lo = np.maximum(degrees - theta, 0)
    window = prefix[:, hi] - prefix[:, lo]
    total = window.sum(axis=0) - counted
    safe_lab = np.where(lab >= 0, lab, 0)
    same = window[safe_lab, np.arange(n)] - counted
    present = counted & (total > 0)
    vals = np.zeros(n)
    vals[present] = same[present] / total[present]
    return vals, present


def _single(graph, labels, node, cfg, pseudo):
    if not 0 <= node < graph.n:
        raise ContractError(f"node {node} outside [0, {graph.n})")
    lab, counted = effective_labels(labels, cfg, pseudo)
    if not counted[node]:
        raise ContractError(f"label of node {node} unavailable in {cfg.label_mode} mode")
    return lab, counted


def prox_ghratio(graph: Graph, labels: NodeLabels, node: int, cfg: HomophilyConfig = HomophilyConfig(), pseudo=None):
    """Share of counted neighbors carrying the node's label; None if there are none."""
    lab, counted = _single(graph, labels, node, cfg, pseudo)
    nb = graph.neighbors(node)
    nb = nb[counted[nb]]
    if not len(nb):
        return None
    return float(np.count_nonzero(lab[nb] == lab[node]) / len(nb))


def role_ghratio(graph: Graph, labels: NodeLabels, node: int, cfg: HomophilyConfig = HomophilyConfig(), pseudo=None):
    lab, counted = _single(graph, labels, node, cfg, pseudo)
    deg = graph.degrees
    similar = counted & (np.abs(deg - deg[node]) <= cfg.degree_threshold)
    similar[node] = False
    total = np.count_nonzero(similar)
    if total == 0:
        return None
    return float(np.count_nonzero(similar & (lab == lab[node])) / total)


def class_frequencies(labels: NodeLabels) -> np.ndarray:
    known = labels.label[labels.known_mask]
    if not len(known):
        raise ContractError("no known labels")
    return np.bincount(known, minlength=labels.class_count) / len(known)


def prior_baseline(labels: NodeLabels, node: int, label: int | None = None) -> float:
    """Empirical frequency of the node's class among the known labels.

    ``label`` overrides the node's own label (used with pseudo-labels).
    """
    freq = class_frequencies(labels)
    c = labels.label[node] if label is None else label
    if c < 0:
        raise ContractError(f"node {node} has no label")
    return float(freq[c])


def priors_for(labels: NodeLabels, lab: np.ndarray) -> np.ndarray:
    freq = class_frequencies(labels)
    out = np.zeros(len(lab))
    ok = lab >= 0
    out[ok] = freq[lab[ok]]
    return out


@dataclass
class HomophilyReport:
    theta: int
    prox: np.ndarray
    prox_present: np.ndarray
    role: np.ndarray
    role_present: np.ndarray
    prior: np.ndarray
    prior_present: np.ndarray
    class_frequency: np.ndarray
    summary: dict = field(default_factory=dict)

    def _opt(self, vals, present):
        return [float(v) if p else None for v, p in zip(vals.tolist(), present.tolist())]

    def to_dict(self) -> dict:
        prox = self._opt(self.prox, self.prox_present)
        role = self._opt(self.role, self.role_present)
        prior = self._opt(self.prior, self.prior_present)
        nodes = [{"id": i, "prox": a, "role": b, "prior": c} for i, (a, b, c) in enumerate(zip(prox, role, prior))]
        return {"theta": self.theta, "nodes": nodes, "class_frequency": self.class_frequency.tolist(),
                "summary": self.summary}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["node", "prox", "role", "prior"])
        for row in self.to_dict()["nodes"]:
            w.writerow([row["id"]] + ["" if row[k] is None else repr(row[k]) for k in ("prox", "role", "prior")])
        return buf.getvalue()


def _summarize(vals, present):
    v = vals[present]
    if not len(v):
        return {"count": 0, "mean": None, "q1": None, "median": None, "q3": None}
    q1, med, q3 = np.quantile(v, [0.25, 0.5, 0.75])
    return {"count": int(len(v)), "mean": float(v.mean()), "q1": float(q1), "median": float(med), "q3": float(q3)}


def audit(graph: Graph, labels: NodeLabels, cfg: HomophilyConfig = HomophilyConfig(), pseudo=None) -> HomophilyReport:
    if labels.n != graph.n:
        raise ContractError("labels and graph disagree on node count")
    lab, counted = effective_labels(labels, cfg, pseudo)
    prox, prox_p = prox_ratios(graph, lab, counted)
    role, role_p = role_ratios(graph.degrees, lab, counted, cfg.degree_threshold, labels.class_count)
    prior = priors_for(labels, np.where(counted, lab, -1))
    summary = {"prox": _summarize(prox, prox_p), "role": _summarize(role, role_p)}
    return HomophilyReport(cfg.degree_threshold, prox, prox_p, role, role_p, prior, counted.copy(),
                           class_frequencies(labels), summary)
