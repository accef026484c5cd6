"""Attack metrics, distribution distances, motif keep report and downstream utility."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, replace

import numpy as np
from scipy.spatial.distance import pdist
from scipy.stats import rankdata

from .attack import AttackConfig, Prediction, baseline_attack, infer, train_attack
from .errors import ContractError
from .graph import Graph, NodeLabels, apply_edge_mask, clustering_coefficients, enumerate_motifs, MOTIF_KINDS

BASELINE_DEFENSES = ("random-drop", "degree-drop")
WORST_CASE_ATTACKS = ("full", "prox", "majority-neighbor")


@dataclass
class AttackMetrics:
    accuracy: float
    auc: float | None


def roc_auc(scores: np.ndarray, truth: np.ndarray) -> float | None:
    """Mann-Whitney AUC of ``scores`` for the positive class; None if only one class is present."""
    truth = np.asarray(truth, dtype=bool)
    n_pos = int(truth.sum())
    n_neg = len(truth) - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    ranks = rankdata(scores)
    u = ranks[truth].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u / (n_pos * n_neg))


def attack_metrics(dist: np.ndarray, labels: NodeLabels) -> AttackMetrics:
    """Accuracy over hidden nodes and, for two classes, AUC of the class-1 confidence."""
    dist = np.asarray(dist, dtype=np.float64)
    if dist.shape != (labels.n, labels.class_count):
        raise ContractError(f"prediction shape {dist.shape} does not cover {labels.n} nodes")
    h = labels.hidden
    if not len(h):
        raise ContractError("no hidden nodes to score")
    truth = labels.label[h]
    acc = float((np.argmax(dist[h], axis=1) == truth).mean())
    auc = roc_auc(dist[h, 1], truth == 1) if labels.class_count == 2 else None
    return AttackMetrics(acc, auc)


def median_bandwidth(a, b) -> float:
    pooled = np.concatenate([np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)])
    if len(pooled) < 2:
        return 1.0
    med = float(np.median(pdist(pooled[:, None])))
    return med if med > 0 else 1.0


def mmd(a, b, bandwidth="median") -> float:
    """Biased squared MMD between two 1-d samples under an RBF kernel.

    ``bandwidth`` is a positive sigma or "median" for the median pairwise
    distance of the pooled sample (1 when that median is zero).
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if not len(a) or not len(b):
        raise ContractError("mmd needs two nonempty samples")
    sigma = median_bandwidth(a, b) if bandwidth == "median" else float(bandwidth)
    if not sigma > 0:
        raise ContractError("bandwidth must be positive")
    g = -0.5 / sigma ** 2

    def kmean(x, y):
        return float(np.exp(g * (x[:, None] - y[None, :]) ** 2).mean())

    return kmean(a, a) + kmean(b, b) - 2.0 * kmean(a, b)


def property_change(original: Graph, published: Graph, bandwidth="median") -> tuple[float, float]:
    if original.n != published.n:
        raise ContractError("graphs must share the node set")
    return (mmd(original.degrees, published.degrees, bandwidth),
            mmd(clustering_coefficients(original), clustering_coefficients(published), bandwidth))


def motif_keep_report(graph: Graph, keep_prob, catalog=MOTIF_KINDS, budget: float | None = None) -> dict:
    """Mean keep probability over the edges that take part in each motif kind (None if no instance)."""
    t = np.asarray(getattr(keep_prob, "keep", keep_prob), dtype=np.float64)
    if t.shape != (graph.m,):
        raise ContractError(f"{len(t)} probabilities for {graph.m} edges")
    kw = {} if budget is None else {"budget": budget}
    out = {}
    for kind, rows in enumerate_motifs(graph, catalog, **kw).items():
        out[kind] = float(t[np.unique(rows)].mean()) if rows.size else None
    return out


def split_mask(n: int, labels: np.ndarray, class_count: int, ratio: float, seed: int, tries: int = 10):
    """Random train mask of size round(ratio*n) that sees every class; resampled up to ``tries`` times."""
    if not 0 < ratio < 1:
        raise ContractError("split ratio must lie in (0, 1)")
    rng = np.random.default_rng(seed)
    size = max(1, int(round(ratio * n)))
    for _ in range(tries):
        mask = np.zeros(n, dtype=bool)
        mask[rng.choice(n, size=size, replace=False)] = True
        if len(np.unique(labels[mask])) == class_count:
            return mask
    raise ContractError(f"no train split covering all {class_count} classes after {tries} draws")


def utility_eval(published: Graph, utility: NodeLabels, split_ratio: float = 0.1, seed: int = 0,
                 cfg: AttackConfig = AttackConfig()) -> float:
    """Test accuracy of a fresh 2-layer GIN classifier trained on a seeded split of ``published``."""
    if utility.n != published.n:
        raise ContractError("utility labels and graph disagree on node count")
    train = split_mask(utility.n, utility.label, utility.class_count, split_ratio, seed)
    task = NodeLabels(utility.label, train, utility.class_count)
    model, _ = train_attack(published, task, replace(cfg, variant="prox", seed=seed))
    pred = infer(model, published, task)
    test = ~train
    return float((pred.hard[test] == utility.label[test]).mean())


def run_attack(kind: str, graph: Graph, labels: NodeLabels, cfg: AttackConfig) -> Prediction:
    if kind == "majority-neighbor":
        return baseline_attack(kind, graph, labels, cfg)
    model, _ = train_attack(graph, labels, replace(cfg, variant=kind))
    return infer(model, graph, labels)


def worst_case_attack(graph: Graph, labels: NodeLabels, cfg: AttackConfig,
                      kinds=WORST_CASE_ATTACKS) -> tuple[str, AttackMetrics, dict]:
    """Retrain every attack in ``kinds`` on ``graph``; return the one with the highest hidden-node accuracy.

    The evaluator picks with ground truth, so this upper-bounds what an
    adversary choosing among the same attacks could reach.
    """
    results = {k: attack_metrics(run_attack(k, graph, labels, cfg).dist, labels) for k in kinds}
    best = max(kinds, key=lambda k: (results[k].accuracy, -kinds.index(k)))
    return best, results[best], {k: v.accuracy for k, v in results.items()}


def random_drop(graph: Graph, retention: float, seed: int) -> np.ndarray:
    """Keep mask with exactly round(retention*m) uniformly chosen edges."""
    if not 0 <= retention <= 1:
        raise ContractError("retention must lie in [0, 1]")
    keep = np.zeros(graph.m, dtype=bool)
    keep[np.random.default_rng(seed).permutation(graph.m)[:int(round(retention * graph.m))]] = True
    return keep


def degree_drop(graph: Graph, retention: float) -> np.ndarray:
    """Drop the edges with the largest endpoint degree sum first (ties by edge id)."""
    if not 0 <= retention <= 1:
        raise ContractError("retention must lie in [0, 1]")
    d = graph.degrees
    score = d[graph.edges[:, 0]] + d[graph.edges[:, 1]]
    order = np.lexsort((np.arange(graph.m), score))
    keep = np.zeros(graph.m, dtype=bool)
    keep[order[:int(round(retention * graph.m))]] = True
    return keep


def baseline_mask(kind: str, graph: Graph, retention: float, seed: int) -> np.ndarray:
    if kind == "random-drop":
        return random_drop(graph, retention, seed)
    if kind == "degree-drop":
        return degree_drop(graph, retention)
    raise ContractError(f"unknown baseline defense {kind!r}; choose from {BASELINE_DEFENSES}")


@dataclass
class EvalReport:
    attack_accuracy: float
    attack_auc: float | None
    mmd_degree: float
    mmd_clustering: float
    motif_avg_prob: dict | None
    utility_accuracy: float | None
    retention: float
    worst_attack: str
    attack_accuracies: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def __post_init__(self):
        if not 0 <= self.attack_accuracy <= 1:
            raise ContractError("accuracy outside [0, 1]")
        if self.attack_auc is not None and not 0 <= self.attack_auc <= 1:
            raise ContractError("auc outside [0, 1]")
        if min(self.mmd_degree, self.mmd_clustering) < -1e-12:
            raise ContractError("negative MMD")

    def to_dict(self) -> dict:
        return asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"


def evaluate(original: Graph, published: Graph, private: NodeLabels, utility: NodeLabels | None = None,
             keep_prob=None, cfg: AttackConfig = AttackConfig(), seed: int = 0, bandwidth="median",
             split_ratio: float = 0.1, config: dict | None = None) -> EvalReport:
    """Full evaluation of one published graph against its original."""
    best, metrics, accs = worst_case_attack(published, private, replace(cfg, seed=seed))
    mmd_d, mmd_c = property_change(original, published, bandwidth)
    motifs = motif_keep_report(original, keep_prob) if keep_prob is not None else None
    util = utility_eval(published, utility, split_ratio, seed, cfg) if utility is not None else None
    retention = published.m / original.m if original.m else 1.0
    return EvalReport(metrics.accuracy, metrics.auc, mmd_d, mmd_c, motifs, util, retention, best, accs,
                      dict(config or {}))


def matched_random_drop(graph: Graph, labels: NodeLabels, target_accuracy: float, cfg: AttackConfig, seed: int,
                        grid=(0.9, 0.75, 0.6, 0.45, 0.3, 0.15), original_accuracy: float | None = None
                        ) -> tuple[float, np.ndarray, float | None]:
    """Random-drop retention whose worst-case attack accuracy is closest to ``target_accuracy``.

    Walks the retention grid downwards and stops once the accuracy falls
    below the target; returns (retention, keep mask, accuracy).  Passing the
    accuracy on the untouched graph lets retention 1 compete without a retrain.
    """
    best = (1.0, np.ones(graph.m, dtype=bool), original_accuracy)
    best_gap = np.inf if original_accuracy is None else abs(original_accuracy - target_accuracy)
    if original_accuracy is not None and original_accuracy <= target_accuracy:
        return best
    for r in grid:
        keep = random_drop(graph, r, seed)
        _, m, _ = worst_case_attack(apply_edge_mask(graph, keep), labels, replace(cfg, seed=seed))
        gap = abs(m.accuracy - target_accuracy)
        if gap < best_gap:
            best, best_gap = (r, keep, m.accuracy), gap
        if m.accuracy < target_accuracy:
            break
    return best
