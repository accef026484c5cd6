"""Dual-channel private-attribute inference attack.

The proximity channel runs a 2-layer GIN over the whole graph; the
structure-role channel runs a second GIN over every node's k-hop ego network
and mean-pools it.  A router mixes the two class distributions per node with
weights taken from the node's homophily ratios, estimated from pseudo-labels
and refreshed during training.
"""
from __future__ import annotations

import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .errors import ContractError
from .graph import Graph, NodeLabels, Subgraph, ego_networks, normalized_laplacian
from .homophily import (HomophilyConfig, class_frequencies, effective_labels, priors_for, prox_ratios,
                        role_ratios)
from .kernel import Adjacency, OptimizerState, ParamSet, adamw_step, gnn_layer, init_gin, linear, nll
from .kernel import tensor as T

log = logging.getLogger(__name__)

VARIANTS = ("full", "prox", "role", "equal")
ROLE_INPUTS = ("structure", "features")


@dataclass(frozen=True)
class AttackConfig:
    hidden: int = 64
    hop_count: int = 2
    theta: int = 5
    lr: float = 1e-3
    weight_decay: float = 5e-4
    epochs: int = 300
    update_interval: int = 10
    variant: str = "full"
    role_input: str = "structure"
    seed: int = 0

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ContractError(f"variant must be one of {VARIANTS}")
        if self.role_input not in ROLE_INPUTS:
            raise ContractError(f"role_input must be one of {ROLE_INPUTS}")
        if self.hop_count < 1 or self.hidden < 1 or self.epochs < 0 or self.update_interval < 1:
            raise ContractError("hop_count, hidden, update_interval must be >= 1 and epochs >= 0")


class EgoCache:
    """All k-hop ego networks of a graph packed as one block-diagonal graph.

    ``edge_ids`` maps every packed CSR entry to the parent's canonical edge,
    so relaxed or masked parent weights can be gathered without re-extracting
    subgraphs.
    """

    def __init__(self, graph: Graph, k: int, subgraphs: list[Subgraph] | None = None):
        subs = ego_networks(graph, k) if subgraphs is None else subgraphs
        self.graph = graph
        self.k = k
        self.sizes = np.array([s.size for s in subs], dtype=np.int64)
        offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.offsets = offsets
        self.node_orig = np.concatenate([s.local_nodes for s in subs]) if subs else np.zeros(0, np.int64)
        self.indices = np.concatenate([s.indices + offsets[i] for i, s in enumerate(subs)]) if subs else \
            np.zeros(0, np.int64)
        self.edge_ids = np.concatenate([s.edge_ids for s in subs]) if subs else np.zeros(0, np.int64)
        row_counts = np.concatenate([np.diff(s.indptr) for s in subs]) if subs else np.zeros(0, np.int64)
        self.indptr = np.concatenate([[0], np.cumsum(row_counts)]).astype(np.int64)
        self.pool_indptr = offsets.astype(np.int64)
        self.pool_indices = np.arange(offsets[-1], dtype=np.int64)
        self.pool_weights = np.repeat(1.0 / np.maximum(self.sizes, 1), self.sizes)

    def edge_mask_of(self, node: int) -> np.ndarray:
        """Canonical edge ids inside the ego network of ``node``."""
        lo, hi = self.indptr[self.offsets[node]], self.indptr[self.offsets[node + 1]]
        return np.unique(self.edge_ids[lo:hi])


class AttackModel:
    def __init__(self, cfg: AttackConfig, feature_dim: int, class_count: int, n: int):
        self.cfg = cfg
        self.feature_dim = feature_dim
        self.class_count = class_count
        self.role_dim = 1 if cfg.role_input == "structure" else feature_dim
        h = cfg.hidden
        self.params = ParamSet(cfg.seed)
        init_gin(self.params, "prox.gin0", feature_dim, h)
        init_gin(self.params, "prox.gin1", h, h)
        init_gin(self.params, "role.gin0", self.role_dim, h)
        init_gin(self.params, "role.gin1", h, h)
        self.params.linear("prox.head", h, class_count, zero=True)
        self.params.linear("role.head", h, class_count, zero=True)
        self.ghr_prox = np.full(n, 0.5)
        self.ghr_role = np.full(n, 0.5)
        self.prox_present = np.ones(n, dtype=bool)
        self.role_present = np.ones(n, dtype=bool)
        self.fallback_prior = np.full(n, 0.5)
        # Sum aggregation grows activations with degree; inputs of both channels
        # are divided by (1 + mean degree of the training graph) to keep early
        # logits O(1).  Fixed once set so relaxed graphs see the same scaling.
        self.input_scale = 1.0
        self._cache: EgoCache | None = None
        if cfg.variant != "full":
            wp, wr = {"prox": (1.0, 0.0), "role": (0.0, 1.0), "equal": (0.5, 0.5)}[cfg.variant]
            self.ghr_prox[:] = wp
            self.ghr_role[:] = wr

    @property
    def n(self):
        return len(self.ghr_prox)

    def ego_cache(self, graph: Graph) -> EgoCache:
        if self._cache is None or self._cache.graph is not graph or self._cache.k != self.cfg.hop_count:
            self._cache = EgoCache(graph, self.cfg.hop_count)
        return self._cache

    def routing_weights(self) -> tuple[np.ndarray, np.ndarray]:
        return routing_weights(self.ghr_prox, self.prox_present, self.ghr_role, self.role_present,
                               self.fallback_prior)

    def uses(self) -> tuple[bool, bool]:
        wp, wr = self.routing_weights()
        return bool(np.any(wp > 0)), bool(np.any(wr > 0))

    # persistence -------------------------------------------------------
    def sidecar(self) -> dict:
        return {"config": asdict(self.cfg), "feature_dim": self.feature_dim, "class_count": self.class_count,
                "k": self.cfg.hop_count, "theta": self.cfg.theta, "input_scale": self.input_scale,
                "routing_state": {"prox": [float(v) if p else None for v, p in zip(self.ghr_prox, self.prox_present)],
                                  "role": [float(v) if p else None for v, p in zip(self.ghr_role, self.role_present)],
                                  "fallback_prior": self.fallback_prior.tolist()}}

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "model.json").write_text(self.params.to_json())
        (d / "model_meta.json").write_text(json.dumps(self.sidecar(), indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "AttackModel":
        d = Path(directory)
        meta = json.loads((d / "model_meta.json").read_text())
        cfg = AttackConfig(**meta["config"])
        rs = meta["routing_state"]
        model = cls(cfg, meta["feature_dim"], meta["class_count"], len(rs["prox"]))
        model.params.load_values(ParamSet.from_json((d / "model.json").read_text()).values())
        for name, vals in (("prox", rs["prox"]), ("role", rs["role"])):
            present = np.array([v is not None for v in vals])
            arr = np.array([0.0 if v is None else v for v in vals])
            setattr(model, f"ghr_{name}", arr)
            setattr(model, f"{name}_present", present)
        model.fallback_prior = np.array(rs["fallback_prior"])
        model.input_scale = float(meta["input_scale"])
        return model


def new_attack_model(graph: Graph, labels: NodeLabels, cfg: AttackConfig) -> AttackModel:
    model = AttackModel(cfg, graph.features.shape[1], labels.class_count, graph.n)
    model.input_scale = 1.0 / (1.0 + float(graph.degrees.mean()))
    return model


def routing_weights(prox, prox_present, role, role_present, prior):
    """Per-node mixing weights normalized to sum to one.

    Absent ratios are replaced by the node's prior; if both resulting
    weights are zero the node falls back to an even split.
    """
    a = np.where(prox_present, prox, prior)
    b = np.where(role_present, role, prior)
    s = a + b
    zero = s <= 0
    wp = np.where(zero, 0.5, a / np.where(zero, 1.0, s))
    return wp, 1.0 - wp


def _gin_encoder(h, adj, params, prefix):
    h = gnn_layer("gin", h, adj, params, prefix + ".gin0")
    return gnn_layer("gin", h, adj, params, prefix + ".gin1")


def prox_channel(graph: Graph, model: AttackModel, edge_weights=None):
    """Per-node logits from the GIN run over the whole graph."""
    if graph.features.shape[1] != model.feature_dim:
        raise ContractError("feature dimension does not match the encoder")
    h = _gin_encoder(graph.features * model.input_scale, Adjacency.of(graph, edge_weights), model.params, "prox")
    return linear(h, model.params, "prox.head")


def role_inputs(graph: Graph, model: AttackModel) -> np.ndarray:
    if model.cfg.role_input == "structure":
        return np.full((graph.n, 1), model.input_scale)
    return graph.features * model.input_scale


def role_channel(graph: Graph, model: AttackModel, edge_weights=None, cache: EgoCache | None = None):
    """Per-node logits from mean-pooled GIN embeddings of each ego network.

    ``edge_weights`` (per canonical parent edge) reweight edges inside the
    cached ego networks; node sets stay those of the unweighted graph.
    """
    cache = model.ego_cache(graph) if cache is None else cache
    x = role_inputs(graph, model)[cache.node_orig]
    w = None if edge_weights is None else T.take(T.as_tensor(edge_weights), cache.edge_ids)
    h = _gin_encoder(x, Adjacency(cache.indptr, cache.indices, w), model.params, "role")
    pooled = T.propagate(cache.pool_indptr, cache.pool_indices, h, cache.pool_weights, n_out=graph.n)
    return linear(pooled, model.params, "role.head")


def route(prox_logits, role_logits, routing_state, priors=None) -> np.ndarray:
    """Mix the two channels' softmax outputs per node.

    ``routing_state`` is ``(prox, prox_present, role, role_present)``; absent
    ratios need ``priors``.
    """
    prox, prox_p, role, role_p = (np.asarray(v) for v in routing_state)
    if priors is None:
        if not (prox_p.all() and role_p.all()):
            raise ContractError("absent routing ratio and no prior available")
        priors = np.zeros(len(prox))
    wp, wr = routing_weights(prox, prox_p.astype(bool), role, role_p.astype(bool), np.asarray(priors))
    pa = T.softmax(T.as_tensor(prox_logits)).value
    pb = T.softmax(T.as_tensor(role_logits)).value
    if pa.shape != pb.shape or pa.shape[0] != len(wp):
        raise ContractError("routing inputs disagree in shape")
    return wp[:, None] * pa + wr[:, None] * pb


def forward_log_probs(graph: Graph, model: AttackModel, edge_weights=None, cache=None):
    """log Z_hat as a Tensor; channels with zero weight everywhere are skipped."""
    wp, wr = model.routing_weights()
    use_p, use_r = bool(np.any(wp > 0)), bool(np.any(wr > 0))
    lp = T.log_softmax(prox_channel(graph, model, edge_weights)) if use_p else None
    lr = T.log_softmax(role_channel(graph, model, edge_weights, cache)) if use_r else None
    if lr is None:
        return lp
    if lp is None:
        return lr
    return T.log_mix(lp, lr, wp[:, None], wr[:, None])


def pseudo_labels(labels: NodeLabels, z_hat: np.ndarray) -> np.ndarray:
    return np.where(labels.known_mask, labels.label, np.argmax(z_hat, axis=1))


def update_routing(model: AttackModel, graph: Graph, labels: NodeLabels, cfg: HomophilyConfig | None = None,
                   z_hat: np.ndarray | None = None) -> np.ndarray:
    """Recompute routing ratios from pseudo-labels on ``graph``; returns the pseudo-labels."""
    if model.cfg.variant != "full":
        return pseudo_labels(labels, z_hat) if z_hat is not None else labels.label.copy()
    if cfg is None:
        cfg = HomophilyConfig(model.cfg.theta, "pseudo-augmented")
    if z_hat is None:
        z_hat = np.exp(forward_log_probs(graph, model).value)
    pseudo = pseudo_labels(labels, z_hat)
    lab, counted = effective_labels(labels, HomophilyConfig(cfg.degree_threshold, "pseudo-augmented"), pseudo)
    model.ghr_prox, model.prox_present = prox_ratios(graph, lab, counted)
    model.ghr_role, model.role_present = role_ratios(graph.degrees, lab, counted, cfg.degree_threshold,
                                                     labels.class_count)
    model.fallback_prior = priors_for(labels, lab)
    return pseudo


def attack_step(model: AttackModel, graph: Graph, labels: NodeLabels, opt: OptimizerState,
                edge_weights=None, cache=None):
    """One AdamW step on the known-label cross-entropy; returns (loss, z_hat)."""
    model.params.zero_grad()
    logp = forward_log_probs(graph, model, edge_weights, cache)
    loss = nll(logp, labels.label, labels.known_mask)
    loss.backward()
    adamw_step(model.params, model.params.grads(), opt)
    return loss.item(), np.exp(logp.value)


def train_attack(graph: Graph, labels: NodeLabels, cfg: AttackConfig = AttackConfig()):
    """Fit the attack on the known labels; returns (model, loss history)."""
    labels.require_each_class_known()
    if labels.n != graph.n:
        raise ContractError("labels and graph disagree on node count")
    model = new_attack_model(graph, labels, cfg)
    opt = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    hcfg = HomophilyConfig(cfg.theta, "pseudo-augmented")
    history = []
    for epoch in range(1, cfg.epochs + 1):
        loss, z_hat = attack_step(model, graph, labels, opt)
        history.append(loss)
        if epoch % cfg.update_interval == 0:
            update_routing(model, graph, labels, hcfg, z_hat)
    log.debug("attack trained: variant=%s final loss=%s", cfg.variant, history[-1] if history else None)
    return model, history


@dataclass
class Prediction:
    dist: np.ndarray
    hard: np.ndarray
    known_mask: np.ndarray

    def to_csv(self) -> str:
        c = self.dist.shape[1]
        lines = ["node,pred," + ",".join(f"conf_{j}" for j in range(c))]
        for i, (p, row) in enumerate(zip(self.hard.tolist(), self.dist.tolist())):
            lines.append(f"{i},{p}," + ",".join(f"{v:.6f}" for v in row))
        return "\n".join(lines) + "\n"


def infer(model: AttackModel, graph: Graph, labels: NodeLabels | None = None) -> Prediction:
    """Class distribution and argmax label (ties -> smallest class id) for every node."""
    dist = np.exp(forward_log_probs(graph, model).value)
    dist = dist / dist.sum(axis=1, keepdims=True)
    hard = np.argmax(dist, axis=1)
    known = np.zeros(graph.n, dtype=bool) if labels is None else labels.known_mask.copy()
    return Prediction(dist, hard, known)


# ------------------------------------------------------------------ baselines

def baseline_attack(kind: str, graph: Graph, labels: NodeLabels, cfg: AttackConfig = AttackConfig()) -> Prediction:
    labels.require_each_class_known()
    C = labels.class_count
    freq = class_frequencies(labels)
    if kind == "majority-neighbor":
        onehot = np.zeros((graph.n, C))
        onehot[labels.known, labels.label[labels.known]] = 1.0
        counts = graph.adjacency() @ onehot
        has = counts.sum(axis=1) > 0
        dist = np.where(has[:, None], counts / np.maximum(counts.sum(axis=1, keepdims=True), 1), freq[None, :])
        return Prediction(dist, np.argmax(dist, axis=1), labels.known_mask.copy())
    if kind == "feature-mlp":
        params = ParamSet(cfg.seed)
        params.linear("mlp0", graph.features.shape[1], cfg.hidden)
        params.linear("mlp1", cfg.hidden, C)
        opt = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)

        def logits():
            return linear(T.relu(linear(graph.features, params, "mlp0")), params, "mlp1")

        for _ in range(cfg.epochs):
            params.zero_grad()
            loss = nll(T.log_softmax(logits()), labels.label, labels.known_mask)
            loss.backward()
            adamw_step(params, params.grads(), opt)
        dist = T.softmax(logits()).value
        return Prediction(dist, np.argmax(dist, axis=1), labels.known_mask.copy())
    raise ContractError(f"unknown baseline {kind!r}")


# ------------------------------------------------------------ bound checker

@dataclass
class BoundReport:
    lhs: float
    rhs: float
    tau: float
    tau_sigma: float
    tau_w: float
    tau_h: float
    tau_l: float
    laplacian_gap: float
    layers: int
    holds: bool = field(default=False)

    def to_dict(self):
        return asdict(self)


def random_filter_encoder(dim: int, layers: int, rng, scale: float = 1.0) -> list[np.ndarray]:
    a = scale * np.sqrt(6.0 / (2 * dim))
    return [rng.uniform(-a, a, size=(dim, dim)) for _ in range(layers)]


def filter_encoder_forward(laplacian: np.ndarray, weights: list[np.ndarray]) -> list[np.ndarray]:
    """Layer outputs H^0..H^K of H^l = ReLU((I - L) H^{l-1} W^l) on all-ones inputs."""
    s = laplacian.shape[0]
    psi = np.eye(s) - laplacian
    hs = [np.ones((s, weights[0].shape[0]))]
    for w in weights:
        hs.append(np.maximum(psi @ hs[-1] @ w, 0.0))
    return hs


def check_theorem_bound(sub_i, sub_j, weights: list[np.ndarray]) -> BoundReport:
    """Check ||pool(H_i) - pool(H_j)|| <= tau * ||L_i - L_j||_2 for one encoder.

    ``sub_i``/``sub_j`` are Subgraphs or dense adjacency matrices of equal size.
    """
    li, lj = normalized_laplacian(sub_i), normalized_laplacian(sub_j)
    if li.shape != lj.shape:
        raise ContractError(f"subgraph sizes differ: {li.shape[0]} vs {lj.shape[0]}")
    hi, hj = filter_encoder_forward(li, weights), filter_encoder_forward(lj, weights)
    lhs = float(np.linalg.norm(hi[-1].mean(axis=0) - hj[-1].mean(axis=0)))
    spec = lambda a: float(np.linalg.norm(a, 2)) if a.size else 0.0  # noqa: E731
    tau_sigma = 1.0
    tau_w = max(spec(w) for w in weights)
    tau_h = max(spec(h) for h in hi + hj)
    eye = np.eye(li.shape[0])
    tau_l = max(spec(eye - li), spec(eye - lj))
    base = tau_sigma * tau_w * tau_l
    K = len(weights)
    geo = float(K) if abs(base - 1.0) < 1e-12 else (base ** K - 1.0) / (base - 1.0)
    tau = geo * tau_sigma * tau_w * tau_h
    gap = spec(li - lj)
    rhs = tau * gap
    return BoundReport(lhs, rhs, tau, tau_sigma, tau_w, tau_h, tau_l, gap, K, lhs <= rhs + 1e-9)
