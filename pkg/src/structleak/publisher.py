"""Learnable edge sampler for publishing a graph with less attribute leakage.

A SAGE encoder embeds the nodes and an MLP scores every canonical edge with
a keep probability T.  Training alternates between the co-trained attack
(fit on a relaxed sample of the graph) and the sampler, which is pushed to
hurt that attack, to make neighbourhoods look like the class prior, and to
keep as many edges as possible.  Publication draws one hard edge subset.
"""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .attack import AttackConfig, AttackModel, EgoCache, baseline_attack, forward_log_probs, new_attack_model
from .attack import attack_step, update_routing
from .errors import ContractError, NumericError
from .graph import Graph, NodeLabels, apply_edge_mask, write_edge_list
from .homophily import HomophilyConfig, effective_labels, priors_for
from .kernel import Adjacency, OptimizerState, ParamSet, adamw_step, gnn_layer, init_sage, linear, nll
from .kernel import tensor as T

log = logging.getLogger(__name__)

SAMPLER_VARIANTS = ("full", "adv-only", "dis-only")
PUBLISH_MODES = ("bernoulli", "threshold")
PROB_FLOOR = 1e-6
DEN_FLOOR = 1e-8


@dataclass(frozen=True)
class SamplerConfig:
    hidden: int = 64
    scorer_hidden: int = 32
    temperature: float = 0.5
    gamma: float = 5.0
    eta: float = 5.0
    lam: float = 1.0
    lr: float = 2e-3
    weight_decay: float = 5e-4
    epochs: int = 200
    update_interval: int = 10
    theta: int = 5
    smoothing: float = 1.0
    label_mode: str = "pseudo-augmented"
    variant: str = "full"
    attack_steps: int = 1
    sampler_steps: int = 1
    attack_warmup: int = 50
    seed: int = 0

    def __post_init__(self):
        if self.temperature <= 0 or self.smoothing <= 0:
            raise ContractError("temperature and smoothing must be positive")
        if min(self.gamma, self.eta, self.lam) < 0:
            raise ContractError("loss weights must be non-negative")
        if self.variant not in SAMPLER_VARIANTS:
            raise ContractError(f"variant must be one of {SAMPLER_VARIANTS}")
        if self.epochs < 0 or self.attack_warmup < 0:
            raise ContractError("epochs and attack_warmup must be >= 0")
        if self.update_interval < 1 or self.attack_steps < 1 or self.sampler_steps < 1:
            raise ContractError("update_interval and step counts must be >= 1")
        HomophilyConfig(self.theta, self.label_mode)

    def weights(self) -> tuple[float, float, float]:
        """(gamma, eta, lambda) after the variant switches terms off."""
        g = 0.0 if self.variant == "dis-only" else self.gamma
        e = 0.0 if self.variant == "adv-only" else self.eta
        return g, e, self.lam


class SamplerModel:
    def __init__(self, cfg: SamplerConfig, feature_dim: int):
        self.cfg = cfg
        self.feature_dim = feature_dim
        self.params = ParamSet(cfg.seed)
        h = cfg.hidden
        init_sage(self.params, "enc.sage0", feature_dim, h)
        init_sage(self.params, "enc.sage1", h, h)
        self.params.linear("scorer.mlp0", 2 * h, cfg.scorer_hidden)
        # zero last layer: every edge starts at T = 0.5
        self.params.linear("scorer.mlp1", cfg.scorer_hidden, 1, zero=True)

    def save(self, directory):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        (d / "sampler.json").write_text(self.params.to_json())
        meta = {"config": asdict(self.cfg), "feature_dim": self.feature_dim}
        (d / "sampler_meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True))

    @classmethod
    def load(cls, directory) -> "SamplerModel":
        d = Path(directory)
        meta = json.loads((d / "sampler_meta.json").read_text())
        model = cls(SamplerConfig(**meta["config"]), meta["feature_dim"])
        model.params.load_values(ParamSet.from_json((d / "sampler.json").read_text()).values())
        return model


@dataclass
class EdgeProbabilities:
    keep: np.ndarray
    relaxed: np.ndarray | None = None

    def to_csv(self, graph: Graph) -> str:
        lines = ["u,v,keep_prob"]
        lines += [f"{u},{v},{p:.6f}" for (u, v), p in zip(graph.edges.tolist(), self.keep.tolist())]
        return "\n".join(lines) + "\n"


@dataclass
class LossBreakdown:
    adv: float
    dis: float
    reg: float
    total: float

    def to_dict(self):
        return asdict(self)


# ------------------------------------------------------------------ forward

def edge_scores(graph: Graph, model: SamplerModel):
    """Keep probabilities T as a Tensor over canonical edges."""
    if graph.features.shape[1] != model.feature_dim:
        raise ContractError("feature dimension does not match the sampler")
    adj = Adjacency.of(graph)
    h = gnn_layer("sage-mean", graph.features, adj, model.params, "enc.sage0")
    h = gnn_layer("sage-mean", h, adj, model.params, "enc.sage1")
    u, v = graph.edges[:, 0], graph.edges[:, 1]
    pair = T.concat([T.take(h, u), T.take(h, v)])
    z = linear(linear(pair, model.params, "scorer.mlp0", relu=True), model.params, "scorer.mlp1")
    # affine squash instead of a hard clamp keeps gradients alive near 0 and 1
    return T.sigmoid(T.reshape(z, (graph.m,))) * (1.0 - 2 * PROB_FLOOR) + PROB_FLOOR


def edge_probabilities(graph: Graph, model: SamplerModel) -> EdgeProbabilities:
    return EdgeProbabilities(edge_scores(graph, model).value.copy())


def gumbel_relax(t, u, temperature: float):
    """Binary-concrete sample sigma((log u - log(1-u) + logit t) / temperature).

    Differentiable in ``t``; ``u`` is a constant uniform draw in (0, 1).
    """
    if temperature <= 0:
        raise ContractError("temperature must be positive")
    t = T.as_tensor(t)
    u = np.asarray(u, dtype=np.float64)
    if np.any(u <= 0) or np.any(u >= 1):
        raise ContractError("uniform draws must lie strictly inside (0, 1)")
    t = T.clip(t, PROB_FLOOR, 1.0 - PROB_FLOOR)
    noise = np.log(u) - np.log1p(-u)
    logit = T.log(t) - T.log(1.0 - t)
    return T.sigmoid((logit + noise) * (1.0 / temperature))


def soft_ghratio(graph: Graph, weights, lab: np.ndarray, counted: np.ndarray, theta: int,
                 smoothing: float = 1.0):
    """Differentiable homophily ratios under relaxed edge weights.

    Returns ``(prox, prox_ok, role, role_ok)``: Tensors over nodes plus masks
    of nodes whose denominator reached 1e-8.  Role similarity uses soft
    degrees and sigma((theta + 0.5 - |d_i - d_j|) / smoothing); the half-unit
    margin makes the hard 0/1, smoothing -> 0 limit count |d_i - d_j| <= theta
    exactly on integer degrees.
    """
    w = T.as_tensor(weights)
    n = graph.n
    lab = np.asarray(lab)
    counted = np.asarray(counted, dtype=bool)
    rows, cols = graph.rows, graph.indices
    w_csr = T.take(w, graph.edge_id)
    use = counted[cols].astype(np.float64)
    same = (counted[cols] & (lab[cols] == lab[rows])).astype(np.float64)
    ones = np.ones((n, 1))
    den = T.reshape(T.propagate(graph.indptr, cols, ones, w_csr * use), (n,))
    num = T.reshape(T.propagate(graph.indptr, cols, ones, w_csr * same), (n,))
    prox_ok = counted & (den.value >= DEN_FLOOR)
    prox = num / (den + (~prox_ok).astype(np.float64))

    deg = T.reshape(T.propagate(graph.indptr, cols, ones, w_csr), (n, 1))
    gap = T.absolute(deg - T.reshape(deg, (1, n)))
    kappa = T.sigmoid((theta + 0.5 - gap) * (1.0 / smoothing))
    others = counted[None, :] & ~np.eye(n, dtype=bool)
    same_class = others & (lab[:, None] == lab[None, :])
    rden = T.total(kappa * others.astype(np.float64), axis=1)
    rnum = T.total(kappa * same_class.astype(np.float64), axis=1)
    role_ok = counted & (rden.value >= DEN_FLOOR)
    role = rnum / (rden + (~role_ok).astype(np.float64))
    return prox, prox_ok, role, role_ok


def distribution_loss(prox, prox_ok, role, role_ok, priors, counted):
    """Mean over counted nodes of |prox - prior| + |role - prior|, dropping absent terms."""
    count = int(np.count_nonzero(counted))
    if count == 0:
        raise ContractError("no counted nodes for the distribution loss")
    priors = np.asarray(priors, dtype=np.float64)
    dp = T.absolute(prox - priors) * prox_ok.astype(np.float64)
    dr = T.absolute(role - priors) * role_ok.astype(np.float64)
    return T.total(dp + dr) * (1.0 / count)


def retention_loss(t):
    return T.mean(T.log(T.as_tensor(t))) * -1.0


@dataclass
class LossTerms:
    adv: T.Tensor
    dis: T.Tensor
    reg: T.Tensor

    def breakdown(self, cfg: SamplerConfig) -> LossBreakdown:
        g, e, lam = cfg.weights()
        a, d, r = self.adv.item(), self.dis.item(), self.reg.item()
        return LossBreakdown(a, d, r, -g * a + e * d + lam * r)


def losses(graph: Graph, t, relaxed, attack: AttackModel, labels: NodeLabels, pseudo: np.ndarray,
           cfg: SamplerConfig, cache: EgoCache | None = None) -> LossTerms:
    """The three training terms on one relaxed draw.

    ``t`` is the keep-probability Tensor, ``relaxed`` the Gumbel-relaxed
    weights derived from it; ``pseudo`` supplies classes for unknown nodes
    in pseudo-augmented mode.
    """
    adv = nll(forward_log_probs(graph, attack, relaxed, cache), labels.label, labels.known_mask)
    lab, counted = effective_labels(labels, HomophilyConfig(cfg.theta, cfg.label_mode), pseudo)
    prox, pok, role, rok = soft_ghratio(graph, relaxed, lab, counted, cfg.theta, cfg.smoothing)
    dis = distribution_loss(prox, pok, role, rok, priors_for(labels, lab), counted)
    return LossTerms(adv, dis, retention_loss(t))


def total_loss(terms: LossTerms, cfg: SamplerConfig):
    g, e, lam = cfg.weights()
    return terms.adv * (-g) + terms.dis * e + terms.reg * lam


# ------------------------------------------------------------------ training

@dataclass
class SamplerHistory:
    losses: list = field(default_factory=list)
    attack_loss: list = field(default_factory=list)
    retention: list = field(default_factory=list)

    def to_dict(self):
        return {"losses": [b.to_dict() for b in self.losses], "attack_loss": self.attack_loss,
                "retention": self.retention}


class SamplerDivergence(NumericError):
    module = "publisher"

    def __init__(self, message, history: SamplerHistory):
        super().__init__(message)
        self.history = history


def hard_mask(t: np.ndarray) -> np.ndarray:
    return np.asarray(t) >= 0.5


def initial_pseudo_labels(graph: Graph, labels: NodeLabels) -> np.ndarray:
    """Majority vote over known neighbours; nodes without any fall back to the commonest class."""
    pred = baseline_attack("majority-neighbor", graph, labels)
    return np.where(labels.known_mask, labels.label, pred.hard)


def train_sampler(graph: Graph, labels: NodeLabels, attack_cfg: AttackConfig = AttackConfig(),
                  cfg: SamplerConfig = SamplerConfig()):
    """Alternating training; returns (sampler, attack co-model, history)."""
    labels.require_each_class_known()
    if labels.n != graph.n:
        raise ContractError("labels and graph disagree on node count")
    if graph.m == 0:
        raise ContractError("cannot train an edge sampler on an edgeless graph")
    sampler = SamplerModel(cfg, graph.features.shape[1])
    attack = new_attack_model(graph, labels, attack_cfg)
    uses_role = attack.uses()[1]
    cache = attack.ego_cache(graph) if uses_role else None
    opt_s = OptimizerState(lr=cfg.lr, weight_decay=cfg.weight_decay)
    opt_a = OptimizerState(lr=attack_cfg.lr, weight_decay=attack_cfg.weight_decay)
    rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(1)[0])
    gamma, eta, lam = cfg.weights()
    pseudo = initial_pseudo_labels(graph, labels)
    hcfg = HomophilyConfig(cfg.theta, "pseudo-augmented")
    history = SamplerHistory()

    def draw(t):
        u = rng.uniform(size=graph.m)
        np.clip(u, 1e-12, 1.0 - 1e-12, out=u)
        return gumbel_relax(t, u, cfg.temperature)

    # An untrained adversary gives no signal, and the retention term alone
    # would saturate every T before the attack starts to matter.
    for epoch in range(1, cfg.attack_warmup + 1):
        _, z_hat = attack_step(attack, graph, labels, opt_a, cache=cache)
        if epoch % attack_cfg.update_interval == 0:
            pseudo = update_routing(attack, graph, labels, hcfg, z_hat)

    try:
        for epoch in range(1, cfg.epochs + 1):
            for _ in range(cfg.attack_steps - 1):
                relaxed = draw(edge_scores(graph, sampler).value)
                attack.params.zero_grad()
                a = nll(forward_log_probs(graph, attack, relaxed.value, cache), labels.label, labels.known_mask)
                a.backward()
                adamw_step(attack.params, attack.params.grads(), opt_a)
            for step in range(cfg.sampler_steps):
                t = edge_scores(graph, sampler)
                relaxed = draw(t)
                terms = losses(graph, t, relaxed if gamma > 0 else relaxed.value, attack, labels, pseudo, cfg,
                               cache)
                attack.params.zero_grad()
                sampler.params.zero_grad()
                terms.adv.backward()
                g_attack = attack.params.grads()
                g_adv = {k: g.copy() for k, g in sampler.params.grads().items()}
                sampler.params.zero_grad()
                rest = terms.dis * eta + terms.reg * lam
                if rest.requires_grad:
                    rest.backward()
                g_rest = sampler.params.grads()
                if step == 0:
                    adamw_step(attack.params, g_attack, opt_a)
                adamw_step(sampler.params, {k: g_rest[k] - gamma * g_adv[k] for k in g_adv}, opt_s)
            history.losses.append(terms.breakdown(cfg))
            history.attack_loss.append(terms.adv.item())
            history.retention.append(float(hard_mask(t.value).mean()))
            if epoch % cfg.update_interval == 0:
                keep = hard_mask(edge_scores(graph, sampler).value).astype(np.float64)
                z_hat = np.exp(forward_log_probs(graph, attack, keep, cache).value)
                pseudo = update_routing(attack, apply_edge_mask(graph, keep > 0), labels, hcfg, z_hat)
    except NumericError as exc:
        raise SamplerDivergence(f"sampler training diverged: {exc}", history) from exc
    log.debug("sampler trained: %d epochs, retention %.3f", cfg.epochs,
              history.retention[-1] if history.retention else 1.0)
    return sampler, attack, history


# ------------------------------------------------------------------ publication

def config_hash(config: dict) -> str:
    return hashlib.sha256(json.dumps(config, sort_keys=True).encode()).hexdigest()


@dataclass
class PublishedGraph:
    graph: Graph
    keep_probabilities: EdgeProbabilities
    keep_mask: np.ndarray
    provenance: dict

    @property
    def retention(self) -> float:
        return float(self.keep_mask.mean()) if len(self.keep_mask) else 1.0

    def write(self, directory, original: Graph):
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        write_edge_list(d / "edges.txt", self.graph)
        (d / "probs.csv").write_text(self.keep_probabilities.to_csv(original))
        (d / "provenance.json").write_text(json.dumps(self.provenance, indent=2, sort_keys=True) + "\n")


def publish(graph: Graph, probs, mode: str = "bernoulli", seed: int = 0, provenance: dict | None = None
            ) -> PublishedGraph:
    """Draw the published edge subset from keep probabilities (array, EdgeProbabilities or model)."""
    if isinstance(probs, SamplerModel):
        probs = edge_probabilities(graph, probs)
    if not isinstance(probs, EdgeProbabilities):
        probs = EdgeProbabilities(np.asarray(probs, dtype=np.float64))
    t = probs.keep
    if t.shape != (graph.m,):
        raise ContractError(f"{len(t)} probabilities for {graph.m} edges")
    if mode == "bernoulli":
        keep = np.random.default_rng(seed).random(graph.m) < t
    elif mode == "threshold":
        keep = hard_mask(t)
    else:
        raise ContractError(f"publish mode must be one of {PUBLISH_MODES}")
    prov = dict(provenance or {})
    prov.update({"mode": mode, "seed": int(seed), "kept_edges": int(keep.sum()), "original_edges": graph.m})
    prov["config_hash"] = config_hash({k: v for k, v in prov.items() if k != "config_hash"})
    return PublishedGraph(apply_edge_mask(graph, keep), probs, keep, prov)
