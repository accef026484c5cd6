"""Parameters, message-passing layers and losses built on ``tensor``."""
from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, NumericError, ParseError
from . import tensor as T
from .tensor import Tensor

FORMAT_VERSION = 1


class ParamSet:
    """Ordered named parameter tensors with seeded Glorot-uniform init."""

    def __init__(self, seed: int = 0):
        self.seed = int(seed)
        self.rng = np.random.default_rng(self.seed)
        self.tensors: "OrderedDict[str, Tensor]" = OrderedDict()

    def __getitem__(self, name) -> Tensor:
        return self.tensors[name]

    def __contains__(self, name):
        return name in self.tensors

    def __iter__(self):
        return iter(self.tensors)

    def __len__(self):
        return len(self.tensors)

    def items(self):
        return self.tensors.items()

    def add(self, name: str, value) -> Tensor:
        if name in self.tensors:
            raise ContractError(f"duplicate parameter name {name!r}")
        t = Tensor(np.array(value, dtype=np.float64), requires_grad=True)
        self.tensors[name] = t
        return t

    def glorot(self, name, fan_in, fan_out):
        a = np.sqrt(6.0 / (fan_in + fan_out))
        return self.add(name, self.rng.uniform(-a, a, size=(fan_in, fan_out)))

    def zeros(self, name, *shape):
        return self.add(name, np.zeros(shape))

    def linear(self, prefix, fan_in, fan_out, zero=False):
        if zero:
            self.zeros(prefix + ".W", fan_in, fan_out)
        else:
            self.glorot(prefix + ".W", fan_in, fan_out)
        self.zeros(prefix + ".b", fan_out)

    def zero_grad(self):
        for t in self.tensors.values():
            t.grad = None

    def grads(self) -> dict:
        return {k: (np.zeros_like(t.value) if t.grad is None else t.grad) for k, t in self.tensors.items()}

    def values(self) -> dict:
        return {k: t.value.copy() for k, t in self.tensors.items()}

    def load_values(self, values: dict):
        if set(values) != set(self.tensors):
            raise ContractError("parameter names do not match")
        for k, t in self.tensors.items():
            v = np.asarray(values[k], dtype=np.float64)
            if v.shape != t.shape:
                raise ContractError(f"shape mismatch for {k}: {v.shape} vs {t.shape}")
            t.value = v.copy()

    def to_dict(self) -> dict:
        return {"format_version": FORMAT_VERSION, "seed": self.seed,
                "params": [{"name": k, "shape": list(t.shape), "values": t.value.ravel().tolist()}
                           for k, t in self.tensors.items()]}

    def to_json(self) -> str:
        return json.dumps(self.to_dict())

    @classmethod
    def from_dict(cls, d: dict) -> "ParamSet":
        if d.get("format_version") != FORMAT_VERSION:
            raise ParseError(f"unsupported parameter format version {d.get('format_version')!r}")
        ps = cls(d.get("seed", 0))
        for p in d["params"]:
            ps.add(p["name"], np.array(p["values"], dtype=np.float64).reshape(p["shape"]))
        return ps

    @classmethod
    def from_json(cls, text: str) -> "ParamSet":
        return cls.from_dict(json.loads(text))


@dataclass
class Adjacency:
    """CSR message-passing structure; ``weights`` aligns with ``indices``."""

    indptr: np.ndarray
    indices: np.ndarray
    weights: object = None

    @property
    def n(self) -> int:
        return len(self.indptr) - 1

    @classmethod
    def of(cls, graph, edge_weights=None) -> "Adjacency":
        """Whole-graph structure; ``edge_weights`` is per canonical edge (array or Tensor)."""
        w = None
        if edge_weights is not None:
            w = T.take(T.as_tensor(edge_weights), graph.edge_id)
        return cls(graph.indptr, graph.indices, w)


def linear(h, params: ParamSet, prefix: str, relu: bool = False):
    return T.affine(h, params[prefix + ".W"], params[prefix + ".b"], relu)


def init_gin(params: ParamSet, prefix: str, d_in: int, d_out: int):
    params.linear(prefix + ".mlp0", d_in, d_out)
    params.linear(prefix + ".mlp1", d_out, d_out)


def init_sage(params: ParamSet, prefix: str, d_in: int, d_out: int):
    params.linear(prefix, 2 * d_in, d_out)


def gnn_layer(kind: str, h, adj: Adjacency, params: ParamSet, prefix: str, eps0: float = 0.0):
    """One message-passing layer followed by ReLU.

    gin:       ReLU(MLP((1 + eps0) h_i + sum_j w_ij h_j)), MLP = Linear-ReLU-Linear
    sage-mean: ReLU(W [h_i ++ sum_j w_ij h_j / sum_j w_ij])
    """
    h = T.as_tensor(h)
    if h.value.ndim != 2 or h.shape[0] != adj.n:
        raise ContractError(f"features {h.shape} do not match adjacency over {adj.n} nodes")
    agg = T.propagate(adj.indptr, adj.indices, h, adj.weights)
    if kind == "gin":
        z = agg + (h if eps0 == 0.0 else h * (1.0 + eps0))
        z = linear(z, params, prefix + ".mlp0", relu=True)
        return linear(z, params, prefix + ".mlp1", relu=True)
    if kind == "sage-mean":
        ones = np.ones((adj.n, 1))
        den = T.propagate(adj.indptr, adj.indices, ones, adj.weights)
        den = den + (den.value <= 0).astype(np.float64)
        nb_mean = agg / den
        return linear(T.concat([h, nb_mean]), params, prefix, relu=True)
    raise ContractError(f"unknown layer kind {kind!r}")


def mean_pool(h, node_set):
    node_set = np.asarray(node_set, dtype=np.int64)
    if not len(node_set):
        raise ContractError("mean_pool over an empty node set")
    return T.mean(T.take(h, node_set), axis=0)


def softmax_cross_entropy(logits, targets, mask):
    """Mean negative log-likelihood of ``targets`` over the nodes in ``mask``."""
    return nll(T.log_softmax(logits), targets, mask)


def nll(log_probs, targets, mask):
    mask = np.asarray(mask)
    idx = np.flatnonzero(mask) if mask.dtype == bool else mask.astype(np.int64)
    if not len(idx):
        raise ContractError("empty loss mask")
    targets = np.asarray(targets, dtype=np.int64)
    t = targets[idx]
    if np.any(t < 0) or np.any(t >= log_probs.shape[1]):
        raise ContractError("target class outside range on masked nodes")
    loss = T.mean(T.pick(log_probs, idx, t)) * -1.0
    if not np.isfinite(loss.value):
        raise NumericError("non-finite loss")
    return loss
