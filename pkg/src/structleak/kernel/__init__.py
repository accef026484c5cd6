"""Deterministic float64 reverse-mode kernel: tensors, GNN layers, AdamW."""
from .layers import (Adjacency, ParamSet, gnn_layer, init_gin, init_sage, linear, mean_pool, nll,
                     softmax_cross_entropy)
from .optim import OptimizerState, adamw_step, grad_check
from .tensor import Tensor

__all__ = ["Adjacency", "OptimizerState", "ParamSet", "Tensor", "adamw_step", "gnn_layer", "grad_check",
           "init_gin", "init_sage", "linear", "mean_pool", "nll", "softmax_cross_entropy"]
