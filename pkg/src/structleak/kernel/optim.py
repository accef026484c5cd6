from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import ContractError
from .layers import ParamSet


@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 5e-4
    betas: tuple = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adamw_step(params: ParamSet, grads: dict, state: OptimizerState) -> None:
    """Decoupled weight decay Adam update, in place on ``params``."""
    if set(grads) != set(params.tensors):
        raise ContractError(f"gradient names {sorted(grads)} do not match parameters")
    b1, b2 = state.betas
    state.step += 1
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for name, t in params.items():
        g = np.asarray(grads[name], dtype=np.float64)
        if g.shape != t.shape:
            raise ContractError(f"gradient shape mismatch for {name}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(g)
            state.v[name] = np.zeros_like(g)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p = t.value * (1.0 - state.lr * state.weight_decay)
        t.value = p - state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def grad_check(loss_fn, params: ParamSet, h: float = 1e-5, max_coords: int = 256, seed: int = 0,
               atol: float = 1e-8) -> float:
    """Largest relative error between autodiff and central differences.

    ``loss_fn()`` must rebuild the loss from the current parameter values.
    At most ``max_coords`` coordinates are probed (never fewer than 64
    unless the model is smaller); relative error is
    |a - n| / max(|a|, |n|, atol).
    """
    params.zero_grad()
    loss = loss_fn()
    loss.backward()
    analytic = params.grads()
    coords = [(k, i) for k, t in params.items() for i in range(t.value.size)]
    rng = np.random.default_rng(seed)
    if len(coords) > max(max_coords, 64):
        pick = rng.choice(len(coords), size=max(max_coords, 64), replace=False)
        coords = [coords[j] for j in sorted(pick)]
    worst = 0.0
    for name, i in coords:
        t = params[name]
        flat = t.value.reshape(-1)
        old = flat[i]
        flat[i] = old + h
        up = loss_fn().item()
        flat[i] = old - h
        down = loss_fn().item()
        flat[i] = old
        num = (up - down) / (2 * h)
        a = analytic[name].reshape(-1)[i]
        err = abs(a - num) / max(abs(a), abs(num), atol)
        worst = max(worst, err)
    params.zero_grad()
    return worst
