"""Parameter update rules: bias-corrected Adam and plain gradient descent."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params: dict, grads: dict, state: AdamState) -> tuple[dict, AdamState]:
    """One Adam update. Inputs are left untouched; new dicts are returned.

    ``params`` and ``grads`` map names to arrays of identical shape. Missing
    moment entries are initialised to zero.
    """
    t = state.step + 1
    new_params, new_m, new_v = {}, {}, {}
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name!r} has shape {g.shape}, parameter has {p.shape}")
        m = state.m.get(name)
        v = state.v.get(name)
        if m is None:
            m = np.zeros_like(p)
            v = np.zeros_like(p)
        elif m.shape != p.shape:
            raise ValueError(f"moment for {name!r} has shape {m.shape}, parameter has {p.shape}")
        m = state.beta1 * m + (1.0 - state.beta1) * g
        v = state.beta2 * v + (1.0 - state.beta2) * (g * g)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        new_params[name] = (p - state.lr * update).astype(p.dtype, copy=False)
        new_m[name] = m
        new_v[name] = v
    new_state = AdamState(state.lr, state.beta1, state.beta2, state.eps, t, new_m, new_v)
    return new_params, new_state


def sgd_step(params: dict, grads: dict, lr: float) -> dict:
    return {k: (p - lr * grads[k]).astype(p.dtype, copy=False) for k, p in params.items()}


class Optimizer:
    """Stateful wrapper used by the training loops."""

    def __init__(self, kind: str = "adam", lr: float = 1e-3, **kw):
        if kind not in ("adam", "sgd"):
            raise ValueError(f"unknown optimizer {kind!r}")
        self.kind = kind
        self.lr = lr
        self.state = AdamState(lr=lr, **kw) if kind == "adam" else None

    def step(self, params: dict, grads: dict) -> dict:
        if self.kind == "sgd":
            return sgd_step(params, grads, self.lr)
        params, self.state = adam_step(params, grads, self.state)
        return params
