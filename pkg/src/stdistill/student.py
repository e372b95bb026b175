"""Graph-free MLP student.

The student sees one node's window at a time: z-score embedding, a
per-(node, slot) MLP with shared weights, and a linear head. Nothing here
takes a graph argument.
"""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import zscore_embed
from .teacher import as_tensors, mse_loss

ARCH = "mlp-student"


@dataclass
class StudentConfig:
    n_layers: int = 3
    d: int = 64
    T: int = 12
    H: int = 12
    # appends one causal conv layer after the MLP; off by default
    conv_tail: bool = False
    kernel_size: int = 3

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class StudentActivations:
    embedding: Tensor       # [B, N, T, d]
    pred_norm: Tensor       # [B, N, H]
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def pred(self) -> np.ndarray:
        return self.pred_norm.data * self.sigma[..., None] + self.mu[..., None]


def manifest(cfg: StudentConfig) -> list[tuple[str, tuple]]:
    d = cfg.d
    out = [("base", (d,))]
    for l in range(cfg.n_layers):
        out += [(f"mlp{l}.weight", (d, d)), (f"mlp{l}.bias", (d,))]
    if cfg.conv_tail:
        out += [("tail.kernel", (cfg.kernel_size, d, d)), ("tail.bias", (d,))]
    out += [("readout.weight", (cfg.T * d, cfg.H)), ("readout.bias", (cfg.H,))]
    return out


def n_params(cfg: StudentConfig) -> int:
    return sum(int(np.prod(s)) for _, s in manifest(cfg))


def init_params(cfg: StudentConfig, rng: np.random.Generator, dtype=np.float64) -> dict:
    d = cfg.d
    p = {"base": rng.standard_normal(d) / np.sqrt(d) + 1.0 / np.sqrt(d)}
    for l in range(cfg.n_layers):
        p[f"mlp{l}.weight"] = rng.standard_normal((d, d)) * np.sqrt(2.0 / d)
        p[f"mlp{l}.bias"] = np.zeros(d)
    if cfg.conv_tail:
        p["tail.kernel"] = rng.standard_normal((cfg.kernel_size, d, d)) / np.sqrt(cfg.kernel_size * d)
        p["tail.bias"] = np.zeros(d)
    p["readout.weight"] = rng.standard_normal((cfg.T * d, cfg.H)) / np.sqrt(cfg.T * d)
    p["readout.bias"] = np.zeros(cfg.H)
    return {k: v.astype(dtype) for k, v in p.items()}


def student_forward(history, params: dict, cfg: StudentConfig, training: bool = False,
                    stats=None) -> StudentActivations:
    """Student pass on ``history`` of shape ``[B, N, T]`` (or ``[N, T]``)."""
    p = as_tensors(params)
    history = np.asarray(history)
    if history.ndim == 2:
        history = history[None]
        if stats is not None:
            stats = (stats[0][None], stats[1][None])
    B, N, T = history.shape
    if T != cfg.T:
        raise ad.ShapeError(f"student expects T={cfg.T} history steps, got {T}")

    h, (mu, sigma) = zscore_embed(history, p["base"], stats)
    for l in range(cfg.n_layers):
        if l > 0:
            h = ad.relu(h)
        h = ad.matmul(h, p[f"mlp{l}.weight"]) + p[f"mlp{l}.bias"]
    if cfg.conv_tail:
        h = ad.conv1d(h, p["tail.kernel"], p["tail.bias"])
    flat = ad.reshape(h, (B, N, T * cfg.d))
    pred = ad.matmul(flat, p["readout.weight"]) + p["readout.bias"]
    return StudentActivations(h, pred, mu, sigma)


student_loss = mse_loss
