"""Graph teacher: z-score embedding, stacked graph propagation with a
cross-layer sum, a two-layer causal TCN with residuals, and a linear head."""
from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import zscore_embed

ARCH = "graph-teacher"


@dataclass
class TeacherConfig:
    n_layers: int = 3
    d: int = 64
    kernel_size: int = 3
    dropout: float = 0.1
    slope: float = 0.01
    T: int = 12
    H: int = 12

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class TeacherActivations:
    layers: list            # E^(l), l = 0..L, each [B, N, T, d]
    spatial: Tensor         # sum of layers, [B, N, T, d]
    temporal: Tensor        # TCN output, [B, N, T, d]
    pred_norm: Tensor       # [B, N, H] in standardised units
    mu: np.ndarray
    sigma: np.ndarray

    @property
    def pred(self) -> np.ndarray:
        return self.pred_norm.data * self.sigma[..., None] + self.mu[..., None]


def manifest(cfg: TeacherConfig) -> list[tuple[str, tuple]]:
    d, f = cfg.d, cfg.kernel_size
    out = [("base", (d,))]
    out += [(f"gcn{l}.weight", (d, d)) for l in range(cfg.n_layers)]
    for k in (1, 2):
        out += [(f"tcn{k}.kernel", (f, d, d)), (f"tcn{k}.bias", (d,))]
    out += [("readout.weight", (cfg.T * d, cfg.H)), ("readout.bias", (cfg.H,))]
    return out


def init_params(cfg: TeacherConfig, rng: np.random.Generator, dtype=np.float64) -> dict:
    d, f = cfg.d, cfg.kernel_size
    p = {"base": rng.standard_normal(d) / np.sqrt(d) + 1.0 / np.sqrt(d)}
    for l in range(cfg.n_layers):
        p[f"gcn{l}.weight"] = rng.standard_normal((d, d)) / np.sqrt(d)
    for k in (1, 2):
        p[f"tcn{k}.kernel"] = rng.standard_normal((f, d, d)) / np.sqrt(f * d)
        p[f"tcn{k}.bias"] = np.zeros(d)
    p["readout.weight"] = rng.standard_normal((cfg.T * d, cfg.H)) / np.sqrt(cfg.T * d)
    p["readout.bias"] = np.zeros(cfg.H)
    return {k: v.astype(dtype) for k, v in p.items()}


def gcn_forward(e0: Tensor, adj, weights, activation: bool = True):
    """Stacked propagation E^(l) = relu(A_hat E^(l-1) W^(l-1)^T).

    ``e0`` is ``[..., N, d]`` (node axis second to last, so every leading
    index, e.g. a time slot, is propagated independently with shared
    weights). Returns the per-layer list including ``e0`` and their sum.
    """
    layers = [e0]
    h = e0
    for w in weights:
        h = ad.propagate(adj, ad.matmul(h, w.T))
        if activation:
            h = ad.relu(h)
        layers.append(h)
    total = layers[0]
    for h in layers[1:]:
        total = total + h
    return layers, total


def tcn_layer(x: Tensor, kernel: Tensor, bias: Tensor, cfg: TeacherConfig, training: bool, rng) -> Tensor:
    h = ad.conv1d(x, kernel, bias)
    h = ad.dropout(h, cfg.dropout, training, rng)
    return ad.leaky_relu(h + x, cfg.slope)


def tcn_forward(e: Tensor, params: dict, cfg: TeacherConfig, training: bool = False, rng=None) -> Tensor:
    """Two causal conv layers over axis -2 (time) of ``[..., T, d]``."""
    h = tcn_layer(e, params["tcn1.kernel"], params["tcn1.bias"], cfg, training, rng)
    return tcn_layer(h, params["tcn2.kernel"], params["tcn2.bias"], cfg, training, rng)


def as_tensors(params: dict, requires_grad: bool = False) -> dict:
    return {k: v if isinstance(v, Tensor) else Tensor(v, requires_grad=requires_grad)
            for k, v in params.items()}


def teacher_forward(history, adj, params: dict, cfg: TeacherConfig, training: bool = False,
                    rng=None, stats=None) -> TeacherActivations:
    """Full teacher pass on ``history`` of shape ``[B, N, T]`` (or ``[N, T]``).

    ``adj`` is the normalised adjacency (dense or sparse). ``params`` values
    may be arrays (treated as constants) or Tensors.
    """
    p = as_tensors(params)
    history = np.asarray(history)
    if history.ndim == 2:
        history = history[None]
        if stats is not None:
            stats = (stats[0][None], stats[1][None])
    B, N, T = history.shape
    if T != cfg.T:
        raise ad.ShapeError(f"teacher expects T={cfg.T} history steps, got {T}")

    emb, (mu, sigma) = zscore_embed(history, p["base"], stats)   # [B, N, T, d]
    slots = ad.transpose(emb, (0, 2, 1, 3))                      # [B, T, N, d]
    weights = [p[f"gcn{l}.weight"] for l in range(cfg.n_layers)]
    layers, total = gcn_forward(slots, adj, weights)
    back = (0, 2, 1, 3)
    layers = [ad.transpose(h, back) for h in layers]
    spatial = ad.transpose(total, back)                          # [B, N, T, d]

    temporal = tcn_forward(spatial, p, cfg, training, rng)
    flat = ad.reshape(temporal, (B, N, T * cfg.d))
    pred = ad.matmul(flat, p["readout.weight"]) + p["readout.bias"]
    return TeacherActivations(layers, spatial, temporal, pred, mu, sigma)


def mse_loss(pred: Tensor, target) -> Tensor:
    """Per-window squared error summed over horizon and averaged over nodes;
    batches average over windows as well."""
    target = ad.as_tensor(target, like=pred)
    if pred.shape != target.shape:
        raise ad.ShapeError(f"prediction {pred.shape} and target {target.shape} differ")
    diff = pred - target
    sq = ad.tsum(diff * diff, axis=-1)       # [..., N]
    return ad.mean(sq)


teacher_loss = mse_loss
