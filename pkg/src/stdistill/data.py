"""Traffic series ingestion, window extraction, z-score embedding, synthetic data."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .autodiff import Tensor, mul
from .graph import SpatialGraph, build_graph

logger = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8


class IngestError(ValueError):
    pass


@dataclass
class TrafficTensor:
    """Volumes ``values[N, T_total]`` sampled every ``interval_minutes``."""

    values: np.ndarray
    interval_minutes: int = 5
    sensor_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise IngestError(f"traffic values must be 2-D (nodes x time), got {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise IngestError("traffic values must be finite")
        if np.any(self.values < 0):
            n, t = np.argwhere(self.values < 0)[0]
            raise IngestError(f"negative volume at sensor {n}, step {t}")
        if not self.sensor_ids:
            self.sensor_ids = [str(i) for i in range(self.values.shape[0])]

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def n_steps(self) -> int:
        return self.values.shape[1]


def load_traffic_csv(path, interval_minutes: int = 5) -> TrafficTensor:
    """Parse a sensor-per-column CSV; row/column positions in errors are 1-based
    with the header as row 1."""
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if not header:
            raise IngestError(f"{path}: empty file")
        width = len(header)
        for r, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != width:
                raise IngestError(f"{path}: row {r} has {len(row)} cells, header has {width}")
            vals = []
            for c, cell in enumerate(row, start=1):
                try:
                    v = float(cell)
                except ValueError:
                    raise IngestError(f"{path}: non-numeric cell at (row {r}, col {c}): {cell!r}") from None
                if not np.isfinite(v):
                    raise IngestError(f"{path}: non-finite value at (row {r}, col {c})")
                if v < 0:
                    raise IngestError(f"{path}: negative volume at (row {r}, col {c}): {v}")
                vals.append(v)
            rows.append(vals)
    values = np.asarray(rows, dtype=np.float64).reshape(len(rows), width).T
    logger.info("loaded %s: %d sensors x %d steps", path, width, len(rows))
    return TrafficTensor(values, interval_minutes, [h.strip() for h in header])


def write_traffic_csv(traffic: TrafficTensor, path) -> None:
    with open(Path(path), "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(traffic.sensor_ids)
        for row in traffic.values.T:
            w.writerow([repr(float(v)) for v in row])


def window_stats(window: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Per-node mean and population std over the last axis, std floored to 1."""
    mu = window.mean(axis=-1)
    sigma = window.std(axis=-1)
    sigma = np.where(sigma < SIGMA_FLOOR, 1.0, sigma)
    return mu, sigma


def zscore_embed(window, base: Tensor, stats=None):
    """Standardise each node's window and scale the base embedding by it.

    ``window`` is ``[..., N, T]``; returns a ``[..., N, T, d]`` tensor and the
    ``(mu, sigma)`` used.
    """
    window = np.asarray(window, dtype=base.dtype)
    mu, sigma = window_stats(window) if stats is None else stats
    z = (window - mu[..., None]) / sigma[..., None]
    emb = mul(Tensor(z[..., None]), base)
    return emb, (mu, sigma)


@dataclass
class WindowBatch:
    history: np.ndarray  # [B, N, T]
    targets: np.ndarray  # [B, N, H]
    mu: np.ndarray       # [B, N]
    sigma: np.ndarray    # [B, N]
    starts: np.ndarray   # [B]

    def __len__(self) -> int:
        return len(self.starts)

    @property
    def norm_history(self) -> np.ndarray:
        return (self.history - self.mu[..., None]) / self.sigma[..., None]

    @property
    def norm_targets(self) -> np.ndarray:
        return (self.targets - self.mu[..., None]) / self.sigma[..., None]

    def denormalize(self, pred: np.ndarray) -> np.ndarray:
        return pred * self.sigma[..., None] + self.mu[..., None]

    def subset(self, idx) -> "WindowBatch":
        return WindowBatch(self.history[idx], self.targets[idx], self.mu[idx],
                           self.sigma[idx], self.starts[idx])

    def batches(self, size: int = 32, rng: np.random.Generator | None = None):
        order = np.arange(len(self)) if rng is None else rng.permutation(len(self))
        for i in range(0, len(order), size):
            yield self.subset(order[i:i + size])

    def astype(self, dtype) -> "WindowBatch":
        return WindowBatch(self.history.astype(dtype), self.targets.astype(dtype),
                           self.mu.astype(dtype), self.sigma.astype(dtype), self.starts)


def count_windows(segment_len: int, T: int, H: int) -> int:
    return max(0, segment_len - T - H + 1)


def split_bounds(n_steps: int, split=(60, 20, 20)) -> list[tuple[int, int]]:
    if len(split) != 3 or any(p < 0 for p in split) or abs(sum(split) - 100) > 1e-9:
        raise ValueError(f"split percentages must be three non-negative numbers summing to 100, got {split}")
    n_train = int(n_steps * split[0] / 100)
    n_val = int(n_steps * split[1] / 100)
    if split[2] == 0:
        n_val = n_steps - n_train
    return [(0, n_train), (n_train, n_train + n_val), (n_train + n_val, n_steps)]


def _extract(values: np.ndarray, lo: int, hi: int, T: int, H: int):
    n = count_windows(hi - lo, T, H)
    starts = lo + np.arange(n)
    if n == 0:
        N = values.shape[0]
        return np.empty((0, N, T)), np.empty((0, N, H)), starts
    span = np.lib.stride_tricks.sliding_window_view(values[:, lo:hi], T + H, axis=1)[:, :n]
    span = np.ascontiguousarray(span.transpose(1, 0, 2))
    return span[..., :T], span[..., T:], starts


def make_windows(traffic: TrafficTensor, T: int = 12, H: int = 12, split=(60, 20, 20),
                 normalization: str = "window") -> tuple[WindowBatch, WindowBatch, WindowBatch]:
    """Stride-1 windows inside each chronological split.

    ``normalization="window"`` uses per-window per-node statistics;
    ``"global"`` uses per-node statistics of the whole training segment.
    """
    values = traffic.values
    bounds = split_bounds(values.shape[1], split)
    (tr_lo, tr_hi) = bounds[0]
    if count_windows(tr_hi - tr_lo, T, H) == 0:
        need = int(np.ceil((T + H) * 100 / split[0])) if split[0] > 0 else float("inf")
        raise ValueError(f"training split of {tr_hi - tr_lo} steps holds no window of T+H={T + H}; "
                         f"need at least {need} total steps")
    if normalization == "global":
        g_mu, g_sigma = window_stats(values[:, tr_lo:tr_hi])
    elif normalization != "window":
        raise ValueError(f"unknown normalization {normalization!r}")

    out = []
    for name, (lo, hi) in zip(("train", "val", "test"), bounds):
        hist, targ, starts = _extract(values, lo, hi, T, H)
        if len(starts) == 0 and hi > lo:
            logger.warning("%s split (%d steps) is shorter than T+H=%d; it holds no windows", name, hi - lo, T + H)
        if normalization == "window":
            mu, sigma = window_stats(hist) if len(starts) else (np.empty((0, values.shape[0])),) * 2
        else:
            mu = np.broadcast_to(g_mu, (len(starts), values.shape[0])).copy()
            sigma = np.broadcast_to(g_sigma, (len(starts), values.shape[0])).copy()
        out.append(WindowBatch(hist, targ, mu, sigma, starts))
    return tuple(out)


@dataclass
class SynthConfig:
    n_nodes: int = 30
    t_total: int = 2016
    seed: int = 0
    n_communities: int = 2
    period: int = 288
    noise: float = 0.1
    shared_noise: float = 0.5
    intra_p: float = 0.5
    inter_p: float = 0.02
    base_level: float = 100.0


def synth_generate(cfg: SynthConfig) -> tuple[TrafficTensor, SpatialGraph]:
    """Community-structured graph plus phase-shifted daily sinusoids.

    Every community owns a sinusoid with its own phase and a slowly varying
    AR(1) disturbance shared by its members; nodes add their own level offset,
    amplitude and white noise. Both random terms scale with ``cfg.noise`` so
    ``noise=0`` yields the deterministic sinusoid mixture.
    """
    if cfg.n_communities < 1 or cfg.n_nodes < cfg.n_communities:
        raise ValueError(f"need 1 <= communities <= nodes, got {cfg.n_communities} communities "
                         f"for {cfg.n_nodes} nodes")
    rng = np.random.Generator(np.random.Philox(cfg.seed))
    N, Tt, C = cfg.n_nodes, cfg.t_total, cfg.n_communities
    community = np.arange(N) * C // N

    edges = []
    for c in range(C):
        members = np.flatnonzero(community == c)
        # ring keeps each community connected
        for i in range(len(members) - 1):
            edges.append((members[i], members[i + 1]))
        if len(members) > 2:
            edges.append((members[-1], members[0]))
    iu, ju = np.triu_indices(N, k=1)
    same = community[iu] == community[ju]
    draw = rng.random(len(iu))
    pick = np.where(same, draw < cfg.intra_p, draw < cfg.inter_p)
    edges.extend(zip(iu[pick].tolist(), ju[pick].tolist()))
    graph = build_graph(edges, N)

    t = np.arange(Tt)
    phase = 2 * np.pi * np.arange(C) / C
    level = cfg.base_level * (1.0 + 0.2 * rng.standard_normal(N))
    amp = 0.5 * cfg.base_level * (1.0 + 0.1 * rng.standard_normal(N))
    clean = level[:, None] + amp[:, None] * np.sin(2 * np.pi * t[None, :] / cfg.period + phase[community][:, None])

    shared = np.zeros((C, Tt))
    eps = rng.standard_normal((C, Tt))
    rho = 0.95
    for k in range(1, Tt):
        shared[:, k] = rho * shared[:, k - 1] + np.sqrt(1 - rho ** 2) * eps[:, k]
    white = rng.standard_normal((N, Tt))
    scale = cfg.noise * cfg.base_level
    values = clean + scale * (cfg.shared_noise * shared[community] + white)
    values = np.clip(values, 0.0, None)
    return TrafficTensor(values, 5, [f"s{i}" for i in range(N)]), graph
