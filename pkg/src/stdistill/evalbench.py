"""Accuracy metrics, inference latency benchmarks and the over-smoothing probe."""
from __future__ import annotations

import os
import platform
import time
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad

MAPE_UNDEFINED = None


@dataclass
class MetricsReport:
    mae: float
    rmse: float
    mape: float | None      # percent; None when every target is masked
    per_horizon: list = field(default_factory=list)
    n_samples: int = 0

    def to_dict(self) -> dict:
        return asdict(self)


def _mape(err: np.ndarray, y: np.ndarray, floor: float):
    mask = np.abs(y) >= floor
    if floor == 0:
        mask &= y != 0
    if not mask.any():
        return MAPE_UNDEFINED
    return float(np.mean(np.abs(err[mask]) / np.abs(y[mask])) * 100.0)


def compute_metrics(pred, target, mape_floor: float = 1.0) -> MetricsReport:
    """MAE, RMSE and masked MAPE over ``[..., H]`` arrays, with a per-step
    breakdown along the last axis."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"prediction {pred.shape} and target {target.shape} differ")
    if mape_floor < 0:
        raise ValueError("mape_floor must be >= 0")
    err = pred - target
    per = []
    if err.ndim >= 1:
        e2 = err.reshape(-1, err.shape[-1])
        y2 = target.reshape(-1, target.shape[-1])
        for h in range(e2.shape[1]):
            per.append({"step": h + 1, "mae": float(np.mean(np.abs(e2[:, h]))),
                        "rmse": float(np.sqrt(np.mean(e2[:, h] ** 2))),
                        "mape": _mape(e2[:, h], y2[:, h], mape_floor)})
    return MetricsReport(float(np.mean(np.abs(err))), float(np.sqrt(np.mean(err ** 2))),
                         _mape(err, target, mape_floor), per, int(err.shape[0]) if err.ndim else 1)


def environment() -> dict:
    return {"cpu_count": os.cpu_count(), "machine": platform.machine(),
            "python": platform.python_version(), "numpy": np.__version__}


@dataclass
class LatencyReport:
    model: str
    n_batches: int
    n_windows: int
    total_s: float                  # median over repeats
    per_window_s: float
    repeats_s: list
    precision: str
    speedup: float | None = None
    reference: str | None = None
    env: dict = field(default_factory=environment)

    def to_dict(self) -> dict:
        return asdict(self)


def bench_inference(forward, batches, name: str = "model", warmup: int = 1, repeats: int = 5,
                    precision: str = "float32") -> LatencyReport:
    """Median-of-``repeats`` wall clock for running ``forward`` over every batch.

    ``forward`` maps one history array ``[B, N, T]`` (already cast) to
    predictions; ``batches`` is a list of such arrays in fixed order. Warm-up
    passes are not timed. Runs untaped.
    """
    if not batches:
        raise ValueError("cannot benchmark an empty dataset")
    if warmup < 1 or repeats < 1:
        raise ValueError("warmup and repeats must be >= 1")
    with ad.no_grad():
        for _ in range(warmup):
            forward(batches[0])
        times = []
        for _ in range(repeats):
            t0 = time.perf_counter()
            for b in batches:
                forward(b)
            times.append(time.perf_counter() - t0)
    total = float(np.median(times))
    n_windows = sum(len(b) for b in batches)
    return LatencyReport(name, len(batches), n_windows, total, total / n_windows, times, precision)


def bench_interleaved(forwards: dict, batches, warmup: int = 1, repeats: int = 5,
                      precision: str = "float32") -> dict[str, LatencyReport]:
    """Like :func:`bench_inference` for several models, timing them round-robin
    inside each repeat so slow drift in machine speed hits all of them alike."""
    if not batches:
        raise ValueError("cannot benchmark an empty dataset")
    if warmup < 1 or repeats < 1:
        raise ValueError("warmup and repeats must be >= 1")
    times = {name: [] for name in forwards}
    with ad.no_grad():
        for fwd in forwards.values():
            for _ in range(warmup):
                fwd(batches[0])
        for _ in range(repeats):
            for name, fwd in forwards.items():
                t0 = time.perf_counter()
                for b in batches:
                    fwd(b)
                times[name].append(time.perf_counter() - t0)
    n_windows = sum(len(b) for b in batches)
    reports = {}
    for name, ts in times.items():
        total = float(np.median(ts))
        reports[name] = LatencyReport(name, len(batches), n_windows, total, total / n_windows, ts, precision)
    return reports


def speedup(subject: LatencyReport, reference: LatencyReport) -> float:
    """How many times faster ``subject`` is than ``reference``."""
    return reference.total_s / subject.total_s


def oversmoothing_score(layers) -> list[float]:
    """Mean pairwise cosine similarity of node rows for each layer.

    Each layer is ``[..., N, d]``; leading axes (time slots, batch) are
    averaged. Zero rows have cosine 0 with everything.
    """
    scores = []
    for h in layers:
        h = h.data if isinstance(h, ad.Tensor) else np.asarray(h, dtype=np.float64)
        N = h.shape[-2]
        if N < 2:
            raise ValueError("over-smoothing score needs at least two nodes")
        norm = np.linalg.norm(h, axis=-1, keepdims=True)
        unit = np.where(norm > 1e-12, h / np.where(norm > 1e-12, norm, 1.0), 0.0)
        sims = unit @ np.swapaxes(unit, -1, -2)
        iu = np.triu_indices(N, k=1)
        scores.append(float(np.mean(sims[..., iu[0], iu[1]])))
    return scores


def summary_table(rows: list[dict]) -> str:
    """Fixed-width table with MAE, RMSE, MAPE, inference time and speedup."""
    head = f"{'Method':<12}{'MAE':>10}{'RMSE':>10}{'MAPE':>10}{'Inference':>12}{'Faster x':>10}"
    lines = [head, "-" * len(head)]
    for r in rows:
        mape = "n/a" if r.get("mape") is None else f"{r['mape']:.2f}%"
        sp = "-" if r.get("speedup") is None else f"{r['speedup']:.2f}x"
        lines.append(f"{r['model']:<12}{r['mae']:>10.3f}{r['rmse']:>10.3f}{mape:>10}"
                     f"{r['inference_s']:>11.3f}s{sp:>10}")
    return "\n".join(lines)
