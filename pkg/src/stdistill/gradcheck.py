"""Central finite-difference checks of the autodiff gradients."""
from __future__ import annotations

from typing import Callable

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

REL_TOL = 1e-4
STEP = 1e-5


def numeric_grad(f: Callable[..., float], arrays: list[np.ndarray], step: float = STEP) -> list[np.ndarray]:
    grads = []
    for a in arrays:
        g = np.zeros_like(a)
        it = np.nditer(a, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = a[i]
            a[i] = old + step
            up = f(*arrays)
            a[i] = old - step
            down = f(*arrays)
            a[i] = old
            g[i] = (up - down) / (2 * step)
        grads.append(g)
    return grads


def rel_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-10)
    return float(np.linalg.norm(a - b) / denom)


def check(fn: Callable[..., Tensor], arrays: list[np.ndarray], step: float = STEP) -> float:
    """Largest relative error between autodiff and finite-difference gradients
    of the scalar ``fn(*tensors)`` over every input array."""
    arrays = [np.array(a, dtype=np.float64) for a in arrays]
    ts = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    grads = ad.backward(fn(*ts), ts)

    def scalar(*xs):
        return float(fn(*[Tensor(x) for x in xs]).data)

    num = numeric_grad(scalar, arrays, step)
    return max(rel_error(grads[t], n) for t, n in zip(ts, num))


def _proj(rng, shape):
    # fixed random projection turns any output into a scalar with non-trivial gradient
    w = rng.standard_normal(shape)
    return lambda y: ad.tsum(y * w)


def op_checks(rng: np.random.Generator) -> dict[str, Callable[[], float]]:
    """Named zero-argument checks for every differentiable primitive."""
    from .distill import contrastive_loss, kl_alignment_loss

    def away_from_zero(shape):
        x = rng.standard_normal(shape)
        return x + np.sign(x) * 0.1

    checks = {}
    a, b = rng.standard_normal((3, 4)), rng.standard_normal((4, 2))
    p = _proj(rng, (3, 2))
    checks["matmul"] = lambda: check(lambda x, y: p(ad.matmul(x, y)), [a, b])

    x, k, bias = rng.standard_normal((2, 5, 3)), rng.standard_normal((3, 3, 4)), rng.standard_normal(4)
    pc = _proj(rng, (2, 5, 4))
    checks["conv1d"] = lambda: check(lambda u, v, w: pc(ad.conv1d(u, v, w)), [x, k, bias])

    xr = away_from_zero((4, 5))
    pr = _proj(rng, (4, 5))
    checks["relu"] = lambda: check(lambda u: pr(ad.relu(u)), [xr])
    checks["leaky_relu"] = lambda: check(lambda u: pr(ad.leaky_relu(u, 0.1)), [xr])
    keep_seed = int(rng.integers(2 ** 31))
    checks["dropout"] = lambda: check(
        lambda u: pr(ad.dropout(u, 0.3, True, np.random.Generator(np.random.Philox(keep_seed)))), [xr])

    xs = rng.standard_normal((3, 6))
    ps = _proj(rng, (3, 6))
    checks["softmax"] = lambda: check(lambda u: ps(ad.softmax(u, -1)), [xs])
    checks["log_softmax"] = lambda: check(lambda u: ps(ad.log_softmax(u, -1)), [xs])
    mask = rng.random((3, 6)) > 0.3
    mask[:, 0] = True
    pl = _proj(rng, (3,))
    checks["logsumexp"] = lambda: check(lambda u: pl(ad.logsumexp(u, -1, mask)), [xs])
    checks["l2_normalize"] = lambda: check(lambda u: ps(ad.l2_normalize(u, -1)), [xs])

    adj = rng.random((4, 4))
    adj = adj + adj.T
    xp = rng.standard_normal((2, 4, 3))
    pp = _proj(rng, (2, 4, 3))
    checks["propagate"] = lambda: check(lambda u: pp(ad.propagate(adj, u)), [xp])

    xe = rng.standard_normal((3, 4))
    pe = _proj(rng, (3, 4))
    checks["elementwise"] = lambda: check(
        lambda u, v: pe(ad.exp(u) * v - u / (ad.sqrt(v * v + 1.0)) + ad.log(v * v + 2.0)), [xe, xe[::-1].copy()])
    checks["reduce_reshape"] = lambda: check(
        lambda u: ad.tsum(ad.mean(ad.reshape(ad.transpose(u, (1, 0)), (2, 6)), axis=0) ** 2), [xe])

    te, se = rng.standard_normal((4, 3, 5)), rng.standard_normal((4, 3, 5))
    checks["kl_alignment"] = lambda: check(lambda u: kl_alignment_loss(te, u), [se])
    checks["contrastive"] = lambda: check(lambda u: contrastive_loss(u, te, 0.5), [se])
    return checks


def model_checks(rng: np.random.Generator) -> dict[str, Callable[[], float]]:
    """Full-model checks with small shapes, eval-mode dropout."""
    from .data import synth_generate, SynthConfig
    from .student import StudentConfig, init_params as init_s, student_forward
    from .teacher import TeacherConfig, init_params as init_t, mse_loss, teacher_forward

    seed = int(rng.integers(2 ** 31))
    traffic, graph = synth_generate(SynthConfig(n_nodes=5, t_total=40, seed=seed, intra_p=0.6))
    adj = graph.normalized_adjacency()
    T, H, d = 6, 3, 4
    hist = traffic.values[None, :, :T]
    targ = traffic.values[None, :, T:T + H]
    from .data import window_stats
    mu, sigma = window_stats(hist)
    ytrue = (targ - mu[..., None]) / sigma[..., None]

    tcfg = TeacherConfig(n_layers=2, d=d, kernel_size=2, dropout=0.0, T=T, H=H)
    # random biases keep ReLU pre-activations off the kink at exactly zero
    tp = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in init_t(tcfg, rng).items()}
    tnames = list(tp)

    def teacher_loss_fn(*arrs):
        act = teacher_forward(hist, adj, dict(zip(tnames, arrs)), tcfg, stats=(mu, sigma))
        return mse_loss(act.pred_norm, ytrue)

    scfg = StudentConfig(n_layers=3, d=d, T=T, H=H)
    sp = {k: v + 0.1 * rng.standard_normal(v.shape) for k, v in init_s(scfg, rng).items()}
    snames = list(sp)

    def student_loss_fn(*arrs):
        act = student_forward(hist, dict(zip(snames, arrs)), scfg, stats=(mu, sigma))
        return mse_loss(act.pred_norm, ytrue)

    return {
        "teacher_model": lambda: check(teacher_loss_fn, [tp[n] for n in tnames]),
        "student_model": lambda: check(student_loss_fn, [sp[n] for n in snames]),
    }


def run_all(seeds=range(20), include_models: bool = True) -> dict[str, float]:
    """Worst relative error per check across ``seeds``."""
    worst: dict[str, float] = {}
    for s in seeds:
        rng = np.random.default_rng(s)
        checks = op_checks(rng)
        if include_models:
            checks.update(model_checks(rng))
        for name, fn in checks.items():
            worst[name] = max(worst.get(name, 0.0), fn())
    return worst
