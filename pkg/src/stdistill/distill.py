"""Distillation losses and the teacher-then-student training procedure."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import dataclass, asdict, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .data import WindowBatch
from .optim import Optimizer
from .student import StudentConfig, student_forward
from .student import init_params as init_student
from .teacher import TeacherConfig, mse_loss, teacher_forward
from .teacher import init_params as init_teacher

logger = logging.getLogger(__name__)


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class DistillConfig:
    tau_spatial: float = 0.5
    tau_temporal: float = 0.5
    lambda_kl: float = 1.0
    lambda_cl: float = 1.0
    lr: float = 1e-3
    epochs: int = 200
    batch_size: int = 32
    patience: int = 15
    seed: int = 0
    optimizer: str = "adam"
    kl_form: str = "kl"             # "kl" or "printed"
    freeze_teacher: bool = True

    def __post_init__(self):
        if self.tau_spatial <= 0 or self.tau_temporal <= 0:
            raise ValueError("temperatures must be positive")
        if self.lambda_kl < 0 or self.lambda_cl < 0:
            raise ValueError("loss weights must be non-negative")
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.kl_form not in ("kl", "printed"):
            raise ValueError(f"unknown kl_form {self.kl_form!r}")


# ---------------------------------------------------------------- losses

def horizon_slots(emb, H: int):
    """Last ``min(H, T)`` encoder slots of a ``[..., N, T, d]`` embedding."""
    T = emb.shape[-2]
    k = min(H, T)
    if k == T:
        return emb
    return emb[..., T - k:, :]


def _window_mean(per_window: Tensor) -> Tensor:
    return ad.mean(per_window) if per_window.ndim else per_window


def kl_alignment_loss(teacher_emb, student_emb: Tensor, form: str = "kl") -> Tensor:
    """KL(softmax(teacher) || softmax(student)) over the embedding axis,
    summed over nodes and slots (averaged over a leading batch axis).

    The teacher side is a constant. ``form="printed"`` evaluates
    ``sum teacher * log softmax(student)`` instead.
    """
    t = teacher_emb.data if isinstance(teacher_emb, Tensor) else np.asarray(teacher_emb)
    if t.shape != student_emb.shape:
        raise ad.ShapeError(f"teacher {t.shape} and student {student_emb.shape} embeddings differ")
    log_q = ad.log_softmax(student_emb, axis=-1)
    if form == "printed":
        terms = Tensor(t.astype(student_emb.dtype)) * log_q
    else:
        shifted = t - t.max(axis=-1, keepdims=True)
        log_p = shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))
        p = np.exp(log_p)
        terms = Tensor(p) * (Tensor(log_p) - log_q)
    per_window = ad.tsum(terms, axis=(-3, -2, -1)) if terms.ndim >= 3 else ad.tsum(terms)
    return _window_mean(per_window)


def contrastive_loss(student_emb: Tensor, target_emb, tau: float) -> Tensor:
    """Cosine-similarity contrast of each student row against the teacher
    row of the same node, with the other student rows as negatives.

    Inputs are ``[..., N, S, d]``. For anchor (n, s) the term is
    ``-cos(s_n, t_n)/tau + log sum_{n' != n} exp(cos(s_n', t_n)/tau)``;
    the positive pair is not in the denominator, so terms can be negative.
    Zero vectors have cosine 0.
    """
    t = target_emb.data if isinstance(target_emb, Tensor) else np.asarray(target_emb)
    if t.shape != student_emb.shape:
        raise ad.ShapeError(f"student {student_emb.shape} and target {t.shape} embeddings differ")
    N = student_emb.shape[-3]
    if N < 2:
        raise ValueError("contrastive loss needs at least two nodes (negative set is empty)")
    if tau <= 0:
        raise ValueError("temperature must be positive")
    nd = student_emb.ndim
    perm = tuple(range(nd - 3)) + (nd - 2, nd - 3, nd - 1)      # [..., S, N, d]
    s_hat = ad.l2_normalize(ad.transpose(student_emb, perm), axis=-1)
    t_hat = ad.l2_normalize(Tensor(np.transpose(t, perm).astype(student_emb.dtype)), axis=-1)
    # sims[..., s, n, n'] = cos(student n', target n)
    sims = ad.matmul(t_hat, ad.transpose(s_hat, tuple(range(nd - 2)) + (nd - 1, nd - 2))) * (1.0 / tau)
    eye = np.eye(N, dtype=bool)
    pos = ad.tsum(sims * eye.astype(sims.dtype), axis=-1)
    neg = ad.logsumexp(sims, axis=-1, mask=~eye)
    terms = neg - pos                                         # [..., S, N]
    per_window = ad.tsum(terms, axis=(-2, -1))
    return _window_mean(per_window)


def spatial_contrastive_loss(student_emb: Tensor, teacher_spatial, tau: float) -> Tensor:
    return contrastive_loss(student_emb, teacher_spatial, tau)


def temporal_contrastive_loss(student_emb: Tensor, teacher_temporal, tau: float) -> Tensor:
    return contrastive_loss(student_emb, teacher_temporal, tau)


def joint_loss(l_student, l_kl, l_spatial, l_temporal, lambda_kl: float, lambda_cl: float):
    return l_student + lambda_kl * l_kl + lambda_cl * (l_spatial + l_temporal)


def kl_gradient_weight(student_emb, n: int, j: int, t: int):
    """Softmax-derivative weight ``(1/p_n) * (-p_j) * (-p_n)`` at slot ``t``.

    ``p`` is the softmax across the leading (node) axis. A ``[N, S]`` logit
    array gives a float; an ``[N, S, d]`` embedding gives one weight per
    channel. Report-only diagnostic.
    """
    e = student_emb.data if isinstance(student_emb, Tensor) else np.asarray(student_emb, dtype=np.float64)
    if e.ndim not in (2, 3):
        raise ValueError(f"expected [N, S] or [N, S, d] student embeddings, got {e.shape}")
    col = e[:, t]
    col = col - col.max(axis=0, keepdims=True)
    p = np.exp(col) / np.exp(col).sum(axis=0, keepdims=True)
    w = (1.0 / p[n]) * (-p[j]) * (-p[n])
    return float(w) if e.ndim == 2 else w


# ---------------------------------------------------------------- training

def _streams(seed: int) -> tuple[np.random.Generator, ...]:
    return tuple(np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(3))


def _check_finite(value: float, epoch: int, step: int, what: str):
    if not np.isfinite(value):
        raise TrainingDiverged(f"{what} became {value} at epoch {epoch}, step {step}")


def predict_teacher(params, cfg: TeacherConfig, adj, data: WindowBatch, batch_size: int = 256) -> np.ndarray:
    out = []
    with ad.no_grad():
        for b in data.batches(batch_size):
            out.append(teacher_forward(b.history, adj, params, cfg, stats=(b.mu, b.sigma)).pred)
    return np.concatenate(out) if out else np.empty((0,) + data.targets.shape[1:])


def predict_student(params, cfg: StudentConfig, data: WindowBatch, batch_size: int = 256) -> np.ndarray:
    out = []
    with ad.no_grad():
        for b in data.batches(batch_size):
            out.append(student_forward(b.history, params, cfg, stats=(b.mu, b.sigma)).pred)
    return np.concatenate(out) if out else np.empty((0,) + data.targets.shape[1:])


def _mae(pred, data: WindowBatch) -> float:
    return float(np.mean(np.abs(pred - data.targets)))


class _EarlyStop:
    def __init__(self, patience: int):
        self.patience = patience
        self.best = np.inf
        self.best_params = None
        self.best_epoch = 0
        self.bad = 0

    def update(self, score: float, params: dict, epoch: int) -> bool:
        if score < self.best:
            self.best, self.best_epoch, self.bad = score, epoch, 0
            self.best_params = {k: v.copy() for k, v in params.items()}
        else:
            self.bad += 1
        return self.bad > self.patience


def train_teacher(train: WindowBatch, val: WindowBatch, adj, cfg: TeacherConfig,
                  dcfg: DistillConfig, params: dict | None = None):
    """Minimise the teacher MSE with mini-batches; early stop on validation MAE.

    Returns the best-validation parameters and the per-epoch log.
    """
    init_rng, shuffle_rng, drop_rng = _streams(dcfg.seed)
    params = init_teacher(cfg, init_rng) if params is None else dict(params)
    opt = Optimizer(dcfg.optimizer, dcfg.lr)
    monitor = val if len(val) else train
    stopper = _EarlyStop(dcfg.patience)
    log = []
    for epoch in range(1, dcfg.epochs + 1):
        t0 = time.perf_counter()
        losses = []
        for step, b in enumerate(train.batches(dcfg.batch_size, shuffle_rng)):
            p = {k: Tensor(v, requires_grad=True) for k, v in params.items()}
            act = teacher_forward(b.history, adj, p, cfg, training=True, rng=drop_rng, stats=(b.mu, b.sigma))
            loss = mse_loss(act.pred_norm, b.norm_targets)
            _check_finite(loss.item(), epoch, step, "teacher loss")
            grads = ad.backward(loss, p.values())
            params = opt.step(params, {k: grads[t] for k, t in p.items()})
            losses.append(loss.item())
        val_mae = _mae(predict_teacher(params, cfg, adj, monitor), monitor)
        log.append({"epoch": epoch, "loss_teacher": float(np.mean(losses)), "val_mae": val_mae,
                    "wall_clock_s": time.perf_counter() - t0})
        logger.info("teacher epoch %d loss %.4f val_mae %.4f", epoch, log[-1]["loss_teacher"], val_mae)
        if stopper.update(val_mae, params, epoch):
            break
    return stopper.best_params, log


def distill_step(student_params: dict, batch: WindowBatch, scfg: StudentConfig, dcfg: DistillConfig,
                 teacher_params: dict | None = None, tcfg: TeacherConfig | None = None, adj=None):
    """Losses and gradients for one batch.

    Returns ``(losses, student_grads, teacher_grads)``. With a frozen teacher
    its forward runs untaped and every teacher gradient is zero.
    """
    s = {k: Tensor(v, requires_grad=True) for k, v in student_params.items()}
    stats = (batch.mu, batch.sigma)
    sact = student_forward(batch.history, s, scfg, training=True, stats=stats)
    l_s = mse_loss(sact.pred_norm, batch.norm_targets)
    losses = {"loss_student": l_s.item()}
    t = {}
    if teacher_params is None:
        total = l_s
    else:
        t = {k: Tensor(v, requires_grad=True) for k, v in teacher_params.items()}
        if dcfg.freeze_teacher:
            with ad.no_grad():
                tact = teacher_forward(batch.history, adj, t, tcfg, stats=stats)
        else:
            tact = teacher_forward(batch.history, adj, t, tcfg, stats=stats)
        H = scfg.H
        s_emb = horizon_slots(sact.embedding, H)
        spatial = horizon_slots(tact.spatial, H)
        temporal = horizon_slots(tact.temporal, H)
        if dcfg.freeze_teacher:
            spatial, temporal = spatial.data, temporal.data
        l_kl = kl_alignment_loss(temporal, s_emb, dcfg.kl_form)
        l_p = spatial_contrastive_loss(s_emb, spatial, dcfg.tau_spatial)
        l_e = temporal_contrastive_loss(s_emb, temporal, dcfg.tau_temporal)
        total = joint_loss(l_s, l_kl, l_p, l_e, dcfg.lambda_kl, dcfg.lambda_cl)
        if not dcfg.freeze_teacher:
            total = total + mse_loss(tact.pred_norm, batch.norm_targets)
        losses.update(loss_kl=l_kl.item(), loss_spatial=l_p.item(), loss_temporal=l_e.item())
    losses["loss_total"] = total.item()
    grads = ad.backward(total, list(s.values()) + list(t.values()))
    return (losses, {k: grads[v] for k, v in s.items()}, {k: grads[v] for k, v in t.items()})


def kl_gradient_report(student_params: dict, scfg: StudentConfig, teacher_params: dict, tcfg: TeacherConfig,
                       adj, batch: WindowBatch, n: int = 0, j: int = 1, form: str = "kl") -> dict:
    """Gradient weight ``omega`` next to the autodiff gradient of the KL loss
    with respect to node ``n``'s student embedding at the last horizon slot,
    for the first window of ``batch``."""
    b = batch.subset(np.arange(1))
    stats = (b.mu, b.sigma)
    with ad.no_grad():
        s_emb = horizon_slots(student_forward(b.history, student_params, scfg, stats=stats).embedding, scfg.H)
        t_emb = horizon_slots(teacher_forward(b.history, adj, teacher_params, tcfg, stats=stats).temporal, scfg.H)
    leaf = Tensor(s_emb.data[0], requires_grad=True)
    grad = ad.backward(kl_alignment_loss(t_emb.data[0], leaf, form), [leaf])[leaf]
    t = leaf.shape[1] - 1
    return {"node": n, "other": j, "slot": t,
            "omega": kl_gradient_weight(leaf, n, j, t).tolist(),
            "kl_grad": grad[n, t].tolist()}


def distill_train(train: WindowBatch, val: WindowBatch, scfg: StudentConfig, dcfg: DistillConfig,
                  teacher_params: dict | None = None, tcfg: TeacherConfig | None = None, adj=None,
                  params: dict | None = None):
    """Train the student on the joint objective against a fixed teacher.

    With ``teacher_params=None`` this is plain supervised student training.
    Returns the best-validation student parameters and the per-epoch log.
    """
    if teacher_params is not None:
        if tcfg is None or adj is None:
            raise ValueError("teacher config and adjacency are required with a teacher")
        if (tcfg.d, tcfg.T) != (scfg.d, scfg.T):
            raise ad.ShapeError(f"teacher embeddings (d={tcfg.d}, T={tcfg.T}) and student "
                                f"embeddings (d={scfg.d}, T={scfg.T}) differ")
        teacher_params = dict(teacher_params)
    init_rng, shuffle_rng, _ = _streams(dcfg.seed)
    params = init_student(scfg, init_rng) if params is None else dict(params)
    opt = Optimizer(dcfg.optimizer, dcfg.lr)
    t_opt = Optimizer(dcfg.optimizer, dcfg.lr) if not dcfg.freeze_teacher else None
    monitor = val if len(val) else train
    stopper = _EarlyStop(dcfg.patience)
    log = []
    for epoch in range(1, dcfg.epochs + 1):
        t0 = time.perf_counter()
        sums: dict = {}
        n = 0
        for step, b in enumerate(train.batches(dcfg.batch_size, shuffle_rng)):
            losses, g, tg = distill_step(params, b, scfg, dcfg, teacher_params, tcfg, adj)
            _check_finite(losses["loss_total"], epoch, step, "joint loss")
            params = opt.step(params, g)
            if t_opt is not None:
                teacher_params = t_opt.step(teacher_params, tg)
            for k, v in losses.items():
                sums[k] = sums.get(k, 0.0) + v
            n += 1
        val_mae = _mae(predict_student(params, scfg, monitor), monitor)
        rec = {"epoch": epoch, **{k: v / n for k, v in sums.items()}, "val_mae": val_mae,
               "wall_clock_s": time.perf_counter() - t0}
        log.append(rec)
        logger.info("student epoch %d loss %.4f val_mae %.4f", epoch, rec["loss_total"], val_mae)
        if stopper.update(val_mae, params, epoch):
            break
    return stopper.best_params, log


def train_student(train: WindowBatch, val: WindowBatch, scfg: StudentConfig, dcfg: DistillConfig):
    """Student trained on labels only (the no-distillation baseline)."""
    return distill_train(train, val, scfg, dcfg)


def write_log(log: list, path) -> None:
    with open(path, "w") as fh:
        for rec in log:
            fh.write(json.dumps(rec, sort_keys=True) + "\n")


def read_log(path) -> list:
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]
