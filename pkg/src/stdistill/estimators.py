"""scikit-learn style wrappers around the teacher and the distilled student.

``fit`` takes a traffic matrix ``[N, T_total]`` (or a :class:`TrafficTensor`)
and builds windows internally; ``predict`` takes history windows
``[B, N, T]`` (or one ``[N, T]`` window) and returns raw-unit forecasts.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted

from . import distill as dst
from .data import TrafficTensor, WindowBatch, make_windows, window_stats
from .evalbench import compute_metrics
from .graph import SpatialGraph
from .student import StudentConfig
from .teacher import TeacherConfig


def check_traffic(X) -> TrafficTensor:
    if isinstance(X, TrafficTensor):
        return X
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise ValueError(f"expected a 2-D traffic matrix (nodes x steps), got shape {X.shape}")
    return TrafficTensor(X)


def check_windows(X, T: int, n_nodes: int | None = None) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 2:
        X = X[None]
    if X.ndim != 3 or X.shape[-1] != T:
        raise ValueError(f"expected windows of shape [B, N, {T}], got {X.shape}")
    if n_nodes is not None and X.shape[1] != n_nodes:
        raise ValueError(f"model was fitted on {n_nodes} nodes, got {X.shape[1]}")
    if not np.all(np.isfinite(X)):
        raise ValueError("windows contain non-finite values")
    return X


def _as_batch(X: np.ndarray) -> WindowBatch:
    mu, sigma = window_stats(X)
    empty = np.empty(X.shape[:2] + (0,))
    return WindowBatch(X, empty, mu, sigma, np.arange(len(X)))


class _ForecasterMixin(RegressorMixin):
    def score(self, X, y, sample_weight=None):
        """Negative MAE of the forecasts, so larger is better."""
        return -compute_metrics(self.predict(X), np.asarray(y, dtype=np.float64)).mae

    def _split_data(self, X):
        traffic = check_traffic(X)
        return make_windows(traffic, self.T, self.H, self.split, self.normalization)

    def _train_cfg(self, epochs):
        return dst.DistillConfig(lr=self.lr, epochs=epochs, batch_size=self.batch_size,
                                 patience=self.patience, seed=self.random_state)


class GraphTeacherRegressor(_ForecasterMixin, BaseEstimator):
    """Graph teacher forecaster; ``graph`` is fixed at construction."""

    def __init__(self, graph: SpatialGraph | None = None, n_layers=3, d=64, kernel_size=3, dropout=0.1,
                 slope=0.01, T=12, H=12, lr=1e-3, epochs=200, batch_size=32, patience=15,
                 split=(60, 20, 20), normalization="window", random_state=0):
        self.graph = graph
        self.n_layers = n_layers
        self.d = d
        self.kernel_size = kernel_size
        self.dropout = dropout
        self.slope = slope
        self.T = T
        self.H = H
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.split = split
        self.normalization = normalization
        self.random_state = random_state

    def config(self) -> TeacherConfig:
        return TeacherConfig(self.n_layers, self.d, self.kernel_size, self.dropout, self.slope, self.T, self.H)

    def fit(self, X, y=None):
        if self.graph is None:
            raise ValueError("GraphTeacherRegressor needs a graph")
        train, val, _ = self._split_data(X)
        if train.history.shape[1] != self.graph.n_nodes:
            raise ValueError(f"traffic has {train.history.shape[1]} nodes, graph has {self.graph.n_nodes}")
        self.adj_ = self.graph.normalized_adjacency()
        self.params_, self.log_ = dst.train_teacher(train, val, self.adj_, self.config(),
                                                    self._train_cfg(self.epochs))
        self.n_nodes_ = self.graph.n_nodes
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_windows(X, self.T, self.n_nodes_)
        return dst.predict_teacher(self.params_, self.config(), self.adj_, _as_batch(X))

    def transform(self, X):
        """Temporal embeddings ``[B, N, T, d]`` used as distillation targets."""
        from . import autodiff as ad
        from .teacher import teacher_forward
        check_is_fitted(self, "params_")
        X = check_windows(X, self.T, self.n_nodes_)
        with ad.no_grad():
            return teacher_forward(X, self.adj_, self.params_, self.config()).temporal.data


class DistilledMLPRegressor(_ForecasterMixin, BaseEstimator):
    """Graph-free MLP student distilled from a fitted :class:`GraphTeacherRegressor`.

    With ``teacher=None`` or both loss weights at zero it is trained on
    labels alone.
    """

    def __init__(self, teacher: GraphTeacherRegressor | None = None, n_layers=3, d=64, T=12, H=12,
                 conv_tail=False, tau_spatial=0.5, tau_temporal=0.5, lambda_kl=1.0, lambda_cl=1.0,
                 kl_form="kl", lr=1e-3, epochs=200, batch_size=32, patience=15,
                 split=(60, 20, 20), normalization="window", random_state=0):
        self.teacher = teacher
        self.n_layers = n_layers
        self.d = d
        self.T = T
        self.H = H
        self.conv_tail = conv_tail
        self.tau_spatial = tau_spatial
        self.tau_temporal = tau_temporal
        self.lambda_kl = lambda_kl
        self.lambda_cl = lambda_cl
        self.kl_form = kl_form
        self.lr = lr
        self.epochs = epochs
        self.batch_size = batch_size
        self.patience = patience
        self.split = split
        self.normalization = normalization
        self.random_state = random_state

    def config(self) -> StudentConfig:
        return StudentConfig(self.n_layers, self.d, self.T, self.H, self.conv_tail)

    def _train_cfg(self, epochs):
        return dst.DistillConfig(self.tau_spatial, self.tau_temporal, self.lambda_kl, self.lambda_cl,
                                 self.lr, epochs, self.batch_size, self.patience, self.random_state,
                                 kl_form=self.kl_form)

    def fit(self, X, y=None):
        train, val, _ = self._split_data(X)
        kw = {}
        if self.teacher is not None:
            check_is_fitted(self.teacher, "params_")
            kw = dict(teacher_params=self.teacher.params_, tcfg=self.teacher.config(), adj=self.teacher.adj_)
        self.params_, self.log_ = dst.distill_train(train, val, self.config(), self._train_cfg(self.epochs), **kw)
        self.n_nodes_ = train.history.shape[1]
        return self

    def predict(self, X):
        check_is_fitted(self, "params_")
        X = check_windows(X, self.T)
        return dst.predict_student(self.params_, self.config(), _as_batch(X))

    def transform(self, X):
        from . import autodiff as ad
        from .student import student_forward
        check_is_fitted(self, "params_")
        X = check_windows(X, self.T)
        with ad.no_grad():
            return student_forward(X, self.params_, self.config()).embedding.data
