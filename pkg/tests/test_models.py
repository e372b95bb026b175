import numpy as np
import pytest

from stdistill import autodiff as ad
from stdistill.autodiff import ShapeError, Tensor
from stdistill.graph import build_graph
from stdistill.student import StudentConfig, init_params as init_student, n_params, student_forward, student_loss
from stdistill.teacher import (TeacherConfig, init_params as init_teacher, manifest, tcn_forward, teacher_forward,
                               teacher_loss)

from oracles import neighbor_sum_layer


@pytest.fixture
def triangle():
    return build_graph([(0, 1), (1, 2), (0, 2)], 3).normalized_adjacency()


class TestTcn:
    def _params(self, kernel, d):
        return {"tcn1.kernel": Tensor(kernel), "tcn1.bias": Tensor(np.zeros(d)),
                "tcn2.kernel": Tensor(kernel), "tcn2.bias": Tensor(np.zeros(d))}

    def test_zero_kernels(self, rng):
        cfg = TeacherConfig(d=3, slope=0.1)
        e = rng.standard_normal((5, 3))
        out = tcn_forward(Tensor(e), self._params(np.zeros((3, 3, 3)), 3), cfg).data
        lrelu = lambda x: np.where(x > 0, x, 0.1 * x)
        np.testing.assert_allclose(out, lrelu(lrelu(e)))

    def test_identity_impulse(self, rng):
        cfg = TeacherConfig(d=2, slope=0.1)
        k = np.zeros((3, 2, 2))
        k[-1] = np.eye(2)
        e = rng.standard_normal((6, 2))
        lrelu = lambda x: np.where(x > 0, x, 0.1 * x)
        h1 = lrelu(2 * e)
        np.testing.assert_allclose(tcn_forward(Tensor(e), self._params(k, 2), cfg).data, lrelu(2 * h1))

    def test_causal(self, rng):
        cfg = TeacherConfig(d=4)
        p = {k: Tensor(v) for k, v in init_teacher(cfg, rng).items()}
        e = rng.standard_normal((12, 4))
        e2 = e.copy()
        e2[7] += 3.0
        a, b = tcn_forward(Tensor(e), p, cfg).data, tcn_forward(Tensor(e2), p, cfg).data
        np.testing.assert_array_equal(a[:7], b[:7])


class TestTeacher:
    def test_constant_window_gives_bias(self, triangle, rng):
        cfg = TeacherConfig(d=4, T=6, H=3)
        p = init_teacher(cfg, rng)
        p["readout.bias"] = np.array([1.0, -2.0, 0.5])
        act = teacher_forward(np.full((3, 6), 40.0), triangle, p, cfg)
        np.testing.assert_array_equal(act.temporal.data, 0.0)
        np.testing.assert_allclose(act.pred[0], np.tile(40.0 + p["readout.bias"], (3, 1)))

    def test_deterministic_eval(self, triangle, rng):
        cfg = TeacherConfig(d=4, T=6, H=3)
        p = init_teacher(cfg, rng)
        x = rng.random((2, 3, 6)) * 10
        a, b = teacher_forward(x, triangle, p, cfg), teacher_forward(x, triangle, p, cfg)
        np.testing.assert_array_equal(a.pred_norm.data, b.pred_norm.data)

    def test_isolated_node_gets_no_neighbor_mass(self, rng):
        import warnings
        edges = [(0, 1), (1, 2), (0, 2)]
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            adj = build_graph(edges, 4).normalized_adjacency()
        cfg = TeacherConfig(d=3, T=5, H=2)
        p = init_teacher(cfg, rng)
        x = rng.random((4, 5)) * 10
        act = teacher_forward(x, adj, p, cfg)
        for h in act.layers[1:]:
            np.testing.assert_array_equal(h.data[0, 3], 0.0)
        # first propagation equals the neighbour-loop oracle slot by slot
        e0 = act.layers[0].data[0]
        for t in range(5):
            ref = neighbor_sum_layer(4, edges, e0[:, t], p["gcn0.weight"])
            np.testing.assert_allclose(act.layers[1].data[0][:, t], ref, atol=1e-12)

    def test_shapes(self, triangle, rng):
        cfg = TeacherConfig(d=5, T=6, H=4)
        act = teacher_forward(rng.random((7, 3, 6)), triangle, init_teacher(cfg, rng), cfg)
        assert act.pred.shape == (7, 3, 4)
        assert act.spatial.shape == act.temporal.shape == (7, 3, 6, 5)
        assert len(act.layers) == cfg.n_layers + 1

    def test_wrong_history_length(self, triangle, rng):
        cfg = TeacherConfig(d=4, T=6, H=3)
        with pytest.raises(ShapeError):
            teacher_forward(rng.random((3, 5)), triangle, init_teacher(cfg, rng), cfg)

    def test_manifest_matches_init(self, rng):
        cfg = TeacherConfig(d=4, T=6, H=3)
        p = init_teacher(cfg, rng)
        assert [(k, v.shape) for k, v in p.items()] == manifest(cfg)

    def test_dropout_only_in_training(self, triangle, rng):
        cfg = TeacherConfig(d=4, T=6, H=3, dropout=0.5)
        p = init_teacher(cfg, rng)
        x = rng.random((2, 3, 6))
        ev = teacher_forward(x, triangle, p, cfg).pred_norm.data
        tr = teacher_forward(x, triangle, p, cfg, training=True, rng=np.random.default_rng(0)).pred_norm.data
        assert not np.allclose(ev, tr)


class TestLosses:
    def test_teacher_loss_example(self):
        assert teacher_loss(Tensor(np.array([[1.0, 2.0]])), np.zeros((1, 2))).item() == 5.0

    def test_student_loss_example(self):
        assert student_loss(Tensor(np.array([[3.0], [4.0]])), np.zeros((2, 1))).item() == 12.5

    def test_zero_and_quadratic(self, rng):
        y = rng.standard_normal((4, 3))
        r = rng.standard_normal((4, 3))
        assert student_loss(Tensor(y), y).item() == 0.0
        a = student_loss(Tensor(y + r), y).item()
        b = student_loss(Tensor(y + 2 * r), y).item()
        assert b == pytest.approx(4 * a)

    def test_permutation_invariance(self, rng):
        y, p = rng.standard_normal((5, 2)), rng.standard_normal((5, 2))
        perm = rng.permutation(5)
        assert student_loss(Tensor(p), y).item() == pytest.approx(student_loss(Tensor(p[perm]), y[perm]).item())

    def test_batch_mean(self, rng):
        y, p = rng.standard_normal((3, 5, 2)), rng.standard_normal((3, 5, 2))
        per = [student_loss(Tensor(p[i]), y[i]).item() for i in range(3)]
        assert student_loss(Tensor(p), y).item() == pytest.approx(np.mean(per))


class TestStudent:
    def test_constant_window_gives_bias(self, rng):
        cfg = StudentConfig(d=4, T=6, H=2)
        p = init_student(cfg, rng)
        p["readout.bias"] = np.array([3.0, 1.0])
        # with zero hidden biases the embedding of a constant window is exactly zero
        act = student_forward(np.full((2, 6), 10.0), p, cfg)
        np.testing.assert_array_equal(act.embedding.data, 0.0)
        np.testing.assert_allclose(act.pred[0], np.tile(10.0 + p["readout.bias"], (2, 1)))

    def test_identical_windows_identical_rows(self, rng):
        cfg = StudentConfig(d=4, T=6, H=2)
        p = init_student(cfg, rng)
        row = rng.random(6)
        act = student_forward(np.stack([row, row, rng.random(6)]), p, cfg)
        np.testing.assert_array_equal(act.embedding.data[0, 0], act.embedding.data[0, 1])

    def test_takes_no_graph(self):
        import inspect
        assert "adj" not in inspect.signature(student_forward).parameters

    def test_last_layer_unconstrained(self, rng):
        cfg = StudentConfig(d=8, T=6, H=2)
        act = student_forward(rng.random((3, 4, 6)), init_student(cfg, rng), cfg)
        assert act.embedding.data.min() < 0

    def test_conv_tail(self, rng):
        cfg = StudentConfig(d=4, T=6, H=2, conv_tail=True)
        p = init_student(cfg, rng)
        assert "tail.kernel" in p
        assert student_forward(rng.random((2, 3, 6)), p, cfg).pred.shape == (2, 3, 2)

    def test_smaller_than_teacher(self):
        tcfg = TeacherConfig()
        t = sum(int(np.prod(s)) for _, s in manifest(tcfg))
        assert n_params(StudentConfig()) < t
