import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from stdistill import autodiff as ad
from stdistill.autodiff import ShapeError, Tensor
from stdistill.gradcheck import check, op_checks


def T(x, grad=False):
    return Tensor(np.asarray(x, dtype=np.float64), requires_grad=grad)


class TestMatmul:
    def test_identity(self):
        a = [[1.0, 2.0], [3.0, 4.0]]
        np.testing.assert_array_equal(ad.matmul(T(np.eye(2)), T(a)).data, a)

    def test_hand_expansion(self):
        out = ad.matmul(T([[1, 2], [3, 4]]), T([[5, 6], [7, 8]])).data
        np.testing.assert_array_equal(out, [[19, 22], [43, 50]])

    def test_ones_row_by_column(self):
        np.testing.assert_array_equal(ad.matmul(T(np.ones((1, 3))), T(np.ones((3, 1)))).data, [[3.0]])

    def test_mismatch_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 3\)"):
            ad.matmul(T(np.ones((2, 3))), T(np.ones((2, 3))))

    def test_broadcast_gradient_is_summed(self, rng):
        x = T(rng.standard_normal((4, 5, 3)), True)
        w = T(rng.standard_normal((3, 2)), True)
        g = ad.backward(ad.tsum(ad.matmul(x, w)), [w])
        np.testing.assert_allclose(g[w], x.data.reshape(-1, 3).sum(0)[:, None] * np.ones((1, 2)))


class TestConv1d:
    def test_hand_sliding_window(self):
        out = ad.conv1d(T([[1.0], [2.0], [3.0]]), T(np.ones((2, 1, 1))), T([0.0]))
        np.testing.assert_array_equal(out.data.ravel(), [1, 3, 5])

    def test_unit_impulse_is_identity_plus_bias(self, rng):
        x = rng.standard_normal((6, 3))
        k = np.zeros((3, 3, 3))
        k[-1] = np.eye(3)
        b = np.array([0.5, -1.0, 2.0])
        np.testing.assert_allclose(ad.conv1d(T(x), T(k), T(b)).data, x + b)

    def test_zero_input_gives_bias(self, rng):
        b = rng.standard_normal(4)
        out = ad.conv1d(T(np.zeros((5, 3))), T(rng.standard_normal((2, 3, 4))), T(b)).data
        np.testing.assert_array_equal(out, np.tile(b, (5, 1)))

    def test_causal(self, rng):
        x = rng.standard_normal((8, 2))
        k = T(rng.standard_normal((3, 2, 2)))
        base = ad.conv1d(T(x), k).data
        x2 = x.copy()
        x2[5] += 10.0
        moved = ad.conv1d(T(x2), k).data
        np.testing.assert_array_equal(base[:5], moved[:5])
        assert not np.allclose(base[5:], moved[5:])

    def test_kernel_longer_than_padded_input(self):
        # causal padding is f - 1, so only an empty time axis is too short
        with pytest.raises(ShapeError):
            ad.conv1d(T(np.ones((0, 1))), T(np.ones((4, 1, 1))))
        assert ad.conv1d(T(np.ones((2, 1))), T(np.ones((4, 1, 1)))).shape == (2, 1)

    def test_batched_matches_loop(self, rng):
        x = rng.standard_normal((3, 4, 7, 2))
        k, b = rng.standard_normal((3, 2, 5)), rng.standard_normal(5)
        full = ad.conv1d(T(x), T(k), T(b)).data
        for i in range(3):
            for j in range(4):
                np.testing.assert_allclose(full[i, j], ad.conv1d(T(x[i, j]), T(k), T(b)).data)


class TestActivations:
    def test_relu(self):
        np.testing.assert_array_equal(ad.activation(T([-1.0, 0.0, 2.0]), "relu").data, [0, 0, 2])

    def test_leaky_relu(self):
        np.testing.assert_allclose(ad.activation(T([-2.0, 3.0]), "leaky_relu", slope=0.1).data, [-0.2, 3.0])

    def test_dropout_rate_zero(self, rng):
        x = rng.standard_normal(10)
        out = ad.activation(T(x), "dropout", rate=0.0, training=True, rng=rng)
        np.testing.assert_array_equal(out.data, x)

    def test_dropout_eval_mode_is_identity(self, rng):
        x = rng.standard_normal(10)
        np.testing.assert_array_equal(ad.dropout(T(x), 0.5, False).data, x)

    def test_dropout_keeps_expectation(self):
        g = np.random.Generator(np.random.Philox(3))
        out = ad.dropout(T(np.ones(200_000)), 0.3, True, g).data
        assert set(np.unique(out)) <= {0.0, 1 / 0.7}
        assert abs(out.mean() - 1.0) < 0.01

    def test_unknown_kind(self):
        with pytest.raises(ValueError):
            ad.activation(T([1.0]), "tanh")


class TestSoftmax:
    def test_uniform(self):
        np.testing.assert_allclose(ad.softmax(T(np.full(4, 2.5))).data, np.full(4, 0.25))

    def test_closed_form(self):
        np.testing.assert_allclose(ad.softmax(T([0.0, np.log(3.0)])).data, [0.25, 0.75], atol=1e-15)

    def test_single_element(self):
        np.testing.assert_array_equal(ad.softmax(T([[7.0]]), axis=-1).data, [[1.0]])

    def test_large_logits_stable(self):
        out = ad.softmax(T([1000.0, 1000.0])).data
        np.testing.assert_allclose(out, [0.5, 0.5])

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float64, st.integers(1, 8), elements=st.floats(-50, 50)))
    def test_sums_to_one(self, x):
        p = ad.softmax(T(x)).data
        assert np.all(p >= 0)
        assert abs(p.sum() - 1.0) < 1e-12

    def test_log_softmax_consistent(self, rng):
        x = rng.standard_normal((3, 5))
        np.testing.assert_allclose(np.exp(ad.log_softmax(T(x)).data), ad.softmax(T(x)).data)

    def test_masked_logsumexp(self):
        x = T([[0.0, 1.0, 2.0]])
        out = ad.logsumexp(x, -1, np.array([[True, False, True]])).data
        np.testing.assert_allclose(out, [np.log(1 + np.e ** 2)])


class TestBackward:
    def test_sum_gives_ones(self, rng):
        x = T(rng.standard_normal((2, 3, 4)), True)
        np.testing.assert_array_equal(ad.backward(ad.tsum(x), [x])[x], np.ones((2, 3, 4)))

    def test_square(self):
        x = T(3.0, True)
        assert ad.backward(x * x, [x])[x] == 6.0

    def test_non_scalar_loss(self):
        with pytest.raises(ValueError, match="scalar"):
            ad.backward(T([1.0, 2.0], True))

    def test_shared_subexpression_accumulates(self):
        x = T(2.0, True)
        y = x * x
        g = ad.backward(y * y + y, [x])[x]        # d/dx (x^4 + x^2) = 4x^3 + 2x
        assert g == 4 * 8 + 4

    def test_unreached_param_gets_zero(self):
        x, y = T(1.0, True), T([1.0, 2.0], True)
        g = ad.backward(x * 2.0, [x, y])
        np.testing.assert_array_equal(g[y], [0.0, 0.0])

    def test_no_grad_records_nothing(self):
        x = T(2.0, True)
        with ad.no_grad():
            y = x * x
        assert not y.requires_grad
        assert ad.is_grad_enabled()

    def test_deep_chain_no_recursion_limit(self):
        x = T(1.0, True)
        y = x
        for _ in range(5000):
            y = y + 0.0
        assert ad.backward(y, [x])[x] == 1.0

    def test_getitem_scatter(self):
        x = T(np.arange(6.0).reshape(2, 3), True)
        g = ad.backward(ad.tsum(x[:, 1:] * 2.0), [x])[x]
        np.testing.assert_array_equal(g, [[0, 2, 2], [0, 2, 2]])


class TestL2Normalize:
    def test_unit_norm(self, rng):
        out = ad.l2_normalize(T(rng.standard_normal((4, 3))), -1).data
        np.testing.assert_allclose(np.linalg.norm(out, axis=-1), 1.0)

    def test_zero_vector_maps_to_zero(self):
        out = ad.l2_normalize(T(np.zeros((1, 3))), -1).data
        np.testing.assert_array_equal(out, 0.0)


class TestPropagate:
    def test_dense_and_sparse_agree(self, rng):
        import scipy.sparse as sp
        a = rng.random((5, 5)) * (rng.random((5, 5)) > 0.5)
        x = T(rng.standard_normal((2, 3, 5, 4)), True)
        dense = ad.propagate(a, x)
        sparse = ad.propagate(sp.csr_matrix(a), x)
        np.testing.assert_allclose(dense.data, sparse.data)
        gd = ad.backward(ad.tsum(dense * dense), [x])[x]
        gs = ad.backward(ad.tsum(sparse * sparse), [x])[x]
        np.testing.assert_allclose(gd, gs)


@pytest.mark.parametrize("name", sorted(op_checks(np.random.default_rng(0))))
def test_op_gradients_match_finite_differences(name):
    for seed in range(3):
        assert op_checks(np.random.default_rng(seed))[name]() < 1e-6


def test_gradcheck_detects_wrong_gradient():
    def bad(x):
        return ad._make(x.data ** 2, (x,), lambda g: (g * 3.0,), "bad").sum()
    assert check(bad, [np.array([1.0, 2.0])]) > 0.1
