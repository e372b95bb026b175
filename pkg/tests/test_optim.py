import numpy as np
import pytest

from stdistill.optim import AdamState, Optimizer, adam_step, sgd_step


def test_zero_gradient_leaves_params_and_decays_moments():
    p = {"w": np.array([1.0, -2.0])}
    state = AdamState(lr=0.1, m={"w": np.array([0.5, 0.5])}, v={"w": np.array([0.2, 0.2])}, step=3)
    new, s2 = adam_step(p, {"w": np.zeros(2)}, state)
    np.testing.assert_allclose(s2.m["w"], 0.9 * 0.5)
    np.testing.assert_allclose(s2.v["w"], 0.999 * 0.2)
    assert s2.step == 4
    # zero gradient on fresh state: no movement at all
    fresh, _ = adam_step(p, {"w": np.zeros(2)}, AdamState(lr=0.1))
    np.testing.assert_array_equal(fresh["w"], p["w"])


@pytest.mark.parametrize("g", [3.0, -0.02, 1e3])
def test_first_step_moves_by_learning_rate(g):
    lr = 1e-3
    new, _ = adam_step({"w": np.array(1.0)}, {"w": np.array(g)}, AdamState(lr=lr))
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    expected = 1.0 - lr * g / (abs(g) + 1e-8)
    np.testing.assert_allclose(new["w"], expected, rtol=0, atol=1e-15)
    assert abs(abs(new["w"] - 1.0) - lr) < 1e-8


def test_deterministic_and_pure():
    p = {"w": np.array([1.0, 2.0])}
    g = {"w": np.array([0.3, -0.1])}
    s = AdamState(lr=0.01)
    a, sa = adam_step(p, g, s)
    b, sb = adam_step(p, g, s)
    np.testing.assert_array_equal(a["w"], b["w"])
    np.testing.assert_array_equal(sa.m["w"], sb.m["w"])
    assert s.step == 0 and not s.m
    np.testing.assert_array_equal(p["w"], [1.0, 2.0])


def test_shape_mismatch():
    with pytest.raises(ValueError):
        adam_step({"w": np.ones(2)}, {"w": np.ones(3)}, AdamState())


def test_sgd_and_optimizer_wrapper():
    p = {"w": np.array([1.0])}
    np.testing.assert_allclose(sgd_step(p, {"w": np.array([2.0])}, 0.5)["w"], [0.0])
    opt = Optimizer("adam", lr=0.1)
    w = {"w": np.array([5.0])}
    for _ in range(200):
        w = opt.step(w, {"w": 2 * w["w"]})
    assert abs(w["w"][0]) < 0.5
    with pytest.raises(ValueError):
        Optimizer("rmsprop")
