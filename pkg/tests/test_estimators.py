import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from stdistill import DistilledMLPRegressor, GraphTeacherRegressor, SynthConfig, make_windows, synth_generate


@pytest.fixture(scope="module")
def data():
    traffic, graph = synth_generate(SynthConfig(n_nodes=6, t_total=300, seed=0))
    return traffic, graph


@pytest.fixture(scope="module")
def fitted_teacher(data):
    traffic, graph = data
    return GraphTeacherRegressor(graph, d=4, n_layers=2, T=6, H=3, epochs=2).fit(traffic.values)


def test_get_params_and_clone(data):
    _, graph = data
    est = GraphTeacherRegressor(graph, d=4)
    assert est.get_params()["d"] == 4
    c = clone(est)
    assert c.get_params()["d"] == 4 and c is not est


def test_teacher_predict_shape_and_score(data, fitted_teacher):
    traffic, _ = data
    _, _, te = make_windows(traffic, 6, 3)
    pred = fitted_teacher.predict(te.history)
    assert pred.shape == te.targets.shape
    assert fitted_teacher.score(te.history, te.targets) == pytest.approx(-np.mean(np.abs(pred - te.targets)))
    assert fitted_teacher.transform(te.history[:2]).shape == (2, 6, 6, 4)


def test_student_distilled_from_teacher(data, fitted_teacher):
    traffic, _ = data
    _, _, te = make_windows(traffic, 6, 3)
    s = DistilledMLPRegressor(fitted_teacher, d=4, T=6, H=3, epochs=2).fit(traffic.values)
    assert s.predict(te.history).shape == te.targets.shape
    assert {"loss_kl", "loss_spatial"} <= set(s.log_[0])
    plain = DistilledMLPRegressor(None, d=4, T=6, H=3, epochs=2).fit(traffic.values)
    assert "loss_kl" not in plain.log_[0]


def test_validation(data, fitted_teacher):
    traffic, graph = data
    with pytest.raises(NotFittedError):
        GraphTeacherRegressor(graph, T=6, H=3).predict(np.zeros((1, 6, 6)))
    with pytest.raises(ValueError, match="graph"):
        GraphTeacherRegressor(None).fit(traffic.values)
    with pytest.raises(ValueError):
        fitted_teacher.predict(np.zeros((2, 5, 6)))
    with pytest.raises(ValueError):
        fitted_teacher.predict(np.zeros((2, 6, 4)))
    with pytest.raises(ValueError):
        GraphTeacherRegressor(graph).fit(np.zeros(10))
