import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from shiftbai import ShiftOLSRegressor
from shiftbai.errors import DisconnectedDesignError

X = np.array([[0, 1], [0, 1], [1, 1], [0, 2], [1, 2]])
y = np.array([0.0, 2.0, 1.0, 4.0, 5.0])


def test_fit_matches_known_solution():
    model = ShiftOLSRegressor().fit(X, y)
    np.testing.assert_allclose(model.mu_, [6 / 7, 9 / 7], atol=1e-12)
    np.testing.assert_allclose(model.shift_, [0, 24 / 7], atol=1e-12)
    assert model.sigma2_ == pytest.approx(8 / 7)
    assert model.dof_ == 2
    assert model.best_arm_ == 1
    expected = 8 / 7 * np.linalg.inv(np.array([[3.0, 0, 1], [0, 2, 1], [1, 1, 2]]))
    np.testing.assert_allclose(model.covariance_, expected, atol=1e-12)


def test_predict_and_score():
    model = ShiftOLSRegressor().fit(X, y)
    pred = model.predict(X)
    np.testing.assert_allclose(pred, model.mu_[X[:, 0]] + model.shift_[X[:, 1] - 1])
    assert model.score(X, y) <= 1.0


def test_params_roundtrip():
    model = ShiftOLSRegressor(n_arms=3, known_sigma2=2.0)
    assert model.get_params() == {"n_arms": 3, "known_sigma2": 2.0}
    copy = clone(model)
    assert copy.get_params() == model.get_params()
    model.set_params(known_sigma2=None)
    assert model.known_sigma2 is None


def test_known_variance_scales_covariance():
    a = ShiftOLSRegressor(known_sigma2=1.0).fit(X, y)
    b = ShiftOLSRegressor(known_sigma2=4.0).fit(X, y)
    np.testing.assert_allclose(b.covariance_, 4 * a.covariance_)


def test_predict_before_fit():
    with pytest.raises(NotFittedError):
        ShiftOLSRegressor().predict(X)


@pytest.mark.parametrize(
    "bad",
    [
        np.array([[0, 1, 0]] * 5),  # three columns
        np.array([[0.5, 1]] * 5),  # fractional arm
        np.array([[0, 0]] * 5),  # environment 0
    ],
)
def test_rejects_malformed_design(bad):
    with pytest.raises(ValueError):
        ShiftOLSRegressor().fit(bad, y)


def test_rejects_gapped_environments():
    with pytest.raises(ValueError):
        ShiftOLSRegressor().fit(np.array([[0, 1], [1, 1], [0, 3], [1, 3], [0, 1]]), y)


def test_disconnected_design():
    Xd = np.array([[0, 1], [1, 1], [2, 2], [2, 2], [0, 1]])
    with pytest.raises(DisconnectedDesignError):
        ShiftOLSRegressor().fit(Xd, y)


def test_unseen_environment_in_predict():
    model = ShiftOLSRegressor().fit(X, y)
    with pytest.raises(ValueError):
        model.predict(np.array([[0, 3]]))
