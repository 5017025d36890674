"""scikit-learn style front end for the shift-aware least-squares fit."""

import numpy as np
from sklearn.base import BaseEstimator, RegressorMixin
from sklearn.utils.validation import check_is_fitted, check_X_y, check_array

from .ols import fit_ols
from .stats import SufficientStats


def _check_design(X, y=None):
    if y is None:
        X = check_array(X, dtype=None)
    else:
        X, y = check_X_y(X, y, dtype=None, y_numeric=True)
    if X.shape[1] != 2:
        raise ValueError(f"X must have two columns (arm, environment), got {X.shape[1]}")
    if not np.all(X == np.round(X.astype(float))):
        raise ValueError("arm and environment columns must hold integers")
    X = X.astype(np.int64)
    if X[:, 0].min() < 0 or X[:, 1].min() < 1:
        raise ValueError("arms are 0-based, environments 1-based")
    return X if y is None else (X, np.asarray(y, dtype=float))


class ShiftOLSRegressor(RegressorMixin, BaseEstimator):
    """Least-squares arm means under additive per-environment shifts.

    ``X`` has one row per observation with columns ``(arm, environment)``;
    ``y`` holds the rewards. Environments are 1-based and must appear without
    gaps. Shifts are reported relative to environment 1.

    Parameters
    ----------
    n_arms : int or None
        Number of arms. Inferred from ``X`` when None.
    known_sigma2 : float or None
        Noise variance used for :attr:`covariance_`. Estimated when None.

    Attributes
    ----------
    mu_ : ndarray of shape (n_arms,)
    shift_ : ndarray of shape (n_environments,), ``shift_[0] == 0``
    covariance_ : ndarray, covariance of ``(mu, s_2..s_J)``
    sigma2_ : float or None
    best_arm_ : int
    """

    def __init__(self, n_arms=None, known_sigma2=None):
        self.n_arms = n_arms
        self.known_sigma2 = known_sigma2

    def fit(self, X, y):
        X, y = _check_design(X, y)
        n_arms = self.n_arms if self.n_arms is not None else int(X[:, 0].max()) + 1
        envs = X[:, 1]
        n_env = int(envs.max())
        if np.setdiff1d(np.arange(1, n_env + 1), envs).size:
            raise ValueError("environment ordinals must be contiguous from 1")
        counts = np.zeros((n_arms, n_env))
        cells = np.zeros((n_arms, n_env))
        np.add.at(counts, (X[:, 0], envs - 1), 1.0)
        np.add.at(cells, (X[:, 0], envs - 1), y)
        self.stats_ = SufficientStats.from_cells(counts, cells, float(y @ y))
        fit = fit_ols(self.stats_, known_sigma2=self.known_sigma2)
        self.fit_ = fit
        self.mu_ = fit.mu_hat
        self.shift_ = fit.shifts()
        self.sigma2_ = fit.sigma2_hat
        self.dof_ = fit.dof
        sigma2 = fit.sigma2 if (self.known_sigma2 is not None or fit.sigma2_hat is not None) else np.nan
        self.covariance_ = sigma2 * fit.theta_cov_unit
        self.best_arm_ = int(np.argmax(fit.mu_hat))
        self.n_features_in_ = 2
        return self

    def predict(self, X):
        """Expected reward ``mu[arm] + s[env]`` for each row."""
        check_is_fitted(self, "mu_")
        X = _check_design(X)
        if X[:, 1].max() > self.shift_.size:
            raise ValueError("cannot predict for an environment not seen during fit")
        return self.mu_[X[:, 0]] + self.shift_[X[:, 1] - 1]
