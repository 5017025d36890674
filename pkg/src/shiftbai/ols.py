"""Joint least-squares estimate of arm means and environment shifts.

The model is ``r = mu[i] + s[j] + eps`` with ``s[1] = 0`` pinned, so the
parameter vector is ``theta = (mu_1..mu_K, s_2..s_J)``. The Gram matrix
``X'X`` is assembled from cell counts::

    [[diag(N_i),  C        ],
     [C',         diag(m_j)]]      C[i, j] = n_ij for j >= 2

Because the shift block is diagonal the shifts are eliminated exactly, which
leaves the ``K x K`` Schur complement ``S = diag(N_i) - C diag(m_j)^-1 C'``.
``S^-1`` is the arm block of ``(X'X)^-1`` and is the only factorization the
fit needs.

Environments where a single arm was observed carry no information about the
means (their shift absorbs every reward), so they are left out of the
arm-block system. Their shifts are still reported. The arm-block system of
closed environments is accumulated as data arrive (see
:meth:`SufficientStats.schur_system`), so a fit costs ``O(K^3)`` plus the
current environment's update.
"""

import math
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.linalg.lapack import dpotrf, dpotri

from .errors import DisconnectedDesignError, SingularGramError
from .stats import ObservationLog, SufficientStats

PIVOT_RTOL = 1e-12
EXPLORATION_SCALE = 16.0


@dataclass
class OlsFit:
    mu_hat: np.ndarray
    mean_cov_unit: np.ndarray  # arm block of (X'X)^-1
    sigma2_hat: float | None
    dof: int
    known_sigma2: float | None = None
    prior_sigma2: float = 1.0
    _later_counts: np.ndarray | None = None  # n_ij for j >= 2
    _later_totals: np.ndarray | None = None  # env totals for j >= 2

    @property
    def n_arms(self):
        return self.mu_hat.size

    @property
    def n_params(self):
        return self.mu_hat.size + self._later_totals.size

    @cached_property
    def s_hat(self):
        """Shift estimates ``s_2..s_J`` relative to environment 1."""
        m = self._later_counts.sum(axis=0)
        return (self._later_totals - self.mu_hat @ self._later_counts) / m

    @property
    def sigma2(self):
        """Noise variance for confidence widths: known, else estimated, else the prior."""
        if self.known_sigma2 is not None:
            return self.known_sigma2
        if self.sigma2_hat is not None:
            return self.sigma2_hat
        return self.prior_sigma2

    @cached_property
    def theta_cov_unit(self):
        """Full ``(X'X)^-1`` ordered as ``(mu, s_2..s_J)``."""
        k = self.n_arms
        m = self._later_counts.sum(axis=0)
        W = self._later_counts / m
        S_inv = self.mean_cov_unit
        cov = np.empty((self.n_params, self.n_params))
        cov[:k, :k] = S_inv
        if W.shape[1]:
            cross = -S_inv @ W
            cov[:k, k:] = cross
            cov[k:, :k] = cross.T
            cov[k:, k:] = np.diag(1.0 / m) + W.T @ S_inv @ W
        return cov

    @property
    def theta(self):
        return np.concatenate([self.mu_hat, self.s_hat])

    def shifts(self):
        """All shift estimates including the pinned ``s_1 = 0``."""
        return np.concatenate([[0.0], self.s_hat])


_TRIANGLES = {}


def _triangle_index(k):
    if k not in _TRIANGLES:
        rows, cols = np.triu_indices(k, 1)
        _TRIANGLES[k] = (rows, cols), (cols, rows)
    return _TRIANGLES[k]


def fit_ols(stats: SufficientStats, known_sigma2=None, prior_sigma2=1.0) -> OlsFit:
    """Solve the normal equations for ``(mu, s)`` from sufficient statistics."""
    if not stats.is_connected():
        raise DisconnectedDesignError(
            f"arm graph has components {stats.graph.components()}; arm means are not comparable"
        )
    S, rhs, v, q = stats.schur_system()
    chol, info = dpotrf(S, lower=1)
    if info != 0:
        raise SingularGramError("Schur complement of the Gram matrix is not positive definite")
    if chol.diagonal().min() ** 2 <= PIVOT_RTOL * S.diagonal().max():
        raise SingularGramError("Gram matrix is numerically singular")
    S_inv, info = dpotri(chol, lower=1)
    if info != 0:
        raise SingularGramError("inversion of the Schur complement failed")
    upper, lower = _triangle_index(stats.n_arms)
    S_inv[upper] = S_inv[lower]
    mu = S_inv @ rhs

    dof = stats.N - (stats.n_arms + stats.J - 1)
    sigma2_hat = None
    if dof >= 1:
        rss = stats.sq_sum - q - mu @ (stats.arm_totals - v)
        sigma2_hat = max(rss, 0.0) / dof
    return OlsFit(
        mu_hat=mu,
        mean_cov_unit=S_inv,
        sigma2_hat=sigma2_hat,
        dof=dof,
        known_sigma2=known_sigma2,
        prior_sigma2=prior_sigma2,
        _later_counts=stats.counts[:, 1:].copy(),
        _later_totals=stats.env_totals[1:].copy(),
    )


def residual_sum_of_squares(fit: OlsFit, stats: SufficientStats):
    return max(stats.sq_sum - fit.mu_hat @ stats.arm_totals - fit.s_hat @ stats.env_totals[1:], 0.0)


def fit_ols_separated(log: ObservationLog, n_arms):
    """Block-inversion solution built from hat matrices on the explicit design.

    Dense ``N x N`` projections; meant as an independent check of :func:`fit_ols`.
    """
    stats = log.to_stats(n_arms)
    if not stats.is_connected():
        raise DisconnectedDesignError("arm graph is not connected")
    A, B, r = log.design(n_arms)
    eye = np.eye(r.size)
    H_A = A @ np.linalg.solve(A.T @ A, A.T)
    if B.shape[1] == 0:
        return np.linalg.solve(A.T @ A, A.T @ r), np.zeros(0)
    H_B = B @ np.linalg.solve(B.T @ B, B.T)
    M_B = eye - H_B
    M_A = eye - H_A
    try:
        mu = np.linalg.solve(A.T @ M_B @ A, A.T @ M_B @ r)
        s = np.linalg.solve(B.T @ M_A @ B, B.T @ M_A @ r)
    except np.linalg.LinAlgError as exc:
        raise SingularGramError(str(exc)) from exc
    return mu, s


def separated_covariances(log: ObservationLog, n_arms, sigma2):
    """Projection forms ``sigma2 (A' M_B A)^-1`` and ``sigma2 (B' M_A B)^-1``.

    ``M_X = I - X (X'X)^-1 X'`` annihilates the other block of the design.
    Dense; meant as an independent check of :attr:`OlsFit.theta_cov_unit`.
    """
    A, B, _ = log.design(n_arms)
    eye = np.eye(A.shape[0])
    M_A = eye - A @ np.linalg.solve(A.T @ A, A.T)
    if B.shape[1] == 0:
        return sigma2 * np.linalg.inv(A.T @ A), np.zeros((0, 0))
    M_B = eye - B @ np.linalg.solve(B.T @ B, B.T)
    cov_mu = sigma2 * np.linalg.inv(A.T @ M_B @ A)
    cov_s = sigma2 * np.linalg.inv(B.T @ M_A @ B)
    return cov_mu, cov_s


def mean_covariance(fit: OlsFit, sigma2):
    return sigma2 * fit.mean_cov_unit


def upper_confidence_bounds(mu_hat, cov_diag, t, per_arm_N):
    """``mu_i + sqrt(16 ln t / N_i) * sqrt(Cov[mu_hat]_ii)`` for every arm."""
    width = np.sqrt(EXPLORATION_SCALE * math.log(t) / np.asarray(per_arm_N, dtype=float))
    return np.asarray(mu_hat) + width * np.sqrt(cov_diag)


def ucb(fit: OlsFit, cov, i, t, per_arm_N):
    return float(
        fit.mu_hat[i]
        + math.sqrt(EXPLORATION_SCALE * math.log(t) / per_arm_N[i]) * math.sqrt(cov[i, i])
    )
