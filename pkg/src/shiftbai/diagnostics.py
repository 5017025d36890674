"""Monte Carlo checks of the shift-aware estimator's statistical behaviour.

Every probe is a pure function of its arguments and seed, and every report
can be written to CSV with the seed on each row.
"""

import csv
from dataclasses import dataclass, field

import numpy as np

from .env import (
    ChangePointSpec,
    ObservationStream,
    BanditInstance,
    ShiftSpec,
    replication_seed,
)
from .errors import DisconnectedDesignError
from .ols import fit_ols
from .stats import SufficientStats


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return f"{float(value):.10g}"
    return str(value)


def write_rows(path, header, rows):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for row in rows:
            writer.writerow([_fmt(row[col]) for col in header])


def _design_stats(counts):
    """Stats of a fixed design with zero rewards; used for connectivity and ``(X'X)^-1``."""
    counts = np.asarray(counts, dtype=float)
    return SufficientStats.from_cells(counts, np.zeros_like(counts), 0.0)


def _fit_cells(counts, cell_sums, sq_sum):
    return fit_ols(SufficientStats.from_cells(counts, cell_sums, sq_sum))


def _noise_fits(counts, cell_means, sigma, reps, rng, batch=2000):
    """Refit on ``reps`` noise redraws of a fixed design.

    Returns ``(theta, sigma2_hat)`` with one row of ``theta`` per redraw.
    """
    counts = np.asarray(counts, dtype=float)
    cell_means = np.asarray(cell_means, dtype=float)
    flat = counts.ravel().astype(int)
    cell_of_obs = np.repeat(np.arange(flat.size), flat)
    mean_of_obs = cell_means.ravel()[cell_of_obs]
    starts = np.concatenate([[0], np.cumsum(flat)[:-1]])
    occupied = flat > 0
    thetas, sig = [], []
    done = 0
    while done < reps:
        n = min(batch, reps - done)
        r = mean_of_obs + sigma * rng.standard_normal((n, mean_of_obs.size))
        sums = np.zeros((n, flat.size))
        sums[:, occupied] = np.add.reduceat(r, starts[occupied], axis=1)
        sq = np.einsum("ij,ij->i", r, r)
        for b in range(n):
            fit = _fit_cells(counts, sums[b].reshape(counts.shape), sq[b])
            thetas.append(fit.theta)
            sig.append(fit.sigma2_hat if fit.sigma2_hat is not None else np.nan)
        done += n
    return np.asarray(thetas), np.asarray(sig)


def _relative_error(mc, analytic):
    scale = np.abs(analytic)
    mask = scale > 1e-12 * scale.max()
    return float(np.max(np.abs(mc - analytic)[mask] / scale[mask]))


@dataclass
class MomentReport:
    truth: np.ndarray
    mc_mean: np.ndarray
    mean_stderr: np.ndarray
    mc_cov: np.ndarray
    analytic_cov: np.ndarray
    max_rel_error: float
    sigma2: float
    sigma2_mean: float
    sigma2_stderr: float
    replications: int
    seed: int

    @property
    def bias(self):
        return self.mc_mean - self.truth

    @property
    def bias_in_se(self):
        """``|bias| / SE`` per parameter."""
        return np.abs(self.bias) / self.mean_stderr

    @property
    def sigma2_bias_in_se(self):
        return abs(self.sigma2_mean - self.sigma2) / self.sigma2_stderr

    HEADER = ("quantity", "index_a", "index_b", "analytic", "monte_carlo", "stderr", "replications", "seed")

    def rows(self):
        base = {"replications": self.replications, "seed": self.seed}
        for a, (truth, mean, se) in enumerate(zip(self.truth, self.mc_mean, self.mean_stderr)):
            yield dict(base, quantity="mean", index_a=a, index_b="", analytic=truth, monte_carlo=mean, stderr=se)
        p = self.truth.size
        for a in range(p):
            for b in range(a, p):
                yield dict(base, quantity="cov", index_a=a, index_b=b,
                           analytic=self.analytic_cov[a, b], monte_carlo=self.mc_cov[a, b], stderr="")
        yield dict(base, quantity="sigma2", index_a="", index_b="", analytic=self.sigma2,
                   monte_carlo=self.sigma2_mean, stderr=self.sigma2_stderr)


def estimator_moments(counts, mu, shifts, sigma=1.0, reps=100_000, seed=0):
    """Monte Carlo mean and covariance of the fitted parameters on a fixed design.

    ``counts[i, j]`` observations of arm ``i`` are taken in environment ``j + 1``
    and rewards ``mu[i] + shifts[j] + sigma * eps`` are redrawn ``reps`` times.
    The fitted ``(mu_1..mu_K, s_2..s_J)`` estimates ``(mu + s_1, s_j - s_1)``.
    """
    counts = np.asarray(counts, dtype=float)
    mu = np.asarray(mu, dtype=float)
    shifts = np.asarray(shifts, dtype=float)
    if counts.shape != (mu.size, shifts.size):
        raise ValueError(f"counts shape {counts.shape} does not match {mu.size} arms x {shifts.size} environments")
    if reps < 2:
        raise ValueError("need at least two replications")
    design = _design_stats(counts)
    if not design.is_connected():
        raise DisconnectedDesignError(f"arm graph has components {design.graph.components()}")
    unit = fit_ols(design).theta_cov_unit
    truth = np.concatenate([mu + shifts[0], shifts[1:] - shifts[0]])
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    theta, sig = _noise_fits(counts, mu[:, None] + shifts[None, :], sigma, reps, rng)
    mc_cov = np.cov(theta, rowvar=False).reshape(truth.size, truth.size)
    analytic = sigma**2 * unit
    return MomentReport(
        truth=truth,
        mc_mean=theta.mean(axis=0),
        mean_stderr=theta.std(axis=0, ddof=1) / np.sqrt(reps),
        mc_cov=mc_cov,
        analytic_cov=analytic,
        max_rel_error=_relative_error(mc_cov, analytic),
        sigma2=sigma**2,
        sigma2_mean=float(np.mean(sig)),
        sigma2_stderr=float(np.std(sig, ddof=1) / np.sqrt(reps)),
        replications=reps,
        seed=seed,
    )


@dataclass
class ConsistencyReport:
    sizes: tuple
    var_mu1: np.ndarray
    var_mu2: np.ndarray
    var_diff: np.ndarray
    mean_environments: np.ndarray
    replications: int
    seed: int

    HEADER = ("N", "var_mu1", "var_mu2", "var_diff", "mean_environments", "replications", "seed")

    def rows(self):
        for k, n in enumerate(self.sizes):
            yield {
                "N": n,
                "var_mu1": self.var_mu1[k],
                "var_mu2": self.var_mu2[k],
                "var_diff": self.var_diff[k],
                "mean_environments": self.mean_environments[k],
                "replications": self.replications,
                "seed": self.seed,
            }


def consistency_probe(sizes=(500, 1000, 2000, 4000), reps=10_000, seed=0, *,
                      means=(0.0, 0.5), sigma=1.0, shift=None, changepoints=None):
    """Spread of the mean estimates under two-arm round-robin sampling as ``N`` grows.

    Each replication draws fresh shifts and change points and follows the
    allocation ``arm = (t - 1) mod 2`` up to ``max(sizes)``; the estimates at
    every ``N`` in ``sizes`` are read from prefixes of the same trace.
    """
    sizes = tuple(sorted(int(n) for n in sizes))
    if sizes[0] < 2:
        raise ValueError("every size must allow both arms to be sampled")
    shift = shift or ShiftSpec.uniform(0.0, 20.0)
    changepoints = changepoints or ChangePointSpec.uniform(2, 10)
    instance = BanditInstance(np.asarray(means, dtype=float), sigma, shift, changepoints)
    K = instance.n_arms
    n_max = sizes[-1]
    t = np.arange(1, n_max + 1)
    arms = (t - 1) % K
    est = np.empty((reps, len(sizes), K))
    n_env = np.empty((reps, len(sizes)))
    for rep in range(reps):
        stream = ObservationStream(instance, replication_seed(seed, rep))
        stream.env_of(n_max)
        cps = np.asarray(stream.realized_changepoints, dtype=float)
        envs = np.searchsorted(cps, t) + 1
        J = int(envs[-1])
        shifts = np.array([stream.shift(j) for j in range(1, J + 1)])
        pulls = np.bincount(arms, minlength=K)
        rank = np.empty(n_max, dtype=int)
        for i in range(K):
            rank[arms == i] = np.arange(pulls[i])
        noise = np.empty(n_max)
        for i in range(K):
            noise[arms == i] = stream.noise_block(i, pulls[i])
        rewards = np.asarray(instance.arm_means)[arms] + shifts[envs - 1] + sigma * noise
        for k, n in enumerate(sizes):
            Jn = int(envs[n - 1])
            idx = arms[:n] * Jn + (envs[:n] - 1)
            counts = np.bincount(idx, minlength=K * Jn).reshape(K, Jn)
            cells = np.bincount(idx, weights=rewards[:n], minlength=K * Jn).reshape(K, Jn)
            fit = _fit_cells(counts, cells, float(rewards[:n] @ rewards[:n]))
            est[rep, k] = fit.mu_hat
            n_env[rep, k] = Jn
    return ConsistencyReport(
        sizes=sizes,
        var_mu1=est[:, :, 0].var(axis=0, ddof=1),
        var_mu2=est[:, :, 1].var(axis=0, ddof=1),
        var_diff=(est[:, :, 0] - est[:, :, 1]).var(axis=0, ddof=1),
        mean_environments=n_env.mean(axis=0),
        replications=reps,
        seed=seed,
    )


@dataclass
class ConjectureReport:
    pairs: list = field(default_factory=list)  # (j, m, mc_cov, analytic_cov)
    conjectured: float = float("nan")
    replications: int = 0
    seed: int = 0

    HEADER = ("env_j", "env_m", "monte_carlo_cov", "analytic_cov", "conjectured", "abs_deviation",
              "replications", "seed")

    def rows(self):
        for j, m, mc, an in self.pairs:
            yield {
                "env_j": j,
                "env_m": m,
                "monte_carlo_cov": mc,
                "analytic_cov": an,
                "conjectured": self.conjectured,
                "abs_deviation": abs(mc - self.conjectured),
                "replications": self.replications,
                "seed": self.seed,
            }


def round_robin_counts(n_arms, per_arm_first, n_environments, env_length):
    """Cell counts of round-robin sampling with fixed environment lengths."""
    lengths = [per_arm_first * n_arms] + [env_length] * (n_environments - 1)
    counts = np.zeros((n_arms, n_environments))
    t = 0
    for j, length in enumerate(lengths):
        for _ in range(length):
            counts[t % n_arms, j] += 1
            t += 1
    return counts


def covariance_conjecture_probe(n_arms=5, per_arm_first=2, n_environments=40, env_length=10,
                                reps=10_000, seed=0, sigma=1.0, n_pairs=20):
    """Off-diagonal covariances of the shift estimates for a long round-robin design.

    Compares them with ``sigma^2 / sum_i n_i1``, the reciprocal of the
    environment-1 sample size. Informational only: nothing here is asserted.
    """
    counts = round_robin_counts(n_arms, per_arm_first, n_environments, env_length)
    conjectured = sigma**2 / counts[:, 0].sum()
    if n_environments < 3:
        return ConjectureReport([], conjectured, reps, seed)
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    analytic = sigma**2 * fit_ols(_design_stats(counts)).theta_cov_unit[n_arms:, n_arms:]
    theta, _ = _noise_fits(counts, np.zeros_like(counts), sigma, reps, rng)
    mc = np.cov(theta[:, n_arms:], rowvar=False)
    J1 = n_environments - 1
    all_pairs = [(a, b) for a in range(J1) for b in range(a + 1, J1)]
    pick = rng.choice(len(all_pairs), size=min(n_pairs, len(all_pairs)), replace=False)
    pairs = []
    for p in sorted(pick):
        a, b = all_pairs[p]
        pairs.append((a + 2, b + 2, float(mc[a, b]), float(analytic[a, b])))
    return ConjectureReport(pairs, conjectured, reps, seed)


def bias_decomposition(stats: SufficientStats, shifts, i1=0, i2=1):
    """Shift-induced part of ``rbar_i1 - rbar_i2``: ``sum_j s_j (n_i1j / N_i1 - n_i2j / N_i2)``."""
    counts = stats.counts
    N = stats.per_arm_N
    if N[i1] < 1 or N[i2] < 1:
        raise ValueError("both arms need at least one observation")
    shifts = np.asarray(shifts, dtype=float)[: stats.J]
    weights = counts[i1] / N[i1] - counts[i2] / N[i2]
    return float(weights @ shifts)


def noiseless_stats(counts, means, shifts):
    """Stats of a noiseless trace with the given cell counts."""
    counts = np.asarray(counts, dtype=float)
    cell_means = np.asarray(means, dtype=float)[:, None] + np.asarray(shifts, dtype=float)[None, :]
    cells = counts * cell_means
    return SufficientStats.from_cells(counts, cells, float(np.sum(counts * cell_means**2)))


BIAS_HEADER = ("arm_a", "arm_b", "bias_term", "sample_mean_diff", "true_diff", "seed")
