"""Allocation and selection policies.

A policy is a small state machine driven once per time step: the runner
builds a :class:`PolicyContext` (which already tells whether the environment
changed), asks :meth:`Policy.select_arm` for an arm, observes the reward and
records it in the shared :class:`~shiftbai.stats.SufficientStats`.
:meth:`Policy.recommend` is pure with respect to allocation; its tie-breaks
use a dedicated generator so checkpoints never perturb later decisions.
"""

import logging
import math
from collections import deque
from dataclasses import dataclass

import numpy as np

from ._validation import argmax_random, check_choice, check_int, check_real
from .errors import ConfigError, FitUnavailableError, UnsampledArmError
from .ols import EXPLORATION_SCALE, fit_ols, residual_sum_of_squares, upper_confidence_bounds
from .stats import SufficientStats

logger = logging.getLogger(__name__)

POLICY_KINDS = ("linlucb", "round-robin", "sample-mean-lucb", "successive-rejects", "reduce-to-mab")
SIGMA_MODES = ("known", "estimated")


@dataclass
class PolicyContext:
    t: int
    env_changed: bool
    env_ordinal: int
    budget: int
    stats: SufficientStats


@dataclass(frozen=True)
class PolicySpec:
    kind: str
    n0: int = 6
    sigma_mode: str = "estimated"
    inner: str | None = None
    prior_sigma2: float = 1.0

    def __post_init__(self):
        check_choice(self.kind, "policies.kind", POLICY_KINDS)
        check_int(self.n0, "policies.n0", min_value=2)
        check_choice(self.sigma_mode, "policies.sigma_mode", SIGMA_MODES)
        check_real(self.prior_sigma2, "policies.prior_sigma2", positive=True, allow_zero=False)
        if self.kind == "reduce-to-mab":
            inner = POLICY_KINDS[:-1]
            if self.inner not in inner:
                raise ConfigError(f"must be one of {list(inner)}, got {self.inner!r}", key="policies.inner")
        elif self.inner is not None:
            raise ConfigError("only reduce-to-mab takes an inner policy", key="policies.inner")

    @property
    def name(self):
        if self.kind == "reduce-to-mab":
            return f"reduce-to-mab({self.inner})"
        return self.kind

    @property
    def budget_aware(self):
        return "successive-rejects" in (self.kind, self.inner)

    @property
    def min_budget_per_arm(self):
        """Samples per arm the policy spends before it can recommend."""
        if self.kind in ("linlucb", "reduce-to-mab", "sample-mean-lucb"):
            return self.n0
        return 1


def reduce_to_mab_wrap(inner: PolicySpec) -> PolicySpec:
    return PolicySpec(
        "reduce-to-mab",
        n0=inner.n0,
        sigma_mode=inner.sigma_mode,
        inner=inner.kind,
        prior_sigma2=inner.prior_sigma2,
    )


def select_best(fit, rng):
    """Arm with the largest least-squares mean."""
    return argmax_random(fit.mu_hat, rng)


def select_best_sample_mean(stats, rng):
    if np.any(stats.per_arm_N == 0):
        unsampled = np.flatnonzero(stats.per_arm_N == 0).tolist()
        raise UnsampledArmError(f"arms {unsampled} have no samples")
    return argmax_random(stats.sample_means(), rng)


# --- initialization schedules -------------------------------------------------


class RandomizedRoundRobinInit:
    """Shuffled passes over the arms until each has ``n0`` samples.

    Until the first full pass completes, the first step of a new environment
    replays the previous arm so consecutive environments share an arm and the
    co-observation graph stays a tree.
    """

    def __init__(self, n_arms, n0, rng):
        self.n_arms = n_arms
        self.n0 = n0
        self.rng = rng
        self.order = list(range(n_arms))
        rng.shuffle(self.order)
        self.pos = 0
        self.samples = [0] * n_arms
        self.tree_built = False
        self.last = None
        self.taken = 0

    @property
    def done(self):
        return self.taken >= self.n0 * self.n_arms

    def _play(self, arm):
        self.samples[arm] += 1
        self.taken += 1
        self.last = arm
        return arm

    def step(self, env_changed):
        order = self.order
        last = self.last
        if env_changed and not self.tree_built and last is not None and last in order:
            self._play(last)
            if self.samples[last] == self.n0:
                idx = order.index(last)
                del order[idx]
                if idx < self.pos:
                    self.pos -= 1
            return last
        arm = order[self.pos]
        self._play(arm)
        if self.samples[arm] == self.n0:
            del order[self.pos]
        else:
            self.pos += 1
        if order and self.pos >= len(order):
            self.rng.shuffle(order)
            self.pos = 0
            self.tree_built = True
        return arm


class RoundRobinInit:
    def __init__(self, n_arms, n0):
        self.n_arms = n_arms
        self.n0 = n0
        self.taken = 0

    @property
    def done(self):
        return self.taken >= self.n0 * self.n_arms

    def step(self, env_changed):
        arm = self.taken % self.n_arms
        self.taken += 1
        return arm


# --- scorers --------------------------------------------------------------------


class OLSScorer:
    """Least-squares means with confidence widths from the estimator covariance."""

    def __init__(self, known_sigma2=None, prior_sigma2=1.0):
        self.known_sigma2 = known_sigma2
        self.prior_sigma2 = prior_sigma2

    def fit(self, stats):
        try:
            return fit_ols(stats, self.known_sigma2, self.prior_sigma2)
        except ValueError as exc:
            raise FitUnavailableError(str(exc)) from exc

    def means(self, stats):
        return self.fit(stats).mu_hat

    def bounds(self, stats, t):
        fit = self.fit(stats)
        cov_diag = fit.sigma2 * fit.mean_cov_unit.diagonal()
        return fit.mu_hat, upper_confidence_bounds(fit.mu_hat, cov_diag, t, stats.per_arm_N)


def _stationary_bounds(means, noise_var, t, per_arm_N):
    n = np.asarray(per_arm_N, dtype=float)
    return means + np.sqrt(EXPLORATION_SCALE * math.log(t) * noise_var / n**2)


class SampleMeanScorer:
    """Raw sample means with the stationary normal bound."""

    def __init__(self, known_sigma2=None, prior_sigma2=1.0):
        self.known_sigma2 = known_sigma2
        self.prior_sigma2 = prior_sigma2

    def means(self, stats):
        if np.any(stats.per_arm_N == 0):
            raise UnsampledArmError("every arm needs a sample before sample means exist")
        return stats.sample_means()

    def noise_var(self, stats):
        if self.known_sigma2 is not None:
            return self.known_sigma2
        pooled = stats.pooled_variance()
        return self.prior_sigma2 if pooled is None else pooled

    def bounds(self, stats, t):
        means = self.means(stats)
        return means, _stationary_bounds(means, self.noise_var(stats), t, stats.per_arm_N)


class ShiftSubtractedScorer(OLSScorer):
    """Statistics of rewards with the estimated shift ``s_hat[j]`` subtracted.

    The per-arm mean of subtracted rewards equals the least-squares mean, and
    their pooled variance about those means is ``RSS / (N - K)``.
    """

    def noise_var(self, stats, fit):
        if self.known_sigma2 is not None:
            return self.known_sigma2
        dof = stats.N - stats.n_arms
        if dof < 1:
            return self.prior_sigma2
        return residual_sum_of_squares(fit, stats) / dof

    def bounds(self, stats, t):
        fit = self.fit(stats)
        var = self.noise_var(stats, fit)
        return fit.mu_hat, _stationary_bounds(fit.mu_hat, var, t, stats.per_arm_N)


def subtracted_sample_means(stats, fit):
    """Per-arm mean of ``r - s_hat[j]`` computed from cell sums."""
    shifted = stats.cell_sums - stats.counts * fit.shifts()
    return shifted.sum(axis=1) / stats.per_arm_N


# --- policies ---------------------------------------------------------------------


class Policy:
    """Base class: optional initialization schedule, then :meth:`_allocate`."""

    budget_aware = False
    handles_env_changes = False

    def __init__(self, n_arms, budget, rng, select_rng, scorer, init=None, distinct_guard=False):
        self.n_arms = n_arms
        self.budget = budget
        self.rng = rng
        self.select_rng = select_rng
        self.scorer = scorer
        self.init = init
        self.distinct_guard = distinct_guard
        self.last_arm = None
        self._prev_changed = False

    def select_arm(self, ctx: PolicyContext) -> int:
        if self.init is not None and not self.init.done:
            arm = self.init.step(ctx.env_changed)
        else:
            exclude = None
            if self.distinct_guard and self._prev_changed and not ctx.env_changed:
                exclude = self.last_arm
            arm = self._allocate(ctx, exclude)
        self._prev_changed = ctx.env_changed
        self.last_arm = arm
        return arm

    def _allocate(self, ctx, exclude):
        raise NotImplementedError

    def candidates(self):
        return np.arange(self.n_arms)

    def recommend(self, stats) -> int:
        arms = self.candidates()
        means = np.asarray(self.scorer.means(stats))[arms]
        return int(arms[argmax_random(means, self.select_rng)])


class LUCBPolicy(Policy):
    """Alternates the greedy arm ``l`` and the best-UCB challenger ``u != l``.

    Both arms of a pair are chosen from the estimates available when the pair
    starts. With ``env_aware`` the pair order follows three cases so the first
    two samples of every new environment are distinct arms:

    1. change at the first step of a pair: play ``l`` then ``u``;
    2. change at the second step of the previous pair and ``l`` equals the arm
       just played: play ``u`` then ``l``;
    3. otherwise ``l`` then ``u``.
    """

    def __init__(self, *args, env_aware=True, **kwargs):
        super().__init__(*args, **kwargs)
        self.env_aware = env_aware
        self.handles_env_changes = env_aware
        self.pending = None
        self.recent_change = False
        self.pairs = []

    def leader_challenger(self, stats, clock):
        means, ucbs = self.scorer.bounds(stats, clock)
        leader = argmax_random(means, self.rng)
        ucbs = np.array(ucbs, dtype=float)
        ucbs[leader] = -np.inf
        return leader, argmax_random(ucbs, self.rng)

    def _allocate(self, ctx, exclude):
        if self.pending is not None:
            arm, self.pending = self.pending, None
            if ctx.env_changed:
                self.recent_change = True
            return arm
        leader, challenger = self.leader_challenger(ctx.stats, ctx.t - 1)
        self.pairs.append((ctx.t, leader, challenger))
        swap = (
            self.env_aware
            and not ctx.env_changed
            and self.recent_change
            and leader == self.last_arm
        )
        self.recent_change = False
        if swap:
            self.pending = leader
            return challenger
        self.pending = challenger
        return leader


class RoundRobin(Policy):
    """Cycles through arms in index order, ignoring environment changes."""

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self._next = 0

    def _allocate(self, ctx, exclude):
        arm = self._next
        if arm == exclude:
            arm = (arm + 1) % self.n_arms
        self._next = (arm + 1) % self.n_arms
        return arm


def successive_rejects_schedule(n_arms, budget):
    """Samples per surviving arm in each of the ``K - 1`` phases.

    Uses ``n_k = floor((T - K) / (logbar(K) * (K + 1 - k)))`` with
    ``logbar(K) = 1/2 + sum_{i=2..K} 1/i``. Returns ``(per_arm, slack)``
    where ``slack`` is the leftover budget appended to the last phase.
    """
    logbar = 0.5 + sum(1.0 / i for i in range(2, n_arms + 1))
    cumulative = [0]
    for k in range(1, n_arms):
        cumulative.append(max(math.floor((budget - n_arms) / (logbar * (n_arms + 1 - k))), 0))
    per_arm = [cumulative[k] - cumulative[k - 1] for k in range(1, n_arms)]
    used = sum(d * (n_arms + 1 - k) for k, d in enumerate(per_arm, start=1))
    return per_arm, budget - used


class SuccessiveRejects(Policy):
    """Phased elimination of the arm with the lowest mean estimate.

    Within a phase the surviving arms are sampled in shuffled passes. The
    schedule is fixed by the budget, so a run answers for that budget only.
    """

    budget_aware = True

    def __init__(self, *args, **kwargs):
        super().__init__(*args, **kwargs)
        self.survivors = list(range(self.n_arms))
        self.fallback = False
        self.eliminated = []
        self._phase = None
        self._pass = deque()

    def _start(self, ctx):
        remaining = self.budget - ctx.t + 1
        per_arm, slack = successive_rejects_schedule(self.n_arms, remaining)
        if any(d < 1 for d in per_arm):
            self.fallback = True
            logger.warning(
                "budget %d too small for successive rejects over %d arms; using round-robin",
                remaining,
                self.n_arms,
            )
            self._quotas = []
        else:
            quotas = [d * (self.n_arms + 1 - k) for k, d in enumerate(per_arm, start=1)]
            quotas[-1] += slack
            self._quotas = quotas
        self._phase = 0
        self._left = self._quotas[0] if self._quotas else None

    def _eliminate(self, stats):
        means = np.asarray(self.scorer.means(stats))[self.survivors]
        worst = -means
        loser = self.survivors[argmax_random(worst, self.rng)]
        self.survivors.remove(loser)
        self.eliminated.append(loser)

    def _allocate(self, ctx, exclude):
        if self._phase is None:
            self._start(ctx)
        if not self.fallback:
            while self._left == 0 and self._phase < len(self._quotas) - 1:
                self._eliminate(ctx.stats)
                self._phase += 1
                self._left = self._quotas[self._phase]
                self._pass.clear()
            if self._left > 0:
                self._left -= 1
        return self._next_in_pass(exclude)

    def _refill(self):
        arms = list(self.survivors)
        self.rng.shuffle(arms)
        self._pass.extend(arms)

    def _next_in_pass(self, exclude):
        if not self._pass:
            self._refill()
        if exclude is not None and self._pass[0] == exclude and len(self.survivors) > 1:
            if all(a == exclude for a in self._pass):
                self._refill()
            idx = next(i for i, a in enumerate(self._pass) if a != exclude)
            arm = self._pass[idx]
            del self._pass[idx]
            return arm
        return self._pass.popleft()

    def candidates(self):
        return np.asarray(self.survivors)


def make_policy(spec: PolicySpec, n_arms, budget, rng, select_rng, sigma=None) -> Policy:
    """Instantiate ``spec`` for one run. ``sigma`` is the true noise sd, used in ``known`` mode."""
    known = None
    if spec.sigma_mode == "known":
        if sigma is None:
            raise ConfigError("sigma_mode 'known' needs the noise sd", key="sigma")
        known = float(sigma) ** 2
    prior = spec.prior_sigma2
    if budget < spec.min_budget_per_arm * n_arms:
        raise ConfigError(
            f"budget {budget} below the {spec.min_budget_per_arm * n_arms} samples {spec.name} needs",
            key="budgets",
        )
    common = dict(n_arms=n_arms, budget=budget, rng=rng, select_rng=select_rng)
    if spec.kind == "linlucb":
        return LUCBPolicy(
            scorer=OLSScorer(known, prior),
            init=RandomizedRoundRobinInit(n_arms, spec.n0, rng),
            env_aware=True,
            **common,
        )
    if spec.kind == "sample-mean-lucb":
        return LUCBPolicy(
            scorer=SampleMeanScorer(known, prior),
            init=RoundRobinInit(n_arms, spec.n0),
            env_aware=False,
            **common,
        )
    if spec.kind == "round-robin":
        return RoundRobin(scorer=SampleMeanScorer(known, prior), **common)
    if spec.kind == "successive-rejects":
        return SuccessiveRejects(scorer=SampleMeanScorer(known, prior), **common)

    scorer = ShiftSubtractedScorer(known, prior)
    init = RandomizedRoundRobinInit(n_arms, spec.n0, rng)
    if spec.inner in ("linlucb", "sample-mean-lucb"):
        return LUCBPolicy(scorer=scorer, init=init, env_aware=True, **common)
    cls = RoundRobin if spec.inner == "round-robin" else SuccessiveRejects
    return cls(scorer=scorer, init=init, distinct_guard=True, **common)
