"""Replicated policy evaluation under common random numbers.

Every policy in an experiment sees, for replication ``k``, a stream seeded by
``replication_seed(base_seed, k)``. One trace per (policy, replication) is
run to the largest budget and the recommendation is read off at each budget
on the way. Budget-aware policies (successive rejects) are instead re-run for
every budget on the same stream seed.
"""

import csv
import json
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_choice, check_int, check_real
from .env import (
    POLICY_STREAM,
    SELECT_STREAM,
    ChangePointSpec,
    InstanceConfig,
    ObservationStream,
    ShiftSpec,
    make_instance,
    replication_seed,
    substream,
    true_best,
)
from .errors import ConfigError
from .policies import PolicyContext, PolicySpec, make_policy
from .stats import SufficientStats

SCENARIOS = ("worst-case", "cannot-sample-all-arms", "sample-1to10-per-arm", "general", "custom")
CSV_HEADER = (
    "config", "scenario", "policy", "budget", "replications",
    "pics", "pics_stderr", "eoc", "eoc_stderr", "base_seed",
)


def scenario_bounds(scenario, K, cp_min=None, cp_max=None):
    """Environment-length bounds ``(cp_min, cp_max)`` for a named scenario."""
    check_choice(scenario, "scenario", SCENARIOS)
    K = check_int(K, "K", min_value=2)
    if scenario == "worst-case":
        return 2, 2
    if scenario == "cannot-sample-all-arms":
        if K < 3:
            raise ConfigError("cannot-sample-all-arms needs K >= 3", key="scenario")
        return 2, K - 1
    if scenario == "sample-1to10-per-arm":
        return K, 10 * K
    if scenario == "general":
        return 2, 10 * K
    if cp_min is None or cp_max is None:
        raise ConfigError("custom scenario needs cp_min and cp_max", key="scenario")
    spec = ChangePointSpec.uniform(cp_min, cp_max)
    return spec.cp_min, spec.cp_max


@dataclass(frozen=True)
class ExperimentConfig:
    configuration: str = "MDM"
    K: int = 5
    delta: float = 0.5
    sigma: float = 1.0
    shift: ShiftSpec = field(default_factory=lambda: ShiftSpec.uniform(0.0, 20.0))
    scenario: str = "general"
    budgets: tuple = (1000,)
    replications: int = 10_000
    base_seed: int = 0
    policies: tuple = (PolicySpec("linlucb"), PolicySpec("round-robin"))
    cp_min: int | None = None
    cp_max: int | None = None
    noiseless: bool = False

    def __post_init__(self):
        check_choice(self.configuration, "configuration", ("MDM", "SC"))
        check_int(self.K, "K", min_value=2)
        check_real(self.delta, "delta")
        if check_real(self.sigma, "sigma") <= 0:
            raise ConfigError(f"must be positive, got {self.sigma}", key="sigma")
        budgets = tuple(check_int(b, "budgets", min_value=1) for b in self.budgets)
        if any(b2 <= b1 for b1, b2 in zip(budgets, budgets[1:])):
            raise ConfigError("must be strictly ascending", key="budgets")
        object.__setattr__(self, "budgets", budgets)
        check_int(self.replications, "replications", min_value=1)
        check_int(self.base_seed, "base_seed", min_value=0)
        if self.base_seed >= 2**64:
            raise ConfigError("must fit in 64 bits", key="base_seed")
        if not self.policies:
            raise ConfigError("at least one policy is required", key="policies")
        names = [p.name for p in self.policies]
        if len(set(names)) != len(names):
            raise ConfigError(f"duplicate policies in {names}", key="policies")
        for p in self.policies:
            need = p.min_budget_per_arm * self.K
            if budgets and budgets[0] < need:
                raise ConfigError(f"smallest budget {budgets[0]} < {need} required by {p.name}", key="budgets")
        scenario_bounds(self.scenario, self.K, self.cp_min, self.cp_max)

    @property
    def changepoints(self):
        return ChangePointSpec.uniform(*scenario_bounds(self.scenario, self.K, self.cp_min, self.cp_max))

    def instance(self):
        return make_instance(
            InstanceConfig(
                configuration=self.configuration,
                K=self.K,
                delta=self.delta,
                sigma=self.sigma,
                shift=self.shift,
                changepoints=self.changepoints,
            )
        )

    @classmethod
    def from_dict(cls, data):
        if not isinstance(data, dict):
            raise ConfigError("config must be a JSON object")
        known = set(cls.__dataclass_fields__)
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", key=sorted(unknown)[0])
        kwargs = dict(data)
        if "shift" in kwargs:
            kwargs["shift"] = _parse_shift(kwargs["shift"])
        if "scenario" in kwargs and isinstance(kwargs["scenario"], dict):
            sc = dict(kwargs.pop("scenario"))
            kwargs["scenario"] = sc.pop("kind", "custom")
            kwargs.setdefault("cp_min", sc.pop("cp_min", None))
            kwargs.setdefault("cp_max", sc.pop("cp_max", None))
            if sc:
                raise ConfigError(f"unknown keys {sorted(sc)}", key="scenario")
        if "budgets" in kwargs:
            if not isinstance(kwargs["budgets"], list):
                raise ConfigError("must be a list of integers", key="budgets")
            kwargs["budgets"] = tuple(kwargs["budgets"])
        if "policies" in kwargs:
            kwargs["policies"] = tuple(_parse_policy(p) for p in kwargs["policies"])
        return cls(**kwargs)

    def to_dict(self):
        shift = {"kind": self.shift.kind}
        if self.shift.kind == "uniform-continuous":
            shift.update(lo=self.shift.lo, hi=self.shift.hi)
        elif self.shift.kind == "fixed-sequence":
            shift["values"] = list(self.shift.values)
        out = {
            "configuration": self.configuration,
            "K": self.K,
            "delta": self.delta,
            "sigma": self.sigma,
            "shift": shift,
            "scenario": self.scenario,
            "budgets": list(self.budgets),
            "replications": self.replications,
            "base_seed": self.base_seed,
            "policies": [
                {k: v for k, v in vars(p).items() if v is not None} for p in self.policies
            ],
        }
        if self.scenario == "custom":
            out.update(cp_min=self.cp_min, cp_max=self.cp_max)
        if self.noiseless:
            out["noiseless"] = True
        return out


def _parse_shift(value):
    if not isinstance(value, dict):
        raise ConfigError("must be an object with a 'kind' key", key="shift")
    value = dict(value)
    kind = value.pop("kind", None)
    try:
        if kind == "uniform-continuous":
            return ShiftSpec.uniform(value.pop("lo"), value.pop("hi"))
        if kind == "fixed-sequence":
            return ShiftSpec.fixed(value.pop("values"))
        if kind == "zero":
            return ShiftSpec()
    except KeyError as exc:
        raise ConfigError(f"missing {exc.args[0]!r}", key="shift") from None
    raise ConfigError(f"unknown kind {kind!r}", key="shift.kind")


def _parse_policy(value):
    if isinstance(value, str):
        if value.startswith("reduce-to-mab(") and value.endswith(")"):
            return PolicySpec("reduce-to-mab", inner=value[len("reduce-to-mab("):-1])
        return PolicySpec(value)
    if not isinstance(value, dict):
        raise ConfigError("each policy must be a kind string or an object", key="policies")
    allowed = set(PolicySpec.__dataclass_fields__)
    unknown = set(value) - allowed
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}", key="policies")
    if "kind" not in value:
        raise ConfigError("missing 'kind'", key="policies")
    return PolicySpec(**value)


def load_config(path):
    try:
        with open(path) as fh:
            data = json.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON in {path}: {exc}") from None
    return ExperimentConfig.from_dict(data)


# --- running -------------------------------------------------------------------------


@dataclass
class PolicyRun:
    recommendations: list
    stream: ObservationStream
    policy: object
    stats: SufficientStats
    arms: list


def run_policy(instance, spec, seed, budgets, *, sigma=None, noiseless=False):
    """One trace of ``spec`` on the stream for ``seed``; recommendations at each budget."""
    budgets = list(budgets)
    K = instance.n_arms
    T = budgets[-1]
    stream = ObservationStream(instance, seed, noiseless=noiseless)
    policy = make_policy(
        spec, K, T, substream(seed, POLICY_STREAM), substream(seed, SELECT_STREAM),
        sigma=instance.noise_sd if sigma is None else sigma,
    )
    stats = SufficientStats(K, capacity=64)
    ctx = PolicyContext(0, False, 0, T, stats)
    recs = []
    arms = []
    b = 0
    prev_j = 1
    for t in range(1, T + 1):
        j = stream.env_of(t)
        ctx.t = t
        ctx.env_changed = j != prev_j
        ctx.env_ordinal = j
        arm = policy.select_arm(ctx)
        r = stream.observe(arm, t)
        stats.record(j, arm, r)
        arms.append(arm)
        prev_j = j
        if t == budgets[b]:
            recs.append(policy.recommend(stats))
            b += 1
    return PolicyRun(recs, stream, policy, stats, arms)


@dataclass
class ReplicationResult:
    recommendations: list
    losses: list
    costs: list
    n_environments: int


def run_replication(config, policy: PolicySpec, rep_index, instance=None):
    """Recommendation, 0-1 loss and opportunity cost at each budget for one replication."""
    instance = instance or config.instance()
    best = true_best(instance)
    means = instance.arm_means
    seed = replication_seed(config.base_seed, rep_index)
    if not config.budgets:
        return ReplicationResult([], [], [], 0)
    try:
        if policy.budget_aware:
            recs = []
            n_env = 0
            for budget in config.budgets:
                run = run_policy(instance, policy, seed, [budget], noiseless=config.noiseless)
                recs.extend(run.recommendations)
                n_env = run.stats.J
        else:
            run = run_policy(instance, policy, seed, config.budgets, noiseless=config.noiseless)
            recs = run.recommendations
            n_env = run.stats.J
    except ConfigError:
        raise
    except Exception as exc:
        raise RuntimeError(f"policy {policy.name} failed in replication {rep_index}: {exc}") from exc
    losses = [int(r != best) for r in recs]
    costs = [means[best] - means[r] for r in recs]
    return ReplicationResult(recs, losses, costs, n_env)


def _run_chunk(config, reps):
    instance = config.instance()
    out = {}
    for spec in config.policies:
        losses = np.zeros((len(reps), len(config.budgets)), dtype=np.int8)
        costs = np.zeros((len(reps), len(config.budgets)))
        for row, rep in enumerate(reps):
            res = run_replication(config, spec, rep, instance)
            losses[row] = res.losses
            costs[row] = res.costs
        out[spec.name] = (losses, costs)
    return out


@dataclass
class MetricSeries:
    """Per-replication 0-1 losses and opportunity costs for each (policy, budget)."""

    config_name: str
    scenario: str
    base_seed: int
    budgets: tuple
    policies: tuple
    losses: dict
    costs: dict

    @property
    def replications(self):
        if not self.policies:
            return 0
        return self.losses[self.policies[0]].shape[0]

    def pics(self, policy):
        return self.losses[policy].mean(axis=0)

    def pics_stderr(self, policy):
        p = self.pics(policy)
        return np.sqrt(p * (1 - p) / self.replications)

    def eoc(self, policy):
        return self.costs[policy].mean(axis=0)

    def eoc_stderr(self, policy):
        n = self.replications
        if n < 2:
            return np.zeros(len(self.budgets))
        return self.costs[policy].std(axis=0, ddof=1) / math.sqrt(n)

    def paired_difference(self, policy_a, policy_b):
        """Mean and standard error of per-replication ``loss_a - loss_b`` at each budget, plus loss correlation."""
        a = self.losses[policy_a].astype(float)
        b = self.losses[policy_b].astype(float)
        diff = a - b
        n = diff.shape[0]
        se = diff.std(axis=0, ddof=1) / math.sqrt(n) if n > 1 else np.zeros(diff.shape[1])
        with np.errstate(invalid="ignore", divide="ignore"):
            corr = np.array([
                np.corrcoef(a[:, k], b[:, k])[0, 1] if a[:, k].std() > 0 and b[:, k].std() > 0 else np.nan
                for k in range(diff.shape[1])
            ])
        return diff.mean(axis=0), se, corr

    def rows(self):
        for name in self.policies:
            pics, pse = self.pics(name), self.pics_stderr(name)
            eoc, ese = self.eoc(name), self.eoc_stderr(name)
            for k, budget in enumerate(self.budgets):
                yield {
                    "config": self.config_name,
                    "scenario": self.scenario,
                    "policy": name,
                    "budget": budget,
                    "replications": self.replications,
                    "pics": float(pics[k]),
                    "pics_stderr": float(pse[k]),
                    "eoc": float(eoc[k]),
                    "eoc_stderr": float(ese[k]),
                    "base_seed": self.base_seed,
                }


def run_experiment(config: ExperimentConfig, n_jobs=1, chunk_size=250) -> MetricSeries:
    """Aggregate every policy over ``config.replications`` replications.

    Results are stored by replication index, so the output does not depend on
    ``n_jobs`` or on how work is chunked.
    """
    reps = list(range(config.replications))
    chunks = [reps[i : i + chunk_size] for i in range(0, len(reps), chunk_size)]
    if n_jobs == 1 or len(chunks) == 1:
        parts = [_run_chunk(config, chunk) for chunk in chunks]
    else:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(_run_chunk, [config] * len(chunks), chunks))
    names = tuple(p.name for p in config.policies)
    losses = {n: np.concatenate([part[n][0] for part in parts]) for n in names}
    costs = {n: np.concatenate([part[n][1] for part in parts]) for n in names}
    return MetricSeries(
        config_name=config.configuration,
        scenario=config.scenario,
        base_seed=config.base_seed,
        budgets=config.budgets,
        policies=names,
        losses=losses,
        costs=costs,
    )


def _fmt(value):
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, float):
        return f"{value:.10g}"
    return str(value)


def write_csv(series: MetricSeries, path):
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(CSV_HEADER)
        for row in series.rows():
            writer.writerow([_fmt(row[col]) for col in CSV_HEADER])


def write_paired_csv(series: MetricSeries, path):
    """Paired loss differences for every ordered pair of policies."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["policy_a", "policy_b", "budget", "replications", "pics_diff", "pics_diff_stderr", "loss_corr", "base_seed"])
        names = series.policies
        for ia, a in enumerate(names):
            for b in names[ia + 1 :]:
                diff, se, corr = series.paired_difference(a, b)
                for k, budget in enumerate(series.budgets):
                    writer.writerow([a, b, budget, series.replications, _fmt(float(diff[k])),
                                     _fmt(float(se[k])), _fmt(float(corr[k])), series.base_seed])


def default_jobs():
    return max(1, (os.cpu_count() or 1))
