"""Problem instances and a common-random-number reward source.

Rewards follow ``r = mu[i] + s[j] + sigma * eps`` where ``j`` is the
environment active at time ``t``. Arms are 0-based indices; time steps and
environment ordinals are 1-based (``t = 1..T``, ``j = 1..J``).

Every random quantity is drawn from its own Philox sub-stream derived from the
replication seed, so two policies run on streams with the same seed see the
same shifts, the same change points and, for the k-th pull of arm ``i``, the
same noise draw no matter when that pull happens.
"""

import math
from bisect import bisect_left
from dataclasses import dataclass, field

import numpy as np

from ._validation import check_arm, check_choice, check_int, check_real
from .errors import ConfigError, TieInTruthError

# sub-stream purpose tags
SHIFT_STREAM = 0
CHANGEPOINT_STREAM = 1
NOISE_STREAM = 2
POLICY_STREAM = 3
SELECT_STREAM = 4

_NOISE_BLOCK = 256


def replication_seed(base_seed, rep_index):
    """Stable 64-bit seed for replication ``rep_index`` of an experiment."""
    ss = np.random.SeedSequence(int(base_seed), spawn_key=(int(rep_index),))
    return int(ss.generate_state(1, dtype=np.uint64)[0])


def substream(seed, purpose, index=0):
    """Philox generator keyed by ``(seed, purpose, index)``."""
    ss = np.random.SeedSequence(int(seed), spawn_key=(int(purpose), int(index)))
    return np.random.Generator(np.random.Philox(ss))


@dataclass(frozen=True)
class ShiftSpec:
    """How the global shift of each environment is produced.

    ``kind`` is ``"uniform-continuous"`` (``U(lo, hi)``), ``"fixed-sequence"``
    (``values[j - 1]`` for environment ``j``) or ``"zero"``.
    """

    kind: str = "zero"
    lo: float = 0.0
    hi: float = 0.0
    values: tuple = ()

    KINDS = ("uniform-continuous", "fixed-sequence", "zero")

    def __post_init__(self):
        check_choice(self.kind, "shift.kind", self.KINDS)
        if self.kind == "uniform-continuous":
            lo = check_real(self.lo, "shift.lo")
            hi = check_real(self.hi, "shift.hi")
            if lo > hi:
                raise ConfigError(f"lo={lo} exceeds hi={hi}", key="shift")
        if self.kind == "fixed-sequence":
            values = tuple(check_real(v, "shift.values") for v in self.values)
            if not values:
                raise ConfigError("needs at least one value", key="shift.values")
            object.__setattr__(self, "values", values)

    @classmethod
    def uniform(cls, lo, hi):
        return cls("uniform-continuous", lo=lo, hi=hi)

    @classmethod
    def fixed(cls, values):
        return cls("fixed-sequence", values=tuple(values))


@dataclass(frozen=True)
class ChangePointSpec:
    """Environment lengths.

    ``"uniform-discrete"`` draws each length from ``{cp_min, ..., cp_max}``.
    ``"fixed-sequence"`` uses ``lengths`` in order; the environment after the
    last listed one never ends.
    """

    kind: str = "uniform-discrete"
    cp_min: int = 2
    cp_max: int = 2
    lengths: tuple = ()

    KINDS = ("uniform-discrete", "fixed-sequence")

    def __post_init__(self):
        check_choice(self.kind, "changepoints.kind", self.KINDS)
        if self.kind == "uniform-discrete":
            lo = check_int(self.cp_min, "cp_min", min_value=2)
            hi = check_int(self.cp_max, "cp_max", min_value=2)
            if lo > hi:
                raise ConfigError(f"cp_min={lo} exceeds cp_max={hi}", key="cp_max")
        else:
            lengths = tuple(check_int(n, "changepoints.lengths", min_value=2) for n in self.lengths)
            object.__setattr__(self, "lengths", lengths)

    @classmethod
    def uniform(cls, cp_min, cp_max):
        return cls("uniform-discrete", cp_min=cp_min, cp_max=cp_max)

    @classmethod
    def fixed(cls, lengths):
        return cls("fixed-sequence", lengths=tuple(lengths))

    @classmethod
    def stationary(cls):
        """A single environment covering every horizon."""
        return cls("fixed-sequence", lengths=())


@dataclass(frozen=True)
class InstanceConfig:
    configuration: str = "MDM"
    K: int = 5
    delta: float = 0.5
    sigma: float = 1.0
    shift: ShiftSpec = field(default_factory=ShiftSpec)
    changepoints: ChangePointSpec = field(default_factory=ChangePointSpec)
    arm_means: tuple = ()

    CONFIGURATIONS = ("MDM", "SC", "custom")


@dataclass(frozen=True)
class BanditInstance:
    arm_means: tuple
    noise_sd: float
    shift_spec: ShiftSpec = field(default_factory=ShiftSpec)
    changepoint_spec: ChangePointSpec = field(default_factory=ChangePointSpec)

    def __post_init__(self):
        means = tuple(float(m) for m in self.arm_means)
        if len(means) < 2:
            raise ConfigError("need at least two arms", key="K")
        if not all(math.isfinite(m) for m in means):
            raise ConfigError("arm means must be finite", key="arm_means")
        check_real(self.noise_sd, "sigma", positive=True, allow_zero=False)
        object.__setattr__(self, "arm_means", means)
        object.__setattr__(self, "noise_sd", float(self.noise_sd))

    @property
    def n_arms(self):
        return len(self.arm_means)


def make_instance(config: InstanceConfig) -> BanditInstance:
    """Build the ground truth described by ``config``. Consumes no randomness."""
    check_choice(config.configuration, "configuration", InstanceConfig.CONFIGURATIONS)
    if config.configuration == "custom":
        means = tuple(config.arm_means)
    else:
        k = check_int(config.K, "K", min_value=2)
        delta = check_real(config.delta, "delta")
        if config.configuration == "MDM":
            means = tuple(delta * i for i in range(k))
        else:
            means = (0.0,) * (k - 1) + (delta,)
    sigma = check_real(config.sigma, "sigma")
    if sigma <= 0:
        raise ConfigError(f"must be positive, got {sigma}", key="sigma")
    return BanditInstance(means, sigma, config.shift, config.changepoints)


def true_best(instance: BanditInstance) -> int:
    means = np.asarray(instance.arm_means)
    best = np.flatnonzero(means == means.max())
    if best.size != 1:
        raise TieInTruthError(f"arms {best.tolist()} share the largest mean", key="arm_means")
    return int(best[0])


class ObservationStream:
    """Lazily realized shifts, change points and per-arm noise for one replication.

    ``noiseless=True`` zeroes every noise draw, which gives exact reference runs
    without changing how shifts and change points are drawn.
    """

    def __init__(self, instance: BanditInstance, replication_seed: int, *, noiseless=False):
        self.instance = instance
        self.replication_seed = int(replication_seed)
        self.noiseless = noiseless
        self._means = instance.arm_means
        self._sigma = 0.0 if noiseless else instance.noise_sd
        self._shift_rng = substream(replication_seed, SHIFT_STREAM)
        self._cp_rng = substream(replication_seed, CHANGEPOINT_STREAM)
        self._noise_rngs = [None] * instance.n_arms
        self._noise = [[] for _ in range(instance.n_arms)]
        self._pulls = [0] * instance.n_arms
        self.realized_shifts = []
        # _cps[j] is the last time step of environment j; _cps[0] = 0
        self._cps = [0]
        self._last_t = 0
        self.trace = []

    @property
    def realized_changepoints(self):
        return self._cps[1:]

    @property
    def pulls(self):
        return tuple(self._pulls)

    def _extend_changepoints(self, t):
        spec = self.instance.changepoint_spec
        cps = self._cps
        while cps[-1] < t:
            j = len(cps) - 1
            if spec.kind == "uniform-discrete":
                length = int(self._cp_rng.integers(spec.cp_min, spec.cp_max, endpoint=True))
            elif j < len(spec.lengths):
                length = spec.lengths[j]
            else:
                length = math.inf
            cps.append(cps[-1] + length)

    def env_of(self, t):
        """Ordinal ``j`` of the environment with ``cp[j-1] < t <= cp[j]``."""
        if t < 1:
            raise ValueError(f"time steps start at 1, got {t}")
        if self._cps[-1] < t:
            self._extend_changepoints(t)
        return bisect_left(self._cps, t)

    def shift(self, j):
        spec = self.instance.shift_spec
        shifts = self.realized_shifts
        while len(shifts) < j:
            if spec.kind == "uniform-continuous":
                shifts.append(float(self._shift_rng.uniform(spec.lo, spec.hi)))
            elif spec.kind == "zero":
                shifts.append(0.0)
            else:
                n = len(shifts)
                if n >= len(spec.values):
                    raise IndexError(f"fixed shift sequence has no value for environment {n + 1}")
                shifts.append(spec.values[n])
        return shifts[j - 1]

    def noise(self, arm, k):
        """Standard-normal draw used for the ``k``-th (0-based) pull of ``arm``."""
        table = self._noise[arm]
        while len(table) <= k:
            rng = self._noise_rngs[arm]
            if rng is None:
                rng = self._noise_rngs[arm] = substream(self.replication_seed, NOISE_STREAM, arm)
            table.extend(rng.standard_normal(_NOISE_BLOCK).tolist())
        return table[k]

    def noise_block(self, arm, n):
        """First ``n`` noise draws of ``arm`` as an array."""
        if n > 0:
            self.noise(arm, n - 1)
        return np.asarray(self._noise[arm][:n])

    def observe(self, arm, t):
        arm = check_arm(arm, len(self._means))
        if t <= self._last_t:
            raise ValueError(f"time must increase: got t={t} after t={self._last_t}")
        j = self.env_of(t)
        k = self._pulls[arm]
        eps = self.noise(arm, k)
        self._pulls[arm] = k + 1
        self._last_t = t
        r = self._means[arm] + self.shift(j) + self._sigma * eps
        self.trace.append((j, arm, r))
        return r
