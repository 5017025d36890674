"""Sufficient statistics of an arm/environment observation history."""

from dataclasses import dataclass, field

import numpy as np

from ._validation import check_arm
from .errors import OutOfOrderEnvironmentError


class ArmGraph:
    """Union-find over arms; two arms are joined when observed in the same environment."""

    def __init__(self, n_arms):
        self.parent = list(range(n_arms))
        self.size = [1] * n_arms
        self.n_components = n_arms

    def find(self, x):
        parent = self.parent
        root = x
        while parent[root] != root:
            root = parent[root]
        while parent[x] != root:
            parent[x], x = root, parent[x]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra == rb:
            return
        if self.size[ra] < self.size[rb]:
            ra, rb = rb, ra
        self.parent[rb] = ra
        self.size[ra] += self.size[rb]
        self.n_components -= 1

    def components(self):
        groups = {}
        for arm in range(len(self.parent)):
            groups.setdefault(self.find(arm), []).append(arm)
        return sorted(groups.values())


class SufficientStats:
    """Counts and reward sums per (arm, environment) cell.

    Column ``j - 1`` of :attr:`counts` and :attr:`cell_sums` holds environment
    ``j``. Environments must be recorded in order; ``J`` grows by one on each
    new ordinal.
    """

    def __init__(self, n_arms, capacity=16):
        if n_arms < 2:
            raise ValueError("need at least two arms")
        self.n_arms = n_arms
        self.J = 0
        self.N = 0
        self.sq_sum = 0.0
        self.arm_totals = np.zeros(n_arms)
        self.per_arm_N = np.zeros(n_arms, dtype=np.int64)
        self._counts = np.zeros((n_arms, capacity))
        self._cells = np.zeros((n_arms, capacity))
        self._env_totals = np.zeros(capacity)
        self.graph = ArmGraph(n_arms)
        self._env_anchor = -1
        # shift-eliminated normal equations of closed environments
        self._S_closed = np.zeros((n_arms, n_arms))
        self._rhs_closed = np.zeros(n_arms)
        self._v_closed = np.zeros(n_arms)
        self._q_closed = 0.0
        # current environment: total count, distinct arms, reward total
        self._cur_m = 0
        self._cur_distinct = 0

    @property
    def K(self):
        return self.n_arms

    @property
    def counts(self):
        return self._counts[:, : self.J]

    @property
    def cell_sums(self):
        return self._cells[:, : self.J]

    @property
    def env_totals(self):
        return self._env_totals[: self.J]

    def _grow(self):
        cap = 2 * self._counts.shape[1]
        for name in ("_counts", "_cells"):
            old = getattr(self, name)
            new = np.zeros((self.n_arms, cap))
            new[:, : old.shape[1]] = old
            setattr(self, name, new)
        env = np.zeros(cap)
        env[: self._env_totals.size] = self._env_totals
        self._env_totals = env

    def record(self, j, i, r):
        """Add reward ``r`` of arm ``i`` observed in environment ``j``."""
        i = check_arm(i, self.n_arms)
        if j == self.J + 1:
            if self.J:
                self._close_env(self.J - 1)
            if self.J == self._counts.shape[1]:
                self._grow()
            self.J = j
            self._env_anchor = i
            self._cur_m = 0
            self._cur_distinct = 0
        elif j != self.J:
            raise OutOfOrderEnvironmentError(
                f"environment {j} recorded while the latest is {self.J}"
            )
        else:
            self.graph.union(self._env_anchor, i)
        c = j - 1
        if self._counts[i, c] == 0:
            self._cur_distinct += 1
        self._cur_m += 1
        self._counts[i, c] += 1
        self._cells[i, c] += r
        self._env_totals[c] += r
        self.arm_totals[i] += r
        self.per_arm_N[i] += 1
        self.N += 1
        self.sq_sum += r * r
        return self

    def _env_terms(self, c, m=None, distinct=None):
        """Contribution of environment column ``c`` to the shift-eliminated system.

        Returns ``(S, rhs, v, q)`` where ``S`` and ``rhs`` omit environments
        holding a single arm (they carry no information about the means) and
        ``v = n e / m``, ``q = e^2 / m`` feed the residual sum of squares.
        """
        n = self._counts[:, c]
        cells = self._cells[:, c]
        if c == 0:
            S = np.zeros((self.n_arms, self.n_arms))
            S.flat[:: self.n_arms + 1] = n
            return S, cells.copy(), None, 0.0
        if m is None:
            m = n.sum()
            distinct = np.count_nonzero(n)
        e = float(self._env_totals[c])
        w = n / m
        v = w * e
        if distinct < 2:
            return None, None, v, e * e / m
        S = np.multiply.outer(w, -n)
        S.flat[:: self.n_arms + 1] += n
        return S, cells - v, v, e * e / m

    def _close_env(self, c):
        S, rhs, v, q = self._env_terms(c)
        if S is not None:
            self._S_closed += S
            self._rhs_closed += rhs
        if v is not None:
            self._v_closed += v
            self._q_closed += q

    def schur_system(self):
        """Arm-block normal equations after eliminating the shifts.

        Returns ``(S, rhs, v, q)``: ``S mu = rhs`` gives the mean estimates,
        ``S`` is the Schur complement ``diag(N) - C diag(m)^-1 C'`` and
        ``v``, ``q`` give ``sum_j s_hat_j e_j = q - mu . v``.
        """
        S, rhs = self._S_closed, self._rhs_closed
        v, q = self._v_closed, self._q_closed
        if self.J:
            S_c, rhs_c, v_c, q_c = self._env_terms(self.J - 1, self._cur_m, self._cur_distinct)
            if S_c is not None:
                S = S + S_c
                rhs = rhs + rhs_c
            if v_c is not None:
                v = v + v_c
                q = q + q_c
        return S, rhs, v, q

    def is_connected(self):
        """True iff every arm is sampled and the co-observation graph is connected."""
        return self.graph.n_components == 1

    def sample_means(self):
        return self.arm_totals / self.per_arm_N

    def pooled_variance(self):
        """Within-arm variance pooled over arms, ``N - K`` degrees of freedom."""
        dof = self.N - self.n_arms
        if dof < 1:
            return None
        sampled = self.per_arm_N > 0
        between = np.sum(self.arm_totals[sampled] ** 2 / self.per_arm_N[sampled])
        return max(self.sq_sum - between, 0.0) / dof

    def copy(self):
        other = SufficientStats.__new__(SufficientStats)
        other.__dict__.update(self.__dict__)
        for name in ("arm_totals", "per_arm_N", "_counts", "_cells", "_env_totals",
                     "_S_closed", "_rhs_closed", "_v_closed"):
            setattr(other, name, getattr(self, name).copy())
        g = ArmGraph(self.n_arms)
        g.parent = list(self.graph.parent)
        g.size = list(self.graph.size)
        g.n_components = self.graph.n_components
        other.graph = g
        return other

    @classmethod
    def from_cells(cls, counts, cell_sums, sq_sum):
        """Stats from a ``K x J`` count matrix, matching cell sums and the sum of squares."""
        counts = np.asarray(counts, dtype=float)
        cell_sums = np.asarray(cell_sums, dtype=float)
        if counts.ndim != 2 or counts.shape != cell_sums.shape:
            raise ValueError("counts and cell_sums must be K x J matrices of equal shape")
        if np.any(counts < 0) or np.any(counts != np.round(counts)):
            raise ValueError("counts must be nonnegative integers")
        n_arms, n_env = counts.shape
        self = cls(n_arms, capacity=max(n_env, 1))
        self.J = n_env
        self._counts[:, :n_env] = counts
        self._cells[:, :n_env] = cell_sums
        self._env_totals[:n_env] = cell_sums.sum(axis=0)
        self.arm_totals = cell_sums.sum(axis=1)
        self.per_arm_N = counts.sum(axis=1).astype(np.int64)
        self.N = int(self.per_arm_N.sum())
        self.sq_sum = float(sq_sum)
        if np.any(counts.sum(axis=0) == 0):
            raise ValueError("every environment needs at least one observation")
        if n_env > 1:
            self._close_envs(n_env - 1)
        seen = counts > 0
        linked = seen.astype(float) @ seen.T.astype(float)
        for a, b in zip(*np.nonzero(np.triu(linked, 1))):
            self.graph.union(int(a), int(b))
        if n_env:
            last = counts[:, n_env - 1]
            self._env_anchor = int(np.flatnonzero(last)[0])
            self._cur_m = int(last.sum())
            self._cur_distinct = int(np.count_nonzero(last))
        return self

    def _close_envs(self, stop):
        """Fold environment columns ``0..stop-1`` into the closed accumulators at once."""
        self._S_closed = np.diag(self._counts[:, 0])
        self._rhs_closed = self._cells[:, 0].copy()
        C = self._counts[:, 1:stop]
        if not C.shape[1]:
            return
        m = C.sum(axis=0)
        e = self._env_totals[1:stop]
        W = C / m
        V = W * e
        self._v_closed = V.sum(axis=1)
        self._q_closed = float(np.sum(e * e / m))
        keep = np.count_nonzero(C, axis=0) >= 2
        Ck, Wk = C[:, keep], W[:, keep]
        self._S_closed += np.diag(Ck.sum(axis=1)) - Wk @ Ck.T
        self._rhs_closed += (self._cells[:, 1:stop][:, keep] - V[:, keep]).sum(axis=1)

    def __repr__(self):
        return f"SufficientStats(K={self.n_arms}, J={self.J}, N={self.N})"


@dataclass
class ObservationLog:
    """Explicit per-observation history: environment ordinal, arm, reward."""

    envs: list = field(default_factory=list)
    arms: list = field(default_factory=list)
    rewards: list = field(default_factory=list)

    def append(self, j, i, r):
        self.envs.append(int(j))
        self.arms.append(int(i))
        self.rewards.append(float(r))

    def __len__(self):
        return len(self.rewards)

    def to_stats(self, n_arms):
        stats = SufficientStats(n_arms)
        for j, i, r in zip(self.envs, self.arms, self.rewards):
            stats.record(j, i, r)
        return stats

    def design(self, n_arms):
        """Dense design ``(A, B, r)``: arm indicators, shift indicators for ``j >= 2``, rewards."""
        envs = np.asarray(self.envs)
        arms = np.asarray(self.arms)
        n_env = int(envs.max()) if envs.size else 0
        A = np.zeros((len(arms), n_arms))
        A[np.arange(len(arms)), arms] = 1.0
        B = np.zeros((len(arms), max(n_env - 1, 0)))
        later = envs >= 2
        B[np.flatnonzero(later), envs[later] - 2] = 1.0
        return A, B, np.asarray(self.rewards, dtype=float)
