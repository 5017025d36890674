import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from shiftbai.errors import OutOfOrderEnvironmentError
from shiftbai.stats import ArmGraph, ObservationLog, SufficientStats


def test_first_record():
    s = SufficientStats(3)
    s.record(1, 1, 0.7)
    assert s.counts[1, 0] == 1
    assert s.N == 1
    assert s.arm_totals[1] == pytest.approx(0.7)


def test_skipped_environment():
    s = SufficientStats(2).record(1, 0, 1.0)
    with pytest.raises(OutOfOrderEnvironmentError):
        s.record(3, 1, 1.0)
    with pytest.raises(OutOfOrderEnvironmentError):
        SufficientStats(2).record(2, 0, 1.0)


def test_same_cell_accumulates():
    s = SufficientStats(2).record(1, 0, 1.0).record(1, 0, 3.0)
    assert s.cell_sums[0, 0] == 4.0
    assert s.counts[0, 0] == 2
    assert s.sq_sum == 10.0


def _stats_from_sets(k, envs):
    s = SufficientStats(k)
    for j, arms in enumerate(envs, start=1):
        for a in arms:
            s.record(j, a, 0.0)
    return s


def test_split_graph_is_disconnected():
    s = _stats_from_sets(5, [(0, 1), (0, 1, 2), (3, 4)])
    assert not s.is_connected()
    assert s.graph.components() == [[0, 1, 2], [3, 4]]


def test_bridged_graph_is_connected():
    assert _stats_from_sets(5, [(0, 1), (1, 2, 4), (4, 3)]).is_connected()


def test_single_clique_is_connected():
    assert _stats_from_sets(4, [(0, 1, 2, 3)]).is_connected()


def test_unsampled_arm_is_disconnected():
    assert not _stats_from_sets(3, [(0, 1), (1, 0)]).is_connected()


def test_union_find_counts_components():
    g = ArmGraph(6)
    g.union(0, 1)
    g.union(2, 3)
    g.union(1, 0)
    assert g.n_components == 4
    g.union(1, 3)
    assert g.find(0) == g.find(2)
    assert g.n_components == 3


def test_capacity_grows():
    s = SufficientStats(2, capacity=2)
    for j in range(1, 40):
        s.record(j, j % 2, float(j))
    assert s.J == 39
    assert s.counts.shape == (2, 39)
    assert s.env_totals.sum() == pytest.approx(sum(range(1, 40)))


def test_copy_is_independent():
    s = SufficientStats(2).record(1, 0, 1.0).record(1, 1, 2.0)
    c = s.copy()
    c.record(2, 0, 5.0)
    assert s.J == 1 and c.J == 2
    assert s.arm_totals[0] == 1.0


log_strategy = st.lists(
    st.tuples(st.integers(0, 3), st.integers(0, 3), st.floats(-5, 5)), min_size=1, max_size=40
)


def _log_from(draws):
    """Observation log whose environment ordinals advance on every ``advance`` flag."""
    log = ObservationLog()
    j = 1
    for step, (arm, adv, r) in enumerate(draws):
        if step and adv == 0:
            j += 1
        log.append(j, arm, r)
    return log


@settings(max_examples=60, deadline=None)
@given(log_strategy)
def test_incremental_and_batch_stats_agree(draws):
    log = _log_from(draws)
    inc = log.to_stats(4)
    batch = SufficientStats.from_cells(inc.counts, inc.cell_sums, inc.sq_sum)
    assert batch.is_connected() == inc.is_connected()
    S1, r1, v1, q1 = inc.schur_system()
    S2, r2, v2, q2 = batch.schur_system()
    np.testing.assert_allclose(S1, S2, atol=1e-9)
    np.testing.assert_allclose(r1, r2, atol=1e-9)
    np.testing.assert_allclose(v1, v2, atol=1e-9)
    assert q1 == pytest.approx(q2, abs=1e-9)


@settings(max_examples=60, deadline=None)
@given(log_strategy)
def test_schur_complement_matches_dense_gram(draws):
    log = _log_from(draws)
    stats = log.to_stats(4)
    A, B, r = log.design(4)
    X = np.hstack([A, B])
    G = X.T @ X
    k = 4
    S, _, _, _ = stats.schur_system()
    if B.shape[1]:
        D = G[k:, k:]
        dense = G[:k, :k] - G[:k, k:] @ np.linalg.inv(D) @ G[k:, :k]
    else:
        dense = G[:k, :k]
    np.testing.assert_allclose(S, dense, atol=1e-9)
