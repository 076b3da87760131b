from collections import deque
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, strategies as st

from gridcascade.errors import BadAlpha, EmptySet
from gridcascade.events import EventRecord
from gridcascade.metrics import (INF_DISTANCE, LineDistance, ScenarioOutcome, ccdf, ccdf_at, cvar_alpha,
                                 distance_histogram, edns, group_into_iterations, lambda_series,
                                 line_distance, mean_iteration_counts, running_mean, uniform_outcomes,
                                 var_alpha)

from conftest import make_net, random_connected


# --- independent sort-and-scan oracles -------------------------------------

def var_oracle(samples, alpha):
    xs = sorted(samples)
    n = len(xs)
    for i, x in enumerate(xs):
        # empirical CDF at x counts every sample <= x
        count = i + 1
        while count < n and xs[count] == x:
            count += 1
        if Fraction(count, n) >= Fraction(repr(alpha)):
            return x
    return xs[-1]


def cvar_oracle(samples, alpha):
    v = var_oracle(samples, alpha)
    tail = [Fraction(x) for x in sorted(samples) if x >= v]
    return float(sum(tail) / len(tail))


def edns_oracle(pairs):
    return float(sum(Fraction(p) * Fraction(i) for p, i in sorted(pairs, key=lambda t: t[1])))


# --- risk metrics -----------------------------------------------------------

def test_edns_examples():
    assert edns([(0.5, 100.0), (0.5, 0.0)]) == 50.0
    assert edns(uniform_outcomes([0, 30, 60])) == pytest.approx(30.0, abs=1e-12)
    with pytest.raises(EmptySet):
        edns([])


def test_outcome_probability_range():
    with pytest.raises(ValueError):
        ScenarioOutcome(0, 0.0, 1.0)
    with pytest.raises(ValueError):
        ScenarioOutcome(0, 1.5, 1.0)


def test_alpha_read_as_decimal():
    # 0.9 as a binary float exceeds 9/10; the ninth of ten samples still qualifies
    assert var_alpha(list(range(1, 11)), 0.9) == 9
    assert var_alpha(list(range(1, 10_001)), 0.9) == 9000


def test_var_cvar_examples():
    xs = list(range(1, 101))
    assert var_alpha(xs, 0.95) == 95
    assert cvar_alpha(xs, 0.95) == 97.5
    assert var_alpha([7.0] * 9, 0.5) == cvar_alpha([7.0] * 9, 0.5) == 7.0
    assert var_alpha([3.0], 0.99) == cvar_alpha([3.0], 0.99) == 3.0


@pytest.mark.parametrize("alpha", [0.0, 1.0, -0.1, 1.2])
def test_bad_alpha(alpha):
    with pytest.raises(BadAlpha):
        var_alpha([1, 2], alpha)
    with pytest.raises(BadAlpha):
        cvar_alpha([1, 2], alpha)


def test_empty_distribution():
    with pytest.raises(EmptySet):
        var_alpha([], 0.5)
    with pytest.raises(EmptySet):
        ccdf([])


@pytest.mark.parametrize("seed", range(5))
def test_risk_metrics_match_oracles_on_large_samples(seed):
    rng = np.random.default_rng(seed)
    n = 10_000
    # heavy ties (a blackout cluster and many zeros) plus a continuous body
    xs = np.concatenate([np.zeros(n // 4), rng.pareto(1.5, n // 2) * 10, np.full(n // 4, 1480.0)])
    xs = rng.permutation(xs)[: n - seed].tolist()
    for alpha in (0.5, 0.9, 0.95, 0.99, 0.999):
        assert var_alpha(xs, alpha) == var_oracle(xs, alpha)
        assert cvar_alpha(xs, alpha) == cvar_oracle(xs, alpha)
    p = 1.0 / len(xs)
    assert edns([(p, x) for x in xs]) == edns_oracle([(p, x) for x in xs])


@given(st.lists(st.floats(0, 1e4, allow_nan=False), min_size=1, max_size=200),
       st.floats(0.01, 0.99))
def test_cvar_at_least_var_and_monotone(xs, alpha):
    assert cvar_alpha(xs, alpha) >= var_alpha(xs, alpha)
    hi = min(0.995, alpha + 0.2)
    assert var_alpha(xs, hi) >= var_alpha(xs, alpha)
    assert cvar_alpha(xs, hi) >= cvar_alpha(xs, alpha) - 1e-9 * max(1.0, max(xs))
    assert var_alpha(xs, alpha) == var_oracle(xs, alpha)


def test_ccdf_examples():
    assert ccdf([0, 10, 10, 20]) == [(0.0, 1.0), (10.0, 0.75), (20.0, 0.25)]
    assert ccdf([4, 4, 4]) == [(4.0, 1.0)]
    assert ccdf_at([0, 10, 10, 20], 10) == 0.75
    assert ccdf_at([0, 10, 10, 20], 25) == 0.0


@given(st.lists(st.floats(0, 1e3, allow_nan=False), min_size=1, max_size=100))
def test_ccdf_nonincreasing(xs):
    pts = ccdf(xs)
    assert pts[0][1] == 1.0
    assert all(a[0] < b[0] and a[1] > b[1] for a, b in zip(pts, pts[1:]))
    for x, p in pts:
        assert p == ccdf_at(xs, x)


# --- propagation ------------------------------------------------------------

def test_grouping_examples():
    assert group_into_iterations([0, 30, 90]) == [[2, 1]]
    assert group_into_iterations([0, 7200]) == [[1], [1]]
    assert group_into_iterations([5.0]) == [[1]]
    assert group_into_iterations([]) == []


def test_grouping_boundaries_and_event_filter():
    # a gap of exactly 60 s opens a new iteration; exactly 3600 s a new cascade
    assert group_into_iterations([0, 60]) == [[1, 1]]
    assert group_into_iterations([0, 3600]) == [[1], [1]]
    evs = [EventRecord(0.0, "branch_trip", 1, 0.0), EventRecord(1.0, "load_shed_ufls", 4, 9.0),
           EventRecord(70.0, "branch_trip", 2, 0.0)]
    assert group_into_iterations(evs) == [[1, 1]]


def test_grouping_ordinal_passthrough():
    assert group_into_iterations([0, 0, 1, 2, 2, 2], ordinal=True) == [[2, 1, 3]]
    assert group_into_iterations([0, 2], ordinal=True) == [[1, 0, 1]]


def test_lambda_examples():
    assert mean_iteration_counts([[2, 2], [2, 4]]) == [2.0, 3.0]
    assert lambda_series([[2, 2], [2, 4]]) == [1.5]
    assert lambda_series([[1, 2, 4]]) == [2.0, 2.0]
    assert lambda_series([[3]]) == []
    assert lambda_series([]) == []


def test_lambda_shorter_cascades_count_zero():
    assert mean_iteration_counts([[2], [2, 2, 2]]) == [2.0, 1.0, 1.0]
    assert lambda_series([[1, 0, 3]]) == [0.0]


def test_line_distance_examples():
    path = make_net(4, [(1, 2, 0.1), (2, 3, 0.1), (3, 4, 0.1)])
    assert line_distance(path, 1, 1) == 0
    assert line_distance(path, 1, 2) == 1
    assert line_distance(path, 1, 3) == 2
    split = make_net(4, [(1, 2, 0.1), (3, 4, 0.1)])
    assert line_distance(split, 1, 2) == INF_DISTANCE
    with pytest.raises(KeyError):
        line_distance(path, 1, 9)


def _bfs_hops(n, edges, src):
    adj = {i: [] for i in range(1, n + 1)}
    for a, b, _ in edges:
        adj[a].append(b)
        adj[b].append(a)
    dist = {src: 0}
    q = deque([src])
    while q:
        u = q.popleft()
        for v in adj[u]:
            if v not in dist:
                dist[v] = dist[u] + 1
                q.append(v)
    return dist


@pytest.mark.parametrize("seed", range(100))
def test_line_distance_matches_bfs(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 31))
    edges = random_connected(rng, n, extra=int(rng.integers(0, n)))
    # optionally detach a component by dropping a tree edge from the network
    net = make_net(n, edges)
    dist = LineDistance(net)
    for i, (a, b, _) in enumerate(edges, start=1):
        da, db = _bfs_hops(n, edges, a), _bfs_hops(n, edges, b)
        for j, (c, d, _) in enumerate(edges, start=1):
            want = 0 if i == j else min(da[c], da[d], db[c], db[d]) + 1
            assert dist(i, j) == want


def test_distance_histogram():
    path = make_net(4, [(1, 2, 0.1), (2, 3, 0.1), (3, 4, 0.1)])
    hist = distance_histogram([[1, 2, 3], [1, 3], [2]], LineDistance(path))
    assert hist == {1: 2, 2: 1}


def test_running_mean():
    np.testing.assert_allclose(running_mean([2, 4, 6]), [2, 3, 4])
