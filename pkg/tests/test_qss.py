import numpy as np
import pytest

from gridcascade.grid import find_islands
from gridcascade.qss import overloaded_set, run_static_cascade

from conftest import make_net, random_connected


def test_overloaded_set_examples():
    assert overloaded_set({1: 0.6}, {1: 0.5}) == {1}
    assert overloaded_set({1: -0.5, 2: 0.5}, {1: 0.5, 2: 0.5}) == set()
    assert overloaded_set({1: 0.1, 2: -0.2}, {1: 0.5, 2: 0.5}) == set()


def spur_net():
    # ring 1-2-3 with spurs 2-4 and 3-5 feeding loads
    return make_net(5, [(1, 2, 0.1), (2, 3, 0.1), (1, 3, 0.1), (2, 4, 0.05), (3, 5, 0.05)],
                    gens=[(1, 0.9, 2.0)], loads=[(2, 0.2), (4, 0.3), (5, 0.4)])


def test_spur_outages_strand_their_load():
    res = run_static_cascade(spur_net(), {4, 5})
    assert res.demand_lost == pytest.approx(70.0, abs=1e-9)
    assert res.outages_per_iteration == [2]
    assert [e.element for e in res.events if e.kind == "island_dead"] == [4, 5]
    assert not res.blackout


def test_empty_outage_set():
    res = run_static_cascade(spur_net(), ())
    assert res.demand_lost == 0.0 and res.events == [] and res.outages_per_iteration == []


def four_path_net():
    # generator at bus 1 feeds a 1.2 pu load at bus 2 over four parallel lines
    return make_net(2, [(1, 2, 0.1, 2.0), (1, 2, 0.1, 0.6), (1, 2, 0.2, 0.5), (1, 2, 0.4, 0.5)],
                    gens=[(1, 1.2, 2.0)], loads=[(2, 1.2)])


def test_multi_iteration_cascade_hand_trace():
    # after line 1 opens: susceptances 10, 5, 2.5 -> flows 0.686, 0.343, 0.171; line 2 (0.6) trips
    # then 5, 2.5 -> 0.8, 0.4; line 3 (0.5) trips; then line 4 carries 1.2 > 0.5 and trips
    res = run_static_cascade(four_path_net(), {1})
    assert res.outages_per_iteration == [1, 1, 1, 1]
    trips = [(e.time, e.element) for e in res.events if e.kind == "branch_trip"]
    assert trips == [(0.0, 1), (1.0, 2), (2.0, 3), (3.0, 4)]
    flows = {e.element: e.detail for e in res.events if e.kind == "branch_trip"}
    assert flows[2] == pytest.approx(120 * 10 / 17.5, abs=1e-6)
    assert flows[3] == pytest.approx(80.0, abs=1e-6)
    assert flows[4] == pytest.approx(120.0, abs=1e-6)
    assert res.demand_lost == pytest.approx(120.0, abs=1e-9)
    assert any(e.kind == "separation" for e in res.events)


def test_generous_ratings_stop_after_initial_outage():
    net = make_net(2, [(1, 2, 0.1, 2.0), (1, 2, 0.1, 2.0), (1, 2, 0.2, 2.0)],
                   gens=[(1, 1.2, 2.0)], loads=[(2, 1.2)])
    res = run_static_cascade(net, {1})
    assert res.outages_per_iteration == [1] and res.demand_lost == 0.0


def test_unknown_branch_rejected():
    with pytest.raises(KeyError):
        run_static_cascade(spur_net(), {99})


def test_redispatch_sheds_when_island_short_of_capacity():
    # splitting off bus 3 leaves its 0.5 pu load with a 0.3 pu unit
    net = make_net(3, [(1, 2, 0.1), (2, 3, 0.1)], gens=[(1, 0.7, 2.0, 10.0), (3, 0.3, 0.3, 30.0)],
                   loads=[(2, 0.5), (3, 0.5)])
    res = run_static_cascade(net, {2})
    assert res.demand_lost == pytest.approx(20.0, abs=1e-6)


@pytest.mark.parametrize("seed", range(25))
def test_unlimited_ratings_lose_only_stranded_demand(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(4, 16))
    edges = random_connected(rng, n, extra=int(rng.integers(0, 4)))
    load_buses = rng.choice(n, size=n // 2, replace=False) + 1
    loads = [(int(b), round(float(rng.uniform(0.05, 0.3)), 3)) for b in load_buses]
    total = sum(p for _, p in loads)
    gen_buses = rng.choice(n, size=2, replace=False) + 1
    gens = [(int(gen_buses[0]), total, 2 * total), (int(gen_buses[1]), 0.0, 2 * total)]
    net = make_net(n, edges, gens=gens, loads=loads)
    pair = set((rng.choice(len(edges), 2, replace=False) + 1).tolist())
    res = run_static_cascade(net, pair)
    part = find_islands(net, pair)
    stranded = sum(p for b, p in loads if any(b in isl for isl in part.dead_islands)) * 100
    assert res.demand_lost == pytest.approx(stranded, abs=1e-9)
    assert res.outages_per_iteration == [2]


@pytest.mark.parametrize("seed", range(10))
def test_bundled_case_invariants(bundled, seed):
    rng = np.random.default_rng(seed)
    ids = [b.id for b in bundled.branches]
    pair = rng.choice(ids, 2, replace=False).tolist()
    res = run_static_cascade(bundled, pair)
    again = run_static_cascade(bundled, pair)
    assert res.events == again.events and res.demand_lost == again.demand_lost
    assert 0.0 <= res.demand_lost <= bundled.total_demand_mw
    assert len(res.outages_per_iteration) <= len(ids)
    assert sum(res.outages_per_iteration) == res.line_outages
    assert all(c >= 1 for c in res.outages_per_iteration)
    times = [e.time for e in res.events]
    assert times == sorted(times)
    # cumulative loss never falls: the per-iteration dead-island losses add up within the total
    dead = sum(e.detail for e in res.events if e.kind == "island_dead")
    assert dead <= res.demand_lost + 1e-6
