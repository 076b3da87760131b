import numpy as np
import pytest

from gridcascade.errors import SingularTopology
from gridcascade.grid import build_susceptance
from gridcascade.powerflow import (DEFAULT_VOLL, branch_flows, dc_opf, dc_power_flow, injections_by_bus,
                                   network_flows, solve_base_case)

from conftest import make_net, random_connected


def test_two_bus_flow():
    net = make_net(2, [(1, 2, 0.1)])
    sol = dc_power_flow(net, [1, 2], {1: 1.0, 2: -1.0})
    assert sol.angles[1] - sol.angles[2] == pytest.approx(0.1, abs=1e-12)
    assert sol.branch_flows[1] == pytest.approx(1.0, abs=1e-12)


def test_zero_injection():
    net = make_net(3, [(1, 2, 0.1), (2, 3, 0.2)])
    sol = dc_power_flow(net, [1, 2, 3], np.zeros(3))
    assert all(v == 0 for v in sol.angles.values())
    assert all(v == 0 for v in sol.branch_flows.values())


def test_ring_superposition():
    net = make_net(3, [(1, 2, 0.1), (2, 3, 0.1), (1, 3, 0.1)])
    f = dc_power_flow(net, [1, 2, 3], {1: 1.0, 2: -1.0}).branch_flows
    assert f[1] == pytest.approx(2 / 3, abs=1e-12)
    assert f[2] == pytest.approx(-1 / 3, abs=1e-12)
    assert f[3] == pytest.approx(1 / 3, abs=1e-12)


def test_unbalanced_and_singular():
    net = make_net(3, [(1, 2, 0.1)])
    with pytest.raises(ValueError):
        dc_power_flow(net, [1, 2], {1: 1.0})
    with pytest.raises(SingularTopology):
        dc_power_flow(net, [1, 2, 3], np.zeros(3))


def test_branch_flow_definition_and_orientation():
    fwd = make_net(2, [(1, 2, 0.1)])
    rev = make_net(2, [(2, 1, 0.1)])
    assert branch_flows(fwd, [1, 2], {1: 0.1, 2: 0.0})[1] == pytest.approx(1.0)
    assert branch_flows(rev, [1, 2], {1: 0.1, 2: 0.0})[1] == pytest.approx(-1.0)
    assert branch_flows(fwd, [1, 2], {1: 0.3, 2: 0.3})[1] == 0.0


def dense_oracle(n, edges, p, slack=0):
    B = np.zeros((n, n))
    for a, b, x in edges:
        a, b = a - 1, b - 1
        B[a, a] += 1 / x
        B[b, b] += 1 / x
        B[a, b] -= 1 / x
        B[b, a] -= 1 / x
    keep = [i for i in range(n) if i != slack]
    theta = np.zeros(n)
    theta[keep] = np.linalg.inv(B[np.ix_(keep, keep)]) @ p[keep]
    return theta


@pytest.mark.parametrize("seed", range(100))
def test_power_flow_matches_dense_inverse(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(2, 11))
    edges = random_connected(rng, n, extra=int(rng.integers(0, 4)))
    net = make_net(n, edges)
    p = rng.normal(size=n)
    p -= p.mean()
    sol = dc_power_flow(net, range(1, n + 1), p)
    theta = np.array([sol.angles[b] for b in range(1, n + 1)])
    # the slack is the lowest bus id when no machine sits in the island
    assert np.max(np.abs(theta - dense_oracle(n, edges, p))) < 1e-9
    # conservation: net outflow at every bus equals its injection
    out = np.zeros(n)
    for bid, (a, b, _) in enumerate(edges, start=1):
        out[a - 1] += sol.branch_flows[bid]
        out[b - 1] -= sol.branch_flows[bid]
    assert np.max(np.abs(out - p)) < 1e-9
    B = build_susceptance(net, range(1, n + 1)).matrix
    assert np.max(np.abs(B @ theta - p)) < 1e-9


def test_network_flows_handles_islands():
    net = make_net(4, [(1, 2, 0.1), (3, 4, 0.2)])
    flows = network_flows(net, np.array([True, True]), np.array([0.5, -0.5, -0.2, 0.2]))
    np.testing.assert_allclose(flows, [0.5, -0.2])


# --- DC-OPF -----------------------------------------------------------------

def two_bus_opf(limit):
    return make_net(2, [(1, 2, 0.1, limit)], gens=[(1, 0.0, 2.0, 20.0), (2, 0.0, 0.3, 40.0)],
                    loads=[(2, 1.0)])


def test_opf_congested_sheds():
    res = dc_opf(two_bus_opf(0.5), [1, 2])
    assert res.feasible
    assert res.gen_setpoints[1] == pytest.approx(0.5, abs=1e-9)
    assert res.gen_setpoints[2] == pytest.approx(0.3, abs=1e-9)
    assert res.total_shed == pytest.approx(0.2, abs=1e-9)


def test_opf_uncongested_serves_all():
    res = dc_opf(two_bus_opf(2.0), [1, 2])
    assert res.total_shed == pytest.approx(0.0, abs=1e-9)
    assert res.gen_setpoints[1] == pytest.approx(1.0, abs=1e-9)


def test_opf_island_without_generation_sheds_everything():
    net = make_net(3, [(1, 2, 0.1), (2, 3, 0.1)], gens=[(1, 0.0, 1.0)], loads=[(2, 0.4), (3, 0.3)])
    mask = np.array([True, False])
    res = dc_opf(net, [3], branch_mask=mask)
    assert res.feasible and res.gen_setpoints == {}
    assert res.shed_per_load == {2: pytest.approx(0.3)}


def test_opf_rejects_cheap_voll():
    with pytest.raises(ValueError):
        dc_opf(two_bus_opf(0.5), [1, 2], voll=100.0)


def test_opf_minimal_deviation_redispatch():
    net = two_bus_opf(2.0)
    res = dc_opf(net, [1, 2], reference={1: 0.4, 2: 0.3}, enforce_flow_limits=False)
    # the cheapest movement that restores balance: raise the cheaper unit
    assert res.gen_setpoints[1] == pytest.approx(0.7, abs=1e-9)
    assert res.gen_setpoints[2] == pytest.approx(0.3, abs=1e-9)


def _ptdf(n, edges):
    B = np.zeros((n, n))
    for a, b, x, _ in edges:
        a, b = a - 1, b - 1
        for i, j, s in ((a, a, 1), (b, b, 1), (a, b, -1), (b, a, -1)):
            B[i, j] += s / x
    Binv = np.zeros((n, n))
    Binv[1:, 1:] = np.linalg.inv(B[1:, 1:])
    A = np.zeros((len(edges), n))
    for k, (a, b, x, _) in enumerate(edges):
        A[k] = (Binv[a - 1] - Binv[b - 1]) / x
    return A


def _opf_instance(rng):
    n = int(rng.integers(2, 6))
    edges = random_connected(rng, n, extra=int(rng.integers(0, 3)))
    edges = [(a, b, round(x, 2), round(float(rng.uniform(0.2, 1.2)), 2)) for a, b, x in edges]
    ga, gb = (int(v) + 1 for v in rng.choice(n, 2, replace=False))
    load_bus = int(rng.integers(1, n + 1))
    gens = [(ga, 0.0, round(float(rng.uniform(0.3, 1.5)), 2), round(float(rng.uniform(10, 50)), 2)),
            (gb, 0.0, round(float(rng.uniform(0.3, 1.5)), 2), round(float(rng.uniform(10, 50)), 2))]
    demand = round(float(rng.uniform(0.3, 1.8)), 2)
    return n, edges, gens, load_bus, demand


def opf_vs_brute_force(seed):
    """(LP answer feasible, objective gap to the 0.01 pu grid optimum) for one random instance."""
    rng = np.random.default_rng(1000 + seed)
    n, edges, gens, load_bus, demand = _opf_instance(rng)
    net = make_net(n, edges, gens=gens, loads=[(load_bus, demand)])
    res = dc_opf(net, range(1, n + 1))
    base = net.base_mva

    p = np.array([res.gen_setpoints[1], res.gen_setpoints[2]])
    shed = res.total_shed
    ptdf = _ptdf(n, edges)
    inj = np.zeros(n)
    inj[gens[0][0] - 1] += p[0]
    inj[gens[1][0] - 1] += p[1]
    inj[load_bus - 1] -= demand - shed
    ratings = np.array([e[3] for e in edges])
    feasible = (np.all(p >= -1e-6) and np.all(p <= np.array([g[2] for g in gens]) + 1e-6)
                and -1e-6 <= shed <= demand + 1e-6 and abs(p.sum() + shed - demand) < 1e-6
                and np.all(np.abs(ptdf @ inj) <= ratings + 1e-6))
    own = base * (gens[0][3] * p[0] + gens[1][3] * p[1] + DEFAULT_VOLL * shed)
    feasible = feasible and abs(own - res.objective_value) < 1e-6

    # exhaustive 0.01 pu grid over both units; shed closes the balance
    g1 = np.arange(0, int(round(gens[0][2] * 100)) + 1) / 100
    g2 = np.arange(0, int(round(gens[1][2] * 100)) + 1) / 100
    P1, P2 = (a.ravel() for a in np.meshgrid(g1, g2))
    S = demand - P1 - P2
    ok = S >= -1e-12
    P1, P2, S = P1[ok], P2[ok], np.maximum(S[ok], 0.0)
    INJ = np.zeros((n, P1.size))
    INJ[gens[0][0] - 1] += P1
    INJ[gens[1][0] - 1] += P2
    INJ[load_bus - 1] -= demand - S
    feas = np.all(np.abs(ptdf @ INJ) <= ratings[:, None] + 1e-9, axis=0)
    cost = base * (gens[0][3] * P1 + gens[1][3] * P2 + DEFAULT_VOLL * S)
    return bool(feasible), res.objective_value - cost[feas].min()


@pytest.mark.parametrize("seed", range(50))
def test_opf_matches_brute_force(seed):
    feasible, gap = opf_vs_brute_force(seed)
    assert feasible
    assert gap < 1e-6


@pytest.mark.parametrize("seed", range(20))
def test_raising_binding_limit_never_increases_shed(seed):
    rng = np.random.default_rng(seed)
    n, edges, gens, load_bus, demand = _opf_instance(rng)
    net = make_net(n, edges, gens=gens, loads=[(load_bus, demand)])
    shed0 = dc_opf(net, range(1, n + 1)).total_shed
    relaxed = make_net(n, [(a, b, x, r * 1.5) for a, b, x, r in edges], gens=gens, loads=[(load_bus, demand)])
    assert dc_opf(relaxed, range(1, n + 1)).total_shed <= shed0 + 1e-9


def test_base_case_balances(three_bus):
    base = solve_base_case(three_bus)
    assert base.served.tolist() == [1.0, 1.0]
    assert base.gen_p.sum() == pytest.approx(1.5, abs=1e-9)
    # cheaper unit at bus 1 carries as much as the 1.2 pu ratings allow
    assert np.all(np.abs(base.flows) <= 1.2 + 1e-9)
    p_bus = injections_by_bus(three_bus, base.gen_p, base.served)
    assert abs(p_bus.sum()) < 1e-12
