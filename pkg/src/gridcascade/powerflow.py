"""DC power flow and DC optimal power flow with load shedding."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy import sparse
from scipy.optimize import linprog

from .errors import SingularTopology, SolverFailure
from .grid import Network, build_susceptance

log = logging.getLogger(__name__)

DEFAULT_VOLL = 1.0e4


@dataclass(frozen=True)
class DcSolution:
    angles: dict[int, float]
    branch_flows: dict[int, float]


@dataclass(frozen=True)
class DispatchResult:
    gen_setpoints: dict[int, float]
    shed_per_load: dict[int, float]
    objective_value: float
    feasible: bool = True
    angles: dict[int, float] = field(default_factory=dict)

    @property
    def total_shed(self) -> float:
        return float(sum(self.shed_per_load.values()))


def _island_branches(net: Network, buses: set[int], branch_mask) -> list[int]:
    arr = net.arrays
    if branch_mask is None:
        branch_mask = arr.br_in_service
    bus_pos = {net.bus_index[b] for b in buses}
    return [i for i in np.flatnonzero(branch_mask)
            if arr.br_from[i] in bus_pos and arr.br_to[i] in bus_pos]


def solve_angles(B: np.ndarray, p: np.ndarray, slack_index: int) -> np.ndarray:
    """Solve B theta = p with theta[slack] = 0."""
    n = len(p)
    theta = np.zeros(n)
    if n == 1:
        return theta
    keep = np.r_[0:slack_index, slack_index + 1:n]
    try:
        theta[keep] = np.linalg.solve(B[np.ix_(keep, keep)], p[keep])
    except np.linalg.LinAlgError as exc:
        raise SingularTopology(str(exc)) from exc
    return theta


def dc_power_flow(net: Network, island: Iterable[int], injections,
                  branch_mask: np.ndarray | None = None) -> DcSolution:
    """Solve the DC power flow of one island.

    ``injections`` maps bus id to net injection in per-unit, or is an array
    ordered like ``sorted(island)``. Injections must already be balanced.
    """
    sus = build_susceptance(net, island, branch_mask)
    if isinstance(injections, Mapping):
        p = np.array([float(injections.get(b, 0.0)) for b in sus.buses])
    else:
        p = np.asarray(injections, dtype=float)
        if p.shape != (len(sus.buses),):
            raise ValueError("injection vector does not match island size")
    if abs(p.sum()) > 1e-9 * max(1.0, np.abs(p).sum()):
        raise ValueError(f"injections are not balanced (sum {p.sum():.3e} pu)")
    theta = solve_angles(sus.matrix, p, sus.slack_index)
    angles = dict(zip(sus.buses, theta.tolist()))
    return DcSolution(angles=angles, branch_flows=branch_flows(net, sus.buses, angles, branch_mask))


def branch_flows(net: Network, island: Iterable[int], angles: Mapping[int, float],
                 branch_mask: np.ndarray | None = None) -> dict[int, float]:
    arr = net.arrays
    ids = arr.bus_ids
    out = {}
    for i in _island_branches(net, set(island), branch_mask):
        a, b = ids[arr.br_from[i]], ids[arr.br_to[i]]
        out[int(arr.br_ids[i])] = (angles[a] - angles[b]) / arr.br_x[i]
    return out


def dc_opf(net: Network, island: Iterable[int], *,
           branch_mask: np.ndarray | None = None,
           gen_mask: np.ndarray | None = None,
           served: np.ndarray | None = None,
           voll: float = DEFAULT_VOLL,
           enforce_flow_limits: bool = True,
           honor_pmin: bool = True,
           reference: Mapping[int, float] | None = None) -> DispatchResult:
    """Least-cost DC dispatch of one island with load shedding at ``voll``.

    With ``reference`` given, the generation cost is replaced by the distance
    from that dispatch (redispatch with minimal movement); shedding still
    costs ``voll``. ``served`` scales each load's demand (defaults to the
    loads' served_fraction); shed can never exceed the scaled demand.
    """
    buses = sorted(set(island))
    arr = net.arrays
    base = net.base_mva
    if gen_mask is None:
        gen_mask = arr.gen_in_service
    if served is None:
        served = arr.load_served
    bset = {net.bus_index[b] for b in buses}
    gens = [i for i in np.flatnonzero(gen_mask) if arr.gen_bus[i] in bset]
    loads = [i for i in range(len(arr.load_ids)) if arr.load_bus[i] in bset]
    demand = np.array([arr.load_p[i] * served[i] for i in loads])

    max_cost = max((g.cost_linear for g in net.generators), default=0.0)
    if reference is None and max_cost > 0 and voll < 100.0 * max_cost:
        raise ValueError(f"VOLL {voll} must exceed 100x the largest generation cost {max_cost}")

    if not gens:
        log.debug("island at bus %d has no generation; shedding all load", buses[0])
        return DispatchResult(gen_setpoints={},
                              shed_per_load={int(arr.load_ids[i]): float(d) for i, d in zip(loads, demand)},
                              objective_value=float(voll * base * demand.sum()), feasible=True,
                              angles={b: 0.0 for b in buses})

    sus = build_susceptance(net, buses, branch_mask)
    n, ng, nl = len(buses), len(gens), len(loads)
    pos = {net.bus_index[b]: k for k, b in enumerate(buses)}
    gens_obj = [net.generators[i] for i in gens]
    use_dev = reference is not None
    nv = ng + nl + n + (2 * ng if use_dev else 0)
    off_s, off_t, off_d = ng, ng + nl, ng + nl + n

    c = np.zeros(nv)
    if use_dev:
        # tie-break toward cheaper units; unit movement cost stays ~1 per pu
        scale = max(max_cost, 1.0)
        w = np.array([1.0 + 1e-3 * g.cost_linear / scale for g in gens_obj])
        c[off_d:off_d + ng] = w
        c[off_d + ng:off_d + 2 * ng] = w
        c[off_s:off_t] = voll
    else:
        c[:ng] = [g.cost_linear * base for g in gens_obj]
        c[off_s:off_t] = voll * base

    rows, cols, vals = [], [], []
    for k, i in enumerate(gens):
        rows.append(pos[arr.gen_bus[i]]); cols.append(k); vals.append(1.0)
    for k, i in enumerate(loads):
        rows.append(pos[arr.load_bus[i]]); cols.append(off_s + k); vals.append(1.0)
    Bc = sparse.coo_matrix(sus.matrix)
    rows.extend(Bc.row.tolist()); cols.extend((Bc.col + off_t).tolist()); vals.extend((-Bc.data).tolist())
    b_eq = np.zeros(n)
    for k, i in enumerate(loads):
        b_eq[pos[arr.load_bus[i]]] += demand[k]
    n_eq = n
    if use_dev:
        # p_g - up_g + down_g = reference_g
        for k, g in enumerate(gens_obj):
            r = n_eq + k
            rows += [r, r, r]; cols += [k, off_d + k, off_d + ng + k]; vals += [1.0, -1.0, 1.0]
        b_eq = np.r_[b_eq, [float(reference.get(g.id, 0.0)) for g in gens_obj]]
        n_eq += ng
    A_eq = sparse.csr_matrix((vals, (rows, cols)), shape=(n_eq, nv))

    A_ub, b_ub = None, None
    if enforce_flow_limits:
        br = _island_branches(net, set(buses), branch_mask)
        if br:
            r_, c_, v_ = [], [], []
            lim = []
            for k, i in enumerate(br):
                y = 1.0 / arr.br_x[i]
                a, b = pos[arr.br_from[i]] + off_t, pos[arr.br_to[i]] + off_t
                r_ += [2 * k, 2 * k, 2 * k + 1, 2 * k + 1]
                c_ += [a, b, a, b]
                v_ += [y, -y, -y, y]
                lim += [arr.br_rating[i], arr.br_rating[i]]
            A_ub = sparse.csr_matrix((v_, (r_, c_)), shape=(2 * len(br), nv))
            b_ub = np.array(lim)

    bounds = []
    for g in gens_obj:
        lo = g.p_min if honor_pmin else min(0.0, g.p_min)
        bounds.append((lo, g.p_max))
    bounds += [(0.0, float(d)) for d in demand]
    sl = sus.slack_index
    bounds += [(0.0, 0.0) if k == sl else (None, None) for k in range(n)]
    if use_dev:
        bounds += [(0.0, None)] * (2 * ng)

    res = linprog(c, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
    if res.status != 0:
        raise SolverFailure(f"DC-OPF failed on island at bus {buses[0]}: {res.message}")
    x = res.x
    p = np.clip(x[:ng], [b[0] for b in bounds[:ng]], [b[1] for b in bounds[:ng]])
    shed = np.clip(x[off_s:off_t], 0.0, demand)
    return DispatchResult(
        gen_setpoints={g.id: float(v) for g, v in zip(gens_obj, p)},
        shed_per_load={int(arr.load_ids[i]): float(v) for i, v in zip(loads, shed)},
        objective_value=float(res.fun),
        feasible=True,
        angles=dict(zip(buses, x[off_t:off_t + n].tolist())),
    )


@dataclass
class BaseCase:
    """Pre-contingency operating point shared by both cascade engines."""

    gen_p: np.ndarray  # pu, aligned with net.generators
    served: np.ndarray  # served fraction, aligned with net.loads
    flows: np.ndarray  # pu, aligned with net.branches (0 when out of service)
    objective: float


def injections_by_bus(net: Network, gen_p: np.ndarray, served: np.ndarray,
                      gen_mask: np.ndarray | None = None) -> np.ndarray:
    arr = net.arrays
    if gen_mask is None:
        gen_mask = arr.gen_in_service
    p = np.zeros(len(arr.bus_ids))
    np.add.at(p, arr.gen_bus[gen_mask], gen_p[gen_mask])
    np.add.at(p, arr.load_bus, -arr.load_p * served)
    return p


def network_flows(net: Network, branch_mask: np.ndarray, p_bus: np.ndarray) -> np.ndarray:
    """DC flows of every island for balanced per-island injections ``p_bus``."""
    from .grid import partition

    arr = net.arrays
    flows = np.zeros(len(arr.br_ids))
    for members, _ in partition(net, branch_mask):
        if len(members) < 2:
            continue
        sus = build_susceptance(net, net.arrays.bus_ids[members].tolist(), branch_mask)
        theta = solve_angles(sus.matrix, p_bus[members], sus.slack_index)
        full = np.zeros(len(arr.bus_ids))
        full[members] = theta
        inside = branch_mask & np.isin(arr.br_from, members)
        flows[inside] = (full[arr.br_from[inside]] - full[arr.br_to[inside]]) / arr.br_x[inside]
    return flows


def solve_base_case(net: Network, voll: float = DEFAULT_VOLL) -> BaseCase:
    """Flow-constrained DC-OPF of every energised island of the intact network."""
    from .grid import partition

    arr = net.arrays
    gen_p = np.zeros(len(arr.gen_ids))
    served = arr.load_served.copy()
    objective = 0.0
    for members, _ in partition(net, arr.br_in_service):
        res = dc_opf(net, arr.bus_ids[members].tolist(), voll=voll)
        for gid, v in res.gen_setpoints.items():
            gen_p[net.gen_index[gid]] = v
        for lid, s in res.shed_per_load.items():
            i = net.load_index[lid]
            if arr.load_p[i] > 0:
                served[i] = max(0.0, served[i] - s / arr.load_p[i])
        objective += res.objective_value
    if np.any(served < 1.0):
        log.warning("base case sheds %.3f MW before any contingency",
                    float(np.dot(arr.load_p, 1.0 - served)) * net.base_mva)
    flows = network_flows(net, arr.br_in_service, injections_by_bus(net, gen_p, served))
    return BaseCase(gen_p=gen_p, served=served, flows=flows, objective=objective)
