"""Quasi-steady-state DC cascade: redispatch, trip every overloaded line, repeat."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np

from .errors import SolverFailure
from .events import CascadeResult, EventRecord, sort_events
from .grid import Network, live_branch_mask, partition
from .powerflow import (DEFAULT_VOLL, BaseCase, dc_opf, injections_by_bus, network_flows,
                        solve_base_case)

log = logging.getLogger(__name__)

OVERLOAD_TOL = 1e-6
BALANCE_TOL = 1e-7


def overloaded_set(flows: Mapping[int, float], ratings: Mapping[int, float],
                   tol: float = OVERLOAD_TOL) -> set[int]:
    """Branches whose |flow| exceeds rating * (1 + tol)."""
    return {b for b, f in flows.items() if abs(f) > ratings[b] * (1.0 + tol)}


@dataclass
class StaticCascadeState:
    branch_mask: np.ndarray
    gen_p: np.ndarray
    gen_on: np.ndarray
    served: np.ndarray
    iteration_counter: int = 0
    outages_per_iteration: list[int] = field(default_factory=list)
    cumulative_shed: float = 0.0  # MW


def _lost_mw(net: Network, served0: np.ndarray, served: np.ndarray) -> float:
    arr = net.arrays
    # fixed summation order so a total blackout reproduces total demand bit-for-bit
    return float(sum((arr.load_p * (served0 - served)).tolist())) * net.base_mva


def run_static_cascade(net: Network, initial_outages: Iterable[int] = (), *,
                       base: BaseCase | None = None, voll: float = DEFAULT_VOLL,
                       scenario_id: int = 0) -> CascadeResult:
    """Run the static cascade for one contingency.

    Each iteration re-forms islands, blacks out islands without generation,
    rebalances the remaining islands with a minimal-movement redispatch
    (generation limits and load shedding, no line limits), recomputes DC
    flows and trips all overloaded branches at once. Event times are
    iteration numbers, starting at 0 for the initial outages.
    """
    initial = sorted(set(int(b) for b in initial_outages))
    arr = net.arrays
    live_branch_mask(net, initial)  # validates ids
    if not initial:
        return CascadeResult(scenario_id=scenario_id)
    if base is None:
        base = solve_base_case(net, voll)

    st = StaticCascadeState(branch_mask=arr.br_in_service.copy(), gen_p=base.gen_p.copy(),
                            gen_on=arr.gen_in_service.copy(), served=base.served.copy())
    events: list[EventRecord] = []
    flows = base.flows
    pending = [net.branch_index[b] for b in initial]
    n_islands = len(partition(net, st.branch_mask, st.gen_on))

    while pending:
        k = st.iteration_counter
        for i in sorted(pending, key=lambda i: arr.br_ids[i]):
            st.branch_mask[i] = False
            events.append(EventRecord(float(k), "branch_trip", int(arr.br_ids[i]),
                                      abs(float(flows[i])) * net.base_mva))
        st.outages_per_iteration.append(len(pending))
        st.iteration_counter += 1

        islands = partition(net, st.branch_mask, st.gen_on)
        if len(islands) > n_islands:
            for members, _ in islands:
                events.append(EventRecord(float(k), "separation", int(arr.bus_ids[members].min()),
                                          _island_demand_mw(net, members, st.served)))
        n_islands = len(islands)
        live_any = False
        for members, has_gen in islands:
            in_isl = np.isin(arr.load_bus, members)
            if not has_gen:
                lost = _island_demand_mw(net, members, st.served)
                if lost > 0:
                    events.append(EventRecord(float(k), "island_dead", int(arr.bus_ids[members].min()), lost))
                st.served[in_isl] = 0.0
                continue
            live_any = True
            _rebalance(net, st, members, voll, events, k)

        st.cumulative_shed = _lost_mw(net, base.served, st.served)
        if not live_any:
            break
        flows = network_flows(net, st.branch_mask,
                              injections_by_bus(net, st.gen_p, st.served, st.gen_on))
        over = np.flatnonzero(st.branch_mask & (np.abs(flows) > arr.br_rating * (1.0 + OVERLOAD_TOL)))
        pending = over.tolist()

    served_total = float(np.dot(arr.load_p, base.served))
    lost = _lost_mw(net, base.served, st.served)
    return CascadeResult(
        scenario_id=scenario_id,
        events=sort_events(events),
        demand_lost=lost,
        outages_per_iteration=list(st.outages_per_iteration),
        blackout=bool(served_total > 0 and not np.any(st.served > 0)),
    )


def _island_demand_mw(net: Network, members: np.ndarray, served: np.ndarray) -> float:
    arr = net.arrays
    in_isl = np.isin(arr.load_bus, members)
    return float(np.dot(arr.load_p[in_isl], served[in_isl])) * net.base_mva


def _rebalance(net: Network, st: StaticCascadeState, members: np.ndarray, voll: float,
               events: list, k: int) -> None:
    arr = net.arrays
    gens = np.flatnonzero(st.gen_on & np.isin(arr.gen_bus, members))
    loads = np.flatnonzero(np.isin(arr.load_bus, members))
    mismatch = st.gen_p[gens].sum() - np.dot(arr.load_p[loads], st.served[loads])
    if abs(mismatch) <= BALANCE_TOL:
        return
    bus_ids = arr.bus_ids[members].tolist()
    try:
        res = dc_opf(net, bus_ids, branch_mask=st.branch_mask, gen_mask=st.gen_on, served=st.served,
                     voll=voll, enforce_flow_limits=False, honor_pmin=False,
                     reference={int(arr.gen_ids[g]): float(st.gen_p[g]) for g in gens})
    except SolverFailure as exc:
        log.warning("redispatch failed (%s); blacking out island at bus %d", exc, min(bus_ids))
        lost = _island_demand_mw(net, members, st.served)
        st.served[loads] = 0.0
        st.gen_p[gens] = 0.0
        st.gen_on[gens] = False
        if lost > 0:
            events.append(EventRecord(float(k), "island_dead", int(min(bus_ids)), lost))
        return
    for gid, v in res.gen_setpoints.items():
        st.gen_p[net.gen_index[gid]] = v
    for lid, s in res.shed_per_load.items():
        i = net.load_index[lid]
        if arr.load_p[i] > 0 and s > 0:
            st.served[i] = max(0.0, st.served[i] - s / arr.load_p[i])
