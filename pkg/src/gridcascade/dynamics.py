"""Time-domain cascade engine: swing dynamics, governors and relays.

Machines use the classical constant-EMF model behind the transient
reactance. The network is solved in its linear (DC) form at every RK4
stage: with bus voltage magnitudes held at 1 pu, a constant-admittance
load draws its nominal power, scaled by ``1 + kf * dw`` with ``dw`` the
island's centre-of-inertia speed deviation. Eliminating the buses leaves,
per island,

    P_e = K (delta - delta_ref) + c + g * dw_coi
    flow = F (delta - delta_ref) + f0 + fg * dw_coi

so the kernels only ever see small dense blocks. Relays are sampled at
step boundaries only.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import Iterable

import numpy as np

from .errors import InitFailure, NumericalDivergence, SingularTopology
from .events import CascadeResult, EventRecord, sort_events
from .grid import Network, live_branch_mask, partition
from .kernel import DIVERGED, RELAY_EVENT, get_advance
from .metrics import group_into_iterations
from .powerflow import BaseCase, DispatchResult, build_susceptance, solve_angles, solve_base_case
from .protection import (DISARMED, OverloadRelayState, RelaySettings, ofgt_evaluate, oos_evaluate,
                         overload_update, ufls_evaluate)

log = logging.getLogger(__name__)


class _DeadIsland:
    def __repr__(self):
        return "DEAD_ISLAND"


DEAD_ISLAND = _DeadIsland()


@dataclass(frozen=True)
class DynConfig:
    dt: float = 0.1
    t_end: float = 60.0
    relays: RelaySettings = field(default_factory=RelaySettings)
    trace: bool = False
    # speed deviations beyond this (pu) are treated as numerical divergence
    omega_limit: float = 1.0
    backend: str | None = None

    def __post_init__(self):
        if not 0.0 < self.dt <= 1.0:
            raise ValueError(f"dt must lie in (0, 1] s, got {self.dt}")
        if self.t_end < self.dt:
            raise ValueError("t_end must be at least one step")

    @property
    def n_steps(self) -> int:
        return int(round(self.t_end / self.dt))


@dataclass(frozen=True)
class MachineState:
    gen_id: int
    delta: float
    omega: float
    p_mech: float
    e_prime: float
    connected: bool


@dataclass(frozen=True)
class NetworkSolution:
    angles: dict[int, float]
    voltages: dict[int, complex]
    branch_flows: dict[int, float]
    p_elec: dict[int, float]


@dataclass
class _Island:
    key: int  # smallest bus id
    buses: np.ndarray  # bus positions
    gens: np.ndarray  # generator positions, reference machine first
    loads: np.ndarray
    branches: np.ndarray
    Z: np.ndarray  # Y^-1 [A | a | b]


@dataclass
class _Model:
    islands: list[_Island]
    gen_order: np.ndarray
    isl_start: np.ndarray
    br_order: np.ndarray
    br_start: np.ndarray
    K: np.ndarray
    c: np.ndarray
    g: np.ndarray
    F: np.ndarray
    f0: np.ndarray
    fg: np.ndarray


def select_reference(net: Network, island: Iterable[int], connected: np.ndarray | None = None):
    """Machine with the largest inertia_h * mbase in the island, ties to the lowest id."""
    members = {net.bus_index[b] for b in island}
    arr = net.arrays
    if connected is None:
        connected = arr.gen_in_service
    best = None
    for i, gen in enumerate(net.generators):
        if not connected[i] or arr.gen_bus[i] not in members:
            continue
        key = (-(gen.inertia_h or 0.0) * gen.mbase, gen.id)
        if best is None or key < best[0]:
            best = (key, gen.id)
    return DEAD_ISLAND if best is None else best[1]


class DynamicState:
    """Mutable simulation state of one scenario; element arrays follow the network order."""

    def __init__(self, net: Network):
        arr = net.arrays
        ng, nb, nl = len(arr.gen_ids), len(arr.br_ids), len(arr.load_ids)
        self.net = net
        self.step = 0
        self.dt = 0.0
        self.delta = np.zeros(ng)
        self.omega = np.zeros(ng)
        self.pm = np.zeros(ng)
        self.pref = np.zeros(ng)
        self.e_prime = np.zeros(ng)
        self.connected = arr.gen_in_service.copy()
        self.branch_mask = arr.br_in_service.copy()
        self.load_p = arr.load_p.copy()
        self.served = arr.load_served.copy()
        self.served0 = self.served.copy()
        base = net.base_mva
        gens = net.generators
        self.M = np.array([2.0 * (g.inertia_h or 0.0) * g.mbase / base for g in gens])
        self.D = np.array([(g.damping_d or 0.0) * g.mbase / base for g in gens])
        self.Rinv = np.array([g.mbase / (g.droop_r * base) if g.droop_r else 0.0 for g in gens])
        self.Tg = np.array([g.gov_tc or 1.0 for g in gens])
        self.xs = np.array([(g.xd_prime or 0.0) * base / g.mbase for g in gens])
        self.pmax = np.array([g.p_max for g in gens])
        self.kf = arr.load_kf.copy()
        self.acc = np.zeros(nb)
        self.ofgt_timer = np.full(ng, DISARMED)
        self.ufls: dict[int, tuple[np.ndarray, np.ndarray]] = {}
        self.bus_key = np.zeros(len(arr.bus_ids), dtype=np.int64)
        self.n_islands = 0
        self._model: _Model | None = None

    @property
    def time(self) -> float:
        return self.step * self.dt

    def copy(self) -> "DynamicState":
        new = DynamicState.__new__(DynamicState)
        for k, v in self.__dict__.items():
            if isinstance(v, np.ndarray):
                v = v.copy()
            elif k == "ufls":
                v = {key: (t.copy(), f.copy()) for key, (t, f) in v.items()}
            new.__dict__[k] = v
        return new

    def invalidate(self) -> None:
        self._model = None

    @property
    def model(self) -> _Model:
        if self._model is None:
            self._model = _build_model(self)
        return self._model

    def machines(self) -> list[MachineState]:
        ids = self.net.arrays.gen_ids
        return [MachineState(int(ids[i]), float(self.delta[i]), float(self.omega[i]), float(self.pm[i]),
                             float(self.e_prime[i]), bool(self.connected[i])) for i in range(len(ids))]

    def step_load(self, load_id: int, delta_p: float) -> None:
        """Change one load's demand by ``delta_p`` pu (scripted disturbance)."""
        i = self.net.load_index[load_id]
        self.load_p[i] += delta_p
        self.invalidate()

    def lost_mw(self) -> float:
        arr = self.net.arrays
        return float(sum((arr.load_p * (self.served0 - self.served)).tolist())) * self.net.base_mva


def _build_model(state: DynamicState) -> _Model:
    net = state.net
    arr = net.arrays
    islands = []
    for members, has_gen in partition(net, state.branch_mask, state.connected):
        if not has_gen:
            continue
        inside = np.isin(arr.gen_bus, members) & state.connected
        gens = np.flatnonzero(inside)
        ref = select_reference(net, arr.bus_ids[members].tolist(), state.connected)
        ref_pos = net.gen_index[ref]
        gens = np.r_[ref_pos, gens[gens != ref_pos]]
        loads = np.flatnonzero(np.isin(arr.load_bus, members))
        brs = np.flatnonzero(state.branch_mask & np.isin(arr.br_from, members))
        islands.append(_Island(int(arr.bus_ids[members].min()), members, gens, loads, brs, None))

    gen_order = np.concatenate([i.gens for i in islands]) if islands else np.zeros(0, dtype=np.int64)
    br_order = np.concatenate([i.branches for i in islands]) if islands else np.zeros(0, dtype=np.int64)
    isl_start = np.r_[0, np.cumsum([len(i.gens) for i in islands])].astype(np.int64)
    br_start = np.r_[0, np.cumsum([len(i.branches) for i in islands])].astype(np.int64)
    m, nb = len(gen_order), len(br_order)
    K = np.zeros((m, m))
    c = np.zeros(m)
    g = np.zeros(m)
    F = np.zeros((nb, m))
    f0 = np.zeros(nb)
    fg = np.zeros(nb)
    served_p = state.load_p * state.served

    for k, isl in enumerate(islands):
        n = len(isl.buses)
        pos = {int(b): j for j, b in enumerate(isl.buses)}
        Y = np.zeros((n, n))
        for i in isl.branches:
            a, b = pos[arr.br_from[i]], pos[arr.br_to[i]]
            y = 1.0 / arr.br_x[i]
            Y[a, a] += y
            Y[b, b] += y
            Y[a, b] -= y
            Y[b, a] -= y
        mk = len(isl.gens)
        ym = 1.0 / state.xs[isl.gens]
        A = np.zeros((n, mk))
        for j, gi in enumerate(isl.gens):
            A[pos[arr.gen_bus[gi]], j] = ym[j]
            Y[pos[arr.gen_bus[gi]], pos[arr.gen_bus[gi]]] += ym[j]
        rhs = np.zeros((n, mk + 2))
        rhs[:, :mk] = A
        for li in isl.loads:
            rhs[pos[arr.load_bus[li]], mk] += served_p[li]
            rhs[pos[arr.load_bus[li]], mk + 1] += served_p[li] * state.kf[li]
        try:
            Z = np.linalg.solve(Y, rhs)
        except np.linalg.LinAlgError as exc:
            raise SingularTopology(f"island {isl.key}: {exc}") from exc
        isl.Z = Z
        s0, s1 = isl_start[k], isl_start[k + 1]
        K[s0:s1, s0:s1] = np.diag(ym) - A.T @ Z[:, :mk]
        c[s0:s1] = A.T @ Z[:, mk]
        g[s0:s1] = A.T @ Z[:, mk + 1]
        b0, b1 = br_start[k], br_start[k + 1]
        if b1 > b0:
            C = np.zeros((b1 - b0, n))
            for r, i in enumerate(isl.branches):
                C[r, pos[arr.br_from[i]]] = 1.0 / arr.br_x[i]
                C[r, pos[arr.br_to[i]]] = -1.0 / arr.br_x[i]
            CZ = C @ Z
            F[b0:b1, s0:s1] = CZ[:, :mk]
            f0[b0:b1] = -CZ[:, mk]
            fg[b0:b1] = -CZ[:, mk + 1]
    return _Model(islands, gen_order, isl_start, br_order, br_start, K, c, g, F, f0, fg)


def _coi(state: DynamicState, model: _Model):
    """Per-island COI speed and reference-relative angles in model order."""
    d = state.delta[model.gen_order]
    w = state.omega[model.gen_order]
    M = state.M[model.gen_order]
    wc = np.zeros(len(model.islands))
    rel = np.zeros_like(d)
    for k in range(len(model.islands)):
        s0, s1 = model.isl_start[k], model.isl_start[k + 1]
        wc[k] = np.dot(M[s0:s1], w[s0:s1]) / M[s0:s1].sum()
        rel[s0:s1] = d[s0:s1] - d[s0]
    return wc, rel


def network_solve(state: DynamicState) -> NetworkSolution:
    """Bus angles, branch flows and machine electrical power for the current state."""
    net = state.net
    arr = net.arrays
    model = state.model
    wc, rel = _coi(state, model)
    angles = {int(b): 0.0 for b in arr.bus_ids}
    flows = {int(b): 0.0 for b in arr.br_ids[state.branch_mask]}
    pe = {int(arr.gen_ids[i]): 0.0 for i in range(len(arr.gen_ids))}
    for k, isl in enumerate(model.islands):
        s0, s1 = model.isl_start[k], model.isl_start[k + 1]
        mk = s1 - s0
        d = state.delta[isl.gens]
        theta = isl.Z[:, :mk] @ d - isl.Z[:, mk] - isl.Z[:, mk + 1] * wc[k]
        for j, b in enumerate(isl.buses):
            angles[int(arr.bus_ids[b])] = float(theta[j])
        p = model.K[s0:s1, s0:s1] @ rel[s0:s1] + model.c[s0:s1] + model.g[s0:s1] * wc[k]
        for j, gi in enumerate(isl.gens):
            pe[int(arr.gen_ids[gi])] = float(p[j])
        b0, b1 = model.br_start[k], model.br_start[k + 1]
        f = model.F[b0:b1, s0:s1] @ rel[s0:s1] + model.f0[b0:b1] + model.fg[b0:b1] * wc[k]
        for j, bi in enumerate(isl.branches):
            flows[int(arr.br_ids[bi])] = float(f[j])
    voltages = {b: complex(math.cos(t), math.sin(t)) for b, t in angles.items()}
    return NetworkSolution(angles, voltages, flows, pe)


def _current_flows(state: DynamicState) -> np.ndarray:
    """Branch flows (pu) aligned with the network's branch order."""
    model = state.model
    out = np.zeros(len(state.branch_mask))
    if not model.islands:
        return out
    wc, rel = _coi(state, model)
    bi = np.repeat(np.arange(len(model.islands)), np.diff(model.br_start))
    out[model.br_order] = model.F @ rel + model.f0 + model.fg * wc[bi]
    return out


def init_dynamic(net: Network, dispatch: BaseCase | DispatchResult | None = None) -> DynamicState:
    """Equilibrium state for a balanced dispatch with flat 1 pu voltage magnitudes."""
    arr = net.arrays
    for g in net.generators:
        if g.in_service and g.xd_prime is None:
            raise InitFailure(f"generator {g.id} has no transient reactance; attach dynamic data first")
        if g.in_service and not g.has_dynamics:
            raise InitFailure(f"generator {g.id} lacks dynamic parameters")
    if dispatch is None:
        dispatch = solve_base_case(net)
    if isinstance(dispatch, DispatchResult):
        gen_p = np.array([dispatch.gen_setpoints.get(int(i), 0.0) for i in arr.gen_ids])
        served = arr.load_served.copy()
        for lid, s in dispatch.shed_per_load.items():
            i = net.load_index[lid]
            if arr.load_p[i] > 0:
                served[i] = max(0.0, served[i] - s / arr.load_p[i])
    else:
        gen_p, served = dispatch.gen_p.copy(), dispatch.served.copy()

    st = DynamicState(net)
    st.served = served.copy()
    st.served0 = served.copy()
    gen_p = np.where(st.connected, gen_p, 0.0)
    st.pm = gen_p.copy()
    st.pref = gen_p.copy()
    base = net.base_mva
    st.e_prime = np.array([math.hypot(1.0, (g.xd_prime or 0.0) * p * base / g.mbase)
                           for g, p in zip(net.generators, gen_p)])

    p_bus = np.zeros(len(arr.bus_ids))
    np.add.at(p_bus, arr.gen_bus[st.connected], gen_p[st.connected])
    np.add.at(p_bus, arr.load_bus, -st.load_p * served)
    theta = np.zeros(len(arr.bus_ids))
    for members, has_gen in partition(net, st.branch_mask, st.connected):
        if len(members) < 2:
            continue
        sus = build_susceptance(net, arr.bus_ids[members].tolist(), st.branch_mask)
        theta[members] = solve_angles(sus.matrix, p_bus[members], sus.slack_index)
    st.delta = np.where(st.connected, theta[arr.gen_bus] + st.xs * gen_p, 0.0)
    _reisland(st, 0.0, [], initial=True)

    sol = network_solve(st)
    mism = max((abs(sol.p_elec[int(arr.gen_ids[i])] - gen_p[i])
                for i in np.flatnonzero(st.connected)), default=0.0)
    if not mism < 1e-6:
        raise InitFailure(f"initial electrical power misses dispatch by {mism:.3e} pu")
    return st


def _relay_arrays(state: DynamicState, model: _Model, relays: RelaySettings):
    ns = len(relays.ufls.stages)
    ni = len(model.islands)
    timers = np.full((ni, ns), DISARMED)
    fired = np.zeros((ni, ns), dtype=np.uint8)
    for k, isl in enumerate(model.islands):
        t, f = state.ufls.setdefault(isl.key, (np.full(ns, DISARMED), np.zeros(ns, dtype=np.uint8)))
        timers[k], fired[k] = t, f
    return timers, fired


_DUMMY = np.zeros((1, 1))


def _advance(state: DynamicState, nsteps: int, dt: float, relays: RelaySettings | None,
             omega_limit: float, backend: str | None, trace: bool):
    model = state.model
    go = model.gen_order
    m, nb, ni = len(go), len(model.br_order), len(model.islands)
    d, w, p = state.delta[go].copy(), state.omega[go].copy(), state.pm[go].copy()
    acc = state.acc[model.br_order].copy()
    ofgt = state.ofgt_timer[go].copy()
    if relays is None:
        ufls_thr = ufls_delay = np.zeros(0)
        timers = np.zeros((ni, 0))
        fired = np.zeros((ni, 0), dtype=np.uint8)
        k_thr, ofgt_thr, ofgt_delay, oos = math.inf, math.inf, math.inf, math.inf
    else:
        ufls_thr = np.array([s.freq_threshold for s in relays.ufls.stages])
        ufls_delay = np.array([s.delay for s in relays.ufls.stages])
        timers, fired = _relay_arrays(state, model, relays)
        k_thr, ofgt_thr, ofgt_delay = relays.overload_k, relays.ofgt.freq_threshold, relays.ofgt.delay
        oos = relays.oos.angle_limit
    ns = len(ufls_thr)
    br_trip = np.zeros(nb, dtype=np.uint8)
    ufls_fire = np.zeros((ni, ns), dtype=np.uint8)
    ofgt_trip = np.zeros(m, dtype=np.uint8)
    oos_trip = np.zeros(m, dtype=np.uint8)
    if trace:
        tr = (np.zeros((nsteps, nb)), np.zeros((nsteps, ni)), np.zeros((nsteps, m)), np.zeros((nsteps, m)))
    else:
        tr = (_DUMMY, _DUMMY, _DUMMY, _DUMMY)
    omega_s = 2.0 * math.pi * state.net.nominal_freq
    advance = get_advance(backend)
    steps, status = advance(
        d, w, p,
        state.M[go], state.D[go], state.Rinv[go], state.Tg[go], state.pref[go], state.pmax[go],
        model.K, model.c, model.g, model.isl_start,
        model.F, model.f0, model.fg, state.net.arrays.br_rating[model.br_order], model.br_start,
        acc, float(k_thr),
        ufls_thr, ufls_delay, timers, fired,
        float(ofgt_thr), float(ofgt_delay), ofgt,
        float(oos),
        float(dt), omega_s, int(nsteps), float(omega_limit),
        br_trip, ufls_fire, ofgt_trip, oos_trip,
        tr[0], tr[1], tr[2], tr[3], bool(trace))
    state.delta[go], state.omega[go], state.pm[go] = d, w, p
    state.acc[model.br_order] = acc
    state.ofgt_timer[go] = ofgt
    if relays is not None:
        for k, isl in enumerate(model.islands):
            state.ufls[isl.key] = (timers[k].copy(), fired[k].copy())
    state.step += int(steps)
    flags = (br_trip, ufls_fire, ofgt_trip, oos_trip)
    rows = int(steps) if trace else 0
    trace_seg = tuple(t[:rows] for t in tr) if trace else None
    return int(steps), int(status), flags, trace_seg


def integrate_step(state: DynamicState, dt: float, backend: str | None = None) -> DynamicState:
    """One RK4 step of the continuous dynamics with relays disabled; returns a new state."""
    new = state.copy()
    new.dt = dt
    if new.model.islands:
        _advance(new, 1, dt, None, math.inf, backend, False)
        bad = ~(np.isfinite(new.delta) & np.isfinite(new.omega) & np.isfinite(new.pm))
        if np.any(bad & new.connected):
            raise NumericalDivergence("state became non-finite")
    else:
        new.step += 1
    return new


def simulate(state: DynamicState, t: float, dt: float, backend: str | None = None,
             record: bool = True):
    """Integrate without relays for ``t`` seconds; returns (times, omega history) if ``record``."""
    new = state.copy()
    new.dt = dt
    n = int(round(t / dt))
    if not record:
        _advance(new, n, dt, None, math.inf, backend, False)
        return new, None, None
    steps, _, _, seg = _advance(new, n, dt, None, math.inf, backend, True)
    times = (np.arange(steps) + 1 + state.step) * dt
    om = np.zeros((steps, len(new.omega)))
    om[:, new.model.gen_order] = seg[2]
    return new, times, om


# ---------------------------------------------------------------------------
# Cascade driver
# ---------------------------------------------------------------------------

def _island_served_mw(state: DynamicState, members: np.ndarray) -> float:
    arr = state.net.arrays
    inside = np.isin(arr.load_bus, members)
    return float(np.dot(state.load_p[inside], state.served[inside])) * state.net.base_mva


def _reisland(state: DynamicState, t: float, events: list, initial: bool = False,
              lineage: list | None = None) -> None:
    net = state.net
    arr = net.arrays
    parts = partition(net, state.branch_mask, state.connected)
    old_key = state.bus_key.copy()
    old_sets = {}
    if not initial:
        for pos, key in enumerate(old_key):
            old_sets.setdefault(int(key), set()).add(pos)
    new_ufls = {}
    for members, has_gen in parts:
        key = int(arr.bus_ids[members].min())
        state.bus_key[members] = key
        if not initial:
            parent = int(old_key[members[0]])
            if set(members.tolist()) != old_sets.get(parent):
                if len(parts) > state.n_islands:
                    events.append(EventRecord(t, "separation", key, _island_served_mw(state, members)))
                if lineage is not None:
                    lineage.append((t, key, parent))
            if parent in state.ufls:
                t_, f_ = state.ufls[parent]
                new_ufls[key] = (t_.copy(), f_.copy())
        if not has_gen:
            lost = _island_served_mw(state, members)
            inside = np.isin(arr.load_bus, members)
            if lost > 0 and not initial:
                events.append(EventRecord(t, "island_dead", key, lost))
            state.served[inside] = 0.0
    state.ufls = new_ufls
    state.n_islands = len(parts)
    state.invalidate()


def _blackout_islands(state: DynamicState, t: float, bad_keys: set[int], events: list) -> None:
    net = state.net
    arr = net.arrays
    for key in sorted(bad_keys):
        members = np.flatnonzero(state.bus_key == key)
        lost = _island_served_mw(state, members)
        state.served[np.isin(arr.load_bus, members)] = 0.0
        gens = np.isin(arr.gen_bus, members) & state.connected
        state.connected[gens] = False
        events.append(EventRecord(t, "island_dead", key, lost))
        log.warning("numerical divergence in island %d at t=%.3f s; island blacked out", key, t)
    state.invalidate()


def run_dynamic_cascade(net: Network, initial_outages: Iterable[int] = (),
                        config: DynConfig | None = None, *, base: BaseCase | None = None,
                        scenario_id: int = 0) -> CascadeResult:
    """Simulate one contingency in the time domain until ``config.t_end``."""
    config = config or DynConfig()
    initial = sorted(set(int(b) for b in initial_outages))
    live_branch_mask(net, initial)
    state = init_dynamic(net, base)
    state.dt = config.dt
    dt = config.dt
    arr = net.arrays
    events: list[EventRecord] = []
    trace = {"segments": [], "lineage": [], "dt": dt} if config.trace else None
    diverged = False

    if initial:
        flows = _current_flows(state)
        for bid in initial:
            i = net.branch_index[bid]
            events.append(EventRecord(0.0, "branch_trip", bid, abs(float(flows[i])) * net.base_mva))
            state.branch_mask[i] = False
        _reisland(state, 0.0, events, lineage=trace["lineage"] if trace else None)

    total = config.n_steps
    while state.step < total:
        model = state.model
        if not model.islands:
            break
        step0 = state.step
        steps, status, flags, seg = _advance(state, total - step0, dt, config.relays,
                                             config.omega_limit, config.backend, config.trace)
        t = round(state.step * dt, 9)
        if trace is not None:
            # a diverged step ends before its relay sample, so it has no trace row
            rows = steps - 1 if status == DIVERGED else steps
            seg = tuple(a[:rows] for a in seg)
            trace["segments"].append({
                "steps": np.arange(step0 + 1, step0 + rows + 1),
                "branch_ids": arr.br_ids[model.br_order].copy(),
                "island_keys": [isl.key for isl in model.islands],
                "gen_ids": arr.gen_ids[model.gen_order].copy(),
                "loading": seg[0], "freq": seg[1], "omega": seg[2], "dev": seg[3],
            })
        if status == DIVERGED:
            diverged = True
            bad = ~(np.isfinite(state.delta) & np.isfinite(state.omega) & np.isfinite(state.pm)) \
                | (np.abs(state.omega) > config.omega_limit)
            bad &= state.connected
            keys = {int(state.bus_key[arr.gen_bus[i]]) for i in np.flatnonzero(bad)}
            _blackout_islands(state, t, keys, events)
            _reisland(state, t, events, lineage=trace["lineage"] if trace else None)
            continue
        if status != RELAY_EVENT:
            continue
        br_trip, ufls_fire, ofgt_trip, oos_trip = flags
        topology_changed = False
        # 1) branch trips
        tripped_br = sorted(int(arr.br_ids[model.br_order[q]]) for q in np.flatnonzero(br_trip))
        if tripped_br:
            flows = _current_flows(state)
            for bid in tripped_br:
                i = net.branch_index[bid]
                events.append(EventRecord(t, "branch_trip", bid, abs(float(flows[i])) * net.base_mva))
        # 2) generator trips
        gen_events = []
        for j in np.flatnonzero(ofgt_trip | oos_trip):
            gi = int(model.gen_order[j])
            kind = "gen_trip_ofgt" if ofgt_trip[j] else "gen_trip_oos"
            gen_events.append((int(arr.gen_ids[gi]), kind, gi))
        # 3) UFLS, applied to the islands as they were when sampled
        sheds = []
        for k, isl in enumerate(model.islands):
            for stage in np.flatnonzero(ufls_fire[k]):
                sheds.append((isl.key, isl.loads, int(stage)))

        for bid in tripped_br:
            state.branch_mask[net.branch_index[bid]] = False
            topology_changed = True
        for gid, kind, gi in sorted(gen_events):
            events.append(EventRecord(t, kind, gid, float(state.pm[gi]) * net.base_mva))
            state.connected[gi] = False
            topology_changed = True
        for key, loads, stage in sheds:
            frac = config.relays.ufls.stages[stage].shed_fraction
            before = float(np.dot(state.load_p[loads], state.served[loads]))
            state.served[loads] *= (1.0 - frac)
            after = float(np.dot(state.load_p[loads], state.served[loads]))
            events.append(EventRecord(t, "load_shed_ufls", key, (before - after) * net.base_mva))
        if topology_changed:
            _reisland(state, t, events, lineage=trace["lineage"] if trace else None)
        else:
            state.invalidate()

    lost = state.lost_mw()
    served_total = float(np.dot(arr.load_p, state.served0))
    branch_events = [e for e in events if e.kind == "branch_trip"]
    cascades = group_into_iterations(branch_events)
    res = CascadeResult(
        scenario_id=scenario_id,
        events=sort_events(events),
        demand_lost=lost,
        outages_per_iteration=cascades[0] if cascades else [],
        blackout=bool(served_total > 0 and not np.any(state.served > 0)),
        diverged=diverged,
    )
    if trace is not None:
        res.trace = trace
    return res


def replay_trips(trace: dict, relays: RelaySettings | None = None) -> list[tuple[float, str, int]]:
    """Feed a recorded trajectory through the reference relay functions.

    ``trace`` is the ``CascadeResult.trace`` of a run made with
    ``DynConfig(trace=True)``. Relay memories carry across segments the way
    the simulator carries them: per branch, per machine, and per island with
    child islands inheriting their parent's UFLS timers. Returns the
    ``(time, kind, element)`` of every trip the relays would issue.
    """
    relays = relays or RelaySettings()
    dt = trace["dt"]
    parents: dict[float, dict[int, int]] = {}
    for t, key, parent in trace["lineage"]:
        parents.setdefault(t, {})[key] = parent
    acc: dict[int, OverloadRelayState] = {}
    ofgt: dict[int, float] = {}
    ufls: dict = {}
    trips = []
    for seg in trace["segments"]:
        if not len(seg["steps"]):
            continue
        born = parents.get(round((int(seg["steps"][0]) - 1) * dt, 9), {})
        ufls = {key: ufls.get(born.get(key, key), relays.ufls.initial_state()) for key in seg["island_keys"]}
        for r, step in enumerate(seg["steps"]):
            t = round(int(step) * dt, 9)
            for col, bid in enumerate(seg["branch_ids"].tolist()):
                st = acc.get(bid) or OverloadRelayState(threshold_k=relays.overload_k)
                acc[bid], hit = overload_update(st, float(seg["loading"][r, col]), dt)
                if hit:
                    trips.append((t, "branch_trip", bid))
            for k, key in enumerate(seg["island_keys"]):
                ufls[key], cmds = ufls_evaluate(relays.ufls, ufls[key], float(seg["freq"][r, k]), dt)
                trips.extend((t, "load_shed_ufls", key) for _ in cmds)
            for j, gid in enumerate(seg["gen_ids"].tolist()):
                ofgt[gid], hit = ofgt_evaluate(relays.ofgt, ofgt.get(gid, DISARMED), float(seg["omega"][r, j]), dt)
                if hit:
                    trips.append((t, "gen_trip_ofgt", gid))
                if oos_evaluate(relays.oos, float(seg["dev"][r, j]), 0.0):
                    trips.append((t, "gen_trip_oos", gid))
    return trips
