"""Grid data model, MATPOWER case ingestion and topology helpers.

All electrical quantities are stored in per-unit on ``Network.base_mva``.
Element ids are the ids used in the case file: bus numbers for buses and
1-based row positions for branches, generators and loads.
"""

from __future__ import annotations

import dataclasses
import logging
import math
import re
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import InvalidDroop, InvalidInertia, MalformedCase, SingularTopology

log = logging.getLogger(__name__)

UNLIMITED_RATING = 99.99

DYNAMIC_DEFAULTS = {
    "inertia_h": 4.0,
    "damping_d": 1.0,
    "droop_r": 0.05,
    "gov_tc": 0.5,
    "xd_prime": 0.2,
}
DEFAULT_KF = 1.0


@dataclass(frozen=True)
class Bus:
    id: int
    base_kv: float
    area: int = 1


@dataclass(frozen=True)
class Branch:
    id: int
    from_bus: int
    to_bus: int
    reactance_x: float
    rating: float
    in_service: bool = True
    rating_unlimited: bool = False


@dataclass(frozen=True)
class Generator:
    id: int
    bus: int
    p_set: float
    p_min: float
    p_max: float
    mbase: float
    cost_linear: float = 0.0
    inertia_h: float | None = None
    damping_d: float | None = None
    droop_r: float | None = None
    gov_tc: float | None = None
    xd_prime: float | None = None
    in_service: bool = True

    @property
    def has_dynamics(self) -> bool:
        return all(getattr(self, k) is not None for k in DYNAMIC_DEFAULTS)


@dataclass(frozen=True)
class Load:
    id: int
    bus: int
    p_demand: float
    freq_sensitivity_kf: float = DEFAULT_KF
    served_fraction: float = 1.0


@dataclass(frozen=True)
class IslandPartition:
    islands: list[frozenset[int]]
    dead_islands: list[frozenset[int]]


@dataclass(frozen=True)
class Susceptance:
    """Nodal susceptance matrix of one island; ``matrix[i, j]`` follows ``buses``."""

    buses: tuple[int, ...]
    matrix: np.ndarray
    slack: int

    @property
    def slack_index(self) -> int:
        return self.buses.index(self.slack)

    def reduced(self) -> np.ndarray:
        keep = [i for i in range(len(self.buses)) if i != self.slack_index]
        return self.matrix[np.ix_(keep, keep)]


@dataclass(frozen=True)
class Network:
    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    loads: tuple[Load, ...]
    nominal_freq: float = 60.0
    name: str = ""

    def __post_init__(self):
        _validate(self)

    # Index arrays are derived lazily; the dataclass itself stays immutable.
    @cached_property
    def bus_index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def branch_index(self) -> dict[int, int]:
        return {br.id: i for i, br in enumerate(self.branches)}

    @cached_property
    def gen_index(self) -> dict[int, int]:
        return {g.id: i for i, g in enumerate(self.generators)}

    @cached_property
    def load_index(self) -> dict[int, int]:
        return {ld.id: i for i, ld in enumerate(self.loads)}

    @cached_property
    def arrays(self) -> "NetworkArrays":
        return NetworkArrays.from_network(self)

    @property
    def total_demand(self) -> float:
        """Total active demand in per-unit."""
        # plain left-to-right sum: loss accounting uses the same order
        return sum(ld.p_demand for ld in self.loads)

    @property
    def total_demand_mw(self) -> float:
        return self.total_demand * self.base_mva

    def to_pu(self, mw):
        return mw / self.base_mva

    def to_mw(self, pu):
        return pu * self.base_mva

    def replace(self, **changes) -> "Network":
        return dataclasses.replace(self, **changes)

    def generator(self, gen_id: int) -> Generator:
        return self.generators[self.gen_index[gen_id]]

    def branch(self, branch_id: int) -> Branch:
        return self.branches[self.branch_index[branch_id]]


@dataclass(frozen=True)
class NetworkArrays:
    """Flat numpy views of a network used by the numerical code."""

    bus_ids: np.ndarray
    br_ids: np.ndarray
    br_from: np.ndarray  # bus positions
    br_to: np.ndarray
    br_x: np.ndarray
    br_rating: np.ndarray
    br_in_service: np.ndarray
    gen_ids: np.ndarray
    gen_bus: np.ndarray
    gen_in_service: np.ndarray
    load_ids: np.ndarray
    load_bus: np.ndarray
    load_p: np.ndarray
    load_kf: np.ndarray
    load_served: np.ndarray

    @classmethod
    def from_network(cls, net: Network) -> "NetworkArrays":
        bi = net.bus_index
        return cls(
            bus_ids=np.array([b.id for b in net.buses], dtype=np.int64),
            br_ids=np.array([b.id for b in net.branches], dtype=np.int64),
            br_from=np.array([bi[b.from_bus] for b in net.branches], dtype=np.int64),
            br_to=np.array([bi[b.to_bus] for b in net.branches], dtype=np.int64),
            br_x=np.array([b.reactance_x for b in net.branches], dtype=float),
            br_rating=np.array([b.rating for b in net.branches], dtype=float),
            br_in_service=np.array([b.in_service for b in net.branches], dtype=bool),
            gen_ids=np.array([g.id for g in net.generators], dtype=np.int64),
            gen_bus=np.array([bi[g.bus] for g in net.generators], dtype=np.int64),
            gen_in_service=np.array([g.in_service for g in net.generators], dtype=bool),
            load_ids=np.array([ld.id for ld in net.loads], dtype=np.int64),
            load_bus=np.array([bi[ld.bus] for ld in net.loads], dtype=np.int64),
            load_p=np.array([ld.p_demand for ld in net.loads], dtype=float),
            load_kf=np.array([ld.freq_sensitivity_kf for ld in net.loads], dtype=float),
            load_served=np.array([ld.served_fraction for ld in net.loads], dtype=float),
        )


def _validate(net: Network) -> None:
    if not net.base_mva > 0:
        raise MalformedCase(f"base_mva must be positive, got {net.base_mva}")
    ids = set()
    for b in net.buses:
        if b.id in ids:
            raise MalformedCase(f"duplicate bus id {b.id}")
        ids.add(b.id)
        if not b.base_kv > 0:
            raise MalformedCase(f"bus {b.id}: base_kv must be positive")
    seen = set()
    for br in net.branches:
        if br.id in seen:
            raise MalformedCase(f"duplicate branch id {br.id}")
        seen.add(br.id)
        for end in (br.from_bus, br.to_bus):
            if end not in ids:
                raise MalformedCase(f"branch {br.id} references unknown bus {end}")
        if br.from_bus == br.to_bus:
            raise MalformedCase(f"branch {br.id} connects bus {br.from_bus} to itself")
        if not br.reactance_x > 0:
            raise MalformedCase(f"branch {br.id}: reactance must be positive")
        if not br.rating > 0:
            raise MalformedCase(f"branch {br.id}: rating must be positive")
    seen = set()
    for g in net.generators:
        if g.id in seen:
            raise MalformedCase(f"duplicate generator id {g.id}")
        seen.add(g.id)
        if g.bus not in ids:
            raise MalformedCase(f"generator {g.id} references unknown bus {g.bus}")
        if not g.p_min <= g.p_set <= g.p_max:
            raise MalformedCase(f"generator {g.id}: p_set outside [p_min, p_max]")
        if not g.mbase > 0:
            raise MalformedCase(f"generator {g.id}: mbase must be positive")
        _check_dynamics(g)
    seen = set()
    for ld in net.loads:
        if ld.id in seen:
            raise MalformedCase(f"duplicate load id {ld.id}")
        seen.add(ld.id)
        if ld.bus not in ids:
            raise MalformedCase(f"load {ld.id} references unknown bus {ld.bus}")
        if ld.p_demand < 0:
            raise MalformedCase(f"load {ld.id}: negative demand")
        if not 0.0 <= ld.served_fraction <= 1.0:
            raise MalformedCase(f"load {ld.id}: served_fraction outside [0, 1]")


def _check_dynamics(g: Generator) -> None:
    if g.droop_r is not None and not g.droop_r > 0:
        raise InvalidDroop(f"generator {g.id}: droop_r must be positive, got {g.droop_r}")
    if g.inertia_h is not None and not g.inertia_h > 0:
        raise InvalidInertia(f"generator {g.id}: inertia_h must be positive, got {g.inertia_h}")
    for name in ("xd_prime", "gov_tc"):
        v = getattr(g, name)
        if v is not None and not v > 0:
            raise MalformedCase(f"generator {g.id}: {name} must be positive, got {v}")
    if g.damping_d is not None and g.damping_d < 0:
        raise MalformedCase(f"generator {g.id}: damping_d must be non-negative")


# ---------------------------------------------------------------------------
# MATPOWER ingestion
# ---------------------------------------------------------------------------

_N_COLS = {"bus": (13, 17), "gen": (10, 25), "branch": (11, 21)}
_MATRIX_RE = re.compile(r"mpc\.(\w+)\s*=\s*\[(.*?)\]\s*;?", re.S)
_SCALAR_RE = re.compile(r"mpc\.(\w+)\s*=\s*([-+0-9.eE]+)\s*;")


def _strip_comments(text: str) -> str:
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _parse_matrix(name: str, body: str) -> list[list[float]]:
    rows = []
    for chunk in re.split(r"[;\n]", body):
        chunk = chunk.strip()
        if not chunk:
            continue
        try:
            rows.append([float(tok) for tok in re.split(r"[\s,]+", chunk) if tok])
        except ValueError as exc:
            raise MalformedCase(f"mpc.{name}: cannot parse row {chunk!r}") from exc
    widths = {len(r) for r in rows}
    if len(widths) > 1:
        raise MalformedCase(f"mpc.{name}: ragged rows (widths {sorted(widths)})")
    return rows


def parse_matpower(text: str, *, unlimited_rating: float = UNLIMITED_RATING,
                   name: str = "") -> Network:
    """Build a :class:`Network` from MATPOWER case text."""
    clean = _strip_comments(text)
    scalars = {k: float(v) for k, v in _SCALAR_RE.findall(clean)}
    mats = {k: _parse_matrix(k, body) for k, body in _MATRIX_RE.findall(clean)}
    if "baseMVA" not in scalars:
        raise MalformedCase("missing mpc.baseMVA")
    for key in ("bus", "gen", "branch"):
        if key not in mats:
            raise MalformedCase(f"missing mpc.{key}")
    for key, (need, known) in _N_COLS.items():
        rows = mats[key]
        if rows and len(rows[0]) < need:
            raise MalformedCase(f"mpc.{key}: expected at least {need} columns")
        if rows and len(rows[0]) > known:
            log.warning("mpc.%s: ignoring %d unknown trailing columns", key, len(rows[0]) - known)
    base = scalars["baseMVA"]

    buses, loads = [], []
    for r in mats["bus"]:
        bus_id = int(r[0])
        buses.append(Bus(id=bus_id, base_kv=r[9], area=int(r[6])))
        pd = r[2]
        if pd < 0:
            log.warning("bus %d: negative demand %.3f MW treated as zero", bus_id, pd)
            pd = 0.0
        if pd > 0:
            loads.append(Load(id=len(loads) + 1, bus=bus_id, p_demand=pd / base))

    costs = mats.get("gencost", [])
    gens = []
    for i, r in enumerate(mats["gen"]):
        p_max, p_min = r[8] / base, r[9] / base
        if p_min > p_max:
            raise MalformedCase(f"generator {i + 1}: PMIN > PMAX")
        p_set = r[1] / base
        if not p_min <= p_set <= p_max:
            log.warning("generator %d: PG %.3f clamped into [PMIN, PMAX]", i + 1, r[1])
            p_set = min(max(p_set, p_min), p_max)
        mbase = r[6] if r[6] > 0 else base
        cost = _linear_cost(costs[i]) if i < len(costs) else 0.0
        gens.append(Generator(id=i + 1, bus=int(r[0]), p_set=p_set, p_min=p_min, p_max=p_max,
                              mbase=mbase, cost_linear=cost, in_service=r[7] > 0))

    branches = []
    for i, r in enumerate(mats["branch"]):
        rating, unlimited = r[5] / base, False
        if r[5] == 0:
            rating, unlimited = unlimited_rating, True
        branches.append(Branch(id=i + 1, from_bus=int(r[0]), to_bus=int(r[1]), reactance_x=r[3],
                               rating=rating, in_service=r[10] > 0, rating_unlimited=unlimited))
    n_unl = sum(b.rating_unlimited for b in branches)
    if n_unl:
        log.info("%d branches have no rating; using %.2f pu", n_unl, unlimited_rating)

    freq = scalars.get("nominal_freq", scalars.get("f_hz", 60.0))
    return Network(base_mva=base, buses=tuple(buses), branches=tuple(branches),
                   generators=tuple(gens), loads=tuple(loads), nominal_freq=freq, name=name)


def _linear_cost(row: list[float]) -> float:
    model, ncost = int(row[0]), int(row[3])
    coeffs = row[4:]
    if model == 2:
        # polynomial, highest order first
        return coeffs[ncost - 2] if ncost >= 2 else 0.0
    # piecewise linear: average slope over the breakpoints
    xs, ys = coeffs[0:2 * ncost:2], coeffs[1:2 * ncost:2]
    if ncost < 2 or xs[-1] == xs[0]:
        return 0.0
    return (ys[-1] - ys[0]) / (xs[-1] - xs[0])


def load_case(path, **kwargs) -> Network:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise MalformedCase(f"cannot read case file {path}: {exc}") from exc
    return parse_matpower(text, name=path.stem, **kwargs)


def write_matpower(net: Network, path=None) -> str:
    """Serialise a network back to MATPOWER text (demand aggregated per bus)."""
    base = net.base_mva
    pd = {b.id: 0.0 for b in net.buses}
    for ld in net.loads:
        pd[ld.bus] += ld.p_demand * ld.served_fraction * base
    gen_buses = {g.bus for g in net.generators}
    lines = [f"function mpc = {net.name or 'case'}", "mpc.version = '2';",
             f"mpc.baseMVA = {base:g};", f"mpc.nominal_freq = {net.nominal_freq:g};", "",
             "%% bus data", "mpc.bus = ["]
    for b in net.buses:
        btype = 2 if b.id in gen_buses else 1
        lines.append(f"\t{b.id}\t{btype}\t{pd[b.id]:.6g}\t0\t0\t0\t{b.area}\t1\t0\t{b.base_kv:g}\t1\t1.1\t0.9;")
    lines += ["];", "", "%% generator data", "mpc.gen = ["]
    for g in net.generators:
        lines.append(f"\t{g.bus}\t{g.p_set * base:.6g}\t0\t999\t-999\t1\t{g.mbase:g}\t{int(g.in_service)}"
                     f"\t{g.p_max * base:.6g}\t{g.p_min * base:.6g};")
    lines += ["];", "", "%% branch data", "mpc.branch = ["]
    for br in net.branches:
        rate = 0.0 if br.rating_unlimited else br.rating * base
        lines.append(f"\t{br.from_bus}\t{br.to_bus}\t0\t{br.reactance_x:.6g}\t0\t{rate:.6g}\t0\t0\t0\t0"
                     f"\t{int(br.in_service)};")
    lines += ["];", "", "%% generator cost data", "mpc.gencost = ["]
    for g in net.generators:
        lines.append(f"\t2\t0\t0\t2\t{g.cost_linear:.6g}\t0;")
    lines += ["];", ""]
    text = "\n".join(lines)
    if path is not None:
        Path(path).write_text(text)
    return text


# ---------------------------------------------------------------------------
# Dynamic data
# ---------------------------------------------------------------------------

def load_dynamic_sidecar(path) -> dict:
    """Read a YAML sidecar with optional ``defaults``, ``generators`` and ``loads`` sections."""
    import yaml

    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise MalformedCase(f"dynamic sidecar {path} must be a mapping")
    return data


def attach_dynamic_defaults(net: Network, overrides: Mapping | None = None) -> Network:
    """Fill in machine parameters that the case does not carry.

    Precedence, highest first: per-generator entries in ``overrides["generators"]``,
    values already on the generator, ``overrides["defaults"]``, then
    :data:`DYNAMIC_DEFAULTS`. Load frequency sensitivity is handled the same way
    through ``overrides["loads"]`` / ``overrides["load_defaults"]``.
    """
    overrides = overrides or {}
    defaults = {**DYNAMIC_DEFAULTS, **(overrides.get("defaults") or {})}
    per_gen = {int(k): v for k, v in (overrides.get("generators") or {}).items()}
    gens = []
    for g in net.generators:
        vals = {}
        for key, dflt in defaults.items():
            if key not in DYNAMIC_DEFAULTS:
                continue
            cur = getattr(g, key)
            vals[key] = float(cur if cur is not None else dflt)
        for key, v in (per_gen.get(g.id) or {}).items():
            if key not in DYNAMIC_DEFAULTS:
                raise MalformedCase(f"generator {g.id}: unknown dynamic parameter {key!r}")
            vals[key] = float(v)
        gens.append(dataclasses.replace(g, **vals))

    load_dflt = (overrides.get("load_defaults") or {}).get("freq_sensitivity_kf")
    per_load = {int(k): v for k, v in (overrides.get("loads") or {}).items()}
    loads = []
    for ld in net.loads:
        kf = ld.freq_sensitivity_kf if load_dflt is None else float(load_dflt)
        kf = float((per_load.get(ld.id) or {}).get("freq_sensitivity_kf", kf))
        loads.append(dataclasses.replace(ld, freq_sensitivity_kf=kf))
    freq = float(overrides.get("nominal_freq", net.nominal_freq))
    return net.replace(generators=tuple(gens), loads=tuple(loads), nominal_freq=freq)


# ---------------------------------------------------------------------------
# Topology
# ---------------------------------------------------------------------------

def bus_components(n_bus: int, f: np.ndarray, t: np.ndarray, live: np.ndarray) -> np.ndarray:
    """Component label per bus position for the graph of live branches."""
    if n_bus == 0:
        return np.zeros(0, dtype=np.int64)
    g = coo_matrix((np.ones(int(live.sum())), (f[live], t[live])), shape=(n_bus, n_bus))
    _, labels = connected_components(g, directed=False)
    return labels


def live_branch_mask(net: Network, outaged: Iterable[int] = ()) -> np.ndarray:
    arr = net.arrays
    mask = arr.br_in_service.copy()
    for bid in outaged:
        try:
            mask[net.branch_index[bid]] = False
        except KeyError:
            raise KeyError(f"unknown branch id {bid}") from None
    return mask


def partition(net: Network, branch_mask: np.ndarray,
              gen_mask: np.ndarray | None = None) -> list[tuple[np.ndarray, bool]]:
    """Islands as (sorted bus positions, has_generator), ordered by smallest bus id."""
    arr = net.arrays
    labels = bus_components(len(arr.bus_ids), arr.br_from, arr.br_to, branch_mask)
    if gen_mask is None:
        gen_mask = arr.gen_in_service
    has_gen = np.zeros(labels.max() + 1 if len(labels) else 0, dtype=bool)
    has_gen[labels[arr.gen_bus[gen_mask]]] = True
    groups = {}
    for pos in np.argsort(arr.bus_ids, kind="stable"):
        groups.setdefault(labels[pos], []).append(pos)
    out = []
    for lab, members in groups.items():
        out.append((np.array(sorted(members), dtype=np.int64), bool(has_gen[lab])))
    out.sort(key=lambda item: arr.bus_ids[item[0]].min())
    return out


def find_islands(net: Network, outaged_branches: Iterable[int] = ()) -> IslandPartition:
    mask = live_branch_mask(net, outaged_branches)
    ids = net.arrays.bus_ids
    islands, dead = [], []
    for members, has_gen in partition(net, mask):
        s = frozenset(int(b) for b in ids[members])
        islands.append(s)
        if not has_gen:
            dead.append(s)
    return IslandPartition(islands=islands, dead_islands=dead)


def slack_bus(net: Network, island: Iterable[int]) -> int:
    """Bus of the in-service generator with the largest inertia_h * mbase in the island.

    Ties go to the lowest generator id; an island without generation uses its
    lowest bus id.
    """
    members = set(island)
    best = None
    for g in net.generators:
        if not g.in_service or g.bus not in members:
            continue
        key = (-(g.inertia_h or 0.0) * g.mbase, g.id)
        if best is None or key < best[0]:
            best = (key, g.bus)
    return best[1] if best is not None else min(members)


def build_susceptance(net: Network, island: Iterable[int],
                      branch_mask: np.ndarray | None = None) -> Susceptance:
    members = sorted(set(island))
    if not members:
        raise SingularTopology("empty island")
    arr = net.arrays
    if branch_mask is None:
        branch_mask = arr.br_in_service
    pos = {net.bus_index[b]: k for k, b in enumerate(members)}
    n = len(members)
    B = np.zeros((n, n))
    inside = [i for i in np.flatnonzero(branch_mask)
              if arr.br_from[i] in pos and arr.br_to[i] in pos]
    for i in inside:
        a, b = pos[arr.br_from[i]], pos[arr.br_to[i]]
        y = 1.0 / arr.br_x[i]
        B[a, a] += y
        B[b, b] += y
        B[a, b] -= y
        B[b, a] -= y
    if n > 1:
        f = np.array([pos[arr.br_from[i]] for i in inside], dtype=np.int64)
        t = np.array([pos[arr.br_to[i]] for i in inside], dtype=np.int64)
        labels = bus_components(n, f, t, np.ones(len(inside), dtype=bool))
        if labels.max() > 0:
            raise SingularTopology(f"island starting at bus {members[0]} is not connected")
    return Susceptance(buses=tuple(members), matrix=B, slack=slack_bus(net, members))
