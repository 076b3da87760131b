"""Seeded synthetic test networks and the bundled case files.

The generator places buses in the unit square, meshes them along a
Delaunay triangulation, hangs a few radial load spurs off the mesh and
rates every branch a random margin above its flow under unconstrained
merit-order dispatch. Double outages then push neighbours past their
ratings, which is what a cascade study needs.
"""

from __future__ import annotations

import dataclasses
from importlib import resources
from pathlib import Path

import numpy as np
import yaml
from scipy.sparse.csgraph import minimum_spanning_tree
from scipy.spatial import Delaunay

from .grid import Branch, Bus, Generator, Load, Network, attach_dynamic_defaults, load_case
from .powerflow import injections_by_bus, network_flows

BUNDLED = {"grid30": "grid30", "grid200": "grid200"}


@dataclasses.dataclass(frozen=True)
class SyntheticSpec:
    n_mesh: int = 26
    n_spur: int = 4
    gen_share: float = 0.25
    extra_edge_share: float = 0.45
    total_load_mw: float = 1500.0
    capacity_margin: float = 1.35
    rating_margin: tuple[float, float] = (1.1, 1.6)
    spur_margin: float = 1.6
    gen_bus_load: float = 0.0  # relative weight of local load at generator buses
    base_mva: float = 100.0
    nominal_freq: float = 50.0
    seed: int = 7


def synthetic_network(spec: SyntheticSpec = SyntheticSpec(), name: str = "synthetic") -> Network:
    rng = np.random.Generator(np.random.PCG64(spec.seed))
    n = spec.n_mesh
    pts = rng.random((n, 2))

    # Delaunay edges, keep a spanning tree plus the shortest share of the rest
    tri = Delaunay(pts)
    edges = set()
    for s in tri.simplices:
        for a, b in ((s[0], s[1]), (s[1], s[2]), (s[0], s[2])):
            edges.add((min(a, b), max(a, b)))
    edges = sorted(edges)
    length = {e: float(np.hypot(*(pts[e[0]] - pts[e[1]]))) for e in edges}
    w = np.zeros((n, n))
    for (a, b), d in length.items():
        w[a, b] = d
    tree = minimum_spanning_tree(w).tocoo()
    keep = {(min(a, b), max(a, b)) for a, b in zip(tree.row, tree.col)}
    rest = sorted((e for e in edges if e not in keep), key=lambda e: length[e])
    keep |= set(rest[:int(round(spec.extra_edge_share * len(rest)))])
    mesh_edges = sorted(keep)

    n_gen = max(2, int(round(spec.gen_share * n)))
    gen_pos = np.sort(rng.choice(n, size=n_gen, replace=False))
    plain = np.array([i for i in range(n) if i not in set(gen_pos)])
    spur_parent = np.sort(rng.choice(plain, size=spec.n_spur, replace=False))
    load_pos = plain if spec.gen_bus_load <= 0 else np.arange(n)

    base = spec.base_mva
    load_w = rng.uniform(0.5, 1.5, size=len(load_pos) + spec.n_spur)
    if spec.gen_bus_load > 0:
        load_w[gen_pos] *= spec.gen_bus_load
    load_mw = np.round(load_w / load_w.sum() * spec.total_load_mw, 1)
    gen_w = rng.uniform(0.5, 1.5, size=n_gen)
    pmax_mw = gen_w / gen_w.sum() * spec.total_load_mw * spec.capacity_margin
    costs = np.round(rng.uniform(10.0, 50.0, size=n_gen), 2)

    buses = [Bus(i + 1, 230.0, 1) for i in range(n + spec.n_spur)]
    branches = []
    for a, b in mesh_edges:
        x = 0.02 + 0.25 * length[(a, b)]
        branches.append((a + 1, b + 1, x))
    for k, p in enumerate(spur_parent):
        branches.append((int(p) + 1, n + k + 1, 0.05))
    load_buses = [int(i) + 1 for i in load_pos] + [n + k + 1 for k in range(spec.n_spur)]
    loads = [Load(i + 1, bus, float(mw) / base) for i, (bus, mw) in enumerate(zip(load_buses, load_mw))]

    # merit-order dispatch, ignoring the network
    remaining = float(load_mw.sum())
    p_set = np.zeros(n_gen)
    for j in np.argsort(costs, kind="stable"):
        p_set[j] = min(pmax_mw[j], remaining)
        remaining -= p_set[j]
    gens = [Generator(id=j + 1, bus=int(gen_pos[j]) + 1, p_set=float(p_set[j]) / base, p_min=0.0,
                      p_max=float(pmax_mw[j]) / base, mbase=float(np.ceil(pmax_mw[j] * 1.1)),
                      cost_linear=float(costs[j]))
            for j in range(n_gen)]
    raw = [Branch(i + 1, a, b, x, 99.99) for i, (a, b, x) in enumerate(branches)]
    net = Network(base, tuple(buses), tuple(raw), tuple(gens), tuple(loads), spec.nominal_freq, name)

    arr = net.arrays
    flows = np.abs(network_flows(net, arr.br_in_service,
                                 injections_by_bus(net, p_set / base, arr.load_served, arr.gen_in_service)))
    floor = 0.25 * float(np.median(flows))
    margins = rng.uniform(*spec.rating_margin, size=len(raw))
    rated = []
    for i, br in enumerate(raw):
        if br.to_bus > n:
            r = flows[i] * spec.spur_margin
        else:
            r = max(flows[i], floor) * margins[i]
        rated.append(dataclasses.replace(br, rating=float(np.round(r * base, 1)) / base))
    return net.replace(branches=tuple(rated))


def synthetic_sidecar(net: Network, seed: int = 7, *, inertia=(6.0, 9.0), xd_prime=0.35,
                      damping=2.0, kf=1.0, gov_tc=0.5, droop_r=0.05) -> dict:
    """Dynamic data sized for RK4 stability up to a 0.3 s step."""
    rng = np.random.Generator(np.random.PCG64(seed + 1))
    gens = {g.id: {"inertia_h": float(np.round(rng.uniform(*inertia), 2))} for g in net.generators}
    return {
        "nominal_freq": float(net.nominal_freq),
        "defaults": {"damping_d": damping, "droop_r": droop_r, "gov_tc": gov_tc, "xd_prime": xd_prime},
        "generators": gens,
        "load_defaults": {"freq_sensitivity_kf": kf},
    }


# Shipped cases: (network spec, sidecar keyword arguments). Generous ratings
# on a sparse mesh keep single outages mostly benign while double outages
# still cascade.
SPECS = {
    "grid30": (SyntheticSpec(seed=7, rating_margin=(2.5, 4.0), extra_edge_share=0.2, spur_margin=2.0,
                             gen_bus_load=0.5), {}),
    "grid200": (SyntheticSpec(n_mesh=190, n_spur=10, total_load_mw=9000.0, seed=11, rating_margin=(2.5, 4.0),
                              extra_edge_share=0.2, spur_margin=2.0, gen_bus_load=0.5), {}),
}


def write_case(name: str, directory) -> tuple[Path, Path]:
    """Generate ``name`` from :data:`SPECS` into ``directory`` as .m plus .yaml."""
    from .grid import write_matpower

    spec, side_kw = SPECS[name]
    net = synthetic_network(spec, name)
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    m_path, y_path = directory / f"{name}.m", directory / f"{name}.yaml"
    write_matpower(net, m_path)
    y_path.write_text(yaml.safe_dump(synthetic_sidecar(net, spec.seed, **side_kw), sort_keys=True))
    return m_path, y_path


def bundled_case_paths(name: str = "grid30") -> tuple[Path, Path]:
    root = resources.files("gridcascade") / "cases"
    return Path(str(root / f"{name}.m")), Path(str(root / f"{name}.yaml"))


def load_bundled(name: str = "grid30") -> Network:
    """The shipped case with its dynamic sidecar attached."""
    m_path, y_path = bundled_case_paths(name)
    net = load_case(m_path)
    side = yaml.safe_load(y_path.read_text())
    return attach_dynamic_defaults(net, side)
