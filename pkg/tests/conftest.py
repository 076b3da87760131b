import numpy as np
import pytest

from gridcascade.grid import Branch, Bus, Generator, Load, Network, attach_dynamic_defaults


def make_net(n_bus, branches, gens=(), loads=(), *, base=100.0, freq=50.0, name="t"):
    """Network from compact tuples.

    branches: (from, to, x[, rating]); gens: (bus, p_set, p_max[, cost[, p_min]]);
    loads: (bus, p). All powers in per-unit.
    """
    buses = tuple(Bus(i + 1, 230.0, 1) for i in range(n_bus))
    brs = []
    for k, b in enumerate(branches):
        f, t, x = b[:3]
        rating = b[3] if len(b) > 3 else 99.99
        brs.append(Branch(k + 1, f, t, x, rating))
    gs = []
    for k, g in enumerate(gens):
        bus, p, pmax = g[:3]
        cost = g[3] if len(g) > 3 else 10.0
        pmin = g[4] if len(g) > 4 else 0.0
        gs.append(Generator(k + 1, bus, p, pmin, pmax, mbase=base, cost_linear=cost))
    ls = tuple(Load(k + 1, bus, p) for k, (bus, p) in enumerate(loads))
    return Network(base, buses, tuple(brs), tuple(gs), ls, freq, name)


def random_connected(rng, n, extra=3, x_range=(0.05, 0.5)):
    """Random spanning tree plus ``extra`` chords, as (from, to, x) tuples."""
    edges = set()
    order = rng.permutation(n) + 1
    for k in range(1, n):
        a, b = int(order[k]), int(order[rng.integers(k)])
        edges.add((min(a, b), max(a, b)))
    for _ in range(extra):
        a, b = rng.choice(n, 2, replace=False) + 1
        edges.add((int(min(a, b)), int(max(a, b))))
    return [(a, b, float(rng.uniform(*x_range))) for a, b in sorted(edges)]


@pytest.fixture
def three_bus():
    """Triangle with a cheap generator at bus 1 and a dearer one at bus 3."""
    return make_net(3, [(1, 2, 0.1, 1.2), (2, 3, 0.1, 1.2), (1, 3, 0.1, 1.2)],
                    gens=[(1, 1.0, 2.0, 20.0), (3, 0.5, 1.0, 30.0)],
                    loads=[(2, 1.0), (3, 0.5)])


@pytest.fixture
def single_machine():
    """One bus, one machine, one load: the isolated droop test system."""
    return attach_dynamic_defaults(make_net(1, [], gens=[(1, 0.8, 2.0)], loads=[(1, 0.8)]))


@pytest.fixture(scope="session")
def bundled():
    from gridcascade.cases import load_bundled

    return load_bundled("grid30")


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    import sys

    mod = sys.modules.get("test_acceptance")
    if mod and mod.LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(mod.LINES, key=lambda s: (int(s.split()[1].rstrip(":").rstrip("abc")), s)):
            terminalreporter.write_line(line)
