"""Blackout-size risk metrics and cascade propagation statistics."""

from __future__ import annotations

import math
from collections import Counter
from fractions import Fraction
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import shortest_path

from .errors import BadAlpha, EmptySet
from .events import EventRecord
from .grid import Network

INF_DISTANCE = math.inf


@dataclass(frozen=True)
class ScenarioOutcome:
    scenario_id: int
    probability_p: float
    impact_i: float  # MW

    def __post_init__(self):
        if not 0.0 < self.probability_p <= 1.0:
            raise ValueError(f"probability must lie in (0, 1], got {self.probability_p}")


def uniform_outcomes(losses: Sequence[float]) -> list[ScenarioOutcome]:
    n = len(losses)
    return [ScenarioOutcome(i, 1.0 / n, float(x)) for i, x in enumerate(losses)]


def edns(outcomes: Iterable) -> float:
    """Probability-weighted mean demand not served.

    Accepts :class:`ScenarioOutcome` objects or ``(probability, impact)`` pairs.
    The sum is exact, so the result is the correctly rounded value.
    """
    total, n = Fraction(0), 0
    for o in outcomes:
        p, i = (o.probability_p, o.impact_i) if isinstance(o, ScenarioOutcome) else o
        total += Fraction(p) * Fraction(i)
        n += 1
    if not n:
        raise EmptySet("EDNS of an empty scenario set")
    return float(total)


def _sorted_samples(samples) -> np.ndarray:
    x = np.sort(np.asarray(samples, dtype=float).ravel())
    if x.size == 0:
        raise EmptySet("empty loss distribution")
    return x


def _check_alpha(alpha: float) -> None:
    if not 0.0 < alpha < 1.0:
        raise BadAlpha(f"alpha must lie in (0, 1), got {alpha}")


def var_alpha(samples, alpha: float) -> float:
    """Smallest sample x whose empirical CDF P(X <= x) reaches ``alpha``."""
    _check_alpha(alpha)
    x = _sorted_samples(samples)
    n = x.size
    # alpha is read as the decimal it prints as, so 0.9 means exactly 9/10
    k = max(1, min(n, math.ceil(Fraction(repr(float(alpha))) * n)))
    # ties: F(x) counts every sample equal to x
    return float(x[k - 1])


def cvar_alpha(samples, alpha: float) -> float:
    """Mean of the samples at or above VaR_alpha, correctly rounded."""
    var = var_alpha(samples, alpha)
    x = _sorted_samples(samples)
    tail = x[x >= var]
    return float(sum(map(Fraction, tail.tolist()), Fraction(0)) / tail.size)


def ccdf(samples) -> list[tuple[float, float]]:
    """(x, P(X >= x)) at each distinct sample value, ascending in x."""
    x = _sorted_samples(samples)
    n = x.size
    values, first = np.unique(x, return_index=True)
    return [(float(v), (n - int(i)) / n) for v, i in zip(values, first)]


def ccdf_at(samples, x0: float) -> float:
    x = _sorted_samples(samples)
    return float(np.count_nonzero(x >= x0)) / x.size


# ---------------------------------------------------------------------------
# Propagation
# ---------------------------------------------------------------------------

def group_into_iterations(events, iteration_gap: float = 60.0, cascade_gap: float = 3600.0,
                          ordinal: bool = False) -> list[list[int]]:
    """Split branch outages into cascades and iterations by their time gaps.

    ``events`` holds :class:`EventRecord` objects (non-branch kinds are
    ignored) or bare outage times. Successive outages less than
    ``iteration_gap`` apart share an iteration; a gap of ``cascade_gap`` or
    more starts a new cascade. With ``ordinal=True`` the times are iteration
    numbers from the static engine and are counted as-is.
    """
    times = []
    for e in events:
        if isinstance(e, EventRecord):
            if e.kind == "branch_trip":
                times.append(e.time)
        else:
            times.append(float(e))
    if not times:
        return []
    times.sort()
    if ordinal:
        counts = Counter(int(round(t)) for t in times)
        lo, hi = min(counts), max(counts)
        return [[counts.get(k, 0) for k in range(lo, hi + 1)]]
    cascades = [[1]]
    for prev, cur in zip(times, times[1:]):
        gap = cur - prev
        if gap >= cascade_gap:
            cascades.append([1])
        elif gap < iteration_gap:
            cascades[-1][-1] += 1
        else:
            cascades[-1].append(1)
    return cascades


def mean_iteration_counts(cascades: Sequence[Sequence[int]]) -> list[float]:
    """z_k: mean outages in iteration k across cascades (missing iterations count 0)."""
    if not cascades:
        return []
    depth = max(len(c) for c in cascades)
    n = len(cascades)
    return [math.fsum(c[k] for c in cascades if k < len(c)) / n for k in range(depth)]


def lambda_series(cascades: Sequence[Sequence[int]]) -> list[float]:
    """lambda_k = z_k / z_{k-1}, truncated where z_{k-1} stops being positive."""
    z = mean_iteration_counts(cascades)
    out = []
    for k in range(1, len(z)):
        if z[k - 1] <= 0:
            break
        out.append(z[k] / z[k - 1])
    return out


@dataclass(frozen=True)
class CascadeSeries:
    cascades: list[list[int]]
    z: list[float]
    lambdas: list[float]

    @classmethod
    def from_cascades(cls, cascades):
        cascades = [list(c) for c in cascades]
        return cls(cascades, mean_iteration_counts(cascades), lambda_series(cascades))


class LineDistance:
    """Bus-count distance between lines on a fixed (pre-cascade) topology."""

    def __init__(self, net: Network, branch_mask: np.ndarray | None = None):
        arr = net.arrays
        if branch_mask is None:
            branch_mask = arr.br_in_service
        n = len(arr.bus_ids)
        f, t = arr.br_from[branch_mask], arr.br_to[branch_mask]
        g = coo_matrix((np.ones(len(f)), (f, t)), shape=(n, n)).tocsr()
        self._hops = shortest_path(g, directed=False, unweighted=True)
        self._ends = {int(bid): (int(a), int(b))
                      for bid, a, b, live in zip(arr.br_ids, arr.br_from, arr.br_to, branch_mask) if live}

    def __call__(self, li: int, lj: int) -> float:
        if li == lj:
            return 0
        try:
            ei, ej = self._ends[li], self._ends[lj]
        except KeyError as exc:
            raise KeyError(f"branch {exc.args[0]} is not in the reference topology") from None
        d = min(self._hops[a, b] for a in ei for b in ej)
        return INF_DISTANCE if math.isinf(d) else int(d) + 1


def line_distance(net: Network, li: int, lj: int) -> float:
    return LineDistance(net)(li, lj)


def distance_histogram(sequences: Iterable[Sequence[int]], dist: LineDistance) -> Counter:
    """Counts of d^bus over successive pairs of each outage sequence."""
    hist: Counter = Counter()
    for seq in sequences:
        for a, b in zip(seq, seq[1:]):
            hist[dist(a, b)] += 1
    return hist


def running_mean(values: Sequence[float]) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    return np.cumsum(v) / np.arange(1, v.size + 1)
