"""Relay models: inverse-time line overload, staged UFLS, OFGT and out-of-step.

Every relay is a pure function of (state, measurement, dt). A sample
stands for the step that ends at it, so each violating sample adds ``dt``
of elapsed violation, the first one included; this is the same rectangle
rule the overload accumulator uses. A healthy sample clears the timer. A
relay acts once the elapsed time reaches its delay. The dynamic kernels implement the same rules and
are checked against these functions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Mapping, Sequence

import numpy as np

# timers compare against delays accumulated from repeated float additions
TIME_EPS = 1e-9
DISARMED = -1.0


@dataclass(frozen=True)
class OverloadRelayState:
    accumulator: float = 0.0
    threshold_k: float = 10.0
    tripped: bool = False


def overload_update(state: OverloadRelayState, loading_m: float, dt: float):
    """Advance the accumulator by one sample; returns ``(state, tripped_now)``."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    if state.tripped:
        return state, False
    if loading_m > 1.0:
        acc = state.accumulator + (loading_m - 1.0) * dt
    else:
        acc = max(0.0, state.accumulator - (1.0 - loading_m) * dt)
    trip = acc >= state.threshold_k - TIME_EPS
    return replace(state, accumulator=acc, tripped=trip), trip


def overload_trip_time(loading_m: float, threshold_k: float = 10.0) -> float:
    """Trip time under a constant loading; infinite when not overloaded."""
    return threshold_k / (loading_m - 1.0) if loading_m > 1.0 else math.inf


@dataclass(frozen=True)
class UflsStage:
    freq_threshold: float  # pu of nominal
    shed_fraction: float
    delay: float

    def __post_init__(self):
        if not 0.0 <= self.shed_fraction <= 1.0:
            raise ValueError("shed_fraction must lie in [0, 1]")
        if self.delay < 0:
            raise ValueError("UFLS delay must be non-negative")


DEFAULT_UFLS_STAGES = (
    UflsStage(0.9883, 0.15, 0.1),
    UflsStage(0.9833, 0.15, 0.1),
    UflsStage(0.9783, 0.15, 0.1),
)


@dataclass(frozen=True)
class UflsScheme:
    stages: tuple[UflsStage, ...] = DEFAULT_UFLS_STAGES

    def __post_init__(self):
        th = [s.freq_threshold for s in self.stages]
        if any(b >= a for a, b in zip(th, th[1:])):
            raise ValueError("UFLS thresholds must be strictly decreasing")

    def initial_state(self) -> "UflsState":
        n = len(self.stages)
        return UflsState(timers=(DISARMED,) * n, fired=(False,) * n)


@dataclass(frozen=True)
class UflsState:
    timers: tuple[float, ...]
    fired: tuple[bool, ...]


def ufls_evaluate(scheme: UflsScheme, state: UflsState, island_freq: float, dt: float):
    """One UFLS sample for an island; returns ``(state, [(stage, shed_fraction), ...])``."""
    timers, fired = list(state.timers), list(state.fired)
    commands = []
    for k, st in enumerate(scheme.stages):
        if fired[k]:
            continue
        if island_freq < st.freq_threshold:
            timers[k] = dt if timers[k] < 0 else timers[k] + dt
            if timers[k] >= st.delay - TIME_EPS:
                fired[k] = True
                commands.append((k, st.shed_fraction))
        else:
            timers[k] = DISARMED
    return UflsState(tuple(timers), tuple(fired)), commands


def shed_pro_rata(served: np.ndarray, fraction: float) -> np.ndarray:
    """Remove ``fraction`` of the remaining served share of every load."""
    return served * (1.0 - fraction)


@dataclass(frozen=True)
class OfgtSetting:
    freq_threshold: float = 1.03
    delay: float = 0.5

    def __post_init__(self):
        if not self.freq_threshold > 1.0:
            raise ValueError("OFGT threshold must exceed 1 pu")


def ofgt_evaluate(setting: OfgtSetting, timer: float, omega: float, dt: float):
    """One OFGT sample for a machine with speed deviation ``omega``; returns ``(timer, trip)``."""
    if 1.0 + omega > setting.freq_threshold:
        timer = dt if timer < 0 else timer + dt
        return timer, timer >= setting.delay - TIME_EPS
    return DISARMED, False


@dataclass(frozen=True)
class OosSetting:
    angle_limit: float = math.pi

    def __post_init__(self):
        if not self.angle_limit > 0:
            raise ValueError("out-of-step angle limit must be positive")


def oos_evaluate(setting: OosSetting, delta: float, delta_coi: float) -> bool:
    """Unwrapped angle separation from the island centre of inertia."""
    return abs(delta - delta_coi) > setting.angle_limit


def coi(values: Sequence[float], weights: Sequence[float]) -> float:
    w = np.asarray(weights, dtype=float)
    return float(np.dot(w, values) / w.sum())


@dataclass(frozen=True)
class RelaySettings:
    overload_k: float = 10.0
    ufls: UflsScheme = field(default_factory=UflsScheme)
    ofgt: OfgtSetting = field(default_factory=OfgtSetting)
    oos: OosSetting = field(default_factory=OosSetting)

    def __post_init__(self):
        if not self.overload_k > 0:
            raise ValueError("overload threshold must be positive")

    @classmethod
    def from_mapping(cls, data: Mapping | None) -> "RelaySettings":
        data = dict(data or {})
        kw = {}
        if "overload_k" in data:
            kw["overload_k"] = float(data["overload_k"])
        if "ufls_stages" in data:
            kw["ufls"] = UflsScheme(tuple(
                UflsStage(float(s["freq_threshold"]), float(s["shed_fraction"]), float(s["delay"]))
                for s in data["ufls_stages"]))
        if "ofgt" in data:
            kw["ofgt"] = OfgtSetting(**{k: float(v) for k, v in data["ofgt"].items()})
        if "oos" in data:
            kw["oos"] = OosSetting(**{k: float(v) for k, v in data["oos"].items()})
        return cls(**kw)

    def to_mapping(self) -> dict:
        return {
            "overload_k": self.overload_k,
            "ufls_stages": [{"freq_threshold": s.freq_threshold, "shed_fraction": s.shed_fraction,
                             "delay": s.delay} for s in self.ufls.stages],
            "ofgt": {"freq_threshold": self.ofgt.freq_threshold, "delay": self.ofgt.delay},
            "oos": {"angle_limit": self.oos.angle_limit},
        }
