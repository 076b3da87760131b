"""Cascade event records, per-scenario results and the event-log format.

The event log is JSON Lines with a fixed key order::

    {"scenario_id": 3, "time_s": 12.4, "kind": "branch_trip", "element": 17, "detail_mw": 88.2}

Floats are written with ``repr`` precision so logs replay bit-for-bit.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Iterator

KINDS = ("branch_trip", "gen_trip_ofgt", "gen_trip_oos", "load_shed_ufls", "island_dead", "separation")
_KIND_ORDER = {k: i for i, k in enumerate(KINDS)}
LOG_FIELDS = ("scenario_id", "time_s", "kind", "element", "detail_mw")


@dataclass(frozen=True)
class EventRecord:
    time: float
    kind: str
    element: int
    detail: float = 0.0

    def __post_init__(self):
        if self.kind not in _KIND_ORDER:
            raise ValueError(f"unknown event kind {self.kind!r}")

    @property
    def sort_key(self):
        return (self.time, _KIND_ORDER[self.kind], self.element)


def sort_events(events: Iterable[EventRecord]) -> list[EventRecord]:
    return sorted(events, key=lambda e: e.sort_key)


@dataclass
class CascadeResult:
    scenario_id: int
    events: list[EventRecord] = field(default_factory=list)
    demand_lost: float = 0.0  # MW
    outages_per_iteration: list[int] = field(default_factory=list)
    blackout: bool = False
    diverged: bool = False
    failed: bool = False
    message: str = ""

    @property
    def line_outages(self) -> int:
        return sum(1 for e in self.events if e.kind == "branch_trip")

    def branch_outage_sequence(self) -> list[int]:
        return [e.element for e in self.events if e.kind == "branch_trip"]

    def to_record(self) -> dict:
        return {
            "scenario_id": self.scenario_id,
            "demand_lost_mw": self.demand_lost,
            "line_outages": self.line_outages,
            "outages_per_iteration": list(self.outages_per_iteration),
            "blackout": self.blackout,
            "diverged": self.diverged,
            "failed": self.failed,
            "message": self.message,
            "branch_sequence": self.branch_outage_sequence(),
        }

    @classmethod
    def from_record(cls, rec: dict, events: list[EventRecord] | None = None) -> "CascadeResult":
        res = cls(scenario_id=int(rec["scenario_id"]), events=list(events or []),
                  demand_lost=float(rec["demand_lost_mw"]),
                  outages_per_iteration=[int(v) for v in rec["outages_per_iteration"]],
                  blackout=bool(rec["blackout"]), diverged=bool(rec["diverged"]),
                  failed=bool(rec["failed"]), message=rec.get("message", ""))
        if events is None:
            # placeholder events keep line_outages / sequence consistent without the log
            res.events = [EventRecord(0.0, "branch_trip", int(b)) for b in rec.get("branch_sequence", [])]
        return res


def event_line(scenario_id: int, ev: EventRecord) -> str:
    rec = {"scenario_id": scenario_id, "time_s": ev.time, "kind": ev.kind,
           "element": ev.element, "detail_mw": ev.detail}
    return json.dumps(rec, separators=(", ", ": "))


def write_event_log(path, results: Iterable[CascadeResult]) -> None:
    with open(path, "w") as fh:
        for res in sorted(results, key=lambda r: r.scenario_id):
            for ev in res.events:
                fh.write(event_line(res.scenario_id, ev) + "\n")


def parse_event_line(line: str) -> tuple[int, EventRecord]:
    rec = json.loads(line)
    ev = EventRecord(float(rec["time_s"]), rec["kind"], int(rec["element"]), float(rec["detail_mw"]))
    return int(rec["scenario_id"]), ev


def read_event_log(path) -> dict[int, list[EventRecord]]:
    out: dict[int, list[EventRecord]] = {}
    with open(path) as fh:
        for line in fh:
            if line.strip():
                sid, ev = parse_event_line(line)
                out.setdefault(sid, []).append(ev)
    return out


def iter_jsonl(path) -> Iterator[dict]:
    p = Path(path)
    if not p.exists():
        return
    with open(p) as fh:
        for line in fh:
            line = line.strip()
            if line:
                yield json.loads(line)
