"""Monte Carlo N-2 studies: sampling, parallel execution, persistence and reports.

Per-scenario results are journalled as they complete, so an interrupted
study resumes where it stopped. Every aggregate is rebuilt from the
persisted records by a single reducer, sorted by scenario id, so the
report files do not depend on the worker count or completion order.
Wall-clock figures go to a separate ``timing_<engine>.json``.
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import combinations
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import yaml

from .dynamics import DynConfig, run_dynamic_cascade
from .errors import EmptyStudy, GridCascadeError, ScenarioMismatch
from .events import (CascadeResult, event_line, iter_jsonl, parse_event_line, read_event_log,
                     write_event_log)
from .grid import Network, attach_dynamic_defaults, load_case, load_dynamic_sidecar
from .metrics import (CascadeSeries, LineDistance, ccdf, ccdf_at, cvar_alpha, distance_histogram, edns,
                      group_into_iterations, running_mean, uniform_outcomes, var_alpha)
from .powerflow import solve_base_case
from .protection import RelaySettings
from .qss import run_static_cascade

log = logging.getLogger(__name__)

WORKERS_ENV = "GRIDCASCADE_WORKERS"
ENGINES = ("static", "dynamic")


@dataclass(frozen=True)
class ScenarioSpec:
    scenario_id: int
    outage_pair: tuple[int, int]

    def __post_init__(self):
        a, b = self.outage_pair
        if a == b:
            raise ValueError(f"scenario {self.scenario_id}: outage pair repeats branch {a}")
        object.__setattr__(self, "outage_pair", (min(a, b), max(a, b)))


def scenario_rng(seed: int, scenario_id: int) -> np.random.Generator:
    """Independent per-scenario stream, stable under any execution order."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed, spawn_key=(scenario_id,))))


def sample_scenarios(net: Network, count: int, seed: int) -> list[ScenarioSpec]:
    """``count`` distinct unordered pairs of in-service branches, uniform without replacement."""
    if count < 1:
        raise ValueError("scenario count must be at least 1")
    ids = sorted(b.id for b in net.branches if b.in_service)
    n = len(ids)
    total = n * (n - 1) // 2
    if total == 0:
        raise EmptyStudy("fewer than two in-service branches")
    if count >= total:
        if count > total:
            log.warning("requested %d scenarios but only %d distinct pairs exist; using all", count, total)
        return [ScenarioSpec(k, p) for k, p in enumerate(combinations(ids, 2))]
    rng = np.random.Generator(np.random.PCG64(seed))
    picks = rng.choice(total, size=count, replace=False)
    return [ScenarioSpec(k, _unrank_pair(int(r), n, ids)) for k, r in enumerate(picks)]


def _unrank_pair(r: int, n: int, ids: Sequence[int]) -> tuple[int, int]:
    # lexicographic rank over (i, j), i < j
    i = 0
    while r >= n - 1 - i:
        r -= n - 1 - i
        i += 1
    return ids[i], ids[i + 1 + r]


def write_scenarios(path, scenarios: Sequence[ScenarioSpec]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["scenario_id", "branch_a", "branch_b"])
        for s in scenarios:
            w.writerow([s.scenario_id, *s.outage_pair])


def read_scenarios(path) -> list[ScenarioSpec]:
    with open(path, newline="") as fh:
        return [ScenarioSpec(int(r["scenario_id"]), (int(r["branch_a"]), int(r["branch_b"])))
                for r in csv.DictReader(fh)]


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class StudyConfig:
    case_path: str
    dynamic_path: str | None = None
    engine: str = "dynamic"
    scenario_count: int = 100
    seed: int = 42
    dt: float = 0.1
    t_end: float = 60.0
    relays: RelaySettings = field(default_factory=RelaySettings)
    alphas: tuple[float, ...] = (0.95,)
    output_dir: str | None = None
    workers: int | None = None
    scenario_file: str | None = None
    orderings: int = 10
    resume: bool = True

    def __post_init__(self):
        if self.engine not in (*ENGINES, "both"):
            raise ValueError(f"engine must be static, dynamic or both, got {self.engine!r}")
        if self.scenario_count < 1:
            raise ValueError("scenario count must be at least 1")
        if self.engine != "static":
            DynConfig(dt=self.dt, t_end=self.t_end)  # validates the step
        for a in self.alphas:
            if not 0.0 < a < 1.0:
                raise ValueError(f"alpha must lie in (0, 1), got {a}")

    @property
    def engines(self) -> tuple[str, ...]:
        return ENGINES if self.engine == "both" else (self.engine,)

    @property
    def n_workers(self) -> int:
        if self.workers:
            return int(self.workers)
        return int(os.environ.get(WORKERS_ENV, "0") or 0) or (os.cpu_count() or 1)

    @classmethod
    def from_mapping(cls, data: Mapping) -> "StudyConfig":
        data = dict(data)
        if "relays" in data and not isinstance(data["relays"], RelaySettings):
            data["relays"] = RelaySettings.from_mapping(data["relays"])
        if "alphas" in data:
            data["alphas"] = tuple(float(a) for a in data["alphas"])
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(data) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    @classmethod
    def from_yaml(cls, path, **overrides) -> "StudyConfig":
        with open(path) as fh:
            data = yaml.safe_load(fh) or {}
        data.update({k: v for k, v in overrides.items() if v is not None})
        return cls.from_mapping(data)

    def to_mapping(self) -> dict:
        out = dataclasses.asdict(self)
        out["relays"] = self.relays.to_mapping()
        out["alphas"] = list(self.alphas)
        return out


def load_network(case_path, dynamic_path=None) -> Network:
    net = load_case(case_path)
    side = load_dynamic_sidecar(dynamic_path) if dynamic_path else None
    return attach_dynamic_defaults(net, side)


# ---------------------------------------------------------------------------
# Execution
# ---------------------------------------------------------------------------

_WORKER: dict = {}


def _init_worker(case_path, dynamic_path, dt, t_end, relays_map):
    net = load_network(case_path, dynamic_path)
    _WORKER.clear()
    _WORKER.update(net=net, base=solve_base_case(net),
                   dyn=DynConfig(dt=dt, t_end=t_end, relays=RelaySettings.from_mapping(relays_map)))


def _run_one(engine: str, sid: int, pair: tuple[int, int]) -> tuple[dict, list[str], float]:
    net, base = _WORKER["net"], _WORKER["base"]
    t0 = time.perf_counter()
    try:
        if engine == "static":
            res = run_static_cascade(net, pair, base=base, scenario_id=sid)
        else:
            res = run_dynamic_cascade(net, pair, _WORKER["dyn"], base=base, scenario_id=sid)
    except (GridCascadeError, ValueError, np.linalg.LinAlgError, FloatingPointError) as exc:
        log.warning("scenario %d (%s) failed: %s", sid, engine, exc)
        res = CascadeResult(scenario_id=sid, failed=True, message=f"{type(exc).__name__}: {exc}")
    lines = [event_line(sid, ev) for ev in res.events]
    return res.to_record(), lines, time.perf_counter() - t0


def _journal_path(out: Path, engine: str) -> Path:
    return out / f"journal_{engine}.jsonl"


def _load_journal(path: Path) -> dict[int, dict]:
    done = {}
    for rec in iter_jsonl(path):
        done[int(rec["record"]["scenario_id"])] = rec
    return done


def execute(config: StudyConfig, scenarios: Sequence[ScenarioSpec], engine: str, out: Path) -> dict:
    """Run every scenario not yet in the journal; returns {scenario_id: journal entry}."""
    jpath = _journal_path(out, engine)
    done = _load_journal(jpath) if config.resume else {}
    if not config.resume and jpath.exists():
        jpath.unlink()
    todo = [s for s in scenarios if s.scenario_id not in done]
    if done:
        log.info("%s: resuming, %d of %d scenarios already done", engine, len(done), len(scenarios))
    init_args = (config.case_path, config.dynamic_path, config.dt, config.t_end, config.relays.to_mapping())
    workers = max(1, min(config.n_workers, len(todo) or 1))

    with open(jpath, "a") as journal:
        def record(sid, rec, lines, secs):
            entry = {"record": rec, "events": lines, "seconds": secs}
            journal.write(json.dumps(entry) + "\n")
            journal.flush()
            done[sid] = entry

        if workers == 1:
            _init_worker(*init_args)
            for s in todo:
                record(s.scenario_id, *_run_one(engine, s.scenario_id, s.outage_pair))
        else:
            with ProcessPoolExecutor(workers, initializer=_init_worker, initargs=init_args) as pool:
                futs = {pool.submit(_run_one, engine, s.scenario_id, s.outage_pair): s.scenario_id
                        for s in todo}
                for fut, sid in futs.items():
                    record(sid, *fut.result())
    return done


# ---------------------------------------------------------------------------
# Reports
# ---------------------------------------------------------------------------

@dataclass
class StudyReport:
    engine: str
    scenarios: list[ScenarioSpec]
    results: list[CascadeResult]
    total_demand: float
    alphas: tuple[float, ...]
    edns: float
    var: dict[float, float]
    cvar: dict[float, float]
    mean_line_outages: float
    z: list[float]
    lambdas: list[float]
    distance_hist: dict
    ccdf_loss: list[tuple[float, float]]
    ccdf_outages: list[tuple[float, float]]
    convergence: np.ndarray
    n_failed: int
    wall_clock: dict = field(default_factory=dict)

    @property
    def losses(self) -> list[float]:
        return [r.demand_lost for r in self.results]

    def metrics_rows(self) -> list[tuple[str, float]]:
        rows = [("scenarios", len(self.results)), ("failed", self.n_failed),
                ("total_demand_mw", self.total_demand), ("edns_mw", self.edns)]
        for a in self.alphas:
            rows += [(f"var_{a:g}_mw", self.var[a]), (f"cvar_{a:g}_mw", self.cvar[a])]
        rows += [("mean_line_outages", self.mean_line_outages),
                 ("blackouts", sum(r.blackout for r in self.results)),
                 ("diverged", sum(r.diverged for r in self.results))]
        return rows


def build_report(engine: str, scenarios: Sequence[ScenarioSpec], results: Sequence[CascadeResult],
                 net: Network, alphas: Sequence[float], *, orderings: int = 10, seed: int = 0) -> StudyReport:
    """Aggregate per-scenario results; a pure function of its inputs."""
    scenarios = sorted(scenarios, key=lambda s: s.scenario_id)
    results = sorted(results, key=lambda r: r.scenario_id)
    if not results:
        raise EmptyStudy("no scenario results to aggregate")
    losses = [r.demand_lost for r in results]
    outages = [r.line_outages for r in results]
    cascades = [c for r in results for c in _cascades_of(r, engine)]
    series = CascadeSeries.from_cascades(cascades)
    dist = LineDistance(net)
    hist = distance_histogram([r.branch_outage_sequence() for r in results], dist)
    curves = convergence_curve(uniform_outcomes(losses), orderings, seed) if len(losses) >= 2 \
        else np.asarray([losses], dtype=float)
    return StudyReport(
        engine=engine, scenarios=list(scenarios), results=list(results),
        total_demand=net.total_demand_mw, alphas=tuple(alphas),
        edns=edns(uniform_outcomes(losses)),
        var={a: var_alpha(losses, a) for a in alphas},
        cvar={a: cvar_alpha(losses, a) for a in alphas},
        mean_line_outages=math.fsum(outages) / len(outages),
        z=series.z, lambdas=series.lambdas, distance_hist=dict(hist),
        ccdf_loss=ccdf(losses), ccdf_outages=ccdf(outages), convergence=curves,
        n_failed=sum(r.failed for r in results),
    )


def _cascades_of(res: CascadeResult, engine: str) -> list[list[int]]:
    if engine == "static":
        return group_into_iterations(res.events, ordinal=True)
    return group_into_iterations(res.events)


def convergence_curve(outcomes, orderings: int, seed: int) -> np.ndarray:
    """EDNS running means under ``orderings`` random permutations, shape (R, |S|)."""
    impacts = np.array([o.impact_i if hasattr(o, "impact_i") else float(o) for o in outcomes])
    if impacts.size < 2:
        raise ValueError("convergence curves need at least two outcomes")
    rng = np.random.Generator(np.random.PCG64(seed))
    return np.array([running_mean(impacts[rng.permutation(impacts.size)]) for _ in range(orderings)])


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def report_files(report: StudyReport) -> dict[str, str]:
    """File name -> content for every deterministic report artefact."""
    e = report.engine
    conv = report.convergence
    conv_rows = [(k + 1, *conv[:, k].tolist()) for k in range(conv.shape[1])]
    dist_rows = sorted(report.distance_hist.items(), key=lambda kv: kv[0])
    return {
        f"metrics_{e}.csv": _csv_text(["metric", "value"], report.metrics_rows()),
        f"ccdf_loss_{e}.csv": _csv_text(["loss_mw", "p_exceed"], report.ccdf_loss),
        f"ccdf_outages_{e}.csv": _csv_text(["line_outages", "p_exceed"], report.ccdf_outages),
        f"lambda_{e}.csv": _csv_text(["iteration", "lambda"], enumerate(report.lambdas, start=1)),
        f"distance_{e}.csv": _csv_text(["distance", "count"], dist_rows),
        f"convergence_{e}.csv": _csv_text(["scenarios", *(f"order_{r}" for r in range(conv.shape[0]))],
                                          conv_rows),
    }


def write_report(report: StudyReport, out: Path) -> None:
    e = report.engine
    write_event_log(out / f"events_{e}.jsonl", report.results)
    with open(out / f"results_{e}.jsonl", "w") as fh:
        for r in report.results:
            fh.write(json.dumps(r.to_record()) + "\n")
    for name, text in report_files(report).items():
        (out / name).write_text(text)
    (out / f"timing_{e}.json").write_text(json.dumps(report.wall_clock, indent=1) + "\n")


def load_results(out, engine: str) -> list[CascadeResult]:
    """Per-scenario results from persisted files, events included."""
    out = Path(out)
    events = read_event_log(out / f"events_{engine}.jsonl")
    return [CascadeResult.from_record(rec, events.get(int(rec["scenario_id"]), []))
            for rec in iter_jsonl(out / f"results_{engine}.jsonl")]


def recompute_report(out, engine: str, net: Network, alphas=None, *, orderings=None,
                     seed=None) -> StudyReport:
    """Rebuild a report from a study directory; unset options come from its config.yaml."""
    out = Path(out)
    saved = {}
    if (out / "config.yaml").exists():
        saved = yaml.safe_load((out / "config.yaml").read_text()) or {}
    alphas = tuple(alphas or saved.get("alphas") or (0.95,))
    orderings = orderings if orderings is not None else saved.get("orderings", 10)
    seed = seed if seed is not None else saved.get("seed", 0)
    scenarios = read_scenarios(out / "scenarios.csv")
    return build_report(engine, scenarios, load_results(out, engine), net, alphas,
                        orderings=orderings, seed=seed)


@dataclass
class PairedStudy:
    static: StudyReport
    dynamic: StudyReport
    comparison: dict


def run_study(config: StudyConfig, scenarios: Sequence[ScenarioSpec] | None = None):
    """Run the configured study; returns a StudyReport, or a PairedStudy for ``engine='both'``."""
    net = load_network(config.case_path, config.dynamic_path)
    if scenarios is None:
        if config.scenario_file:
            scenarios = read_scenarios(config.scenario_file)
        else:
            scenarios = sample_scenarios(net, config.scenario_count, config.seed)
    scenarios = sorted(scenarios, key=lambda s: s.scenario_id)
    if not scenarios:
        raise EmptyStudy("scenario list is empty")
    _check_scenarios(net, scenarios)
    out = Path(config.output_dir) if config.output_dir else None
    if out is None:
        import tempfile
        out = Path(tempfile.mkdtemp(prefix="gridcascade-"))
    out.mkdir(parents=True, exist_ok=True)
    write_scenarios(out / "scenarios.csv", scenarios)
    (out / "config.yaml").write_text(yaml.safe_dump(config.to_mapping(), sort_keys=True))

    reports = {}
    for engine in config.engines:
        t0 = time.perf_counter()
        done = execute(config, scenarios, engine, out)
        wall = time.perf_counter() - t0
        wanted = {s.scenario_id for s in scenarios}
        # rebuild from the journalled text so the report equals a replay of the files
        results = []
        for sid in sorted(wanted):
            entry = done[sid]
            evs = [parse_event_line(line)[1] for line in entry["events"]]
            results.append(CascadeResult.from_record(entry["record"], evs))
        rep = build_report(engine, scenarios, results, net, config.alphas,
                           orderings=config.orderings, seed=config.seed)
        secs = [done[s]["seconds"] for s in sorted(wanted)]
        rep.wall_clock = {"engine": engine, "wall_s": wall, "workers": config.n_workers,
                          "scenario_s_total": math.fsum(secs), "scenario_s_max": max(secs)}
        write_report(rep, out)
        reports[engine] = rep
    if config.engine == "both":
        cmp = compare_models(reports["static"], reports["dynamic"])
        write_comparison(cmp, out)
        return PairedStudy(reports["static"], reports["dynamic"], cmp)
    return reports[config.engine]


def _check_scenarios(net: Network, scenarios: Sequence[ScenarioSpec]) -> None:
    ids = {b.id for b in net.branches if b.in_service}
    seen_ids, seen_pairs = set(), set()
    for s in scenarios:
        if s.scenario_id in seen_ids:
            raise ValueError(f"duplicate scenario id {s.scenario_id}")
        if s.outage_pair in seen_pairs:
            raise ValueError(f"duplicate outage pair {s.outage_pair}")
        missing = set(s.outage_pair) - ids
        if missing:
            raise ValueError(f"scenario {s.scenario_id}: unknown or out-of-service branches {sorted(missing)}")
        seen_ids.add(s.scenario_id)
        seen_pairs.add(s.outage_pair)


# ---------------------------------------------------------------------------
# Comparison and step-size sweep
# ---------------------------------------------------------------------------

def compare_models(static: StudyReport, dynamic: StudyReport) -> dict:
    """Paired per-scenario table plus overlaid distributions and summary deltas."""
    sa = [(s.scenario_id, s.outage_pair) for s in static.scenarios]
    da = [(s.scenario_id, s.outage_pair) for s in dynamic.scenarios]
    if sa != da:
        raise ScenarioMismatch("static and dynamic reports cover different scenario lists")
    dres = {r.scenario_id: r for r in dynamic.results}
    rows = []
    for r in static.results:
        d = dres[r.scenario_id]
        rows.append((r.scenario_id, r.demand_lost, d.demand_lost, r.line_outages, d.line_outages))
    demand = static.total_demand
    return {
        "rows": rows,
        "ccdf_loss": {"static": static.ccdf_loss, "dynamic": dynamic.ccdf_loss},
        "ccdf_outages": {"static": static.ccdf_outages, "dynamic": dynamic.ccdf_outages},
        "lambdas": {"static": static.lambdas, "dynamic": dynamic.lambdas},
        "distance": {"static": static.distance_hist, "dynamic": dynamic.distance_hist},
        "summary": {
            "mean_loss_static_mw": static.edns,
            "mean_loss_dynamic_mw": dynamic.edns,
            "mean_outages_static": static.mean_line_outages,
            "mean_outages_dynamic": dynamic.mean_line_outages,
            "p_loss_ge_5pct_static": ccdf_at(static.losses, 0.05 * demand),
            "p_loss_ge_5pct_dynamic": ccdf_at(dynamic.losses, 0.05 * demand),
        },
    }


def write_comparison(cmp: dict, out: Path) -> None:
    (out / "compare_paired.csv").write_text(_csv_text(
        ["scenario_id", "loss_static_mw", "loss_dynamic_mw", "outages_static", "outages_dynamic"], cmp["rows"]))
    (out / "compare_summary.csv").write_text(_csv_text(["metric", "value"], cmp["summary"].items()))
    n = max(len(cmp["lambdas"]["static"]), len(cmp["lambdas"]["dynamic"]))
    lam = [(k + 1, *(v[k] if k < len(v) else "" for v in cmp["lambdas"].values())) for k in range(n)]
    (out / "compare_lambda.csv").write_text(_csv_text(["iteration", "static", "dynamic"], lam))
    keys = sorted(set(cmp["distance"]["static"]) | set(cmp["distance"]["dynamic"]))
    dist = [(k, cmp["distance"]["static"].get(k, 0), cmp["distance"]["dynamic"].get(k, 0)) for k in keys]
    (out / "compare_distance.csv").write_text(_csv_text(["distance", "static", "dynamic"], dist))


SWEEP_HEADER = ["dt_s", "edns_mw", "var95_mw", "cvar95_mw", "mean_line_outages", "wall_s"]


def sweep_dt(config: StudyConfig, dts: Sequence[float],
             scenarios: Sequence[ScenarioSpec] | None = None) -> list[tuple]:
    """Rerun one fixed scenario list over several steps; writes ``sweep_dt.csv``."""
    net = load_network(config.case_path, config.dynamic_path)
    if scenarios is None:
        scenarios = sample_scenarios(net, config.scenario_count, config.seed)
    root = Path(config.output_dir) if config.output_dir else None
    rows, timing = [], {}
    for dt in dts:
        sub = dataclasses.replace(config, engine="dynamic", dt=float(dt),
                                  output_dir=str(root / f"dt_{dt:g}") if root else None)
        rep = run_study(sub, scenarios)
        timing[f"{dt:g}"] = rep.wall_clock
        rows.append((float(dt), rep.edns, rep.var.get(0.95, var_alpha(rep.losses, 0.95)),
                     rep.cvar.get(0.95, cvar_alpha(rep.losses, 0.95)), rep.mean_line_outages,
                     rep.wall_clock["wall_s"]))
    if root:
        (root / "sweep_dt.csv").write_text(_csv_text(SWEEP_HEADER, rows))
    return rows
