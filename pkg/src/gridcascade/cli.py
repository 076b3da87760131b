"""Command-line entry point: ``gridcascade {run,sweep-dt,compare,metrics,sample}``."""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from . import cases
from .errors import GridCascadeError
from .study import (StudyConfig, compare_models, load_network, recompute_report,
                    report_files, run_study, sample_scenarios, sweep_dt, write_comparison, write_scenarios)

log = logging.getLogger("gridcascade")

# flag -> StudyConfig field
_FIELD_FLAGS = {
    "case": "case_path", "dynamic": "dynamic_path", "engine": "engine", "count": "scenario_count",
    "seed": "seed", "dt": "dt", "t_end": "t_end", "alpha": "alphas", "out": "output_dir",
    "workers": "workers", "scenarios": "scenario_file",
}


def _resolve_case(case: str | None, dynamic: str | None) -> tuple[str, str | None]:
    """Bundled case names resolve to the shipped files, sidecar included."""
    case = case or "grid30"
    if not Path(case).exists() and case in cases.BUNDLED:
        m_path, y_path = cases.bundled_case_paths(case)
        return str(m_path), dynamic or str(y_path)
    return case, dynamic


def _config(args) -> StudyConfig:
    data = {}
    if getattr(args, "config", None):
        import yaml

        with open(args.config) as fh:
            data = yaml.safe_load(fh) or {}
    for flag, name in _FIELD_FLAGS.items():
        v = getattr(args, flag, None)
        if v is not None:
            data[name] = v
    if getattr(args, "no_resume", False):
        data["resume"] = False
    data["case_path"], data["dynamic_path"] = _resolve_case(data.get("case_path"), data.get("dynamic_path"))
    return StudyConfig.from_mapping(data)


def _study_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML study config; flags override its values")
    p.add_argument("--case", help="MATPOWER case file or bundled case name (default grid30)")
    p.add_argument("--dynamic", help="YAML dynamic-data sidecar")
    p.add_argument("--count", type=int, help="number of N-2 scenarios")
    p.add_argument("--seed", type=int, help="master seed for scenario sampling")
    p.add_argument("--dt", type=float, help="integration step, s")
    p.add_argument("--t-end", dest="t_end", type=float, help="simulated time per scenario, s")
    p.add_argument("--alpha", type=float, action="append", help="VaR/CVaR level; repeatable")
    p.add_argument("--out", help="output directory")
    p.add_argument("--workers", type=int, help="worker processes (default $GRIDCASCADE_WORKERS or CPU count)")
    p.add_argument("--scenarios", help="scenario CSV to use instead of sampling")
    p.add_argument("--no-resume", action="store_true", help="discard any journal in the output directory")


def _print_rows(rows) -> None:
    for name, value in rows:
        print(f"{name:>24}  {value}")


def cmd_run(args) -> int:
    cfg = _config(args)
    result = run_study(cfg)
    reports = [result.static, result.dynamic] if cfg.engine == "both" else [result]
    for rep in reports:
        print(f"[{rep.engine}]")
        _print_rows(rep.metrics_rows())
    if cfg.output_dir:
        print(f"outputs written to {cfg.output_dir}")
    return 0


def cmd_sweep(args) -> int:
    cfg = _config(args)
    rows = sweep_dt(cfg, args.dts)
    print("dt_s,edns_mw,var95_mw,cvar95_mw,mean_line_outages,wall_s")
    for row in rows:
        print(",".join(f"{v:.6g}" for v in row))
    return 0


def cmd_compare(args) -> int:
    case, dyn = _resolve_case(args.case, args.dynamic)
    net = load_network(case, dyn)
    static = recompute_report(args.static_dir, "static", net)
    dynamic = recompute_report(args.dynamic_dir, "dynamic", net)
    cmp = compare_models(static, dynamic)
    out = Path(args.out or args.dynamic_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_comparison(cmp, out)
    _print_rows(cmp["summary"].items())
    return 0


def cmd_metrics(args) -> int:
    case, dyn = _resolve_case(args.case, args.dynamic)
    net = load_network(case, dyn)
    rep = recompute_report(args.dir, args.engine, net, args.alpha, seed=args.seed)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
        for name, text in report_files(rep).items():
            (out / name).write_text(text)
    _print_rows(rep.metrics_rows())
    return 0


def cmd_sample(args) -> int:
    case, dyn = _resolve_case(args.case, args.dynamic)
    net = load_network(case, dyn)
    scen = sample_scenarios(net, args.count, args.seed)
    if args.out:
        write_scenarios(args.out, scen)
    else:
        print("scenario_id,branch_a,branch_b")
        for s in scen:
            print(f"{s.scenario_id},{s.outage_pair[0]},{s.outage_pair[1]}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gridcascade", description=__doc__)
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run an N-2 study")
    _study_flags(p)
    p.add_argument("--engine", choices=["static", "dynamic", "both"])
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("sweep-dt", help="rerun one scenario list over several step sizes")
    _study_flags(p)
    p.add_argument("--dts", type=float, nargs="+", default=[0.01, 0.05, 0.1, 0.3])
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("compare", help="compare persisted static and dynamic studies")
    p.add_argument("--static-dir", required=True)
    p.add_argument("--dynamic-dir", required=True)
    p.add_argument("--case")
    p.add_argument("--dynamic")
    p.add_argument("--out")
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("metrics", help="recompute metrics from persisted logs")
    p.add_argument("--dir", required=True, help="study output directory")
    p.add_argument("--engine", choices=["static", "dynamic"], default="dynamic")
    p.add_argument("--case")
    p.add_argument("--dynamic")
    p.add_argument("--alpha", type=float, action="append")
    p.add_argument("--seed", type=int, help="seed of the convergence orderings (default: the study's)")
    p.add_argument("--out", help="directory for recomputed report files")
    p.set_defaults(func=cmd_metrics)

    p = sub.add_parser("sample", help="emit an N-2 scenario list")
    p.add_argument("--case")
    p.add_argument("--dynamic")
    p.add_argument("--count", type=int, default=100)
    p.add_argument("--seed", type=int, default=42)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sample)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (GridCascadeError, ValueError, OSError) as exc:
        log.error("%s", exc)
        return 1


if __name__ == "__main__":
    sys.exit(main())
