"""Compare the compiled and pure-Python integration kernels.

    python3 benchmarks/bench_kernel.py [--case grid200] [--scenarios 20] [--dt 0.1]

Times two workloads per backend: a relay-free 60 s integration after a load
step, and a batch of N-2 cascades. Both backends must produce the same events.
"""

import argparse
import time

from gridcascade.cases import load_bundled
from gridcascade.dynamics import DynConfig, init_dynamic, run_dynamic_cascade, simulate
from gridcascade.kernel import BACKENDS
from gridcascade.powerflow import solve_base_case
from gridcascade.study import sample_scenarios


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--case", default="grid200")
    ap.add_argument("--scenarios", type=int, default=20)
    ap.add_argument("--dt", type=float, default=0.1)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()

    net = load_bundled(args.case)
    base = solve_base_case(net)
    scen = sample_scenarios(net, args.scenarios, 42)
    st0 = init_dynamic(net, base)
    st0.step_load(net.loads[0].id, 0.2)
    print(f"case {args.case}: {len(net.buses)} buses, {len(net.generators)} machines, dt={args.dt}")
    print(f"{'backend':>8} {'swing 60 s':>12} {'cascades':>12} {'per scenario':>14}")

    timings, events = {}, {}
    for name in sorted(BACKENDS):
        t_sim, _ = best_of(lambda: simulate(st0, 60.0, args.dt, backend=name, record=False), args.repeat)
        cfg = DynConfig(dt=args.dt, backend=name)
        t_cas, res = best_of(lambda: [run_dynamic_cascade(net, s.outage_pair, cfg, base=base) for s in scen],
                             args.repeat)
        timings[name] = (t_sim, t_cas)
        events[name] = [[(e.time, e.kind, e.element) for e in r.events] for r in res]
        print(f"{name:>8} {t_sim:>11.4f}s {t_cas:>11.3f}s {t_cas / len(scen) * 1e3:>12.1f}ms")

    if len(timings) == 2:
        py, cy = timings["python"], timings["cython"]
        print(f"speed-up: swing {py[0] / cy[0]:.1f}x, cascades {py[1] / cy[1]:.1f}x")
        print("event logs identical:", events["python"] == events["cython"])
    else:
        print("compiled kernel not built; only the fallback was timed")


if __name__ == "__main__":
    main()
