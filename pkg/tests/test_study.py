import dataclasses
import logging
import math
from pathlib import Path

import numpy as np
import pytest

from gridcascade.cases import bundled_case_paths
from gridcascade.errors import EmptyStudy, ScenarioMismatch
from gridcascade.study import (ScenarioSpec, StudyConfig, compare_models, convergence_curve, read_scenarios,
                               recompute_report, report_files, run_study, sample_scenarios, sweep_dt,
                               write_scenarios)

from conftest import make_net

M_PATH, Y_PATH = (str(p) for p in bundled_case_paths("grid30"))


def config(tmp_path, **kw):
    base = dict(case_path=M_PATH, dynamic_path=Y_PATH, scenario_count=12, seed=5, dt=0.1,
                output_dir=str(tmp_path), workers=1)
    base.update(kw)
    return StudyConfig(**base)


def tree(path: Path) -> dict[str, bytes]:
    skip = ("timing_", "config.yaml", "journal_")
    return {p.name: p.read_bytes() for p in sorted(path.iterdir())
            if p.is_file() and not p.name.startswith(skip)}


# --- sampling -----------------------------------------------------------------

def test_sampling_is_deterministic_and_distinct(bundled):
    a = sample_scenarios(bundled, 50, 42)
    assert a == sample_scenarios(bundled, 50, 42)
    assert a != sample_scenarios(bundled, 50, 43)
    pairs = [s.outage_pair for s in a]
    assert len(set(pairs)) == 50
    assert all(x < y for x, y in pairs)
    assert [s.scenario_id for s in a] == list(range(50))


def test_oversized_request_enumerates_all_pairs(caplog):
    net = make_net(3, [(1, 2, 0.1), (2, 3, 0.1), (1, 3, 0.1)])
    with caplog.at_level(logging.WARNING):
        scen = sample_scenarios(net, 10, 0)
    assert sorted(s.outage_pair for s in scen) == [(1, 2), (1, 3), (2, 3)]
    assert "only 3" in caplog.text


def test_sampling_needs_two_branches():
    with pytest.raises(EmptyStudy):
        sample_scenarios(make_net(2, [(1, 2, 0.1)]), 5, 0)


def test_scenario_file_round_trip(tmp_path, bundled):
    scen = sample_scenarios(bundled, 7, 1)
    write_scenarios(tmp_path / "s.csv", scen)
    assert read_scenarios(tmp_path / "s.csv") == scen
    with pytest.raises(ValueError):
        ScenarioSpec(0, (3, 3))


def test_config_validation(tmp_path):
    with pytest.raises(ValueError):
        config(tmp_path, engine="rms")
    with pytest.raises(ValueError):
        config(tmp_path, alphas=(1.0,))
    with pytest.raises(ValueError):
        config(tmp_path, dt=0.0)
    with pytest.raises(ValueError):
        StudyConfig.from_mapping({"case_path": M_PATH, "bogus": 1})
    cfg = config(tmp_path)
    assert StudyConfig.from_mapping(cfg.to_mapping()) == cfg


# --- runs -----------------------------------------------------------------------

@pytest.fixture(scope="module")
def static_dynamic(tmp_path_factory):
    out = tmp_path_factory.mktemp("both")
    res = run_study(config(out, engine="both", scenario_count=20))
    return out, res


def test_paired_study_writes_reports(static_dynamic, bundled):
    out, res = static_dynamic
    for e in ("static", "dynamic"):
        for name in ("metrics", "ccdf_loss", "ccdf_outages", "lambda", "distance", "convergence"):
            assert (out / f"{name}_{e}.csv").exists()
        assert (out / f"events_{e}.jsonl").exists()
    for name in ("paired", "summary", "lambda", "distance"):
        assert (out / f"compare_{name}.csv").exists()
    total = bundled.total_demand_mw
    for rep in (res.static, res.dynamic):
        assert all(0.0 <= x <= total for x in rep.losses)
        assert all(r.demand_lost == total for r in rep.results if r.blackout)
        assert rep.edns == pytest.approx(math.fsum(rep.losses) / len(rep.losses), rel=1e-12)
        assert rep.cvar[0.95] >= rep.var[0.95]
    assert len(res.comparison["rows"]) == 20


def test_replay_identity(static_dynamic, bundled):
    out, res = static_dynamic
    for rep in (res.static, res.dynamic):
        again = recompute_report(out, rep.engine, bundled)
        assert report_files(again) == report_files(rep)


def test_compare_rejects_mismatched_lists(static_dynamic):
    _, res = static_dynamic
    other = dataclasses.replace(res.dynamic, scenarios=res.dynamic.scenarios[:-1])
    with pytest.raises(ScenarioMismatch):
        compare_models(res.static, other)


def test_parallel_run_is_byte_identical(tmp_path):
    run_study(config(tmp_path / "one", workers=1))
    run_study(config(tmp_path / "two", workers=2))
    a, b = tree(tmp_path / "one"), tree(tmp_path / "two")
    assert a.keys() == b.keys() and a == b


def test_resume_skips_journalled_scenarios(tmp_path, monkeypatch):
    cfg = config(tmp_path, scenario_count=6)
    first = run_study(cfg)
    import gridcascade.study as study

    calls = []
    real = study._run_one
    monkeypatch.setattr(study, "_run_one", lambda *a: calls.append(a) or real(*a))
    again = run_study(cfg)
    assert calls == []
    assert report_files(again) == report_files(first)
    # a larger study reuses the six finished scenarios
    run_study(dataclasses.replace(cfg, scenario_count=8))
    assert len(calls) == 2
    calls.clear()
    run_study(dataclasses.replace(cfg, resume=False))
    assert len(calls) == 6


def test_bad_scenarios_rejected(tmp_path):
    cfg = config(tmp_path)
    with pytest.raises(EmptyStudy):
        run_study(cfg, [])
    with pytest.raises(ValueError):
        run_study(cfg, [ScenarioSpec(0, (1, 999))])
    with pytest.raises(ValueError):
        run_study(cfg, [ScenarioSpec(0, (1, 2)), ScenarioSpec(1, (1, 2))])


def test_convergence_curves_end_at_edns():
    losses = np.arange(10.0)
    curves = convergence_curve(losses, 4, 0)
    assert curves.shape == (4, 10)
    np.testing.assert_allclose(curves[:, -1], 4.5)
    assert not np.array_equal(curves[0], curves[1])
    with pytest.raises(ValueError):
        convergence_curve([1.0], 3, 0)


def test_sweep_writes_table(tmp_path):
    rows = sweep_dt(config(tmp_path, scenario_count=5), [0.1, 0.3])
    assert [r[0] for r in rows] == [0.1, 0.3]
    text = (tmp_path / "sweep_dt.csv").read_text().splitlines()
    assert text[0].startswith("dt_s,edns_mw,var95_mw,cvar95_mw")
    assert len(text) == 3
