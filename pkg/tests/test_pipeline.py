import json
import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from airsea.pipeline import (AXES, STRATEGIES, audit_mission, dispersion, emit_outputs, gaussian_layout,
                             run_strategy, sweep, sweep_scenario, validate)
from airsea.scenario import CurrentField, table_one

import oracles

pytestmark = pytest.mark.slow

THREE = [[120.0, 140.0], [170.0, 160.0], [150.0, 100.0]]


@pytest.fixture(scope="module")
def single():
    s = table_one([[150.0, 150.0]])
    return {name: run_strategy(name, s, 0) for name in ("proposed", "sequential")}


@pytest.fixture(scope="module")
def three():
    s = table_one(THREE, obstacles=[[60.0, 75.0]], current=CurrentField("analytic-wave", 1.0))
    return {name: run_strategy(name, s, 0) for name in STRATEGIES}


def test_smallest_mission(single):
    r = single["proposed"]
    assert r.plan.num_hover == 1
    assert set(np.unique(r.trajectory.mode)) == {"F", "H"}
    assert r.audit["passed"], r.audit
    # flight in, hover, flight out
    changes = np.flatnonzero(r.trajectory.mode[1:] != r.trajectory.mode[:-1])
    assert len(changes) == 2


def test_single_target_strategies_coincide(single):
    p, s = single["proposed"], single["sequential"]
    np.testing.assert_allclose(p.plan.hover_points, s.plan.hover_points, atol=0.5)
    assert p.total_energy == pytest.approx(s.total_energy, rel=1e-3)


def test_three_target_missions_audit(three):
    for name, r in three.items():
        assert r.audit["passed"], (name, r.audit)
        assert r.metrics()["total_J"] == pytest.approx(r.total_energy)
    assert three["sequential"].plan.num_hover == 3


def test_energy_matches_independent_resummation(three):
    for r in three.values():
        assert r.total_energy == pytest.approx(oracles.resum_energy(r.trajectory, r.beams, r.scenario), rel=1e-9)


def test_sequential_hovers_above_targets(three):
    r = three["sequential"]
    targets = r.scenario.world.targets
    for e in range(r.plan.num_hover):
        k = r.plan.targets_of(e)
        assert len(k) == 1
        np.testing.assert_allclose(r.plan.hover_points[e, :2], targets[k[0]], atol=1e-6)


def test_metrics_fields(three):
    m = three["proposed"].metrics()
    for key in ("total_J", "uav_propulsion_J", "uav_transmit_J", "usv_propulsion_J", "duration_s",
                "num_hover_points", "comm_distance_m", "per_stage"):
        assert key in m
    assert m["comm_distance_m"] == pytest.approx(3248.372076081364)


def test_emit_and_validate_round_trip(three, tmp_path):
    r = three["proposed"]
    paths = emit_outputs(r, tmp_path)
    assert {p.name for p in paths.values()} >= {"trajectory.csv", "beams.json", "metrics.json", "audit.json"}
    report = validate(tmp_path)
    assert report["passed"], report
    assert report["total_J"] == pytest.approx(r.total_energy, rel=1e-9)


def test_validate_detects_tampering(three, tmp_path):
    emit_outputs(three["proposed"], tmp_path)
    beams = json.loads((tmp_path / "beams.json").read_text())
    hover = [s for s in beams["slots"] if s["sense"]]
    hover[0]["comm"] = [[0.0, 0.0]] * len(hover[0]["comm"])
    (tmp_path / "beams.json").write_text(json.dumps(beams))
    report = validate(tmp_path)
    assert not report["passed"]
    assert report["families"]["rate_hover"] > 1.0


def test_validate_detects_energy_mismatch(three, tmp_path):
    emit_outputs(three["sequential"], tmp_path)
    m = json.loads((tmp_path / "metrics.json").read_text())
    m["total_J"] *= 0.9
    (tmp_path / "metrics.json").write_text(json.dumps(m))
    assert not validate(tmp_path)["passed"]


def test_audit_flags_obstacle_violation(three):
    r = three["proposed"]
    sc = r.scenario
    usv = r.trajectory.usv.copy()
    obstacle = sc.world.obstacles[0]
    usv[len(usv) // 2] = obstacle + [1.0, 0.0]
    bad = audit_mission(replace(r.trajectory, usv=usv), r.beams, sc)
    assert bad["families"]["obstacle_clearance"] == pytest.approx(sc.system.obstacle_radius - 1.0)


def test_leader_ignores_current():
    s = table_one(THREE)
    a = run_strategy("leader-follower", s.replace(current=CurrentField("analytic-wave", 2.0)), 0)
    b = run_strategy("leader-follower", s.replace(current=CurrentField("analytic-wave", -2.0)), 0)
    np.testing.assert_array_equal(a.trajectory.uav, b.trajectory.uav)
    assert a.energy.usv_propulsion != b.energy.usv_propulsion


def test_unknown_strategy():
    with pytest.raises(ValueError):
        run_strategy("greedy", table_one([[1.0, 1.0]]))


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.floats(5.0, 60.0), st.integers(0, 2**31))
def test_gaussian_layout_exact_dispersion(k, sigma, seed):
    pts = gaussian_layout(k, sigma, np.random.default_rng(seed))
    assert dispersion(pts) == pytest.approx(sigma, rel=1e-12)
    assert np.all((pts >= 0) & (pts <= 300))


def test_layout_respects_obstacles():
    obstacles = [[150.0, 150.0]]
    pts = gaussian_layout(15, 40.0, np.random.default_rng(1), obstacles=obstacles, clearance=10.0)
    assert np.min(np.linalg.norm(pts - obstacles[0], axis=1)) >= 10.0


def test_sweep_scenario_axes():
    tmpl = table_one([[150.0, 150.0]])
    a = sweep_scenario(tmpl, "gamma_s_db", 5.0, 3)
    b = sweep_scenario(tmpl, "Z", 4, 3)
    np.testing.assert_array_equal(a.world.targets, b.world.targets)
    assert a.requirements.inst_snr == pytest.approx(10 ** 0.5)
    assert b.system.max_simultaneous_targets == 4
    assert sweep_scenario(tmpl, "K", 7, 0).world.num_targets == 7
    assert dispersion(sweep_scenario(tmpl, "sigma", 30.0, 0).world.targets) == pytest.approx(30.0)
    assert sweep_scenario(tmpl, "current", -3.0, 0).current.max_speed == -3.0
    assert sweep_scenario(tmpl, "gamma_c", 10.0, 0).requirements.rate_hover == 10.0
    assert set(AXES) == {"K", "sigma", "gamma_s_db", "gamma_c", "Z", "current"}
    with pytest.raises(ValueError):
        sweep_scenario(tmpl, "altitude", 1.0, 0)


def test_sweep_table():
    rows = sweep(table_one([[150.0, 150.0]]), "K", [1, 2], 2, ("proposed",), sigma=20.0)
    assert [r["value"] for r in rows] == [1, 2]
    for r in rows:
        assert r["runs"] == 2 and r["audit_passed"]
        assert r["energy_mean_J"] > 0 and r["energy_sd_J"] >= 0
        assert math.isfinite(r["duration_mean_s"])
