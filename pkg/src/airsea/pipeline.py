"""End-to-end missions, the two baselines, auditing, sweeps and file output."""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .channel import (comm_distance_threshold, flying_rate, hover_rate, lift, sensing_distance_threshold,
                      sensing_snr)
from .conic import SurrogateInfeasible
from .energy import PowerBreakdown, account_trajectory, slot_energies
from .hover import (HoverPlan, cost_matrix, refine_hover_plan, sensing_radii, singleton_assignment,
                    solve_visit_order, vbsc_cluster)
from .scenario import CurrentField, Scenario, World, db_to_linear, load_scenario, save_scenario
from .stage import (StageInfeasible, StageProblem, StageSolution, alternate_optimize_hover, sensing_rounds,
                    optimize_flying, optimize_follower_usv, optimize_hover_beams, _flying_beams,
                    _hover_schedule)
from .trajectory import FLY, HOVER, BeamformingSchedule, Trajectory

log = logging.getLogger(__name__)

STRATEGIES = ("proposed", "sequential", "leader-follower")
AUDIT_TOL = 1e-6


@dataclass
class MissionResult:
    strategy: str
    seed: int
    scenario: Scenario
    plan: HoverPlan
    trajectory: Trajectory
    beams: BeamformingSchedule
    energy: PowerBreakdown
    audit: dict
    timings: dict = field(default_factory=dict)
    histories: dict = field(default_factory=dict)
    notes: list = field(default_factory=list)

    @property
    def total_energy(self) -> float:
        return self.energy.total

    @property
    def duration(self) -> float:
        return self.trajectory.num_slots * self.trajectory.delta

    def metrics(self) -> dict:
        sp, req = self.scenario.system, self.scenario.requirements
        mode = self.trajectory.mode
        out = self.energy.to_dict()
        out.update({
            "strategy": self.strategy,
            "seed": self.seed,
            "num_slots": int(self.trajectory.num_slots),
            "flying_slots": int(np.sum(mode == FLY)),
            "hovering_slots": int(np.sum(mode == HOVER)),
            "duration_s": self.duration,
            "num_hover_points": self.plan.num_hover,
            "comm_distance_m": comm_distance_threshold(req.rate_fly, sp.comm_power, sp),
            "sensing_distance_m": sensing_distance_threshold(req.inst_snr, sp.sense_power, sp),
        })
        return out


# -- auditing ----------------------------------------------------------------

def audit_mission(traj: Trajectory, beams: BeamformingSchedule, scenario: Scenario) -> dict:
    """Max violation per constraint family, recomputed from the per-slot data alone."""
    sp, req = scenario.system, scenario.requirements
    w = scenario.world
    n = traj.num_slots
    q3 = traj.uav3()
    fams = {k: 0.0 for k in ("rate_fly", "rate_hover", "sensing_total", "power_budget",
                             "obstacle_clearance", "uav_speed", "usv_speed", "sync_start", "sync_end",
                             "schedule", "altitude")}
    if len(beams.comm) != n:
        raise ValueError("beam schedule and trajectory disagree on slot count")
    snr_sum = np.zeros(w.num_targets)
    for i in range(n):
        q, b = q3[i + 1], lift(traj.usv[i + 1])
        if traj.mode[i] == FLY:
            r = flying_rate(q, b, beams.comm[i], sp)
            fams["rate_fly"] = max(fams["rate_fly"], req.rate_fly - r)
        else:
            act = beams.active[i]
            r = hover_rate(q, b, beams.comm[i], beams.sense[i], act, sp)
            fams["rate_hover"] = max(fams["rate_hover"], req.rate_hover - r)
            for k in np.flatnonzero(act):
                snr_sum[k] += sensing_snr(q, lift(w.targets[k]), k, beams.sense[i], beams.combine[i, k], act, sp)
    if req.total_snr > 0:
        fams["sensing_total"] = float(np.max(1.0 - snr_sum / req.total_snr, initial=0.0))
    sensed = np.any(beams.active[traj.mode == HOVER], axis=0) if n else np.zeros(w.num_targets, bool)
    fams["schedule"] = float(np.sum(~sensed))
    power = beams.comm_power() + beams.sense_power()
    fams["power_budget"] = float(np.max(power - sp.power_budget, initial=0.0))
    if len(w.obstacles):
        d = np.linalg.norm(traj.usv[:, None, :] - w.obstacles[None], axis=2)
        fams["obstacle_clearance"] = float(max(0.0, sp.obstacle_radius - d.min()))
    fams["uav_speed"] = float(np.max(traj.uav_speeds() - sp.uav_max_speed, initial=0.0))
    fams["usv_speed"] = float(np.max(np.linalg.norm(traj.usv_velocities(), axis=1) - sp.usv_max_speed,
                                     initial=0.0))
    fams["sync_start"] = float(max(np.linalg.norm(traj.uav[0] - w.uav_start),
                                   np.linalg.norm(traj.usv[0] - w.usv_start)))
    fams["sync_end"] = float(max(np.linalg.norm(traj.uav[-1] - w.uav_end),
                                 np.linalg.norm(traj.usv[-1] - w.usv_end)))
    fams["altitude"] = abs(traj.altitude - sp.altitude)
    fams = {k: max(0.0, float(v)) for k, v in fams.items()}
    return {"families": fams, "tolerance": AUDIT_TOL,
            "passed": all(v <= AUDIT_TOL for v in fams.values())}


# -- stage assembly ----------------------------------------------------------

def stage_problems(plan: HoverPlan, scenario: Scenario) -> list[StageProblem]:
    """Flying/hovering stage problems in mission order; stage e shares its id with its hover."""
    w = scenario.world
    q = plan.uav_waypoints()
    b = plan.usv_anchors()
    out = []
    for e in range(plan.num_hover + 1):
        out.append(StageProblem(e + 1, FLY, q[e], q[e + 1], b[2 * e], b[2 * e + 1], int(plan.fly_slots[e])))
        if e < plan.num_hover:
            idx = plan.targets_of(e)
            out.append(StageProblem(e + 1, HOVER, q[e + 1], q[e + 1], b[2 * e + 1], b[2 * e + 2],
                                    int(plan.hover_slots[e]), idx, w.targets[idx], groups=plan.groups_of(e)))
    return out


def _assemble(solutions: list[StageSolution]) -> tuple[Trajectory, BeamformingSchedule]:
    parts = [s for s in solutions if s.trajectory.num_slots > 0]
    if not parts:
        parts = solutions[:1]
    return (Trajectory.concatenate([s.trajectory for s in parts]),
            BeamformingSchedule.concatenate([s.beams for s in parts]))


def _configure(scenario: Scenario, tol: float | None, max_iters: int | None) -> Scenario:
    changes = {}
    if tol is not None:
        changes["sca_tolerance"] = float(tol)
    if max_iters is not None:
        changes["max_iterations"] = int(max_iters)
    return scenario.replace(**changes) if changes else scenario


def _finish(strategy, seed, scenario, plan, solutions, timings, histories, notes) -> MissionResult:
    t0 = time.perf_counter()
    traj, beams = _assemble(solutions)
    energy = account_trajectory(traj, beams, scenario.current, scenario.system)
    audit = audit_mission(traj, beams, scenario)
    timings["accounting_s"] = time.perf_counter() - t0
    for s in solutions:
        histories.setdefault("stages", []).append(
            {"stage": s.problem.index, "mode": s.problem.kind, "history": list(s.history)})
        notes += [f"stage {s.problem.index}{s.problem.kind}: {n}" for n in s.notes]
    return MissionResult(strategy, seed, scenario, plan, traj, beams, energy, audit, timings, histories, notes)


def _optimize_stages(plan: HoverPlan, scenario: Scenario, seed: int, notes: list) -> list[StageSolution]:
    rng = np.random.default_rng(seed)
    out = []
    for stage in stage_problems(plan, scenario):
        if stage.kind == FLY:
            out.append(optimize_flying(stage, scenario))
            continue
        base = stage.num_slots
        while True:
            try:
                out.append(alternate_optimize_hover(stage, scenario, rng=rng))
                break
            except StageInfeasible as exc:
                if stage.num_slots >= 4 * base + 8:
                    raise StageInfeasible(f"stage {stage.index}: {exc}") from exc
                stage.num_slots += max(1, math.ceil(0.25 * stage.num_slots))
        if stage.num_slots != base:
            notes.append(f"stage {stage.index}: hovering extended from {base} to {stage.num_slots} slots")
            plan.hover_slots[stage.index - 1] = stage.num_slots
    return out


FLOOR_MARGIN = 1.2


def hover_slot_floor(plan: HoverPlan, scenario: Scenario) -> tuple[np.ndarray, list]:
    """Hovering slots per stage for which the sensing beams are feasible, with the sensing rotation.

    Multi-slot needs get a margin over the feasibility boundary, where the
    beamforming programs are poorly conditioned.
    """
    w = scenario.world
    need, rounds = [], []
    for e in range(plan.num_hover):
        idx = plan.targets_of(e)
        anchors = np.vstack([plan.usv_fly_end[e], plan.usv_hover_end[e]])
        n, groups = sensing_rounds(plan.hover_points[e, :2], w.targets[idx], scenario, FLOOR_MARGIN, anchors)
        need.append(n)
        rounds.append([idx[g].tolist() for g in groups])
    return np.array(need, int), rounds


def plan_hovers(assignment, order, scenario: Scenario, notes: list, rounds: int = 3,
                runs: list | None = None, **kw) -> HoverPlan:
    """Refine the hover plan, re-refining with interference-aware hover floors until they hold.

    Each refinement's objective history is appended to ``runs``; a new floor
    restarts the descent, so the runs are not one monotone sequence.
    """
    runs = [] if runs is None else runs
    plan = refine_hover_plan(assignment, order, scenario, **kw)
    runs.append(list(plan.history))
    need, groups = hover_slot_floor(plan, scenario)
    floor = np.zeros(plan.num_hover, int)
    for _ in range(rounds):
        if np.all(need <= plan.hover_slots):
            break
        floor = np.maximum(floor, need)
        notes.append("hover floors for cross-target interference: " + ", ".join(map(str, floor)))
        plan = refine_hover_plan(assignment, order, scenario,
                                 min_hover_time=floor * scenario.system.slot_duration, **kw)
        runs.append(list(plan.history))
        need, groups = hover_slot_floor(plan, scenario)
    plan.hover_slots = np.maximum(plan.hover_slots, need)
    plan.rounds = groups
    rotated = [f"{e + 1}:{len(g)}" for e, g in enumerate(groups) if len(g) > 1]
    if rotated:
        notes.append("targets sensed in turn (stage:groups) " + ", ".join(rotated))
    return plan


def _ordered(assignment, scenario, uav_only=False):
    w = scenario.world
    nodes = np.vstack([w.uav_start, assignment.centroids, w.uav_end])
    cm = cost_matrix(nodes, scenario.current, scenario.system, uav_only=uav_only)
    return solve_visit_order(cm, "exact-dp" if len(nodes) <= 20 else "milp")


def run_proposed(scenario: Scenario, seed: int = 0, tol: float | None = None,
                 max_iters: int | None = None) -> MissionResult:
    scenario = _configure(scenario, tol, max_iters)
    sp = scenario.system
    timings = {}
    t0 = time.perf_counter()
    assignment = vbsc_cluster(scenario.world.targets, sensing_radii(scenario), sp.max_simultaneous_targets,
                              seed, altitude=sp.altitude)
    order = _ordered(assignment, scenario)
    timings["clustering_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    notes = []
    runs = []
    plan = plan_hovers(assignment, order, scenario, notes, runs=runs)
    timings["refinement_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    solutions = _optimize_stages(plan, scenario, seed, notes)
    timings["stages_s"] = time.perf_counter() - t0
    return _finish("proposed", seed, scenario, plan, solutions, timings, {"refinement": runs}, notes)


def run_sequential(scenario: Scenario, seed: int = 0, tol: float | None = None,
                   max_iters: int | None = None) -> MissionResult:
    """Baseline: one hover point directly above every target."""
    scenario = _configure(scenario, tol, max_iters)
    timings = {}
    t0 = time.perf_counter()
    assignment = singleton_assignment(scenario.world.targets)
    order = _ordered(assignment, scenario)
    timings["clustering_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    notes = []
    runs = []
    plan = plan_hovers(assignment, order, scenario, notes, runs=runs, fixed_hover=True)
    timings["refinement_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    solutions = _optimize_stages(plan, scenario, seed, notes)
    timings["stages_s"] = time.perf_counter() - t0
    return _finish("sequential", seed, scenario, plan, solutions, timings, {"refinement": runs}, notes)


def _stretch(plan: HoverPlan, factor: float) -> HoverPlan:
    from dataclasses import replace

    fly = np.where(plan.fly_slots > 0, np.ceil(plan.fly_slots * factor - 1e-9), 0).astype(int)
    hov = np.ceil(plan.hover_slots * factor - 1e-9).astype(int)
    return replace(plan, fly_slots=fly, hover_slots=hov)


def _leader_path(plan: HoverPlan, scenario: Scenario) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Constant-speed UAV path through the plan; returns (positions, modes, stage ids)."""
    q = plan.uav_waypoints()
    rows = [q[:1]]
    modes, stages = [], []
    for e in range(plan.num_hover + 1):
        n = int(plan.fly_slots[e])
        if n:
            s = np.arange(1, n + 1)[:, None] / n
            rows.append(q[e] + s * (q[e + 1] - q[e]))
            modes += [FLY] * n
            stages += [e + 1] * n
        if e < plan.num_hover:
            n = int(plan.hover_slots[e])
            rows.append(np.tile(q[e + 1], (n, 1)))
            modes += [HOVER] * n
            stages += [e + 1] * n
    return np.vstack(rows), np.array(modes), np.array(stages, int)


def run_leader_follower(scenario: Scenario, seed: int = 0, tol: float | None = None,
                        max_iters: int | None = None) -> MissionResult:
    """Baseline: the UAV plans alone, then the USV follows within communication range."""
    scenario = _configure(scenario, tol, max_iters)
    sp, req = scenario.system, scenario.requirements
    w = scenario.world
    timings, notes = {}, []
    t0 = time.perf_counter()
    assignment = vbsc_cluster(w.targets, sensing_radii(scenario), sp.max_simultaneous_targets, seed,
                              altitude=sp.altitude)
    order = _ordered(assignment, scenario, uav_only=True)
    timings["clustering_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    runs = []
    leader = plan_hovers(assignment, order, scenario, notes, runs=runs, uav_only=True)
    timings["refinement_s"] = time.perf_counter() - t0
    t0 = time.perf_counter()
    comm_range = comm_distance_threshold(min(req.rate_fly, req.rate_hover) if min(req.rate_fly, req.rate_hover) > 0
                                         else max(req.rate_fly, req.rate_hover, 1e-9), sp.comm_power, sp)
    factor = 1.0
    base_slots = leader.num_slots
    need = np.linalg.norm(w.usv_end - w.usv_start) / (sp.usv_max_speed * sp.slot_duration)
    if base_slots and need > base_slots:
        factor = need / base_slots
    plan = _stretch(leader, factor)
    B = None
    for attempt in range(40):
        uav, modes, stages = _leader_path(plan, scenario)
        try:
            B, hist = optimize_follower_usv(uav, w.usv_start, w.usv_end, scenario, comm_range)
            if np.all(np.linalg.norm(np.diff(B, axis=0), axis=1) <= sp.usv_max_speed * sp.slot_duration * (1 + 1e-9)):
                break
        except SurrogateInfeasible:
            pass
        factor *= 1.1
        notes.append(f"timeline stretched by {factor:.3f} for the follower")
        plan = _stretch(leader, factor)
        B = None
    if B is None:
        raise RuntimeError("follower USV infeasible even after stretching the leader timeline")
    if factor > 1.0:
        notes.append(f"leader timeline stretched by factor {factor:.4f}")
    # anchors of the stretched plan follow the realised USV path
    bounds = np.concatenate([[0], np.cumsum(np.ravel(np.column_stack(
        [plan.fly_slots[:-1], plan.hover_slots])))]) if plan.num_hover else np.array([0])
    plan.usv_fly_end = B[bounds[1::2]] if plan.num_hover else plan.usv_fly_end
    plan.usv_hover_end = B[bounds[2::2]] if plan.num_hover else plan.usv_hover_end
    traj = Trajectory(uav, B, modes, stages, sp.slot_duration, sp.altitude)
    beams = BeamformingSchedule.empty(traj.num_slots, w.num_targets, sp.num_antennas)
    fly = np.flatnonzero(modes == FLY)
    rng = np.random.default_rng(seed)
    if len(fly):
        fb = _flying_beams(np.vstack([uav[fly[0]:fly[0] + 1], uav[fly + 1]]),
                           np.vstack([B[fly[0]:fly[0] + 1], B[fly + 1]]), scenario, req.rate_fly)
        beams.comm[fly] = fb.comm
    for e in range(plan.num_hover):
        idx = np.flatnonzero((modes == HOVER) & (stages == e + 1))
        problem = StageProblem(e + 1, HOVER, uav[idx[0]], uav[idx[0]], B[idx[0]], B[idx[-1] + 1],
                               len(idx), plan.targets_of(e), w.targets[plan.targets_of(e)])
        slots = optimize_hover_beams(uav[idx[0] + 1], B[idx + 1], problem.target_positions, scenario,
                                     len(idx), rng, plan.groups_of(e))
        sched = _hover_schedule(problem, slots, scenario)
        beams.comm[idx], beams.sense[idx] = sched.comm, sched.sense
        beams.active[idx], beams.combine[idx] = sched.active, sched.combine
    timings["stages_s"] = time.perf_counter() - t0
    energy = account_trajectory(traj, beams, scenario.current, sp)
    audit = audit_mission(traj, beams, scenario)
    return MissionResult("leader-follower", seed, scenario, plan, traj, beams, energy, audit, timings,
                         {"refinement": runs, "follower": hist}, notes)


RUNNERS = {"proposed": run_proposed, "sequential": run_sequential, "leader-follower": run_leader_follower}


def run_strategy(name: str, scenario: Scenario, seed: int = 0, **kw) -> MissionResult:
    try:
        runner = RUNNERS[name]
    except KeyError:
        raise ValueError(f"unknown strategy {name!r}; choose from {STRATEGIES}") from None
    return runner(scenario, seed, **kw)


# -- layouts and sweeps ------------------------------------------------------

def gaussian_layout(num_targets: int, sigma: float, rng: np.random.Generator,
                    field_size=(300.0, 300.0), obstacles=(), clearance: float = 0.0,
                    max_tries: int = 10_000) -> np.ndarray:
    """Gaussian targets around the field centre with dispersion exactly ``sigma``.

    Dispersion is sqrt(sum |t_k - mean|^2 / (K - 1)).  Draws that leave the
    field or come within ``clearance`` of an obstacle after rescaling are
    rejected and redrawn.
    """
    size = np.asarray(field_size, float)
    centre = size / 2
    obstacles = np.asarray(obstacles, float).reshape(-1, 2)
    for _ in range(max_tries):
        pts = centre + rng.normal(scale=sigma / math.sqrt(2), size=(num_targets, 2))
        if num_targets > 1:
            mean = pts.mean(axis=0)
            spread = math.sqrt(np.sum((pts - mean) ** 2) / (num_targets - 1))
            if spread == 0:
                continue
            pts = mean + (pts - mean) * (sigma / spread)
        if np.any(pts < 0) or np.any(pts > size):
            continue
        if len(obstacles) and np.min(np.linalg.norm(pts[:, None] - obstacles[None], axis=2)) < clearance:
            continue
        return pts
    raise RuntimeError("could not place targets inside the field")


def dispersion(points) -> float:
    pts = np.asarray(points, float)
    return float(math.sqrt(np.sum((pts - pts.mean(axis=0)) ** 2) / (len(pts) - 1)))


AXES = ("K", "sigma", "gamma_s_db", "gamma_c", "Z", "current")


def sweep_scenario(template: Scenario, axis: str, value, seed: int, num_targets: int = 15,
                   sigma: float = 50.0, field_size=(300.0, 300.0)) -> Scenario:
    """Scenario for one (axis value, seed) cell; the layout depends on the seed only."""
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {AXES}")
    K = int(value) if axis == "K" else num_targets
    s = float(value) if axis == "sigma" else sigma
    rng = np.random.default_rng(seed)
    w = template.world
    targets = gaussian_layout(K, s, rng, field_size, w.obstacles, template.system.obstacle_radius)
    world = World.build(targets, w.obstacles, w.uav_start, w.uav_end, w.usv_start, w.usv_end)
    sc = template.replace(world=world)
    if axis == "gamma_s_db":
        inst = db_to_linear(float(value))
        sc = sc.replace(inst_snr=inst, total_snr=max(sc.requirements.total_snr, inst))
    elif axis == "gamma_c":
        sc = sc.replace(rate_fly=float(value), rate_hover=float(value))
    elif axis == "Z":
        sc = sc.replace(max_simultaneous_targets=int(value))
    elif axis == "current":
        sc = sc.replace(current=CurrentField("analytic-wave", float(value)))
    return sc


def _sweep_cell(args):
    template, axis, value, seed, strategies, num_targets, sigma, field_size, run_kw = args
    sc = sweep_scenario(template, axis, value, seed, num_targets, sigma, field_size)
    out = []
    for s in strategies:
        r = run_strategy(s, sc, seed, **run_kw)
        out.append((s, r.total_energy, r.duration, r.plan.num_hover, bool(r.audit["passed"])))
    return value, out


def sweep(template: Scenario, axis: str, values, seeds, strategies=("proposed",), num_targets: int = 15,
          sigma: float = 50.0, field_size=(300.0, 300.0), workers: int = 1, **run_kw) -> list[dict]:
    """Mean and standard deviation of energy, duration and hover count per (value, strategy).

    Cells (value, seed) are independent; ``workers > 1`` runs them in a process pool.
    """
    if axis not in AXES:
        raise ValueError(f"unknown sweep axis {axis!r}; choose from {AXES}")
    seeds = list(range(seeds)) if isinstance(seeds, int) else list(seeds)
    cells = [(template, axis, v, seed, tuple(strategies), num_targets, sigma, field_size, run_kw)
             for v in values for seed in seeds]
    if workers > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(workers) as pool:
            done = list(pool.map(_sweep_cell, cells))
    else:
        done = [_sweep_cell(c) for c in cells]
    rows = []
    for value in values:
        for s in strategies:
            runs = [r for v, out in done if v == value for r in out if r[0] == s]
            e = np.array([r[1] for r in runs])
            d = np.array([r[2] for r in runs])
            h = np.array([r[3] for r in runs])
            rows.append({"axis": axis, "value": value, "strategy": s, "runs": len(runs),
                         "energy_mean_J": float(e.mean()), "energy_sd_J": float(e.std(ddof=1)) if len(e) > 1 else 0.0,
                         "duration_mean_s": float(d.mean()), "duration_sd_s": float(d.std(ddof=1)) if len(d) > 1 else 0.0,
                         "hover_mean": float(h.mean()),
                         "audit_passed": all(r[4] for r in runs)})
    return rows


# -- files -------------------------------------------------------------------

CSV_COLUMNS = ["stage", "slot", "time_s", "mode", "uav_x", "uav_y", "uav_z", "usv_x", "usv_y",
               "p_comm_W", "p_sense_W", "uav_prop_W", "usv_prop_W"]


def _pairs(v: np.ndarray) -> list:
    return [[float(z.real), float(z.imag)] for z in v]


def beams_to_dict(beams: BeamformingSchedule) -> dict:
    slots = []
    for i in range(beams.num_slots):
        act = np.flatnonzero(beams.active[i])
        slots.append({
            "slot": i + 1,
            "comm": _pairs(beams.comm[i]),
            "sense": {str(k): _pairs(beams.sense[i, k]) for k in act},
            "combine": {str(k): _pairs(beams.combine[i, k]) for k in act},
        })
    n_t = beams.sense.shape[1]
    m = beams.comm.shape[1] if beams.comm.ndim == 2 else 0
    return {"num_targets": int(n_t), "num_antennas": int(m), "slots": slots}


def beams_from_dict(d: dict) -> BeamformingSchedule:
    n = len(d["slots"])
    out = BeamformingSchedule.empty(n, d["num_targets"], d["num_antennas"])
    cplx = lambda pairs: np.array([complex(a, b) for a, b in pairs])
    for i, s in enumerate(d["slots"]):
        out.comm[i] = cplx(s["comm"])
        for k, v in s["sense"].items():
            out.sense[i, int(k)] = cplx(v)
            out.active[i, int(k)] = True
        for k, v in s["combine"].items():
            out.combine[i, int(k)] = cplx(v)
    return out


def _dump(obj, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


def emit_outputs(result: MissionResult, out_dir) -> dict[str, Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    traj, beams, sc = result.trajectory, result.beams, result.scenario
    p = slot_energies(traj, beams, sc.current, sc.system)
    paths = {name: out / f for name, f in [("trajectory", "trajectory.csv"), ("beams", "beams.json"),
                                            ("metrics", "metrics.json"), ("audit", "audit.json"),
                                            ("plan", "plan.json"), ("scenario", "scenario.json"),
                                            ("timings", "timings.json")]}
    with paths["trajectory"].open("w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(CSV_COLUMNS)
        for n in range(traj.num_slots + 1):
            if n == 0:
                stage, mode, pc, ps, pu, pv = 0, "S", 0.0, 0.0, 0.0, 0.0
            else:
                i = n - 1
                stage, mode = int(traj.stage[i]), str(traj.mode[i])
                pc = float(beams.comm_power()[i])
                ps = float(beams.sense_power()[i])
                pu, pv = float(p["uav_prop"][i]), float(p["usv_prop"][i])
            wr.writerow([stage, n, repr(n * traj.delta), mode, repr(float(traj.uav[n, 0])), repr(float(traj.uav[n, 1])),
                         repr(float(traj.altitude)), repr(float(traj.usv[n, 0])), repr(float(traj.usv[n, 1])),
                         repr(pc), repr(ps), repr(pu), repr(pv)])
    _dump(beams_to_dict(beams), paths["beams"])
    _dump(result.metrics(), paths["metrics"])
    _dump(result.audit, paths["audit"])
    _dump(result.plan.to_dict(), paths["plan"])
    save_scenario(sc, paths["scenario"])
    _dump({"timings": result.timings, "notes": result.notes,
           "histories": result.histories}, paths["timings"])
    return paths


def read_trajectory(path, scenario: Scenario) -> Trajectory:
    with Path(path).open() as fh:
        rows = list(csv.DictReader(fh))
    if not rows or list(rows[0].keys()) != CSV_COLUMNS:
        raise ValueError("trajectory CSV has unexpected columns")
    uav = np.array([[float(r["uav_x"]), float(r["uav_y"])] for r in rows])
    usv = np.array([[float(r["usv_x"]), float(r["usv_y"])] for r in rows])
    mode = np.array([r["mode"] for r in rows[1:]])
    stage = np.array([int(r["stage"]) for r in rows[1:]], int)
    altitude = float(rows[0]["uav_z"])
    return Trajectory(uav, usv, mode, stage, scenario.system.slot_duration, altitude)


def validate(result_dir) -> dict:
    """Re-audit a result directory from its files alone."""
    d = Path(result_dir)
    scenario = load_scenario(d / "scenario.json")
    traj = read_trajectory(d / "trajectory.csv", scenario)
    beams = beams_from_dict(json.loads((d / "beams.json").read_text()))
    report = audit_mission(traj, beams, scenario)
    energy = account_trajectory(traj, beams, scenario.current, scenario.system)
    metrics = json.loads((d / "metrics.json").read_text())
    mismatch = abs(energy.total - metrics["total_J"]) / max(1.0, abs(energy.total))
    report["families"]["energy_consistency"] = mismatch
    report["passed"] = report["passed"] and mismatch <= AUDIT_TOL
    sp, req = scenario.system, scenario.requirements
    report["comm_distance_m"] = comm_distance_threshold(req.rate_fly, sp.comm_power, sp)
    report["total_J"] = energy.total
    return report
