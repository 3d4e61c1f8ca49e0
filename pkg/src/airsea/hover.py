"""Hover-point selection: clustering, visiting order and time allocation."""
from __future__ import annotations

import heapq
import itertools
import logging
import math
import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .channel import comm_distance_threshold, mrt_sensing_snr, sensing_distance_threshold
from .conic import SurrogateInfeasible, sca_loop, solve_cvxpy
from .energy import (max_range_speed, parasite_coeff, segment_sample_points, stage_energy_estimate,
                     uav_power_flying, usv_segment_energy, xi_from_speed)
from .scenario import CurrentField, Scenario, SystemParams, current_at

log = logging.getLogger(__name__)

MIN_DURATION = 1e-3


class InfeasiblePlan(RuntimeError):
    pass


# -- clustering --------------------------------------------------------------

def initial_cluster_count(num_targets: int, capacity: int) -> int:
    if num_targets < 1 or capacity < 1:
        raise ValueError("need K >= 1 and Z >= 1")
    return -(-num_targets // capacity)


@dataclass
class ClusterAssignment:
    clusters: list[np.ndarray]
    centroids: np.ndarray
    labels: np.ndarray

    @property
    def num_clusters(self) -> int:
        return len(self.clusters)


def farthest_point_seeds(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    idx = [int(rng.integers(len(points)))]
    d = np.linalg.norm(points - points[idx[0]], axis=1)
    for _ in range(1, k):
        nxt = int(np.argmax(d))
        idx.append(nxt)
        d = np.minimum(d, np.linalg.norm(points - points[nxt], axis=1))
    return points[idx].copy()


def _radius_fn(coverage_radius) -> Callable[[int], float]:
    if callable(coverage_radius):
        return coverage_radius
    return lambda size: float(coverage_radius)


def _redistribute(points, labels, centroids, capacity):
    """Move each over-full cluster's farthest members to the nearest centroid with room."""
    labels = labels.copy()
    k = len(centroids)
    for i in range(k):
        members = np.flatnonzero(labels == i)
        excess = len(members) - capacity
        if excess <= 0:
            continue
        far_first = members[np.argsort(-np.linalg.norm(points[members] - centroids[i], axis=1), kind="stable")]
        for j in far_first[:excess]:
            counts = np.bincount(labels, minlength=k)
            room = [c for c in range(k) if c != i and counts[c] < capacity]
            if not room:
                break
            dist = np.linalg.norm(centroids[room] - points[j], axis=1)
            # argmin keeps the lowest index among ties
            labels[j] = room[int(np.argmin(dist))]
    return labels


def vbsc_cluster(targets, coverage_radius, capacity: int, seed: int = 0,
                 altitude: float = 0.0) -> ClusterAssignment:
    """Capacity- and coverage-constrained clustering of the targets.

    ``coverage_radius`` is a distance or a callable of the cluster size (the
    per-target sensing power shrinks as clusters grow).  Distances are taken
    from the centroid lifted to ``altitude``.  The cluster count grows from
    ceil(K / Z) until every cluster fits.
    """
    from scipy.cluster.vq import kmeans2

    points = np.asarray(getattr(targets, "targets", targets), float).reshape(-1, 2)
    n = len(points)
    radius = _radius_fn(coverage_radius)
    rng = np.random.default_rng(seed)
    for k in range(initial_cluster_count(n, capacity), n + 1):
        seeds = farthest_point_seeds(points, k, rng)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            centroids, labels = kmeans2(points, seeds, iter=50, minit="matrix", missing="warn")
        labels = _redistribute(points, labels, centroids, capacity)
        used = np.unique(labels)
        labels = np.searchsorted(used, labels)
        clusters = [np.flatnonzero(labels == i) for i in range(len(used))]
        centroids = np.array([points[c].mean(axis=0) for c in clusters])
        sizes = np.bincount(labels)
        if sizes.max() > capacity:
            continue
        reach = np.sqrt(np.sum((points - centroids[labels]) ** 2, axis=1) + altitude**2)
        limits = np.array([radius(int(sizes[l])) for l in labels])
        if np.all(reach <= limits * (1 + 1e-12)):
            return ClusterAssignment(clusters, centroids, labels)
    raise InfeasiblePlan("coverage infeasible even with one hover point per target")


def singleton_assignment(targets) -> ClusterAssignment:
    points = np.asarray(getattr(targets, "targets", targets), float).reshape(-1, 2)
    n = len(points)
    return ClusterAssignment([np.array([i]) for i in range(n)], points.copy(), np.arange(n))


# -- Bi-TSPN cost and visiting order ----------------------------------------

def bi_tspn_cost(c_i, c_j, current: CurrentField, uav_speed: float, usv_speed: float,
                 params: SystemParams, uav_only: bool = False) -> float:
    c_i = np.asarray(c_i, float)
    c_j = np.asarray(c_j, float)
    d = float(np.linalg.norm(c_j - c_i))
    if d == 0.0:
        return 0.0
    cost = d / uav_speed * float(uav_power_flying(uav_speed, params))
    if not uav_only:
        cost += usv_segment_energy(c_i, c_j, d / usv_speed, current, params)
    return cost


@dataclass
class CostMatrix:
    costs: np.ndarray
    start: int
    end: int


def cost_matrix(nodes, current: CurrentField, params: SystemParams,
                uav_only: bool = False) -> CostMatrix:
    """Pairwise Bi-TSPN costs; node 0 is the start and the last node the end."""
    nodes = np.asarray(nodes, float)
    n = len(nodes)
    v_uav = max_range_speed(params)
    v_usv = params.usv_max_speed
    C = np.zeros((n, n))
    for i, j in itertools.permutations(range(n), 2):
        C[i, j] = bi_tspn_cost(nodes[i], nodes[j], current, v_uav, v_usv, params, uav_only)
    return CostMatrix(C, 0, n - 1)


@dataclass
class VisitOrder:
    order: list[int]
    cost: float
    mtz: np.ndarray

    @property
    def centroid_order(self) -> list[int]:
        """Cluster indices (0-based) in visiting order."""
        return [i - 1 for i in self.order[1:-1]]


def _costs(cm) -> tuple[np.ndarray, int, int]:
    if isinstance(cm, CostMatrix):
        return cm.costs, cm.start, cm.end
    C = np.asarray(cm, float)
    return C, 0, len(C) - 1


def path_cost(C: np.ndarray, order) -> float:
    return float(sum(C[a, b] for a, b in zip(order[:-1], order[1:])))


def _as_visit(C, order) -> VisitOrder:
    mtz = np.zeros(len(C))
    for pos, node in enumerate(order):
        mtz[node] = pos
    return VisitOrder(list(order), path_cost(C, order), mtz)


def held_karp(cm) -> VisitOrder:
    """Exact open-path ATSP from start to end by subset dynamic programming."""
    C, s, t = _costs(cm)
    n = len(C)
    inner = [v for v in range(n) if v not in (s, t)]
    m = len(inner)
    if m == 0:
        return _as_visit(C, [s, t])
    if m > 18:
        raise ValueError(f"exact DP limited to 20 nodes, got {n}")
    sub = C[np.ix_(inner, inner)]
    full = 1 << m
    dp = np.full((full, m), np.inf)
    parent = np.full((full, m), -1, dtype=np.int64)
    for j in range(m):
        dp[1 << j, j] = C[s, inner[j]]
    for mask in range(1, full):
        row = dp[mask]
        if not np.isfinite(row).any():
            continue
        for j in range(m):
            bit = 1 << j
            if mask & bit:
                continue
            cand = row + sub[:, j]
            k = int(np.argmin(cand))
            if cand[k] < dp[mask | bit, j]:
                dp[mask | bit, j] = cand[k]
                parent[mask | bit, j] = k
    last = dp[full - 1] + C[inner, t]
    j = int(np.argmin(last))
    path = []
    mask = full - 1
    while j >= 0:
        path.append(inner[j])
        pj = parent[mask, j]
        mask ^= 1 << j
        j = int(pj)
    return _as_visit(C, [s] + path[::-1] + [t])


def brute_force_order(cm) -> VisitOrder:
    C, s, t = _costs(cm)
    inner = [v for v in range(len(C)) if v not in (s, t)]
    best = min(itertools.permutations(inner), key=lambda p: path_cost(C, (s,) + p + (t,)))
    return _as_visit(C, [s, *best, t])


def _greedy_path(C, s, t):
    inner = set(range(len(C))) - {s, t}
    path = [s]
    while inner:
        nxt = min(inner, key=lambda j: C[path[-1], j])
        path.append(nxt)
        inner.remove(nxt)
    path.append(t)
    return path


def mtz_branch_and_bound(cm, tol: float = 1e-7, max_nodes: int = 200_000) -> VisitOrder:
    """Open-path MILP with MTZ subtour elimination, solved by LP-based branch and bound."""
    from scipy.optimize import linprog

    C, s, t = _costs(cm)
    n = len(C)
    if n == 2:
        return _as_visit(C, [s, t])
    arcs = [(i, j) for i in range(n) for j in range(n) if i != j and i != t and j != s]
    na = len(arcs)
    nv = na + n
    cost = np.concatenate([[C[i, j] for i, j in arcs], np.zeros(n)])
    A_eq, b_eq = [], []
    for k in range(n):
        out_row = np.zeros(nv)
        in_row = np.zeros(nv)
        for a, (i, j) in enumerate(arcs):
            if i == k:
                out_row[a] = 1
            if j == k:
                in_row[a] = 1
        if k != t:
            A_eq.append(out_row)
            b_eq.append(1.0)
        if k != s:
            A_eq.append(in_row)
            b_eq.append(1.0)
    # u_s = 0
    row = np.zeros(nv)
    row[na + s] = 1
    A_eq.append(row)
    b_eq.append(0.0)
    A_ub, b_ub = [], []
    for a, (i, j) in enumerate(arcs):
        row = np.zeros(nv)
        row[na + i] += 1
        row[na + j] -= 1
        row[a] = n - 1
        A_ub.append(row)
        b_ub.append(n - 2)
    A_eq, b_eq = np.array(A_eq), np.array(b_eq)
    A_ub, b_ub = np.array(A_ub), np.array(b_ub)
    base_bounds = [(0.0, 1.0)] * na + [(0.0, 0.0) if v == s else (1.0, n - 1.0) for v in range(n)]

    def relax(fixed: dict[int, float]):
        bounds = list(base_bounds)
        for a, v in fixed.items():
            bounds[a] = (v, v)
        res = linprog(cost, A_ub=A_ub, b_ub=b_ub, A_eq=A_eq, b_eq=b_eq, bounds=bounds, method="highs")
        return res if res.status == 0 else None

    def to_path(x):
        nxt = {i: j for a, (i, j) in enumerate(arcs) if x[a] > 0.5}
        path = [s]
        while path[-1] != t and len(path) <= n:
            path.append(nxt[path[-1]])
        return path

    incumbent = _greedy_path(C, s, t)
    best = path_cost(C, incumbent)
    counter = itertools.count()
    root = relax({})
    if root is None:
        raise RuntimeError("MTZ relaxation infeasible")
    heap = [(root.fun, next(counter), {}, root.x)]
    explored = 0
    while heap:
        bound, _, fixed, x = heapq.heappop(heap)
        if bound >= best - tol * max(1.0, abs(best)):
            continue
        explored += 1
        if explored > max_nodes:
            log.warning("branch and bound node limit reached; returning incumbent")
            break
        frac = np.abs(x[:na] - np.round(x[:na]))
        a = int(np.argmax(frac))
        if frac[a] <= 1e-6:
            path = to_path(x)
            c = path_cost(C, path)
            if c < best:
                best, incumbent = c, path
            continue
        for v in (1.0, 0.0):
            child = dict(fixed)
            child[a] = v
            res = relax(child)
            if res is not None and res.fun < best - tol * max(1.0, abs(best)):
                heapq.heappush(heap, (res.fun, next(counter), child, res.x))
    return _as_visit(C, incumbent)


def solve_visit_order(cm, method: str = "exact-dp") -> VisitOrder:
    if method == "exact-dp":
        return held_karp(cm)
    if method == "milp":
        return mtz_branch_and_bound(cm)
    raise ValueError(f"unknown method {method!r}")


# -- hover plan --------------------------------------------------------------

@dataclass
class HoverPlan:
    """Ordered hover stages plus the closing flight.

    Stage e (0-based, e < E) flies q[e-1] -> q[e] while the USV sails to
    ``usv_fly_end[e]``, then hovers while the USV moves to ``usv_hover_end[e]``.
    The final flight (index E of ``t_fly``) reaches the end points.
    """

    hover_points: np.ndarray
    usv_fly_end: np.ndarray
    usv_hover_end: np.ndarray
    t_fly: np.ndarray
    t_hover: np.ndarray
    schedule: np.ndarray
    fly_slots: np.ndarray
    hover_slots: np.ndarray
    uav_start: np.ndarray
    uav_end: np.ndarray
    usv_start: np.ndarray
    usv_end: np.ndarray
    delta: float
    history: list[float] = field(default_factory=list)
    rounds: list | None = None  # per hover: groups of target ids sensed in turn

    @property
    def num_hover(self) -> int:
        return len(self.hover_points)

    def uav_waypoints(self) -> np.ndarray:
        return np.vstack([self.uav_start, self.hover_points[:, :2], self.uav_end])

    def usv_anchors(self) -> np.ndarray:
        rows = [self.usv_start]
        for e in range(self.num_hover):
            rows += [self.usv_fly_end[e], self.usv_hover_end[e]]
        rows.append(self.usv_end)
        return np.vstack(rows)

    def targets_of(self, e: int) -> np.ndarray:
        return np.flatnonzero(self.schedule[:, e])

    def groups_of(self, e: int) -> list[np.ndarray] | None:
        """Sensing groups of hover ``e`` as indices into ``targets_of(e)``."""
        if self.rounds is None:
            return None
        idx = self.targets_of(e)
        return [np.searchsorted(idx, np.asarray(g, int)) for g in self.rounds[e]]

    @property
    def boundaries(self) -> tuple[np.ndarray, np.ndarray]:
        """1-based first (m_e) and last (n_e) hovering slot of each stage."""
        m, n = [], []
        clock = 0
        for e in range(self.num_hover):
            clock += int(self.fly_slots[e])
            m.append(clock + 1)
            clock += int(self.hover_slots[e])
            n.append(clock)
        return np.array(m, int), np.array(n, int)

    @property
    def num_slots(self) -> int:
        return int(self.fly_slots.sum() + self.hover_slots.sum())

    def speeds(self) -> dict[str, np.ndarray]:
        q = self.uav_waypoints()
        b = self.usv_anchors()
        tf = np.maximum(self.fly_slots * self.delta, 1e-300)
        th = np.maximum(self.hover_slots * self.delta, 1e-300)
        return {
            "uav": np.linalg.norm(np.diff(q, axis=0), axis=1) / tf,
            "usv_fly": np.linalg.norm(b[1::2] - b[0::2], axis=1) / tf,
            "usv_hover": np.linalg.norm(b[2::2][: self.num_hover] - b[1::2][: self.num_hover], axis=1) / th,
        }

    def to_dict(self) -> dict:
        m, n = self.boundaries
        return {
            "hover_points": self.hover_points.tolist(),
            "usv_fly_end": self.usv_fly_end.tolist(),
            "usv_hover_end": self.usv_hover_end.tolist(),
            "t_fly": self.t_fly.tolist(),
            "t_hover": self.t_hover.tolist(),
            "schedule": self.schedule.astype(int).tolist(),
            "fly_slots": self.fly_slots.tolist(),
            "hover_slots": self.hover_slots.tolist(),
            "m": m.tolist(),
            "n": n.tolist(),
            "speeds": {k: v.tolist() for k, v in self.speeds().items()},
            "uav_start": self.uav_start.tolist(),
            "uav_end": self.uav_end.tolist(),
            "usv_start": self.usv_start.tolist(),
            "usv_end": self.usv_end.tolist(),
            "delta": self.delta,
            "history": list(self.history),
            "rounds": None if self.rounds is None else [[list(map(int, g)) for g in r] for r in self.rounds],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "HoverPlan":
        arr = lambda k, dt=float: np.array(d[k], dtype=dt)
        return cls(
            hover_points=arr("hover_points").reshape(-1, 3),
            usv_fly_end=arr("usv_fly_end").reshape(-1, 2),
            usv_hover_end=arr("usv_hover_end").reshape(-1, 2),
            t_fly=arr("t_fly"), t_hover=arr("t_hover"),
            schedule=arr("schedule", int).astype(bool).reshape(-1, len(d["hover_points"])),
            fly_slots=arr("fly_slots", int), hover_slots=arr("hover_slots", int),
            uav_start=arr("uav_start"), uav_end=arr("uav_end"),
            usv_start=arr("usv_start"), usv_end=arr("usv_end"),
            delta=float(d["delta"]), history=list(d.get("history", [])),
            rounds=d.get("rounds"),
        )


def sensing_radii(scenario: Scenario) -> Callable[[int], float]:
    sp, req = scenario.system, scenario.requirements
    return lambda size: sensing_distance_threshold(req.inst_snr, sp.sense_power / size, sp)


def hover_time_needed(q_xy, targets, params: SystemParams, total_snr: float) -> float:
    """Seconds of hovering at ``q_xy`` that accumulate ``total_snr`` for every target."""
    targets = np.atleast_2d(targets)
    d = np.sqrt(np.sum((targets - q_xy) ** 2, axis=1) + params.altitude**2)
    gamma = mrt_sensing_snr(d, params.sense_power / len(targets), params)
    return float(params.slot_duration * np.max(total_snr / gamma))


def _slots(duration: float, delta: float) -> int:
    return max(0, math.ceil(duration / delta - 1e-6))


class _RefineProblem:
    """P3 surrogate: convex restriction at an expansion point, built once per plan."""

    def __init__(self, groups, scenario: Scenario, uav_only: bool, fixed_hover: np.ndarray | None,
                 hover_floor: np.ndarray | None = None):
        import cvxpy as cp

        sp, req = scenario.system, scenario.requirements
        w = scenario.world
        E = len(groups)
        self.E = E
        self.uav_only = uav_only
        H = sp.altitude
        self.q = cp.Variable((E, 2)) if fixed_hover is None else None
        q_rows = ([w.uav_start] + ([self.q[e] for e in range(E)] if fixed_hover is None
                                   else list(fixed_hover)) + [w.uav_end])
        self.bf = cp.Variable((E, 2))
        self.bh = cp.Variable((E, 2))
        self.tf = cp.Variable(E + 1)
        self.th = cp.Variable(E)
        self.y = cp.Variable(E + 1)
        self.z = cp.Variable(E + 1)
        self.parasite = cp.Variable(E + 1)
        # expansion point
        self.y_k = cp.Parameter(E + 1, nonneg=True)
        self.dq_k = cp.Parameter((E + 1, 2))
        self.const_k = cp.Parameter(E + 1)
        self.wf = cp.Parameter((E + 1, 2))
        self.wf2 = cp.Parameter(E + 1, nonneg=True)
        self.wh = cp.Parameter((max(E, 1), 2))
        self.wh2 = cp.Parameter(max(E, 1), nonneg=True)

        b_rows = [w.usv_start]
        for e in range(E):
            b_rows += [self.bf[e], self.bh[e]]
        b_rows.append(w.usv_end)

        U0, U1, v0 = sp.blade_profile_power, sp.induced_power, sp.mean_induced_speed
        c_par = parasite_coeff(sp)
        alpha = sp.usv_drag
        D_c = comm_distance_threshold(req.rate_fly, sp.comm_power, sp)
        scale = 1e-3
        obj = []
        floor = MIN_DURATION if hover_floor is None else np.maximum(hover_floor, MIN_DURATION)
        cons = [self.tf >= MIN_DURATION, self.th >= floor, self.y >= 1e-9, self.z >= 0]
        for e in range(E + 1):
            dq = q_rows[e + 1] - q_rows[e]
            t = self.tf[e]
            obj += [U0 * t, 3 * U0 / sp.tip_speed**2 * cp.quad_over_lin(dq, t),
                    c_par * self.parasite[e], U1 * self.y[e]]
            cons += [cp.norm(dq) <= cp.geo_mean(cp.hstack([self.parasite[e], t, t])),
                     cp.quad_over_lin(t, self.y[e]) <= self.z[e],
                     cp.square(self.z[e]) <= 2 * cp.multiply(self.y_k[e], self.y[e])
                     + 2 * (self.dq_k[e] @ dq) / v0**2 + self.const_k[e],
                     cp.norm(dq) <= sp.uav_max_speed * t]
            if not uav_only:
                db = b_rows[2 * e + 1] - b_rows[2 * e]
                obj += [alpha * (cp.quad_over_lin(db, t) - 2 * (db @ self.wf[e]) + t * self.wf2[e])]
                cons += [cp.norm(db) <= sp.usv_max_speed * t]
        for e in range(E):
            t = self.th[e]
            obj += [sp.hover_power * t]
            q_e = q_rows[e + 1]
            if not uav_only:
                db = self.bh[e] - self.bf[e]
                obj += [alpha * (cp.quad_over_lin(db, t) - 2 * (db @ self.wh[e]) + t * self.wh2[e])]
                cons += [cp.norm(db) <= sp.usv_max_speed * t,
                         cp.norm(cp.hstack([q_e - self.bf[e], H])) <= D_c,
                         cp.norm(cp.hstack([q_e - self.bh[e], H])) <= D_c]
            size = len(groups[e])
            D_s = sensing_distance_threshold(req.inst_snr, sp.sense_power / size, sp)
            # d^4 <= D_s^4 (Gamma_s / Gamma_tot) t / delta, written as d^2 <= K sqrt(t)
            gain = D_s**2 * math.sqrt(req.inst_snr / (req.total_snr * sp.slot_duration))
            for k in groups[e]:
                tk = w.targets[k]
                if fixed_hover is None:
                    cons.append(cp.norm(cp.hstack([q_e - tk, H])) <= D_s)
                cons.append(cp.sum_squares(q_e - tk) + H**2 <= gain * cp.sqrt(t))
        if uav_only:
            cons += [self.bf == 0, self.bh == 0]
        self.problem = cp.Problem(cp.Minimize(scale * cp.sum(cp.hstack(obj))), cons)
        self.q_rows_fixed = fixed_hover
        self.scenario = scenario

    def set_point(self, x: dict) -> None:
        sp = self.scenario.system
        v0 = sp.mean_induced_speed
        q = _uav_rows(x, self.scenario)
        dq = np.diff(q, axis=0)
        L = np.linalg.norm(dq, axis=1)
        y_k = x["tf"] * xi_from_speed(L / x["tf"], sp)
        self.y_k.value = y_k
        self.dq_k.value = dq
        self.const_k.value = -(y_k**2) - L**2 / v0**2
        wf, wf2, wh, wh2 = _leg_currents(x, self.scenario)
        self.wf.value, self.wf2.value = wf, wf2
        if self.E:
            self.wh.value, self.wh2.value = wh, wh2
        else:
            self.wh.value, self.wh2.value = np.zeros((1, 2)), np.zeros(1)

    def solve(self, x: dict) -> dict:
        self.set_point(x)
        status = solve_cvxpy(self.problem)
        if status not in ("optimal", "optimal_inaccurate"):
            raise SurrogateInfeasible(f"hover refinement surrogate {status}")
        out = {"tf": np.maximum(self.tf.value, MIN_DURATION), "th": np.maximum(self.th.value, MIN_DURATION),
               "bf": self.bf.value.copy(), "bh": self.bh.value.copy()}
        out["q"] = self.q.value.copy() if self.q is not None else self.q_rows_fixed.copy()
        if self.uav_only:
            out["bf"] = out["q"].copy()
            out["bh"] = out["q"].copy()
        return out


def _uav_rows(x, scenario):
    w = scenario.world
    return np.vstack([w.uav_start, x["q"], w.uav_end])


def _usv_rows(x, scenario):
    w = scenario.world
    rows = [w.usv_start]
    for e in range(len(x["q"])):
        rows += [x["bf"][e], x["bh"][e]]
    rows.append(w.usv_end)
    return np.vstack(rows)


def _mean_current(b0, b1, current, resolution):
    pts = segment_sample_points(b0, b1, resolution)
    w = current_at(current, pts)
    return w.mean(axis=0), float(np.mean(np.sum(w**2, axis=1)))


def _leg_currents(x, scenario):
    b = _usv_rows(x, scenario)
    res = scenario.system.current_resolution
    E = len(x["q"])
    wf = np.zeros((E + 1, 2))
    wf2 = np.zeros(E + 1)
    wh = np.zeros((E, 2))
    wh2 = np.zeros(E)
    for e in range(E + 1):
        wf[e], wf2[e] = _mean_current(b[2 * e], b[2 * e + 1], scenario.current, res)
    for e in range(E):
        wh[e], wh2[e] = _mean_current(b[2 * e + 1], b[2 * e + 2], scenario.current, res)
    return wf, wf2, wh, wh2


def plan_energy(x: dict, scenario: Scenario, uav_only: bool = False) -> float:
    """Stage-averaged energy of a continuous plan (USV terms dropped when ``uav_only``)."""
    sp = scenario.system
    if uav_only:
        sp = _uav_only_params(sp)
    return stage_energy_estimate(_uav_rows(x, scenario), _usv_rows(x, scenario),
                                 x["tf"], x["th"], scenario.current, sp)


def _uav_only_params(sp: SystemParams) -> SystemParams:
    from dataclasses import replace

    return replace(sp, usv_drag=0.0)


def _blend(a: dict, b: dict, s: float) -> dict:
    return {k: (1 - s) * a[k] + s * b[k] for k in a}


def _initial_plan(centroids, groups, scenario: Scenario, uav_only: bool) -> dict:
    sp, req = scenario.system, scenario.requirements
    w = scenario.world
    E = len(centroids)
    q = np.asarray(centroids, float).reshape(E, 2)
    x = {"q": q, "bf": q.copy(), "bh": q.copy()}
    uq = _uav_rows(x, scenario)
    ub = _usv_rows(x, scenario)
    v_uav = max_range_speed(sp)
    tf = np.empty(E + 1)
    for e in range(E + 1):
        t = np.linalg.norm(uq[e + 1] - uq[e]) / v_uav
        if not uav_only:
            t = max(t, np.linalg.norm(ub[2 * e + 1] - ub[2 * e]) / sp.usv_max_speed)
        tf[e] = max(t, MIN_DURATION) * (1 + 1e-6)
    th = np.array([max(hover_time_needed(q[e], w.targets[groups[e]], sp, req.total_snr), MIN_DURATION)
                   for e in range(E)]) * (1 + 1e-6)
    x["tf"], x["th"] = tf, th
    return x


def refine_hover_plan(assignment: ClusterAssignment, order: VisitOrder, scenario: Scenario,
                      uav_only: bool = False, fixed_hover: bool = False,
                      eps: float | None = None, max_iter: int | None = None,
                      min_hover_time=None) -> HoverPlan:
    """Hover-point refinement and time allocation by SCA, then slot discretisation.

    ``fixed_hover`` pins hover points at the centroids (hover-above-target
    baseline); ``uav_only`` drops every USV term (leader planning).
    ``min_hover_time`` (seconds, in visiting order) adds a floor on each hover.
    """
    sp = scenario.system
    eps = sp.sca_tolerance if eps is None else eps
    max_iter = sp.max_iterations if max_iter is None else max_iter
    seq = order.centroid_order
    groups = [assignment.clusters[i] for i in seq]
    centroids = assignment.centroids[seq]
    x0 = _initial_plan(centroids, groups, scenario, uav_only)
    floor = np.zeros(len(groups)) if min_hover_time is None else np.asarray(min_hover_time, float)
    x0["th"] = np.maximum(x0["th"], floor * (1 + 1e-6))
    surrogate = _RefineProblem(groups, scenario, uav_only, centroids.copy() if fixed_hover else None, floor)
    state = sca_loop(surrogate.solve, x0, lambda x: plan_energy(x, scenario, uav_only),
                     eps=eps, max_iter=max_iter, blend=_blend)
    x = state.iterate
    return discretize_plan(x, groups, scenario, history=state.history)


def _clear_points(points: np.ndarray, obstacles: np.ndarray, radius: float) -> np.ndarray:
    out = points.copy()
    target = radius * (1 + 1e-3)
    for o in obstacles:
        diff = out - o
        dist = np.linalg.norm(diff, axis=1)
        for i in np.flatnonzero(dist < target):
            u = diff[i] / dist[i] if dist[i] > 1e-9 else np.array([0.0, 1.0])
            out[i] = o + target * u
    return out


def discretize_plan(x: dict, groups, scenario: Scenario, history=()) -> HoverPlan:
    sp = scenario.system
    w = scenario.world
    delta = sp.slot_duration
    E = len(groups)
    q = np.array(x["q"], float).reshape(E, 2)
    bf = np.array(x["bf"], float).reshape(E, 2)
    bh = np.array(x["bh"], float).reshape(E, 2)
    # anchors are planned without obstacles; nudge any that landed inside a disc
    bf = _clear_points(bf, w.obstacles, sp.obstacle_radius)
    bh = _clear_points(bh, w.obstacles, sp.obstacle_radius)
    uq = np.vstack([w.uav_start, q, w.uav_end])
    fly_slots = np.zeros(E + 1, int)
    hover_slots = np.zeros(E, int)
    prev_b = w.usv_start
    for e in range(E + 1):
        b_next = bf[e] if e < E else w.usv_end
        moved = max(np.linalg.norm(uq[e + 1] - uq[e]), np.linalg.norm(b_next - prev_b))
        # a leg that goes nowhere takes no slots, whatever its floor duration
        n = _slots(x["tf"][e], delta) if moved > 1e-9 else 0
        if n == 0 and moved > 1e-9:
            n = 1
        # rounding must not push speeds over their limits
        n = max(n, math.ceil(np.linalg.norm(uq[e + 1] - uq[e]) / (sp.uav_max_speed * delta) - 1e-9),
                math.ceil(np.linalg.norm(b_next - prev_b) / (sp.usv_max_speed * delta) - 1e-9))
        fly_slots[e] = n
        if e < E:
            hover_slots[e] = max(1, _slots(x["th"][e], delta),
                                 math.ceil(np.linalg.norm(bh[e] - bf[e]) / (sp.usv_max_speed * delta) - 1e-9))
            prev_b = bh[e]
    schedule = np.zeros((w.num_targets, E), bool)
    for e, g in enumerate(groups):
        schedule[g, e] = True
    return HoverPlan(
        hover_points=np.column_stack([q, np.full(E, sp.altitude)]),
        usv_fly_end=bf, usv_hover_end=bh,
        t_fly=np.asarray(x["tf"], float).copy(), t_hover=np.asarray(x["th"], float).copy(),
        schedule=schedule, fly_slots=fly_slots, hover_slots=hover_slots,
        uav_start=np.array(w.uav_start), uav_end=np.array(w.uav_end),
        usv_start=np.array(w.usv_start), usv_end=np.array(w.usv_end),
        delta=delta, history=list(history),
    )


def check_plan(plan: HoverPlan, scenario: Scenario, uav_only: bool = False) -> dict[str, float]:
    """Exact re-check of the plan invariants; returns max violation per family."""
    sp, req = scenario.system, scenario.requirements
    w = scenario.world
    H = sp.altitude
    out = {"coverage": 0.0, "hover_time": 0.0, "comm_proximity": 0.0, "uav_speed": 0.0,
           "usv_speed": 0.0, "capacity": 0.0, "schedule": 0.0}
    D_c = comm_distance_threshold(req.rate_fly, sp.comm_power, sp)
    for e in range(plan.num_hover):
        idx = plan.targets_of(e)
        q = plan.hover_points[e, :2]
        out["capacity"] = max(out["capacity"], len(idx) - sp.max_simultaneous_targets)
        D_s = sensing_distance_threshold(req.inst_snr, sp.sense_power / len(idx), sp)
        d = np.sqrt(np.sum((w.targets[idx] - q) ** 2, axis=1) + H**2)
        out["coverage"] = max(out["coverage"], float(np.max(d - D_s)))
        need = hover_time_needed(q, w.targets[idx], sp, req.total_snr)
        out["hover_time"] = max(out["hover_time"], need - plan.hover_slots[e] * plan.delta)
        if not uav_only:
            for b in (plan.usv_fly_end[e], plan.usv_hover_end[e]):
                dist = math.sqrt(np.sum((q - b) ** 2) + H**2)
                out["comm_proximity"] = max(out["comm_proximity"], dist - D_c)
    sp_ = plan.speeds()
    out["uav_speed"] = float(np.max(sp_["uav"] - sp.uav_max_speed, initial=0.0))
    if not uav_only:
        out["usv_speed"] = float(max(np.max(sp_["usv_fly"] - sp.usv_max_speed, initial=0.0),
                                     np.max(sp_["usv_hover"] - sp.usv_max_speed, initial=0.0)))
    out["schedule"] = float(np.max(np.abs(plan.schedule.sum(axis=1) - 1)))
    return {k: max(0.0, float(v)) for k, v in out.items()}
