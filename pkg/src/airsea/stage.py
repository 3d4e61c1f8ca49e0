"""Per-stage joint trajectory and beamforming optimisation.

Flying stages optimise both paths and the MRT link power by SCA.  Hovering
stages alternate between per-slot SDR beamforming (UAV fixed over the hover
point) and the USV path given the beams.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linprog

from .channel import (comm_channel, lift, min_comm_power, mrt_beamformer, mrt_sensing_snr,
                      sensing_channel, steering_from_cos)
from .conic import (ConicProgram, SolverError, SurrogateInfeasible, extract_rank1, hermitian_basis,
                    real_embedding, sca_loop, solve_conic, solve_cvxpy)
from .energy import parasite_coeff, uav_power_flying, xi_from_speed
from .scenario import Scenario, current_at
from .trajectory import FLY, HOVER, BeamformingSchedule, Trajectory

log = logging.getLogger(__name__)

PENALTY = 1e4
RANK1_THRESHOLD = 1e-3
MARGIN = 1e-7


class StageInfeasible(RuntimeError):
    pass


@dataclass
class StageProblem:
    index: int
    kind: str
    uav_start: np.ndarray
    uav_end: np.ndarray
    usv_start: np.ndarray
    usv_end: np.ndarray
    num_slots: int
    targets: np.ndarray = field(default_factory=lambda: np.zeros(0, int))
    target_positions: np.ndarray = field(default_factory=lambda: np.zeros((0, 2)))
    warm_usv: np.ndarray | None = None
    groups: list | None = None  # sensing rotation, local target indices per group

    def validate(self, scenario: Scenario) -> None:
        sp = scenario.system
        reach = self.num_slots * sp.slot_duration
        if self.kind == HOVER:
            if not 1 <= len(self.targets) <= sp.max_simultaneous_targets:
                raise StageInfeasible(f"stage {self.index}: hovering needs 1..Z targets")
            if self.groups is not None and len(self.groups) > self.num_slots:
                raise StageInfeasible(f"stage {self.index}: fewer slots than sensing groups")
            if np.linalg.norm(self.uav_end - self.uav_start) > 1e-9:
                raise StageInfeasible(f"stage {self.index}: UAV must stay put while hovering")
        slack = 1e-9 * max(1.0, reach)
        if np.linalg.norm(self.uav_end - self.uav_start) > sp.uav_max_speed * reach + slack:
            raise StageInfeasible(f"stage {self.index}: UAV endpoint unreachable in {self.num_slots} slots")
        if np.linalg.norm(self.usv_end - self.usv_start) > sp.usv_max_speed * reach + slack:
            raise StageInfeasible(f"stage {self.index}: USV endpoint unreachable in {self.num_slots} slots")


@dataclass
class StageSolution:
    problem: StageProblem
    trajectory: Trajectory
    beams: BeamformingSchedule
    history: list[float]
    notes: list[str] = field(default_factory=list)
    sdp_objective: float = float("nan")
    extracted_power: float = float("nan")
    randomized: bool = False


def _lerp(a, b, n: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n + 1)[:, None]
    return (1 - s) * np.asarray(a, float) + s * np.asarray(b, float)


def _push_clear(points: np.ndarray, obstacles: np.ndarray, radius: float) -> np.ndarray:
    """Move interior points radially out of the obstacle disks (endpoints untouched)."""
    out = points.copy()
    for o in obstacles:
        diff = out[1:-1] - o
        dist = np.linalg.norm(diff, axis=1)
        inside = dist < radius
        if np.any(inside):
            d = np.where(dist[inside] > 1e-9, dist[inside], 1.0)
            u = np.where(dist[inside, None] > 1e-9, diff[inside] / d[:, None], np.array([0.0, 1.0]))
            out[1:-1][inside] = o + radius * u
    return out


def _obstacle_violation(b: np.ndarray, obstacles: np.ndarray, radius: float) -> np.ndarray:
    if len(obstacles) == 0 or len(b) == 0:
        return np.zeros(len(b))
    d = np.linalg.norm(b[:, None, :] - obstacles[None, :, :], axis=2)
    return np.sum(np.maximum(0.0, radius - d), axis=1)


def _usv_energy(b: np.ndarray, scenario: Scenario) -> float:
    sp = scenario.system
    if len(b) < 2:
        return 0.0
    rel = np.diff(b, axis=0) / sp.slot_duration - current_at(scenario.current, b[1:])
    return float(sp.usv_drag * np.sum(rel**2) * sp.slot_duration)


def _empty_solution(stage: StageProblem, scenario: Scenario) -> StageSolution:
    sp = scenario.system
    traj = Trajectory(np.array([stage.uav_start]), np.array([stage.usv_start]), np.zeros(0, str),
                      np.zeros(0, int), sp.slot_duration, sp.altitude)
    beams = BeamformingSchedule.empty(0, scenario.world.num_targets, sp.num_antennas)
    return StageSolution(stage, traj, beams, [0.0])


# -- flying mode -------------------------------------------------------------

class _FlyingSurrogate:
    """Convex restriction of the flying-stage problem with DPP parameters."""

    def __init__(self, n: int, num_obstacles: int, scenario: Scenario, link_gain: float,
                 uav_fixed: bool = False):
        import cvxpy as cp

        sp = scenario.system
        delta = sp.slot_duration
        self.n = n
        self.uav_fixed = uav_fixed
        self.Q = cp.Variable((n + 1, 2))
        self.B = cp.Variable((n + 1, 2))
        self.xi = cp.Variable(n)
        self.pc = cp.Variable(n)
        self.ends = cp.Parameter((4, 2))
        self.xi_k = cp.Parameter(n, nonneg=True)
        self.dq_k = cp.Parameter((n, 2))
        self.c_k = cp.Parameter(n)
        self.W = cp.Parameter((n, 2))
        self.Q_fixed = cp.Parameter((n + 1, 2))
        self.normals = [cp.Parameter((n + 1, 2)) for _ in range(num_obstacles)]
        self.offsets = [cp.Parameter(n + 1) for _ in range(num_obstacles)]
        dQ = self.Q[1:] - self.Q[:-1]
        dB = self.B[1:] - self.B[:-1]
        v0 = sp.mean_induced_speed
        cons = [self.B[0] == self.ends[2], self.B[n] == self.ends[3],
                cp.norm(dB, axis=1) <= sp.usv_max_speed * delta,
                self.pc <= sp.power_budget * sp.altitude**-4 * link_gain]
        if uav_fixed:
            cons.append(self.Q == self.Q_fixed)
        else:
            cons += [self.Q[0] == self.ends[0], self.Q[n] == self.ends[1],
                     cp.norm(dQ, axis=1) <= sp.uav_max_speed * delta,
                     cp.power(self.xi, -2) <= 2 * cp.multiply(self.xi_k, self.xi)
                     + 2 * cp.sum(cp.multiply(self.dq_k, dQ), axis=1) / (delta * v0) ** 2 + self.c_k]
        # |q - b|^4 <= p_c * link_gain, with p_c measured in the power that reaches
        # the altitude H so both sides stay O(1): (|q - b| / H)^2 <= sqrt(p_c / unit)
        self.unit = sp.altitude**4 / link_gain
        sep = (cp.sum(cp.square(self.Q[1:] - self.B[1:]), axis=1) + sp.altitude**2) / sp.altitude**2
        cons.append(sep <= cp.sqrt(self.pc))
        slack_terms = []
        for U, r in zip(self.normals, self.offsets):
            s = cp.Variable(n + 1, nonneg=True)
            cons.append(cp.sum(cp.multiply(U, self.B), axis=1) + s >= r)
            slack_terms.append(cp.sum(s))
        speed2 = cp.sum(cp.square(dQ), axis=1) / delta**2
        energy = [cp.sum(self.pc) * delta * self.unit,
                  sp.usv_drag * delta * cp.sum_squares(dB / delta - self.W)]
        if not uav_fixed:
            energy += [n * delta * sp.blade_profile_power,
                       delta * 3 * sp.blade_profile_power / sp.tip_speed**2 * cp.sum(speed2),
                       delta * parasite_coeff(sp) * cp.sum(cp.power(cp.norm(dQ, axis=1) / delta, 3)),
                       delta * sp.induced_power * cp.sum(self.xi)]
        energy += [PENALTY * t for t in slack_terms]
        self.problem = cp.Problem(cp.Minimize(1e-3 * cp.sum(cp.hstack(energy))), cons)


_FLY_CACHE: dict = {}


def _flying_surrogate(n, num_obstacles, scenario, link_gain, uav_fixed=False) -> _FlyingSurrogate:
    key = (n, num_obstacles, scenario.system, scenario.requirements, float(link_gain), uav_fixed)
    if key not in _FLY_CACHE:
        if len(_FLY_CACHE) > 64:
            _FLY_CACHE.clear()
        _FLY_CACHE[key] = _FlyingSurrogate(n, num_obstacles, scenario, link_gain, uav_fixed)
    return _FLY_CACHE[key]


def _uav_flying_energy(Q: np.ndarray, scenario: Scenario) -> float:
    sp = scenario.system
    v = np.linalg.norm(np.diff(Q, axis=0), axis=1) / sp.slot_duration
    return float(np.sum(uav_power_flying(v, sp)) * sp.slot_duration)


def _link_power(Q, B, rate, scenario, noise=None):
    d = np.sqrt(np.sum((Q[1:] - B[1:]) ** 2, axis=1) + scenario.system.altitude**2)
    return min_comm_power(d, rate, scenario.system, noise)


def _flying_merit(x, scenario, rate, uav_fixed=False, radius_limit=None):
    Q, B = x
    sp = scenario.system
    pc = _link_power(Q, B, rate, scenario)
    total = 0.0 if uav_fixed else _uav_flying_energy(Q, scenario)
    total += _usv_energy(B, scenario) + float(np.sum(np.minimum(pc, sp.power_budget))) * sp.slot_duration
    viol = float(np.sum(_obstacle_violation(B[1:-1], scenario.world.obstacles, sp.obstacle_radius)))
    viol += float(np.sum(np.maximum(0.0, pc - sp.power_budget))) / sp.power_budget
    return total + PENALTY * viol


def _set_flying_point(sur: _FlyingSurrogate, x, stage: StageProblem, scenario: Scenario) -> None:
    Q, B = x
    sp = scenario.system
    delta = sp.slot_duration
    sur.ends.value = np.vstack([stage.uav_start, stage.uav_end, stage.usv_start, stage.usv_end])
    dq = np.diff(Q, axis=0)
    L = np.linalg.norm(dq, axis=1)
    xi_k = xi_from_speed(L / delta, sp)
    sur.xi_k.value = xi_k
    sur.dq_k.value = dq
    sur.c_k.value = -(xi_k**2) - L**2 / (delta * sp.mean_induced_speed) ** 2
    sur.W.value = current_at(scenario.current, B[1:])
    sur.Q_fixed.value = Q
    r1 = sp.obstacle_radius
    for o, U, r in zip(scenario.world.obstacles, sur.normals, sur.offsets):
        diff = B - o
        dist = np.maximum(np.linalg.norm(diff, axis=1), 1e-9)
        u = diff / dist[:, None]
        # only interior slots are constrained; endpoints get a vacuous row
        off = r1 + u @ o
        u[0] = u[-1] = 0.0
        off[0] = off[-1] = 0.0
        U.value = u
        r.value = off


def _flying_sca(stage, scenario, init, rate, uav_fixed=False):
    sp = scenario.system
    n = stage.num_slots
    link_gain = 1.0 / min_comm_power(1.0, rate, sp)
    sur = _flying_surrogate(n, len(scenario.world.obstacles), scenario, link_gain, uav_fixed)

    def solve(x):
        _set_flying_point(sur, x, stage, scenario)
        status = solve_cvxpy(sur.problem)
        if status not in ("optimal", "optimal_inaccurate"):
            raise SurrogateInfeasible(f"stage {stage.index}: flying surrogate {status}")
        Q = x[0] if uav_fixed else sur.Q.value.copy()
        B = sur.B.value.copy()
        if not uav_fixed:
            Q[0], Q[-1] = stage.uav_start, stage.uav_end
        B[0], B[-1] = stage.usv_start, stage.usv_end
        return _clip_speeds(Q, sp.uav_max_speed * sp.slot_duration), _clip_speeds(B, sp.usv_max_speed * sp.slot_duration)

    def blend(a, b, s):
        return ((1 - s) * a[0] + s * b[0], (1 - s) * a[1] + s * b[1])

    return sca_loop(solve, init, lambda x: _flying_merit(x, scenario, rate, uav_fixed),
                    eps=sp.sca_tolerance, max_iter=sp.max_iterations, blend=blend)


def _clip_speeds(P: np.ndarray, step: float) -> np.ndarray:
    """Remove solver round-off that would put a step a hair over the speed limit."""
    d = np.diff(P, axis=0)
    L = np.linalg.norm(d, axis=1)
    if np.all(L <= step):
        return P
    if np.any(L > step * (1 + 1e-5)):
        return P
    # shrink the excess steps and hand the remainder to the slackest ones
    over = L > step
    d[over] *= (step / L[over])[:, None]
    residual = (P[-1] - P[0]) - d.sum(axis=0)
    room = step - np.linalg.norm(d, axis=1)
    k = int(np.argmax(room))
    d[k] += residual
    out = np.vstack([P[:1], P[0] + np.cumsum(d, axis=0)])
    out[-1] = P[-1]
    return out


def _flying_beams(Q, B, scenario: Scenario, rate: float) -> BeamformingSchedule:
    sp = scenario.system
    n = len(Q) - 1
    beams = BeamformingSchedule.empty(n, scenario.world.num_targets, sp.num_antennas)
    pc = _link_power(Q, B, rate, scenario) * (1 + MARGIN)
    for i in range(n):
        beams.comm[i] = mrt_beamformer(lift(Q[i + 1], sp.altitude), lift(B[i + 1]), pc[i], sp)
    return beams


def optimize_flying(stage: StageProblem, scenario: Scenario) -> StageSolution:
    """Flying stage: both paths and the link power, obstacles linearised per round."""
    sp, req = scenario.system, scenario.requirements
    stage.validate(scenario)
    n = stage.num_slots
    if n == 0:
        return _empty_solution(stage, scenario)
    Q0 = _lerp(stage.uav_start, stage.uav_end, n)
    B0 = stage.warm_usv if stage.warm_usv is not None else _lerp(stage.usv_start, stage.usv_end, n)
    B0 = _push_clear(B0, scenario.world.obstacles, sp.obstacle_radius * 1.05)
    state = _flying_sca(stage, scenario, (Q0, B0), req.rate_fly)
    Q, B = state.iterate
    traj = Trajectory(Q, B, np.full(n, FLY), np.full(n, stage.index), sp.slot_duration, sp.altitude)
    return StageSolution(stage, traj, _flying_beams(Q, B, scenario, req.rate_fly), state.history, state.notes)


# -- hovering mode: per-slot SDR beamforming --------------------------------

@dataclass
class SlotBeams:
    comm: np.ndarray
    sense: np.ndarray
    combine: np.ndarray
    sdp_objective: float
    power: float
    residual: float
    randomized: bool
    fallback: bool = False
    active: np.ndarray | None = None  # sensed targets of the stage in this slot


def _gains(q3, b2, targets, directions, combiners, scenario):
    """Received powers per unit transmit power for each beam direction.

    Returns (comm gains (J,), sensing gain matrix G[k, j]) where direction 0
    is the communication beam and 1..K the sensing beams.
    """
    sp = scenario.system
    duty = sp.duty
    h = comm_channel(q3, lift(b2), sp)
    gc = duty * np.abs(directions.conj() @ h) ** 2
    K = len(targets)
    G = np.zeros((K, len(directions)))
    for k in range(K):
        Hk = sensing_channel(q3, lift(targets[k]), sp)
        proj = combiners[k].conj() @ Hk
        G[k] = duty * np.abs(directions @ proj) ** 2
    return gc, G


def _power_allocation(gc, G, gamma, rate_factor, scenario, slack=MARGIN):
    """Minimum powers (J,) meeting every SINR target for fixed directions, or None."""
    sp = scenario.system
    K = G.shape[0]
    J = K + 1
    rows, rhs = [], []
    if rate_factor > 0:
        row = np.zeros(J)
        row[0] = -gc[0]
        row[1:] = rate_factor * gc[1:]
        scale = rate_factor * sp.noise_hover
        rows.append(row / scale)
        rhs.append(-(1 + slack))
    if gamma > 0:
        for k in range(K):
            row = np.zeros(J)
            row[1:] = gamma * G[k, 1:]
            row[1 + k] = -G[k, 1 + k]
            scale = gamma * sp.noise_sense
            rows.append(row / scale)
            rhs.append(-(1 + slack))
    if not rows:
        return np.zeros(J)
    A_ub = np.vstack(rows + [np.ones(J) / sp.power_budget])
    b_ub = np.array(rhs + [1.0])
    res = linprog(np.ones(J), A_ub=A_ub, b_ub=b_ub, bounds=[(0, None)] * J, method="highs")
    if res.status != 0:
        return None
    return res.x


def _sdp_program(q3, b2, targets, combiners, gamma, rate_factor, scenario, scale):
    sp = scenario.system
    M = sp.num_antennas
    K = len(targets)
    basis = hermitian_basis(M)
    nb = len(basis)
    nv = (K + 1) * nb
    duty = sp.duty

    # block j holds X_j / scale[j]; each scale is that beam's interference-free minimum
    def trace_row(A):
        return np.real(np.einsum("ij,kji->k", A, basis))

    def spread(row):
        return np.concatenate([row * s for s in scale])

    c = spread(np.r_[np.ones(M), np.zeros(nb - M)]) / scale.sum()
    prog = ConicProgram(c)
    lin_G, lin_h = [], []
    if rate_factor > 0:
        h = comm_channel(q3, lift(b2), sp)
        row_c = duty * trace_row(np.outer(h, h.conj())) / sp.noise_hover
        g = spread(row_c)
        g[:nb] /= -rate_factor
        lin_G.append(g)
        lin_h.append(-1.0)
    if gamma > 0:
        for k in range(K):
            Hk = sensing_channel(q3, lift(targets[k]), sp)
            proj = combiners[k].conj() @ Hk
            A = np.outer(proj.conj(), proj)
            # gamma * (interference + noise) <= signal, divided by gamma * noise
            row = duty * trace_row(A) / (sp.noise_sense * np.vdot(combiners[k], combiners[k]).real)
            g = spread(row)
            g[:nb] = 0.0
            g[(k + 1) * nb:(k + 2) * nb] *= -1.0 / gamma
            lin_G.append(g)
            lin_h.append(-1.0)
    lin_G.append(c * scale.sum() / sp.power_budget)
    lin_h.append(1.0)
    prog.add("l", np.vstack(lin_G), np.array(lin_h))
    emb = np.array([real_embedding(B).ravel(order="F") for B in basis]).T
    for j in range(K + 1):
        G = np.zeros((emb.shape[0], nv))
        G[:, j * nb:(j + 1) * nb] = -emb
        prog.add("s", G, np.zeros(emb.shape[0]))
    return prog, basis


def _zero_forcing_beams(q3, b2, targets, combiners, allocate, scenario, status) -> SlotBeams:
    sp = scenario.system
    C = np.vstack([comm_channel(q3, lift(b2), sp)[None, :].conj(),
                   np.array([combiners[k].conj() @ sensing_channel(q3, lift(t), sp)
                             for k, t in enumerate(targets)])])
    C = C / np.linalg.norm(C, axis=1, keepdims=True)
    gram = C @ C.conj().T
    best, best_dirs = None, None
    for lam in (0.0, 1e-4, 1e-3, 1e-2, 1e-1, 1.0, 10.0):
        try:
            D = (C.conj().T @ np.linalg.inv(gram + lam * np.eye(len(C)))).T
        except np.linalg.LinAlgError:
            continue
        D = np.array([_unit(d, c.conj()) for d, c in zip(D, C)])
        p = allocate(D)
        if p is not None and (best is None or p.sum() < best.sum()):
            best, best_dirs = p, D
    if best is None:
        raise StageInfeasible(f"hover beamforming SDP {status}; zero-forcing fallback infeasible")
    vecs = np.sqrt(best)[:, None] * best_dirs
    return SlotBeams(vecs[0], vecs[1:], combiners, float("nan"), float(best.sum()), float("nan"), False, True)


def optimize_slot_beams(q3, b2, targets, gamma: float, rate: float, scenario: Scenario,
                        rng: np.random.Generator | None = None) -> SlotBeams:
    """One slot of the hovering beamforming SDR plus rank-1 recovery.

    ``gamma`` is the per-slot sensing SNR target; ``rate`` the hovering rate.
    """
    sp = scenario.system
    M = sp.num_antennas
    targets = np.atleast_2d(np.asarray(targets, float)).reshape(-1, 2)
    K = len(targets)
    combiners = np.array([mrt_beamformer(q3, lift(t), 0.0, sp, combiner=True) for t in targets]).reshape(K, M)
    rate_factor = 2.0**rate - 1.0
    zero = SlotBeams(np.zeros(M, complex), np.zeros((K, M), complex), combiners, 0.0, 0.0, 0.0, False)
    if rate_factor <= 0 and gamma <= 0:
        return zero
    # reference power: interference-free MRT minima
    dist_c = np.linalg.norm(q3 - lift(b2))
    d_t = np.linalg.norm(q3 - lift(targets), axis=1)
    scale = np.r_[min_comm_power(dist_c, rate, sp, sp.noise_hover) if rate_factor > 0 else 0.0,
                  gamma / mrt_sensing_snr(d_t, 1.0, sp) if gamma > 0 else np.zeros(K)]
    scale = np.maximum(scale, 1e-6 * scale.max())
    prog, basis = _sdp_program(q3, b2, targets, combiners, gamma, rate_factor, scenario, scale)

    def allocate(D):
        gc, G = _gains(q3, b2, targets, D, combiners, scenario)
        return _power_allocation(gc, G, gamma, rate_factor, scenario)

    try:
        sol = solve_conic(prog, tol=1e-8)
        status = sol.status
    except SolverError as exc:
        status = str(exc)
    if status != "optimal":
        # interior-point breakdown on a thin feasible set: fall back to
        # regularized zero-forcing directions, certified by the power LP
        return _zero_forcing_beams(q3, b2, targets, combiners, allocate, scenario, status)
    nb = len(basis)
    mats = [scale[j] * np.einsum("k,kij->ij", sol.x[j * nb:(j + 1) * nb], basis) for j in range(K + 1)]
    sdp_obj = float(sol.objective * scale.sum())
    picks = [extract_rank1(X, tol=1e-6, threshold=np.inf) for X in mats]
    residual = max(p.residual for p in picks)
    dirs = np.array([_unit(p.vector, fallback) for p, fallback in
                     zip(picks, [mrt_beamformer(q3, lift(b2), 1.0, sp)] + list(combiners))])

    best_dirs, best = dirs, allocate(dirs)
    randomized = False
    if residual > RANK1_THRESHOLD or best is None:
        randomized = True
        rng = rng or np.random.default_rng(0)
        roots = []
        for X in mats:
            lam, U = np.linalg.eigh(0.5 * (X + X.conj().T))
            roots.append(U * np.sqrt(np.clip(lam, 0, None)))
        for _ in range(100):
            z = (rng.standard_normal((K + 1, M)) + 1j * rng.standard_normal((K + 1, M))) / math.sqrt(2)
            D = np.array([_unit(R @ zz, d) for R, zz, d in zip(roots, z, dirs)])
            p = allocate(D)
            if p is not None and (best is None or p.sum() < best.sum()):
                best, best_dirs = p, D
    if best is None:
        raise StageInfeasible("no feasible rank-1 beamformer recovered")
    vecs = np.sqrt(best)[:, None] * best_dirs
    return SlotBeams(vecs[0], vecs[1:], combiners, sdp_obj, float(best.sum()), residual, randomized)


def _unit(v, fallback):
    n = np.linalg.norm(v)
    if n <= 1e-300:
        return fallback / np.linalg.norm(fallback)
    return v / n


def group_slot_counts(num_groups: int, num_slots: int) -> np.ndarray:
    """Slots per group when groups take turns slot by slot (group 0 first)."""
    g = np.arange(num_groups)
    return num_slots // num_groups + (g < num_slots % num_groups)


def optimize_hover_beams(q_xy, usv: np.ndarray, target_positions, scenario: Scenario,
                         num_hover_slots: int | None = None, rng: np.random.Generator | None = None,
                         groups: list | None = None) -> list[SlotBeams]:
    """Per-slot beams for USV positions ``usv`` (one row per hovering slot).

    ``groups`` splits the stage's targets into sets sensed in turn; each target
    then needs Γ_tot over the slots of its own group.  One group (the default)
    is the uniform split Γ_tot / N_h.
    """
    sp, req = scenario.system, scenario.requirements
    usv = np.atleast_2d(usv)
    targets = np.atleast_2d(np.asarray(target_positions, float)).reshape(-1, 2)
    K = len(targets)
    n = num_hover_slots or len(usv)
    groups = [np.arange(K)] if groups is None else [np.asarray(g, int) for g in groups]
    counts = group_slot_counts(len(groups), n)
    if np.any(counts == 0):
        raise StageInfeasible("fewer hovering slots than sensing groups")
    q3 = lift(np.asarray(q_xy, float)[:2], sp.altitude)
    out = []
    for i, b in enumerate(usv):
        g = i % len(groups)
        idx = groups[g]
        sb = optimize_slot_beams(q3, b, targets[idx], req.total_snr / counts[g], req.rate_hover, scenario, rng)
        if len(groups) == 1 and np.array_equal(idx, np.arange(K)):
            out.append(sb)
            continue
        sense = np.zeros((K, sp.num_antennas), complex)
        combine = np.array([mrt_beamformer(q3, lift(t), 0.0, sp, combiner=True) for t in targets])
        active = np.zeros(K, bool)
        sense[idx], active[idx] = sb.sense, True
        out.append(SlotBeams(sb.comm, sense, combine, sb.sdp_objective, sb.power, sb.residual,
                             sb.randomized, sb.fallback, active))
    return out


def min_hover_slots(q_xy, target_positions, scenario: Scenario, start: int = 1,
                    limit: int = 100_000, usv_points=None) -> int:
    """Fewest hovering slots whose per-slot sensing targets admit feasible beams.

    The hover-time rule used for planning ignores cross-target interference;
    with several targets on one array the per-slot SINR Γ_tot / N_h can be
    out of reach until N_h grows.  With ``usv_points`` the hovering link to
    each of those USV positions must hold as well; without, only sensing is
    checked.
    """
    req = scenario.requirements
    q3 = lift(np.asarray(q_xy, float)[:2], scenario.system.altitude)
    targets = np.atleast_2d(target_positions)
    links = [(q3[:2], 0.0)] if usv_points is None else [(b, req.rate_hover) for b in np.atleast_2d(usv_points)]

    def feasible(n: int) -> bool:
        try:
            for b, rate in links:
                optimize_slot_beams(q3, b, targets, req.total_snr / n, rate, scenario)
        except (StageInfeasible, SolverError):
            return False
        return True

    lo, hi = max(start, 1) - 1, max(start, 1)
    while not feasible(hi):
        if hi >= limit:
            raise StageInfeasible(f"sensing targets unreachable within {limit} hovering slots")
        lo, hi = hi, min(hi * 2, limit)
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if feasible(mid):
            hi = mid
        else:
            lo = mid
    return hi


def sensing_rounds(q_xy, target_positions, scenario: Scenario, margin: float = 1.0,
                   usv_points=None) -> tuple[int, list]:
    """Fewest hovering slots over rotations of the targets into groups sensed in turn.

    Targets are ordered by their steering phase and dealt round-robin, so the
    most alike steering vectors land in different groups.  Returns the slot
    count and the groups (local indices, hardest group first).  Per-group slot
    needs above one are inflated by ``margin``; the feasibility boundary is
    poorly conditioned.  ``usv_points`` is passed on to `min_hover_slots`.
    """
    sp = scenario.system
    targets = np.atleast_2d(np.asarray(target_positions, float)).reshape(-1, 2)
    K = len(targets)
    q3 = lift(np.asarray(q_xy, float)[:2], sp.altitude)
    order = np.argsort(sp.altitude / np.linalg.norm(q3 - lift(targets), axis=1), kind="stable")

    def need(c: int) -> int:
        return c if c == 1 else math.ceil(margin * c)

    def attempt(G: int, cap: int | None):
        groups = [order[g::G] for g in range(G)]
        counts = []
        for idx in groups:
            try:
                c = need(min_hover_slots(q_xy, targets[idx], scenario, limit=cap or 100_000,
                                         usv_points=usv_points))
            except StageInfeasible:
                return None
            if cap is not None and c > cap:
                return None
            counts.append(c)
        rank = np.argsort(-np.asarray(counts), kind="stable")
        c_max = counts[rank[0]]
        n = G * (c_max - 1) + sum(c == c_max for c in counts)
        return n, [groups[r] for r in rank]

    best = attempt(K, None)
    for G in range(1, K):
        # a G-group rotation can only win with every group under this many slots
        cap = (best[0] - 2) // G + 1
        if cap < 1:
            continue
        got = attempt(G, cap)
        if got is not None and got[0] < best[0]:
            best = got
    return best


# -- hovering mode: USV half-step -------------------------------------------

def _rate_function(q3, b2, w, V, rate_factor, params):
    """f(b) = |h^H w|^2 - rf * sum_k |h^H v_k|^2 and its gradient in the USV position."""
    H = params.altitude
    diff = np.asarray(b2, float) - q3[:2]
    d = math.sqrt(float(diff @ diff) + H**2)
    amp = params.channel_gain * params.small_scale_fading
    m = np.arange(params.num_antennas)
    k = 2 * np.pi * params.antenna_spacing / params.wavelength
    a = steering_from_cos(H / d, params)
    da = a * (1j * k * m) * (-H / d**2)

    def power_and_slope(v):
        s = np.vdot(a, v)
        ds = np.vdot(da, v)
        return abs(s) ** 2, 2 * float(np.real(np.conj(s) * ds))

    p_w, dp_w = power_and_slope(w)
    p_v, dp_v = 0.0, 0.0
    for v in V:
        pv, dpv = power_and_slope(v)
        p_v += pv
        dp_v += dpv
    g = p_w - rate_factor * p_v
    dg = dp_w - rate_factor * dp_v
    f = amp**2 / d**4 * g
    df_dd = amp**2 * (dg / d**4 - 4 * g / d**5)
    return f, df_dd * diff / d


class _HoverUsvSurrogate:
    def __init__(self, n: int, num_obstacles: int, with_rate: bool, scenario: Scenario):
        import cvxpy as cp

        sp = scenario.system
        delta = sp.slot_duration
        self.B = cp.Variable((n + 1, 2))
        self.ends = cp.Parameter((2, 2))
        self.W = cp.Parameter((n, 2))
        self.grad = cp.Parameter((n, 2))
        self.const = cp.Parameter(n)
        self.normals = [cp.Parameter((n + 1, 2)) for _ in range(num_obstacles)]
        self.offsets = [cp.Parameter(n + 1) for _ in range(num_obstacles)]
        dB = self.B[1:] - self.B[:-1]
        cons = [self.B[0] == self.ends[0], self.B[n] == self.ends[1],
                cp.norm(dB, axis=1) <= sp.usv_max_speed * delta]
        obj = [sp.usv_drag * delta * cp.sum_squares(dB / delta - self.W)]
        if with_rate:
            cons.append(cp.sum(cp.multiply(self.grad, self.B[1:]), axis=1) + self.const >= 1.0)
        for U, r in zip(self.normals, self.offsets):
            s = cp.Variable(n + 1, nonneg=True)
            cons.append(cp.sum(cp.multiply(U, self.B), axis=1) + s >= r)
            obj.append(PENALTY * cp.sum(s))
        self.problem = cp.Problem(cp.Minimize(1e-3 * cp.sum(cp.hstack(obj))), cons)


_HOVER_CACHE: dict = {}


def _rate_shortfall(B, q3, beams, scenario):
    sp, req = scenario.system, scenario.requirements
    rf = 2.0**req.rate_hover - 1.0
    if rf <= 0:
        return 0.0
    need = rf * sp.noise_hover / sp.duty
    short = 0.0
    for b, sb in zip(B[1:], beams):
        f, _ = _rate_function(q3, b, sb.comm, sb.sense, rf, sp)
        short += max(0.0, 1.0 - f / need)
    return short


def optimize_hover_usv(q_xy, beams: list[SlotBeams], stage: StageProblem, scenario: Scenario,
                       init: np.ndarray) -> tuple[np.ndarray, list[float]]:
    """USV path for fixed hovering beams; the rate constraint is linearised in b."""
    sp, req = scenario.system, scenario.requirements
    n = stage.num_slots
    q3 = lift(np.asarray(q_xy, float)[:2], sp.altitude)
    rf = 2.0**req.rate_hover - 1.0
    obstacles = scenario.world.obstacles
    key = (n, len(obstacles), rf > 0, scenario.system)
    if key not in _HOVER_CACHE:
        if len(_HOVER_CACHE) > 64:
            _HOVER_CACHE.clear()
        _HOVER_CACHE[key] = _HoverUsvSurrogate(n, len(obstacles), rf > 0, scenario)
    sur = _HOVER_CACHE[key]
    need = rf * sp.noise_hover / sp.duty if rf > 0 else 1.0

    def merit(B):
        viol = float(np.sum(_obstacle_violation(B[1:-1], obstacles, sp.obstacle_radius)))
        return _usv_energy(B, scenario) + PENALTY * (viol + _rate_shortfall(B, q3, beams, scenario))

    def solve(B):
        sur.ends.value = np.vstack([stage.usv_start, stage.usv_end])
        sur.W.value = current_at(scenario.current, B[1:])
        grads = np.zeros((n, 2))
        const = np.zeros(n)
        if rf > 0:
            for i, (b, sb) in enumerate(zip(B[1:], beams)):
                f, g = _rate_function(q3, b, sb.comm, sb.sense, rf, sp)
                grads[i] = g / need
                const[i] = (f - g @ b) / need
        sur.grad.value = grads
        sur.const.value = const
        for o, U, r in zip(obstacles, sur.normals, sur.offsets):
            diff = B - o
            dist = np.maximum(np.linalg.norm(diff, axis=1), 1e-9)
            u = diff / dist[:, None]
            off = sp.obstacle_radius + u @ o
            u[0] = u[-1] = 0.0
            off[0] = off[-1] = 0.0
            U.value, r.value = u, off
        status = solve_cvxpy(sur.problem)
        if status not in ("optimal", "optimal_inaccurate"):
            raise SurrogateInfeasible(f"stage {stage.index}: USV surrogate {status}")
        out = sur.B.value.copy()
        out[0], out[-1] = stage.usv_start, stage.usv_end
        return _clip_speeds(out, sp.usv_max_speed * sp.slot_duration)

    try:
        state = sca_loop(solve, init, merit, eps=sp.sca_tolerance, max_iter=sp.max_iterations,
                         blend=lambda a, b, s: (1 - s) * a + s * b)
    except SurrogateInfeasible as exc:
        log.warning("%s; keeping previous USV path", exc)
        return init, [merit(init)]
    return state.iterate, state.history


def _hover_energy(B, beams, scenario):
    sp = scenario.system
    n = len(B) - 1
    transmit = sum(float(np.sum(np.abs(sb.comm) ** 2) + np.sum(np.abs(sb.sense) ** 2)) for sb in beams)
    return n * sp.slot_duration * sp.hover_power + transmit * sp.slot_duration + _usv_energy(B, scenario)


def _hover_schedule(stage, beams: list[SlotBeams], scenario) -> BeamformingSchedule:
    sp = scenario.system
    out = BeamformingSchedule.empty(len(beams), scenario.world.num_targets, sp.num_antennas)
    for i, sb in enumerate(beams):
        out.comm[i] = sb.comm
        out.sense[i, stage.targets] = sb.sense
        out.combine[i, stage.targets] = sb.combine
        out.active[i, stage.targets] = True if sb.active is None else sb.active
    return out


def alternate_optimize_hover(stage: StageProblem, scenario: Scenario, eps: float | None = None,
                             max_iter: int | None = None, rng: np.random.Generator | None = None) -> StageSolution:
    """Alternate the per-slot beam SDPs and the USV path until the energy settles."""
    sp = scenario.system
    stage.validate(scenario)
    eps = sp.sca_tolerance if eps is None else eps
    max_iter = sp.max_iterations if max_iter is None else max_iter
    n = stage.num_slots
    q = stage.uav_start
    B = stage.warm_usv if stage.warm_usv is not None else _lerp(stage.usv_start, stage.usv_end, n)
    B = _push_clear(B, scenario.world.obstacles, sp.obstacle_radius * 1.05)
    beams = optimize_hover_beams(q, B[1:], stage.target_positions, scenario, n, rng, stage.groups)
    energy = _hover_energy(B, beams, scenario)
    history = [energy]
    notes = []
    for it in range(max_iter):
        B_new, _ = optimize_hover_usv(q, beams, stage, scenario, B)
        try:
            beams_new = optimize_hover_beams(q, B_new[1:], stage.target_positions, scenario, n, rng,
                                             stage.groups)
        except StageInfeasible as exc:
            notes.append(f"beam step failed at iteration {it + 1}: {exc}")
            break
        e_new = _hover_energy(B_new, beams_new, scenario)
        if e_new > energy:
            notes.append(f"no descent at iteration {it + 1}")
            break
        B, beams = B_new, beams_new
        change = energy - e_new
        energy = e_new
        history.append(energy)
        if change <= eps * max(1.0, abs(energy)):
            break
    traj = Trajectory(np.tile(q, (n + 1, 1)), B, np.full(n, HOVER), np.full(n, stage.index),
                      sp.slot_duration, sp.altitude)
    sol = StageSolution(stage, traj, _hover_schedule(stage, beams, scenario), history, notes)
    sol.sdp_objective = float(np.nansum([sb.sdp_objective for sb in beams]))
    sol.extracted_power = float(sum(sb.power for sb in beams))
    sol.randomized = any(sb.randomized for sb in beams)
    fallbacks = sum(sb.fallback for sb in beams)
    if fallbacks:
        sol.notes.append(f"{fallbacks} hovering slots used zero-forcing beams after an SDP breakdown")
    return sol


# -- follower USV for a fixed UAV timeline ----------------------------------

class _FollowerSurrogate:
    def __init__(self, n, num_obstacles, scenario, reach):
        import cvxpy as cp

        sp = scenario.system
        delta = sp.slot_duration
        self.B = cp.Variable((n + 1, 2))
        self.ends = cp.Parameter((2, 2))
        self.W = cp.Parameter((n, 2))
        self.Q = cp.Parameter((n + 1, 2))
        self.normals = [cp.Parameter((n + 1, 2)) for _ in range(num_obstacles)]
        self.offsets = [cp.Parameter(n + 1) for _ in range(num_obstacles)]
        dB = self.B[1:] - self.B[:-1]
        cons = [self.B[0] == self.ends[0], self.B[n] == self.ends[1],
                cp.norm(dB, axis=1) <= sp.usv_max_speed * delta,
                cp.norm(self.Q[1:] - self.B[1:], axis=1) <= reach]
        obj = [sp.usv_drag * delta * cp.sum_squares(dB / delta - self.W)]
        for U, r in zip(self.normals, self.offsets):
            s = cp.Variable(n + 1, nonneg=True)
            cons.append(cp.sum(cp.multiply(U, self.B), axis=1) + s >= r)
            obj.append(PENALTY * cp.sum(s))
        self.problem = cp.Problem(cp.Minimize(1e-3 * cp.sum(cp.hstack(obj))), cons)


def optimize_follower_usv(uav: np.ndarray, usv_start, usv_end, scenario: Scenario,
                          comm_range: float) -> tuple[np.ndarray, list[float]]:
    """USV path minimising its own energy while staying within ``comm_range`` (3-D) of the UAV."""
    sp = scenario.system
    n = len(uav) - 1
    reach = math.sqrt(max(comm_range**2 - sp.altitude**2, 0.0))
    obstacles = scenario.world.obstacles
    sur = _FollowerSurrogate(n, len(obstacles), scenario, reach)
    sur.ends.value = np.vstack([usv_start, usv_end])
    sur.Q.value = np.asarray(uav, float)

    def merit(B):
        viol = float(np.sum(_obstacle_violation(B[1:-1], obstacles, sp.obstacle_radius)))
        far = np.linalg.norm(uav[1:] - B[1:], axis=1) - reach
        return _usv_energy(B, scenario) + PENALTY * (viol + float(np.sum(np.maximum(far, 0.0))))

    def solve(B):
        sur.W.value = current_at(scenario.current, B[1:])
        for o, U, r in zip(obstacles, sur.normals, sur.offsets):
            diff = B - o
            dist = np.maximum(np.linalg.norm(diff, axis=1), 1e-9)
            u = diff / dist[:, None]
            off = sp.obstacle_radius + u @ o
            u[0] = u[-1] = 0.0
            off[0] = off[-1] = 0.0
            U.value, r.value = u, off
        status = solve_cvxpy(sur.problem)
        if status not in ("optimal", "optimal_inaccurate"):
            raise SurrogateInfeasible(f"follower USV surrogate {status}")
        out = sur.B.value.copy()
        out[0], out[-1] = usv_start, usv_end
        return _clip_speeds(out, sp.usv_max_speed * sp.slot_duration)

    # project the straight line into the UAV's communication disc as a start
    B0 = _lerp(usv_start, usv_end, n)
    off = B0 - uav
    dist = np.linalg.norm(off, axis=1)
    scale = np.where(dist > reach, reach / np.maximum(dist, 1e-12), 1.0)
    B0 = uav + off * scale[:, None]
    B0[0], B0[-1] = usv_start, usv_end
    B0 = _push_clear(B0, obstacles, sp.obstacle_radius * 1.05)
    state = sca_loop(solve, B0, merit, eps=sp.sca_tolerance, max_iter=sp.max_iterations,
                     blend=lambda a, b, s: (1 - s) * a + s * b)
    return state.iterate, state.history
