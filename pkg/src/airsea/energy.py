"""Propulsion and transmit energy for the UAV and the USV."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .scenario import CurrentField, SystemParams, current_at
from .trajectory import FLY, BeamformingSchedule, Trajectory


def xi_from_speed(v, params_or_v0) -> np.ndarray:
    """Normalised induced-velocity factor xi(v) of the rotary-wing model."""
    v0 = getattr(params_or_v0, "mean_induced_speed", params_or_v0)
    r = np.asarray(v, dtype=float) ** 2 / (2.0 * v0**2)
    # sqrt(1 + r^2) - r written without cancellation
    return np.sqrt(1.0 / (np.sqrt(1.0 + r**2) + r))


def xi_surrogate(xi, v, xi_k, v_k, v0: float):
    """First-order lower bound of xi^2 + v^2/v0^2 around (xi_k, v_k).

    ``1/xi^2 <= xi_surrogate(...)`` is a convex restriction of
    ``1/xi^2 <= xi^2 + v^2/v0^2`` that is tight at the expansion point.
    """
    return xi_k**2 + 2 * xi_k * (xi - xi_k) + v_k**2 / v0**2 + 2 * v_k * (v - v_k) / v0**2


def uav_power_flying(v, params: SystemParams):
    v = np.asarray(v, dtype=float)
    blade = params.blade_profile_power * (1.0 + 3.0 * v**2 / params.tip_speed**2)
    parasite = 0.5 * params.drag_coeff * params.air_density * params.rotor_solidity * params.disc_area * v**3
    induced = params.induced_power * xi_from_speed(v, params)
    return blade + parasite + induced


def parasite_coeff(params: SystemParams) -> float:
    return 0.5 * params.drag_coeff * params.air_density * params.rotor_solidity * params.disc_area


def max_range_speed(params: SystemParams) -> float:
    """Speed minimising energy per metre, p_f(v)/v, within the speed limit."""
    from scipy.optimize import minimize_scalar

    res = minimize_scalar(lambda v: float(uav_power_flying(v, params)) / v,
                          bounds=(1e-2, params.uav_max_speed), method="bounded",
                          options={"xatol": 1e-6})
    return float(res.x)


def uav_segment_energy(length: float, duration: float, params: SystemParams) -> float:
    if duration <= 0:
        if length > 1e-9:
            raise ValueError("nonzero flight in zero time")
        return 0.0
    return float(duration * uav_power_flying(length / duration, params))


def usv_slot_energy(b_prev, b_cur, current: CurrentField, params: SystemParams) -> float:
    """alpha |v_usv - v_w(b_cur)|^2 delta for one slot."""
    b_prev = np.asarray(b_prev, float)
    b_cur = np.asarray(b_cur, float)
    rel = (b_cur - b_prev) / params.slot_duration - current_at(current, b_cur)
    return float(params.usv_drag * np.dot(rel, rel) * params.slot_duration)


def segment_sample_points(b0, b1, resolution: float) -> np.ndarray:
    """Start points of the ceil(d / resolution) equal pieces of segment b0 -> b1."""
    b0 = np.asarray(b0, float)
    b1 = np.asarray(b1, float)
    d = float(np.linalg.norm(b1 - b0))
    n = max(1, math.ceil(d / resolution - 1e-12))
    s = np.arange(n) / n
    return b0 + s[:, None] * (b1 - b0)


def usv_segment_energy(b0, b1, duration: float, current: CurrentField, params: SystemParams) -> float:
    """USV energy for a straight constant-velocity leg, current sampled per piece."""
    if duration <= 0:
        if np.linalg.norm(np.subtract(b1, b0)) > 1e-9:
            raise ValueError("nonzero sailing in zero time")
        return 0.0
    velocity = (np.asarray(b1, float) - np.asarray(b0, float)) / duration
    pts = segment_sample_points(b0, b1, params.current_resolution)
    rel = velocity - current_at(current, pts)
    return float(params.usv_drag * duration * np.mean(np.sum(rel**2, axis=1)))


def stage_energy_estimate(uav_waypoints, usv_anchors, t_fly, t_hover,
                          current: CurrentField, params: SystemParams) -> float:
    """Stage-averaged mission energy.

    ``uav_waypoints`` = [q_start, q_1..q_E, q_end] (E+2 rows);
    ``usv_anchors`` = [b_start, b^f_1, b^h_1, ..., b^f_E, b^h_E, b_end] (2E+2 rows);
    ``t_fly`` has E+1 entries and ``t_hover`` E.
    """
    q = np.asarray(uav_waypoints, float).reshape(-1, 2)
    b = np.asarray(usv_anchors, float).reshape(-1, 2)
    t_fly = np.atleast_1d(np.asarray(t_fly, float))
    t_hover = np.atleast_1d(np.asarray(t_hover, float)) if len(np.atleast_1d(t_hover)) else np.zeros(0)
    if len(t_fly) == 0:
        return 0.0
    num_hover = len(t_fly) - 1
    if len(q) != num_hover + 2 or len(b) != 2 * num_hover + 2 or len(t_hover) != num_hover:
        raise ValueError("stage arrays have mismatched lengths")
    total = 0.0
    for e in range(num_hover + 1):
        total += uav_segment_energy(np.linalg.norm(q[e + 1] - q[e]), t_fly[e], params)
        total += usv_segment_energy(b[2 * e], b[2 * e + 1], t_fly[e], current, params)
    for e in range(num_hover):
        total += t_hover[e] * params.hover_power
        total += usv_segment_energy(b[2 * e + 1], b[2 * e + 2], t_hover[e], current, params)
    return float(total)


@dataclass
class PowerBreakdown:
    uav_propulsion: float
    uav_transmit: float
    usv_propulsion: float
    per_stage: list = field(default_factory=list)

    @property
    def total(self) -> float:
        return self.uav_propulsion + self.uav_transmit + self.usv_propulsion

    def to_dict(self) -> dict:
        return {
            "uav_propulsion_J": self.uav_propulsion,
            "uav_transmit_J": self.uav_transmit,
            "usv_propulsion_J": self.usv_propulsion,
            "total_J": self.total,
            "per_stage": [{"stage": int(s), "flying_J": f, "hovering_J": h} for s, f, h in self.per_stage],
        }


def slot_energies(traj: Trajectory, beams: BeamformingSchedule, current: CurrentField,
                  params: SystemParams) -> dict[str, np.ndarray]:
    """Per-slot power draws (W) for the three energy components."""
    if beams.num_slots != traj.num_slots:
        raise ValueError(f"schedule has {beams.num_slots} slots, trajectory {traj.num_slots}")
    speeds = traj.uav_speeds()
    flying = traj.mode == FLY
    uav_prop = np.where(flying, uav_power_flying(speeds, params), params.hover_power)
    transmit = beams.comm_power() + beams.sense_power()
    rel = traj.usv_velocities() - current_at(current, traj.usv[1:])
    usv_prop = params.usv_drag * np.sum(rel**2, axis=1) if traj.num_slots else np.zeros(0)
    return {"uav_prop": uav_prop, "transmit": transmit, "usv_prop": usv_prop}


def account_trajectory(traj: Trajectory, beams: BeamformingSchedule, current: CurrentField,
                       params: SystemParams) -> PowerBreakdown:
    p = slot_energies(traj, beams, current, params)
    delta = traj.delta
    per_slot = (p["uav_prop"] + p["transmit"] + p["usv_prop"]) * delta
    per_stage = []
    for s in np.unique(traj.stage):
        in_stage = traj.stage == s
        fly = float(per_slot[in_stage & (traj.mode == FLY)].sum())
        hov = float(per_slot[in_stage & (traj.mode != FLY)].sum())
        per_stage.append((int(s), fly, hov))
    return PowerBreakdown(
        uav_propulsion=float(p["uav_prop"].sum() * delta),
        uav_transmit=float(p["transmit"].sum() * delta),
        usv_propulsion=float(p["usv_prop"].sum() * delta),
        per_stage=per_stage,
    )
