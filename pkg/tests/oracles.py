"""Independent reference computations used by the tests.

Nothing here imports the package's numerics: formulas are re-derived with
plain loops so that a shared bug cannot make a test pass.
"""
from __future__ import annotations

import cmath
import itertools
import math

import numpy as np
from scipy.optimize import brentq


def steering_loop(q, p, M, spacing_over_wavelength, altitude):
    d = math.dist(q, p)
    c = altitude / d
    return np.array([cmath.exp(2j * math.pi * m * spacing_over_wavelength * c) for m in range(M)])


def comm_rate_loop(q, b, w, sp):
    """log2(1 + duty |h^H w|^2 / sigma^2) with h built element by element."""
    d = math.dist(q, b)
    a = steering_loop(q, b, sp.num_antennas, sp.antenna_spacing / sp.wavelength, sp.altitude)
    inner = sum((sp.channel_gain * sp.small_scale_fading / d**2 * a[m]).conjugate() * w[m]
                for m in range(len(a)))
    duty = sp.scans_per_slot * sp.pulse_time / sp.slot_duration
    return math.log2(1 + duty * abs(inner) ** 2 / sp.noise_comm)


def mrt_comm_rate(d, power, sp):
    """Rate of an MRT link at 3-D distance d (array gain M)."""
    duty = sp.scans_per_slot * sp.pulse_time / sp.slot_duration
    snr = duty * power * sp.num_antennas * (sp.channel_gain * sp.small_scale_fading) ** 2 / (sp.noise_comm * d**4)
    return math.log2(1 + snr)


def sensing_snr_closed_form(d, power, sp):
    """Single target, MRT transmit and matched-filter receive: N_s t_p/delta * eta beta^2 p M / (16 pi sigma^2 d^4)."""
    duty = sp.scans_per_slot * sp.pulse_time / sp.slot_duration
    return duty * sp.mean_rcs * sp.sensing_gain**2 * power * sp.num_antennas / (16 * math.pi * sp.noise_sense * d**4)


def sensing_snr_loop(q, targets, k, beams, combiner, sp):
    """SINR of target k by explicit double sums over antennas."""
    M = sp.num_antennas
    duty = sp.scans_per_slot * sp.pulse_time / sp.slot_duration

    def response(j):
        t = targets[k]
        d = math.dist(q, t)
        a = steering_loop(q, t, M, sp.antenna_spacing / sp.wavelength, sp.altitude)
        amp = sp.sensing_gain * math.sqrt(sp.mean_rcs / (4 * math.pi * d**2)) / (2 * d * math.sqrt(M))
        # u^H (amp a a^H) v_j
        uha = sum(combiner[m].conjugate() * a[m] for m in range(M))
        ahv = sum(a[m].conjugate() * beams[j][m] for m in range(M))
        return amp * uha * ahv

    signal = duty * abs(response(k)) ** 2
    interference = sum(duty * abs(response(j)) ** 2 for j in range(len(beams)) if j != k)
    noise = sp.noise_sense * sum(abs(x) ** 2 for x in combiner)
    return signal / (interference + noise)


def bisect_distance(f, target, lo=1e-3, hi=1e7):
    """Distance where the decreasing function f crosses ``target``."""
    return brentq(lambda d: f(d) - target, lo, hi, xtol=1e-13, rtol=1e-15, maxiter=500)


def uav_power_literal(v, sp):
    """Rotary-wing propulsion power, literal form with the nested square root."""
    blade = sp.blade_profile_power * (1 + 3 * v**2 / sp.tip_speed**2)
    induced = sp.induced_power * math.sqrt(math.sqrt(1 + v**4 / (4 * sp.mean_induced_speed**4))
                                           - v**2 / (2 * sp.mean_induced_speed**2))
    parasite = 0.5 * sp.drag_coeff * sp.air_density * sp.rotor_solidity * sp.disc_area * v**3
    return blade + induced + parasite


def max_range_speed_grid(sp, step=1e-4):
    v = np.arange(0.5, sp.uav_max_speed + step / 2, step)
    e = np.array([uav_power_literal(x, sp) / x for x in v])
    return float(v[int(np.argmin(e))])


def path_cost_loop(C, path):
    return sum(C[path[i]][path[i + 1]] for i in range(len(path) - 1))


def brute_force_path(C, start, end):
    inner = [i for i in range(len(C)) if i not in (start, end)]
    best = (math.inf, None)
    for perm in itertools.permutations(inner):
        path = (start, *perm, end)
        cost = path_cost_loop(C, path)
        if cost < best[0]:
            best = (cost, list(path))
    return best


def resum_energy(traj, beams, scenario):
    """Mission energy from the trajectory by a slot loop, independent of the accounting module."""
    sp = scenario.system
    cur = scenario.current
    total = 0.0
    for n in range(traj.num_slots):
        dq = np.asarray(traj.uav[n + 1]) - np.asarray(traj.uav[n])
        v = math.hypot(*dq) / sp.slot_duration
        p_uav = uav_power_literal(v, sp) if traj.mode[n] == "F" else sp.blade_profile_power + sp.induced_power
        p_tx = float(np.sum(np.abs(beams.comm[n]) ** 2))
        for k in range(beams.sense.shape[1]):
            if beams.active[n, k]:
                p_tx += float(np.sum(np.abs(beams.sense[n, k]) ** 2))
        b = np.asarray(traj.usv[n + 1])
        vel = (b - np.asarray(traj.usv[n])) / sp.slot_duration
        if cur.kind == "zero":
            w = np.zeros(2)
        elif cur.kind == "uniform":
            w = np.asarray(cur.uniform, float)
        else:
            x, y = b
            w = cur.max_speed * np.array([0.8 - 0.03 * math.sin(0.06 * x) * math.cos(0.03 * y),
                                          -math.cos(0.06 * x) * math.cos(0.03 * y)])
        p_usv = sp.usv_drag * float(np.sum((vel - w) ** 2))
        total += (p_uav + p_tx + p_usv) * sp.slot_duration
    return total


def ball_socp_optimum(c, center, radius):
    """min c'x s.t. ||x - center|| <= radius, by projected subgradient descent."""
    x = np.array(center, float)
    for it in range(1, 20001):
        x = x - (radius / math.sqrt(it)) * c / np.linalg.norm(c)
        off = x - center
        n = np.linalg.norm(off)
        if n > radius:
            x = center + off * radius / n
    return float(c @ x), x
