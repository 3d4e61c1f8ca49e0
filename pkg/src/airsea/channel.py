"""Closed-form channels, SNRs, rates and distance thresholds.

Positions are 3-D metre vectors; :func:`lift` puts a horizontal point at a
given height.  All SNRs are linear.
"""
from __future__ import annotations

import numpy as np

from .scenario import SystemParams


def lift(p, z: float = 0.0) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if p.shape[-1] == 3:
        return p
    return np.concatenate([p, np.full(p.shape[:-1] + (1,), z)], axis=-1)


def _distance(q, p) -> float:
    d = float(np.linalg.norm(np.asarray(q, float) - np.asarray(p, float)))
    if d <= 0.0:
        raise ValueError("coincident points: steering direction undefined")
    return d


def steering_from_cos(cos_phi: float, params: SystemParams) -> np.ndarray:
    m = np.arange(params.num_antennas)
    return np.exp(2j * np.pi * m * params.antenna_spacing * cos_phi / params.wavelength)


def steering(q, p, params: SystemParams) -> np.ndarray:
    """ULA response towards ``p`` seen from the UAV at ``q``; cos(phi) = H / |q - p|."""
    d = _distance(q, p)
    return steering_from_cos(params.altitude / d, params)


def comm_channel(q, b, params: SystemParams) -> np.ndarray:
    d = _distance(q, b)
    return params.channel_gain * params.small_scale_fading / d**2 * steering_from_cos(params.altitude / d, params)


def sensing_channel(q, t, params: SystemParams) -> np.ndarray:
    """Round-trip M x M target channel.

    The array-normalisation 1/sqrt(M) keeps the matched-filter SNR at the
    single-M array gain that the sensing distance threshold is built on.
    """
    d = _distance(q, t)
    a = steering_from_cos(params.altitude / d, params)
    reflection = np.sqrt(params.mean_rcs / (4 * np.pi * d**2))
    scale = params.sensing_gain * reflection / (2 * d * np.sqrt(params.num_antennas))
    return scale * np.outer(a, a.conj())


def flying_snr(q, b, w, params: SystemParams) -> float:
    h = comm_channel(q, b, params)
    return params.duty * abs(np.vdot(h, w)) ** 2 / params.noise_comm


def flying_rate(q, b, w, params: SystemParams) -> float:
    return float(np.log2(1.0 + flying_snr(q, b, w, params)))


def hover_snr(q, b, w_h, sense_beams, active, params: SystemParams) -> float:
    h = comm_channel(q, b, params)
    signal = params.duty * abs(np.vdot(h, w_h)) ** 2
    interference = sum(params.duty * abs(np.vdot(h, v)) ** 2
                       for v, on in zip(sense_beams, active) if on)
    return signal / (interference + params.noise_hover)


def hover_rate(q, b, w_h, sense_beams, active, params: SystemParams) -> float:
    return float(np.log2(1.0 + hover_snr(q, b, w_h, sense_beams, active, params)))


def sensing_snr(q, t_k, k: int, sense_beams, u_k, active, params: SystemParams) -> float:
    """SNR of target ``k`` (at ``t_k``) with beams ``sense_beams`` and combiner ``u_k``.

    ``active[j]`` flags which beams radiate in this slot; beam ``k`` itself is
    always counted as the intended signal.
    """
    u_k = np.asarray(u_k)
    norm_u = float(np.vdot(u_k, u_k).real)
    if norm_u <= 0.0:
        raise ValueError("zero receive combiner")
    Hk = sensing_channel(q, t_k, params)
    proj = u_k.conj() @ Hk
    signal = params.duty * abs(proj @ sense_beams[k]) ** 2
    interference = sum(params.duty * abs(proj @ v) ** 2
                       for j, (v, on) in enumerate(zip(sense_beams, active)) if on and j != k)
    return float(signal / (interference + params.noise_sense * norm_u))


def mrt_sensing_snr(distance, power, params: SystemParams):
    """Interference-free matched-filter SNR at 3-D range ``distance``."""
    d = np.asarray(distance, dtype=float)
    num = params.duty * params.mean_rcs * params.sensing_gain**2 * power * params.num_antennas
    return num / (16 * np.pi * params.noise_sense * d**4)


def comm_gain_constant(params: SystemParams, noise: float | None = None) -> float:
    """SNR x d^4 / p under MRT for the UAV-USV link."""
    noise = params.noise_comm if noise is None else noise
    return (params.duty * params.num_antennas * params.channel_gain**2
            * params.small_scale_fading**2 / noise)


def comm_distance_threshold(rate: float, power: float, params: SystemParams,
                            noise: float | None = None) -> float:
    """Largest 3-D UAV-USV distance at which MRT with ``power`` still meets ``rate``."""
    if rate <= 0 or power <= 0:
        raise ValueError("rate and power must be positive")
    return float((comm_gain_constant(params, noise) * power / (2.0**rate - 1.0)) ** 0.25)


def sensing_distance_threshold(snr: float, power: float, params: SystemParams) -> float:
    if snr <= 0 or power <= 0:
        raise ValueError("SNR threshold and power must be positive")
    num = params.duty * params.mean_rcs * params.sensing_gain**2 * power * params.num_antennas
    return float((num / (16 * np.pi * snr * params.noise_sense)) ** 0.25)


def mrt_beamformer(q, p, power: float, params: SystemParams, combiner: bool = False) -> np.ndarray:
    if power < 0:
        raise ValueError("negative power")
    a = steering(q, p, params)
    unit = a / np.linalg.norm(a)
    return unit if combiner else np.sqrt(power) * unit


def min_comm_power(distance, rate: float, params: SystemParams, noise: float | None = None):
    """MRT power needed to hold ``rate`` at 3-D range ``distance`` with no interference."""
    d = np.asarray(distance, dtype=float)
    return (2.0**rate - 1.0) * d**4 / comm_gain_constant(params, noise)
