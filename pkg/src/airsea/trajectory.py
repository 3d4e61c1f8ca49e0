"""Slot-resolved trajectories and beam schedules."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

FLY, HOVER = "F", "H"


@dataclass
class Trajectory:
    """UAV/USV positions at slot boundaries 0..N plus per-slot metadata.

    ``uav`` and ``usv`` have N+1 rows (row 0 is the start point); ``mode``,
    ``stage`` have N entries describing slot n = 1..N.
    """

    uav: np.ndarray
    usv: np.ndarray
    mode: np.ndarray
    stage: np.ndarray
    delta: float
    altitude: float

    @property
    def num_slots(self) -> int:
        return len(self.mode)

    def uav3(self) -> np.ndarray:
        return np.column_stack([self.uav, np.full(len(self.uav), self.altitude)])

    def uav_speeds(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.uav, axis=0), axis=1) / self.delta

    def usv_velocities(self) -> np.ndarray:
        return np.diff(self.usv, axis=0) / self.delta

    @classmethod
    def concatenate(cls, parts: list["Trajectory"]) -> "Trajectory":
        first = parts[0]
        uav = [first.uav[:1]] + [p.uav[1:] for p in parts]
        usv = [first.usv[:1]] + [p.usv[1:] for p in parts]
        return cls(
            uav=np.concatenate(uav),
            usv=np.concatenate(usv),
            mode=np.concatenate([p.mode for p in parts]),
            stage=np.concatenate([p.stage for p in parts]),
            delta=first.delta,
            altitude=first.altitude,
        )


@dataclass
class BeamformingSchedule:
    """Per-slot transmit vectors.

    ``comm[n]`` is w_f or w_h for slot n+1; ``sense[n, k]`` is v_k (zero when
    target k is not scheduled, see ``active``); ``combine[n, k]`` is u_k.
    """

    comm: np.ndarray
    sense: np.ndarray
    active: np.ndarray
    combine: np.ndarray

    @classmethod
    def empty(cls, num_slots: int, num_targets: int, num_antennas: int) -> "BeamformingSchedule":
        return cls(
            comm=np.zeros((num_slots, num_antennas), complex),
            sense=np.zeros((num_slots, num_targets, num_antennas), complex),
            active=np.zeros((num_slots, num_targets), bool),
            combine=np.zeros((num_slots, num_targets, num_antennas), complex),
        )

    @property
    def num_slots(self) -> int:
        return len(self.comm)

    def comm_power(self) -> np.ndarray:
        return np.sum(np.abs(self.comm) ** 2, axis=1)

    def sense_power(self) -> np.ndarray:
        p = np.sum(np.abs(self.sense) ** 2, axis=2)
        return np.sum(np.where(self.active, p, 0.0), axis=1)

    @classmethod
    def concatenate(cls, parts: list["BeamformingSchedule"]) -> "BeamformingSchedule":
        return cls(
            comm=np.concatenate([p.comm for p in parts]),
            sense=np.concatenate([p.sense for p in parts]),
            active=np.concatenate([p.active for p in parts]),
            combine=np.concatenate([p.combine for p in parts]),
        )
