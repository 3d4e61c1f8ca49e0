"""World description, physical parameters and the water-current field.

Everything here is immutable once built.  Scenario files are JSON with four
sections (``system``, ``requirements``, ``world``, ``current``); fields whose
names end in ``_db`` are power ratios in dB and fields ending in ``_dbm`` are
absolute powers in dBm.  Both are converted to linear SI values on load.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any

import numpy as np


class ScenarioError(ValueError):
    """Raised when a scenario file cannot be parsed or violates an invariant."""


def db_to_linear(x_db: float) -> float:
    return 10.0 ** (x_db / 10.0)


def dbm_to_watt(x_dbm: float) -> float:
    return 10.0 ** ((x_dbm - 30.0) / 10.0)


def linear_to_db(x: float) -> float:
    return 10.0 * math.log10(x)


@dataclass(frozen=True)
class SystemParams:
    num_antennas: int = 4
    altitude: float = 100.0
    slot_duration: float = 1.0
    scans_per_slot: int = 100
    pulse_time: float = 0.005
    listen_time: float = 0.005
    # 14.8 dB gains stored linear, used as amplitude factors
    channel_gain: float = 10.0 ** 1.48
    small_scale_fading: float = 1.0
    sensing_gain: float = 10.0 ** 1.48
    mean_rcs: float = 0.1
    noise_comm: float = 1e-14
    noise_sense: float = 1e-14
    noise_hover: float = 1e-14
    antenna_spacing: float = 0.05
    wavelength: float = 0.1
    blade_profile_power: float = 80.0
    induced_power: float = 88.63
    tip_speed: float = 120.0
    mean_induced_speed: float = 4.03
    drag_coeff: float = 0.6
    air_density: float = 1.225
    rotor_solidity: float = 0.05
    disc_area: float = 0.503
    usv_drag: float = 20.0
    power_budget: float = 20.0
    sense_power: float = 5.0
    comm_power: float = 5.0
    uav_max_speed: float = 20.0
    usv_max_speed: float = 10.0
    obstacle_radius: float = 10.0
    current_resolution: float = 10.0
    max_simultaneous_targets: int = 8
    sca_tolerance: float = 1e-3
    max_iterations: int = 50

    @property
    def duty(self) -> float:
        """Fraction of each slot spent transmitting pulses, N_s t_p / delta."""
        return self.scans_per_slot * self.pulse_time / self.slot_duration

    @property
    def hover_power(self) -> float:
        return self.blade_profile_power + self.induced_power

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if f.name == "small_scale_fading":
                if not value >= 0:
                    raise ScenarioError(f"{f.name} ≥ 0 violated (got {value})")
                continue
            if not (isinstance(value, (int, float)) and math.isfinite(value) and value > 0):
                raise ScenarioError(f"{f.name} > 0 violated (got {value!r})")
        frame = self.slot_duration / self.scans_per_slot
        if not math.isclose(self.pulse_time + self.listen_time, frame, rel_tol=1e-9, abs_tol=1e-15):
            raise ScenarioError(
                f"t_p+t_o ≠ δ/N_s ({self.pulse_time}+{self.listen_time} vs {frame})"
            )
        if self.sense_power + self.comm_power > self.power_budget * (1 + 1e-12):
            raise ScenarioError("p_s + p_c ≤ p_max violated")
        if self.max_simultaneous_targets < 1:
            raise ScenarioError("Z ≥ 1 violated")


@dataclass(frozen=True)
class Requirements:
    rate_fly: float = 13.0
    rate_hover: float = 13.0
    inst_snr: float = db_to_linear(3.0)
    total_snr: float = db_to_linear(12.0)

    def validate(self) -> None:
        for f in fields(self):
            value = getattr(self, f.name)
            if not (math.isfinite(value) and value >= 0):
                raise ScenarioError(f"{f.name} ≥ 0 violated (got {value})")
        if self.inst_snr > self.total_snr:
            raise ScenarioError("Γ_s ≤ Γ_s^total violated")


def _frozen_points(points: Any, name: str) -> np.ndarray:
    arr = np.array(points, dtype=float).reshape(-1, 2) if len(points) else np.zeros((0, 2))
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{name} positions must be finite")
    arr.setflags(write=False)
    return arr


def _frozen_point(point: Any, name: str) -> np.ndarray:
    arr = np.array(point, dtype=float).reshape(2)
    if not np.all(np.isfinite(arr)):
        raise ScenarioError(f"{name} must be finite")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class World:
    targets: np.ndarray
    obstacles: np.ndarray
    uav_start: np.ndarray
    uav_end: np.ndarray
    usv_start: np.ndarray
    usv_end: np.ndarray

    @classmethod
    def build(cls, targets, obstacles=(), uav_start=(0, 0), uav_end=(300, 300),
              usv_start=None, usv_end=None) -> "World":
        return cls(
            targets=_frozen_points(targets, "target"),
            obstacles=_frozen_points(obstacles, "obstacle"),
            uav_start=_frozen_point(uav_start, "uav_start"),
            uav_end=_frozen_point(uav_end, "uav_end"),
            usv_start=_frozen_point(uav_start if usv_start is None else usv_start, "usv_start"),
            usv_end=_frozen_point(uav_end if usv_end is None else usv_end, "usv_end"),
        )

    @property
    def num_targets(self) -> int:
        return len(self.targets)

    def validate(self, params: SystemParams) -> None:
        if self.num_targets < 1:
            raise ScenarioError("K_tar ≥ 1 violated")
        for name in ("uav_start", "uav_end", "usv_start", "usv_end"):
            p = getattr(self, name)
            if len(self.obstacles):
                gap = np.linalg.norm(self.obstacles - p, axis=1).min()
                if gap < params.obstacle_radius:
                    raise ScenarioError(f"{name} within r1 of an obstacle (clearance {gap:.3f} m)")


@dataclass(frozen=True)
class CurrentField:
    kind: str = "zero"
    max_speed: float = 0.0
    uniform: tuple[float, float] = (0.0, 0.0)

    def validate(self) -> None:
        if self.kind not in ("analytic-wave", "uniform", "zero"):
            raise ScenarioError(f"unknown current kind {self.kind!r}")
        if not math.isfinite(self.max_speed):
            raise ScenarioError("current max_speed must be finite")

    @property
    def speed_bound(self) -> float:
        if self.kind == "analytic-wave":
            return abs(self.max_speed) * math.hypot(0.83, 1.0)
        if self.kind == "uniform":
            return math.hypot(*self.uniform)
        return 0.0


def current_at(field: CurrentField, b) -> np.ndarray:
    """Water velocity at surface point(s) ``b`` (shape (2,) or (N, 2))."""
    b = np.asarray(b, dtype=float)
    if field.kind == "zero":
        return np.zeros_like(b)
    if field.kind == "uniform":
        return np.broadcast_to(np.asarray(field.uniform, dtype=float), b.shape).copy()
    x, y = b[..., 0], b[..., 1]
    v = field.max_speed
    vx = v * (0.8 - 0.03 * np.sin(0.06 * x) * np.cos(0.03 * y))
    vy = -v * np.cos(0.06 * x) * np.cos(0.03 * y)
    return np.stack([vx, vy], axis=-1)


@dataclass(frozen=True, eq=False)
class Scenario:
    system: SystemParams
    requirements: Requirements
    world: World
    current: CurrentField = field(default_factory=CurrentField)

    def validate(self) -> "Scenario":
        self.system.validate()
        self.requirements.validate()
        self.world.validate(self.system)
        self.current.validate()
        return self

    def replace(self, **changes) -> "Scenario":
        """Copy with top-level sections or system/requirement fields swapped.

        Unknown keys are routed to whichever section defines them.
        """
        sections = {k: changes.pop(k) for k in ("system", "requirements", "world", "current")
                    if k in changes}
        sys_names = {f.name for f in fields(SystemParams)}
        req_names = {f.name for f in fields(Requirements)}
        system = sections.get("system", self.system)
        requirements = sections.get("requirements", self.requirements)
        sys_changes = {k: v for k, v in changes.items() if k in sys_names}
        req_changes = {k: v for k, v in changes.items() if k in req_names}
        unknown = set(changes) - sys_names - req_names
        if unknown:
            raise TypeError(f"unknown scenario fields {sorted(unknown)}")
        return Scenario(
            system=replace(system, **sys_changes),
            requirements=replace(requirements, **req_changes),
            world=sections.get("world", self.world),
            current=sections.get("current", self.current),
        ).validate()

    def to_dict(self) -> dict:
        return {
            "system": asdict(self.system),
            "requirements": asdict(self.requirements),
            "world": {
                "targets": self.world.targets.tolist(),
                "obstacles": self.world.obstacles.tolist(),
                "uav_start": self.world.uav_start.tolist(),
                "uav_end": self.world.uav_end.tolist(),
                "usv_start": self.world.usv_start.tolist(),
                "usv_end": self.world.usv_end.tolist(),
            },
            "current": {"kind": self.current.kind, "max_speed": self.current.max_speed,
                        "uniform": list(self.current.uniform)},
        }


def _convert_units(section: dict, name: str) -> dict:
    out = {}
    for key, value in section.items():
        if key.endswith("_dbm"):
            base = key[:-4]
            converted = dbm_to_watt(float(value))
        elif key.endswith("_db"):
            base = key[:-3]
            converted = db_to_linear(float(value))
        else:
            base, converted = key, value
        if base in out:
            raise ScenarioError(f"{name}.{base} given twice")
        out[base] = converted
    return out


def scenario_from_dict(data: dict) -> Scenario:
    if not isinstance(data, dict):
        raise ScenarioError("scenario root must be an object")
    system_raw = _convert_units(data.get("system", {}), "system")
    req_raw = _convert_units(data.get("requirements", {}), "requirements")
    known_sys = {f.name for f in fields(SystemParams)}
    known_req = {f.name for f in fields(Requirements)}
    for key in system_raw:
        if key not in known_sys:
            raise ScenarioError(f"unknown system field {key!r}")
    for key in req_raw:
        if key not in known_req:
            raise ScenarioError(f"unknown requirements field {key!r}")
    for key in ("num_antennas", "scans_per_slot", "max_simultaneous_targets", "max_iterations"):
        if key in system_raw:
            system_raw[key] = int(system_raw[key])
    try:
        system = SystemParams(**system_raw)
        requirements = Requirements(**{k: float(v) for k, v in req_raw.items()})
    except (TypeError, ValueError) as exc:
        raise ScenarioError(str(exc)) from exc

    w = data.get("world", {})
    try:
        world = World.build(
            targets=w.get("targets", []),
            obstacles=w.get("obstacles", []),
            uav_start=w.get("uav_start", (0.0, 0.0)),
            uav_end=w.get("uav_end", (300.0, 300.0)),
            usv_start=w.get("usv_start"),
            usv_end=w.get("usv_end"),
        )
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ScenarioError):
            raise
        raise ScenarioError(f"bad world geometry: {exc}") from exc

    c = data.get("current", {})
    current = CurrentField(
        kind=c.get("kind", "zero"),
        max_speed=float(c.get("max_speed", 0.0)),
        uniform=tuple(float(x) for x in c.get("uniform", (0.0, 0.0))),
    )
    return Scenario(system, requirements, world, current).validate()


def load_scenario(path) -> Scenario:
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"cannot parse {path}: {exc}") from exc
    return scenario_from_dict(data)


def save_scenario(scenario: Scenario, path) -> None:
    Path(path).write_text(json.dumps(scenario.to_dict(), indent=2))


def table_one(targets, obstacles=(), current: CurrentField | None = None, **overrides) -> Scenario:
    """Scenario with the default simulation parameters and the given geometry."""
    world = World.build(targets, obstacles)
    base = Scenario(SystemParams(), Requirements(), world, current or CurrentField())
    return base.replace(**overrides) if overrides else base.validate()
