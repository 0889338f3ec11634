"""
Perception — sensor coverage and measurement noise
====================================================
A participant is perceived when at least one sensor covers it: within the
sensor's range and within its horizontal half field of view relative to the
ego heading.  Every perceived participant gets one Gaussian draw per field
from the lidar noise table of its kind (camera and radar reuse it).

Usage::

    perceived = perceive(participants, ego, PerceptionSpec(), SensorNoiseSpec(), rng)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Any, Iterable

import numpy as np

from intersection_rl.env.dynamics import PARTICIPANT_KINDS, EgoState, ParticipantState

NOISE_FIELDS: tuple[str, ...] = ("p_x", "p_y", "v", "phi", "length", "width")

#: Lidar (mean, std) per kind and field
_LIDAR_NOISE: dict[str, dict[str, tuple[float, float]]] = {
    "vehicle": {
        "p_x": (-0.002, 0.157), "p_y": (-0.001, 0.151), "v": (-0.000, 0.205),
        "phi": (0.000, 0.054), "length": (-0.011, 0.300), "width": (0.023, 0.142),
    },
    "cyclist": {
        "p_x": (0.001, 0.172), "p_y": (-0.008, 0.158), "v": (0.005, 0.176),
        "phi": (-0.014, 0.171), "length": (-0.003, 0.165), "width": (0.035, 0.109),
    },
    "pedestrian": {
        "p_x": (0.001, 0.110), "p_y": (-0.001, 0.111), "v": (-0.000, 0.119),
        "phi": (-0.003, 0.229), "length": (-0.000, 0.147), "width": (-0.002, 0.141),
    },
}

#: (range m, half field of view rad)
_SENSORS: dict[str, tuple[float, float]] = {
    "lidar": (70.0, math.pi),
    "camera": (80.0, math.radians(35.0)),
    "radar": (60.0, math.radians(45.0)),
}

_MIN_EXTENT = 0.1  # noisy length / width never drop below this


@dataclass(frozen=True)
class PerceptionSpec:
    sensors: dict[str, tuple[float, float]] = field(default_factory=lambda: dict(_SENSORS))

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "PerceptionSpec":
        if not data:
            return cls()
        sensors = {}
        for name, entry in data.items():
            if set(entry) != {"range", "half_fov"}:
                raise ValueError(f"Sensor '{name}' needs exactly 'range' and 'half_fov'")
            sensors[name] = (float(entry["range"]), float(entry["half_fov"]))
        return cls(sensors)

    def to_dict(self) -> dict[str, Any]:
        return {n: {"range": r, "half_fov": h} for n, (r, h) in self.sensors.items()}

    def covering_sensors(self, rel_x: float, rel_y: float) -> list[str]:
        """Sensors covering a point given in the ego frame (x forward, y left)."""
        distance = math.hypot(rel_x, rel_y)
        bearing = abs(math.atan2(rel_y, rel_x))
        return [
            name for name, (rng, half_fov) in self.sensors.items()
            if distance <= rng and (half_fov >= math.pi or bearing <= half_fov)
        ]


@dataclass(frozen=True)
class SensorNoiseSpec:
    table: dict[str, dict[str, tuple[float, float]]] = field(
        default_factory=lambda: {k: dict(v) for k, v in _LIDAR_NOISE.items()}
    )

    @classmethod
    def zero(cls) -> "SensorNoiseSpec":
        return cls({k: {f: (0.0, 0.0) for f in NOISE_FIELDS} for k in PARTICIPANT_KINDS})

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "SensorNoiseSpec":
        table = {k: dict(v) for k, v in _LIDAR_NOISE.items()}
        for kind, entries in (data or {}).items():
            if kind not in PARTICIPANT_KINDS:
                raise ValueError(f"SensorNoiseSpec: unknown participant kind '{kind}'")
            for name, pair in entries.items():
                if name not in NOISE_FIELDS:
                    raise ValueError(f"SensorNoiseSpec: unknown field '{name}'")
                table[kind][name] = (float(pair[0]), float(pair[1]))
        return cls(table)

    def to_dict(self) -> dict[str, Any]:
        return {k: {f: list(p) for f, p in v.items()} for k, v in self.table.items()}

    def parameters(self, kind: str) -> tuple[np.ndarray, np.ndarray]:
        entries = self.table[kind]
        means = np.array([entries[f][0] for f in NOISE_FIELDS])
        stds = np.array([entries[f][1] for f in NOISE_FIELDS])
        return means, stds


def perceive(
    participants: Iterable[ParticipantState],
    ego: EgoState,
    spec: PerceptionSpec,
    noise: SensorNoiseSpec,
    rng: np.random.Generator,
) -> list[ParticipantState]:
    """Return the interested set I: covered participants with measurement noise."""
    cos_phi, sin_phi = math.cos(ego.phi), math.sin(ego.phi)
    perceived: list[ParticipantState] = []
    for p in participants:
        dx, dy = p.p_x - ego.p_x, p.p_y - ego.p_y
        rel_x = cos_phi * dx + sin_phi * dy
        rel_y = -sin_phi * dx + cos_phi * dy
        if not spec.covering_sensors(rel_x, rel_y):
            continue
        means, stds = noise.parameters(p.kind)
        draw = rng.normal(means, stds)
        perceived.append(replace(
            p,
            p_x=p.p_x + draw[0],
            p_y=p.p_y + draw[1],
            v=max(p.v + draw[2], 0.0),
            phi=p.phi + draw[3],
            length=max(p.length + draw[4], _MIN_EXTENT),
            width=max(p.width + draw[5], _MIN_EXTENT),
        ))
    return perceived
