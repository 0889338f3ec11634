"""
Scenario Loading
=================
A scenario bundles everything one driving environment needs: the crossroad
topology, the driving task, traffic, signal phasing, perception, sensor
noise, ego vehicle parameters and the safety disc layout.

Scenario JSON layout::

    {
      "name": "desk-left",
      "task": "left",
      "topology": "desk:b"            # or an inline topology document
      "traffic": {"rates": {...}, "seed": 0, "overspeed_fraction": 0.0, ...},
      "signal": {"green": 60, "yellow": 3, "red": 40},
      "perception": {...}, "noise": {...}, "vehicle": {...}, "safety": {...}
    }

Built-in scenarios (``desk-left``, ``desk-straight``, ``desk-right``,
``desk-empty``) live on the two-lane regular desk crossroad.

Usage::

    from intersection_rl.scenario import resolve_scenario

    scenario = resolve_scenario("desk-left")
    scenario = resolve_scenario("scenarios/desk_left_turn.json")
"""

from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

from intersection_rl.env.dynamics import EgoParams
from intersection_rl.env.perception import PerceptionSpec, SensorNoiseSpec
from intersection_rl.env.signals import SignalSchedule
from intersection_rl.env.state import SafetyConfig
from intersection_rl.env.traffic import TrafficConfig
from intersection_rl.errors import TopologyError
from intersection_rl.planning.path_planner import MOVEMENTS, IntersectionTopology
from intersection_rl.planning.topologies import desk_topologies

BUILTIN_SCENARIOS: tuple[str, ...] = ("desk-left", "desk-straight", "desk-right", "desk-empty")
DESK_TOPOLOGY = "b"

_SECTIONS = {
    "name", "task", "topology", "traffic", "signal", "perception", "noise",
    "vehicle", "safety", "rho_bisect", "sample_ds", "decel_zone",
}


@dataclass(frozen=True)
class Scenario:
    name: str
    topology: IntersectionTopology
    task: str = "left"
    traffic: TrafficConfig = field(default_factory=TrafficConfig)
    signal: SignalSchedule = field(default_factory=SignalSchedule)
    perception: PerceptionSpec = field(default_factory=PerceptionSpec)
    noise: SensorNoiseSpec = field(default_factory=SensorNoiseSpec)
    vehicle: EgoParams = field(default_factory=EgoParams)
    safety: SafetyConfig = field(default_factory=SafetyConfig)
    rho_bisect: float = 0.6
    sample_ds: float = 0.5
    decel_zone: float = 30.0

    def __post_init__(self) -> None:
        if self.task not in MOVEMENTS:
            raise ValueError(f"task must be one of {MOVEMENTS}, got '{self.task}'")

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "Scenario":
        unknown = sorted(set(data) - _SECTIONS)
        if unknown:
            raise ValueError(f"Scenario: unknown section(s) {unknown}")
        if "topology" not in data:
            raise TopologyError("Scenario document has no 'topology' section")
        return cls(
            name=str(data.get("name", "scenario")),
            topology=_topology(data["topology"]),
            task=str(data.get("task", "left")),
            traffic=TrafficConfig.from_dict(data.get("traffic")),
            signal=SignalSchedule.from_dict(data.get("signal")),
            perception=PerceptionSpec.from_dict(data.get("perception")),
            noise=SensorNoiseSpec.from_dict(data.get("noise")),
            vehicle=EgoParams.from_dict(data.get("vehicle")),
            safety=SafetyConfig.from_dict(data.get("safety")),
            rho_bisect=float(data.get("rho_bisect", 0.6)),
            sample_ds=float(data.get("sample_ds", 0.5)),
            decel_zone=float(data.get("decel_zone", 30.0)),
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "task": self.task,
            "topology": self.topology.to_dict(),
            "traffic": self.traffic.to_dict(),
            "signal": self.signal.to_dict(),
            "perception": self.perception.to_dict(),
            "noise": self.noise.to_dict(),
            "vehicle": self.vehicle.to_dict(),
            "safety": self.safety.to_dict(),
            "rho_bisect": self.rho_bisect,
            "sample_ds": self.sample_ds,
            "decel_zone": self.decel_zone,
        }

    def replace(self, **changes: Any) -> "Scenario":
        return dataclasses.replace(self, **changes)

    def with_traffic(self, **changes: Any) -> "Scenario":
        return dataclasses.replace(self, traffic=dataclasses.replace(self.traffic, **changes))


def load_scenario(path: str | Path) -> Scenario:
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(
            f"Scenario file not found: '{path}'. Built-in names: {', '.join(BUILTIN_SCENARIOS)}"
        )
    with open(path) as fh:
        return Scenario.from_dict(json.load(fh))


def builtin_scenario(name: str) -> Scenario:
    if name not in BUILTIN_SCENARIOS:
        raise ValueError(f"Unknown built-in scenario '{name}'; choose from {BUILTIN_SCENARIOS}")
    topology = desk_topologies()[DESK_TOPOLOGY]
    if name == "desk-empty":
        return Scenario(name, topology, task="left", traffic=TrafficConfig.empty())
    return Scenario(name, topology, task=name.split("-", 1)[1])


def resolve_scenario(name_or_path: str | Path) -> Scenario:
    """A built-in scenario by name, else a scenario JSON file."""
    if str(name_or_path) in BUILTIN_SCENARIOS:
        return builtin_scenario(str(name_or_path))
    return load_scenario(name_or_path)


def _topology(entry: Any) -> IntersectionTopology:
    if isinstance(entry, str):
        prefix, _, key = entry.partition(":")
        desk = desk_topologies()
        if prefix != "desk" or key not in desk:
            raise TopologyError(f"Unknown topology reference '{entry}' (use 'desk:a' … 'desk:f')")
        return desk[key]
    return IntersectionTopology.from_dict(entry)
