"""Fixed-time signal phasing (green → yellow → red) per approach arm."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any

from intersection_rl.planning.path_planner import IntersectionTopology

PHASES: tuple[str, ...] = ("G", "Y", "R")


@dataclass(frozen=True)
class SignalSchedule:
    """Cycle durations in seconds plus per-approach offsets.

    ``fixed`` pins an approach to one phase for the whole run (used by the
    generalisation tests, which hold the ego's axis on green).
    """

    green_s: float = 60.0
    yellow_s: float = 3.0
    red_s: float = 40.0
    offsets: dict[int, float] = field(default_factory=dict)
    fixed: dict[int, str] = field(default_factory=dict)

    def __post_init__(self) -> None:
        if min(self.green_s, self.yellow_s, self.red_s) < 0 or self.cycle_s <= 0:
            raise ValueError("Signal phase durations must be >= 0 with a positive cycle")
        for approach, phase in self.fixed.items():
            if phase not in PHASES:
                raise ValueError(f"Fixed phase for approach {approach} must be one of {PHASES}")

    @property
    def cycle_s(self) -> float:
        return self.green_s + self.yellow_s + self.red_s

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "SignalSchedule":
        data = dict(data or {})
        unknown = sorted(set(data) - {"green", "yellow", "red", "offsets", "fixed"})
        if unknown:
            raise ValueError(f"SignalSchedule: unknown key(s) {unknown}")
        return cls(
            green_s=float(data.get("green", 60.0)),
            yellow_s=float(data.get("yellow", 3.0)),
            red_s=float(data.get("red", 40.0)),
            offsets={int(k): float(v) for k, v in data.get("offsets", {}).items()},
            fixed={int(k): str(v) for k, v in data.get("fixed", {}).items()},
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            "green": self.green_s,
            "yellow": self.yellow_s,
            "red": self.red_s,
            "offsets": {str(k): v for k, v in self.offsets.items()},
            "fixed": {str(k): v for k, v in self.fixed.items()},
        }

    def with_topology_offsets(self, topology: IntersectionTopology) -> "SignalSchedule":
        """Fill in offsets for arms that have none.

        Arms on the vertical axis start the cycle on green; arms on the
        horizontal axis are shifted by green + yellow so they turn green as
        the vertical axis turns red.
        """
        offsets = dict(self.offsets)
        for lane in topology.entrance_lanes:
            if lane.approach is None or lane.approach in offsets:
                continue
            vertical = abs(math.sin(lane.heading)) >= abs(math.cos(lane.heading))
            offsets[lane.approach] = 0.0 if vertical else self.green_s + self.yellow_s
        return SignalSchedule(self.green_s, self.yellow_s, self.red_s, offsets, dict(self.fixed))


def signal_at(
    schedule: SignalSchedule,
    approach: int | None,
    t: float,
    movement: str = "straight",
) -> tuple[str, float]:
    """Phase and seconds remaining in it for ``approach`` at time ``t``.

    Right turns are always ``("G", inf)``; left and straight share a phase.
    """
    if t < 0:
        raise ValueError(f"t must be >= 0, got {t}")
    if movement == "right":
        return "G", math.inf
    if approach is not None and approach in schedule.fixed:
        return schedule.fixed[approach], math.inf

    offset = schedule.offsets.get(approach, 0.0) if approach is not None else 0.0
    tau = math.fmod(t - offset, schedule.cycle_s)
    if tau < 0:
        tau += schedule.cycle_s
    if tau < schedule.green_s:
        return "G", schedule.green_s - tau
    tau -= schedule.green_s
    if tau < schedule.yellow_s:
        return "Y", schedule.yellow_s - tau
    tau -= schedule.yellow_s
    return "R", schedule.red_s - tau
