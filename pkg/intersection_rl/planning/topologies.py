"""
Desk Topologies
================
Builds crossroad topologies from arm angles and lane counts, and exposes the
six desk crossroads used for path-regularity checks and tracking evaluation:

    (a) single-lane regular crossroad
    (b) two-lane regular crossroad
    (c) three-lane regular crossroad
    (d) irregular multi-lane crossroad
    (e) irregular multi-lane crossroad with a central green belt
    (f) irregular crossroad with a green belt and unequal lane counts
        (3 candidate left-turn routes, 2 straight routes)

Arms are described by the *outward* direction of the road leaving the
junction.  The automated vehicle always departs from the first arm.

Usage::

    from intersection_rl.planning.topologies import desk_topologies

    for name, topology in desk_topologies().items():
        ...
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from intersection_rl.planning.path_planner import Connection, IntersectionTopology, LaneRef

LANE_WIDTH = 3.5
LANE_LENGTH = 60.0
STOP_LINE_DISTANCE = 5.0
SPEED_LIMIT = 37.5 / 3.6

_TURN_THRESHOLD = math.pi / 4


@dataclass(frozen=True)
class ArmSpec:
    """One arm of a crossroad."""

    angle: float          # outward direction from the junction centre
    lanes_in: int
    lanes_out: int
    radius: float = 15.0  # junction centre → lane endpoints
    median: float = 0.0   # green-belt width between opposing lanes


def crossroad(
    arms: list[ArmSpec],
    name: str = "crossroad",
    lane_width: float = LANE_WIDTH,
    lane_length: float = LANE_LENGTH,
    speed_limit: float = SPEED_LIMIT,
    stop_line_distance: float = STOP_LINE_DISTANCE,
    ego_approach: int = 0,
) -> IntersectionTopology:
    """Build a right-hand-traffic crossroad from its arms.

    Entrance lane ``k`` of an arm sits ``median/2 + (k + 0.5)·lane_width``
    to the right of the arm axis (k = 0 is the innermost lane); exit lanes
    mirror it on the other side.

    Connection rules:

    - left:     innermost entrance lane → every exit lane of the left arm
    - right:    outermost entrance lane → every exit lane of the right arm
    - straight: entrance lane k → exit lane k
    """
    entrances: list[LaneRef] = []
    exits: list[LaneRef] = []
    entrance_ids: list[list[int]] = []
    exit_ids: list[list[int]] = []

    for index, arm in enumerate(arms):
        outward = np.array([math.cos(arm.angle), math.sin(arm.angle)])
        normal = np.array([-math.sin(arm.angle), math.cos(arm.angle)])
        mouth = arm.radius * outward

        ids = []
        for k in range(arm.lanes_in):
            offset = arm.median / 2.0 + (k + 0.5) * lane_width
            point = mouth + offset * normal
            ids.append(len(entrances))
            entrances.append(LaneRef(
                endpoint=(float(point[0]), float(point[1])),
                heading=_wrap(arm.angle + math.pi),
                speed_limit=speed_limit,
                length=lane_length,
                approach=index,
            ))
        entrance_ids.append(ids)

        ids = []
        for k in range(arm.lanes_out):
            offset = arm.median / 2.0 + (k + 0.5) * lane_width
            point = mouth - offset * normal
            ids.append(len(exits))
            exits.append(LaneRef(
                endpoint=(float(point[0]), float(point[1])),
                heading=_wrap(arm.angle),
                speed_limit=speed_limit,
                length=lane_length,
                approach=index,
            ))
        exit_ids.append(ids)

    connections: list[Connection] = []
    for a, arm_in in enumerate(arms):
        for b, arm_out in enumerate(arms):
            if a == b or not entrance_ids[a] or not exit_ids[b]:
                continue
            movement = classify_turn(arm_in.angle + math.pi, arm_out.angle)
            if movement == "left":
                connections += [Connection(entrance_ids[a][0], e, "left") for e in exit_ids[b]]
            elif movement == "right":
                connections += [Connection(entrance_ids[a][-1], e, "right") for e in exit_ids[b]]
            else:
                pairs = zip(entrance_ids[a], exit_ids[b])
                connections += [Connection(i, e, "straight") for i, e in pairs]

    return IntersectionTopology(
        entrance_lanes=tuple(entrances),
        exit_lanes=tuple(exits),
        connections=tuple(connections),
        stop_line_distance=stop_line_distance,
        ego_approach=ego_approach,
        name=name,
    )


def classify_turn(heading_in: float, heading_out: float) -> str:
    """Movement tag for a turn from ``heading_in`` to ``heading_out``."""
    turn = _wrap(heading_out - heading_in)
    if turn > _TURN_THRESHOLD:
        return "left"
    if turn < -_TURN_THRESHOLD:
        return "right"
    return "straight"


def desk_topologies() -> dict[str, IntersectionTopology]:
    """The six desk crossroads, keyed ``a`` … ``f``."""
    south, east, north, west = -math.pi / 2, 0.0, math.pi / 2, math.pi

    def regular(lanes: int, radius: float) -> list[ArmSpec]:
        return [ArmSpec(angle, lanes, lanes, radius) for angle in (south, east, north, west)]

    return {
        "a": crossroad(regular(1, 12.0), name="a-single-lane"),
        "b": crossroad(regular(2, 15.0), name="b-two-lane"),
        "c": crossroad(regular(3, 18.0), name="c-three-lane"),
        "d": crossroad([
            ArmSpec(south, 2, 2, 16.0),
            ArmSpec(east + 0.2, 2, 3, 18.0),
            ArmSpec(north + 0.15, 2, 2, 15.0),
            ArmSpec(west - 0.25, 3, 2, 17.0),
        ], name="d-irregular"),
        "e": crossroad([
            ArmSpec(south, 3, 3, 20.0, median=4.0),
            ArmSpec(east - 0.15, 3, 3, 20.0, median=4.0),
            ArmSpec(north - 0.1, 3, 3, 20.0, median=4.0),
            ArmSpec(west + 0.1, 3, 3, 20.0, median=4.0),
        ], name="e-green-belt"),
        "f": crossroad([
            ArmSpec(south, 2, 2, 20.0, median=3.0),
            ArmSpec(east + 0.1, 2, 2, 20.0, median=3.0),
            ArmSpec(north + 0.1, 2, 2, 20.0, median=3.0),
            ArmSpec(west - 0.1, 2, 3, 20.0, median=3.0),
        ], name="f-green-belt-unequal"),
    }


def _wrap(angle: float) -> float:
    """Wrap an angle to (−π, π]."""
    wrapped = math.atan2(math.sin(angle), math.cos(angle))
    return math.pi if wrapped == -math.pi else wrapped
