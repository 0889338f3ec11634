"""
Stage 6 — Online Controller
=============================
Applies trained networks at every control step:

    1. velocity mode from the traffic-light flowchart
       (congestion → stop; past the stop line → pass; R → stop; G → pass;
        Y → stop only when braking distance and time both fit)
    2. optimal path τ* = argmin over candidate paths of the value network
    3. control command = deterministic mean of the driving policy, clamped

Usage::

    controller = OnlineController(policy, value, world.paths)
    decision = controller.control_step(world)
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass
from typing import TYPE_CHECKING, Callable, Sequence

import numpy as np
import torch

from intersection_rl.env.dynamics import ACTION_HIGH, ACTION_LOW, Action, EgoState, ParticipantState
from intersection_rl.env.state import DrivingState, build_state
from intersection_rl.models.networks import MLP
from intersection_rl.planning.path_planner import CandidatePath

if TYPE_CHECKING:
    from intersection_rl.env.world import IntersectionWorld

logger = logging.getLogger(__name__)

#: Braking magnitude used by the yellow-light decision (80 % of 3 m/s²)
DEFAULT_BRAKING = 2.4
CONGESTION_WAIT_S = 3.0


@dataclass(frozen=True)
class LightDecisionInput:
    front_vehicle_stopped_s: float
    passed_stop_line: bool
    phase: str
    remaining_yellow: float
    distance_to_stop_line: float
    v_x: float
    braking: float = DEFAULT_BRAKING

    def __post_init__(self) -> None:
        if self.distance_to_stop_line < 0:
            raise ValueError("distance_to_stop_line must be >= 0")
        if not 0.0 <= self.remaining_yellow <= 3.0:
            raise ValueError("remaining_yellow must lie in [0, 3]")
        if self.braking <= 0:
            raise ValueError("braking must be > 0")
        if self.phase not in ("G", "Y", "R"):
            raise ValueError(f"Unknown phase '{self.phase}'")


@dataclass(frozen=True)
class ControlDecision:
    action: Action
    mode: str
    path_id: int
    state: DrivingState
    values: tuple[float, ...]


def stop_feasible(v_x: float, a_m: float, d_y: float, t_y: float) -> bool:
    """C2: the vehicle can stop before the line within the remaining yellow."""
    for name, value in (("v_x", v_x), ("a_m", a_m), ("d_y", d_y), ("t_y", t_y)):
        if not math.isfinite(value) or value < 0:
            raise ValueError(f"{name} must be finite and >= 0, got {value}")
    if a_m == 0:
        raise ValueError("a_m must be > 0")
    d_e = v_x ** 2 / (2.0 * a_m)
    t_e = v_x / a_m
    return d_y >= d_e and t_y >= t_e


def select_velocity_mode(inp: LightDecisionInput) -> str:
    if inp.front_vehicle_stopped_s > CONGESTION_WAIT_S:
        return "stop"
    if inp.passed_stop_line:
        return "pass"
    if inp.phase == "R":
        return "stop"
    if inp.phase == "G":
        return "pass"
    can_stop = stop_feasible(inp.v_x, inp.braking, inp.distance_to_stop_line, inp.remaining_yellow)
    return "stop" if can_stop else "pass"


def select_path(
    ego: EgoState,
    paths: Sequence[CandidatePath],
    mode: str,
    perceived: Sequence[ParticipantState],
    value_fn: Callable[[torch.Tensor], torch.Tensor],
) -> tuple[int, DrivingState, np.ndarray]:
    """Index of the lowest-value path (ties → lowest index), its state and all values."""
    if not paths:
        raise ValueError("select_path needs at least one candidate path")
    states = [build_state(ego, path, mode, perceived) for path in paths]
    batch = torch.as_tensor(np.stack([s.vector for s in states]), dtype=torch.float64)
    with torch.no_grad():
        values = value_fn(batch).reshape(-1).numpy()
    best = int(np.argmin(values))
    return best, states[best], values


def policy_action(policy: MLP, state: DrivingState) -> Action:
    """Deterministic mean action, clamped to the action bounds."""
    with torch.no_grad():
        mean, _ = policy(torch.as_tensor(state.vector, dtype=torch.float64))
    clipped = np.clip(mean.numpy(), ACTION_LOW, ACTION_HIGH)
    return Action(float(clipped[0]), float(clipped[1]))


class OnlineController:
    """Single control-loop owner reading frozen networks."""

    def __init__(self, policy: MLP, value: MLP, paths: Sequence[CandidatePath]) -> None:
        self.policy = policy.snapshot()
        self.value = value.snapshot()
        self.paths = list(paths)

    def decide(self, world: "IntersectionWorld") -> ControlDecision:
        mode = select_velocity_mode(world.light_decision_input())
        perceived = world.observe()
        index, state, values = select_path(world.ego, self.paths, mode, perceived, self.value)
        return ControlDecision(policy_action(self.policy, state), mode, index,
                               state, tuple(float(v) for v in values))

    def control_step(self, world: "IntersectionWorld") -> ControlDecision:
        """Decide and apply one command to ``world``."""
        decision = self.decide(world)
        world.step(decision.action, path_id=decision.path_id, mode=decision.mode)
        return decision
