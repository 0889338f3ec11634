"""
Stage 3 — Driving Environment
===============================
``IntersectionWorld`` owns one episode: the ego vehicle on a candidate path,
the background traffic, the signal clock and the perception noise stream.

    reset  → random path, start position, signal time (training) or fixed ones
    step   → f_ego for the ego (speed floored at 0), traffic advance, clock
    observe / light_decision_input / state → inputs for the controller

Usage::

    world = IntersectionWorld(resolve_scenario("desk-left"), seed=0)
    world.reset()
    record = world.step(Action(0.0, 0.5))
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from intersection_rl.control.online_controller import LightDecisionInput, select_velocity_mode
from intersection_rl.env.dynamics import Action, EgoState, ParticipantState, step_ego
from intersection_rl.env.perception import perceive
from intersection_rl.env.signals import signal_at
from intersection_rl.env.state import DrivingState, build_state, safety_g, utility
from intersection_rl.env.traffic import Obstacle, TrafficModel
from intersection_rl.planning.path_planner import CandidatePath, generate_path_set
from intersection_rl.scenario import Scenario

logger = logging.getLogger(__name__)

CONGESTION_RANGE = 20.0
CORRIDOR_HALF_WIDTH = 1.75
STOPPED_SPEED = 0.1
EGO_CLEARANCE = 10.0


@dataclass(frozen=True)
class StepRecord:
    """What happened during one world step."""

    t: float
    ego: EgoState
    action: Action
    path_id: int
    mode: str
    phase: str
    utility: float
    worst_g: float      # largest g over all participants
    penalty: float
    progress: float


class IntersectionWorld:
    """Single-owner mutable driving environment."""

    def __init__(
        self,
        scenario: Scenario,
        seed: int = 0,
        paths: list[CandidatePath] | None = None,
    ) -> None:
        self.scenario = scenario
        self.params = scenario.vehicle
        self.dt = scenario.vehicle.dt
        self.paths = paths if paths is not None else generate_path_set(
            scenario.topology, scenario.task, scenario.rho_bisect,
            scenario.sample_ds, scenario.decel_zone,
        )
        self.schedule = scenario.signal.with_topology_offsets(scenario.topology)
        self.approach = scenario.topology.entrance_lanes[self.paths[0].entrance].approach
        self.traffic = TrafficModel(scenario.topology, self.schedule, scenario.traffic,
                                    scenario.rho_bisect, scenario.sample_ds)

        episode_seq, perception_seq = np.random.SeedSequence(seed).spawn(2)
        self._rng = np.random.default_rng(episode_seq)
        self._perception_rng = np.random.default_rng(perception_seq)

        self.time = 0.0
        self.ego = EgoState()
        self.path_id = 0
        self.mode = "pass"
        self._front_stopped_s = 0.0
        self.last_record: StepRecord | None = None

    # ------------------------------------------------------------------
    # Episode control
    # ------------------------------------------------------------------

    def reset(
        self,
        path_id: int | None = None,
        start_s: float | None = None,
        t_start: float | None = None,
        speed: float | None = None,
        randomize: bool = True,
    ) -> "IntersectionWorld":
        """Start a new episode; unspecified conditions are drawn when ``randomize``."""
        rng = self._rng
        if path_id is None:
            path_id = int(rng.integers(len(self.paths))) if randomize else 0
        path = self.paths[path_id]
        if start_s is None:
            start_s = float(rng.uniform(0.0, max(path.s_stop - 10.0, 0.0))) if randomize else 10.0
        if t_start is None:
            t_start = (float(rng.uniform(0.0, self.schedule.cycle_s)) if randomize
                       else self.scenario.traffic.warmup_s)
        lateral = float(rng.uniform(-0.3, 0.3)) if randomize else 0.0
        yaw = float(rng.uniform(-0.03, 0.03)) if randomize else 0.0
        if speed is None:
            nominal = float(path.profiles["pass"].speed_at(start_s))
            speed = nominal * float(rng.uniform(0.6, 1.0)) if randomize else nominal

        x = float(np.interp(start_s, path.arc_length, path.points[:, 0]))
        y = float(np.interp(start_s, path.arc_length, path.points[:, 1]))
        heading = float(np.interp(start_s, path.arc_length, path.headings))
        x -= lateral * math.sin(heading)
        y += lateral * math.cos(heading)

        self.traffic.reset(t_start)
        self.traffic.agents = [
            a for a in self.traffic.agents
            if a.kind == "pedestrian"
            or math.hypot(*(a.participant().position - np.array([x, y]))) >= EGO_CLEARANCE
        ]
        self.time = t_start
        self.ego = EgoState(p_x=x, p_y=y, v_x=speed, phi=heading + yaw)
        self.path_id = path_id
        self._front_stopped_s = 0.0
        self.last_record = None
        self.mode = self.current_mode()
        return self

    def step(self, action: Action, path_id: int | None = None, mode: str | None = None) -> StepRecord:
        """Apply ``action`` for one step of ``dt`` seconds."""
        action = action.clamped()
        path_id = self.path_id if path_id is None else path_id
        mode = self.mode if mode is None else mode
        phase, _ = self.signal()
        track = self.state(path_id, mode, []).track
        cost = float(utility(track, self.ego.as_array(), action.as_array()))

        ego = step_ego(self.ego, action, self.params)
        if ego.v_x < 0.0:
            ego = replace(ego, v_x=0.0)
        self.ego = ego
        self.traffic.advance(self.dt, [self._ego_obstacle()])
        self.time += self.dt
        self.path_id, self.mode = path_id, mode
        self._update_congestion()

        gs = self.constraint_values()
        worst_g = max(gs) if gs else -math.inf
        violation = sum(max(g, 0.0) ** 2 for g in gs)
        self.last_record = StepRecord(self.time, self.ego, action, path_id, mode, phase, cost,
                                      worst_g, violation, self.progress(path_id))
        return self.last_record

    # ------------------------------------------------------------------
    # Observations
    # ------------------------------------------------------------------

    def signal(self) -> tuple[str, float]:
        return signal_at(self.schedule, self.approach, self.time, self.scenario.task)

    def ground_truth(self) -> list[ParticipantState]:
        return self.traffic.participants()

    def observe(self) -> list[ParticipantState]:
        return perceive(self.ground_truth(), self.ego, self.scenario.perception,
                        self.scenario.noise, self._perception_rng)

    def state(self, path_id: int, mode: str, perceived: list[ParticipantState] | None = None) -> DrivingState:
        perceived = self.observe() if perceived is None else perceived
        return build_state(self.ego, self.paths[path_id], mode, perceived)

    def progress(self, path_id: int | None = None) -> float:
        """Arc length of the path sample nearest the ego."""
        path = self.paths[self.path_id if path_id is None else path_id]
        d2 = ((path.points - self.ego.position) ** 2).sum(axis=1)
        return float(path.arc_length[int(np.argmin(d2))])

    def lateral_distance(self) -> float:
        """Distance from the ego to the nearest sample of any candidate path."""
        return min(float(np.sqrt(((p.points - self.ego.position) ** 2).sum(axis=1)).min())
                   for p in self.paths)

    def constraint_values(self, participants: list[ParticipantState] | None = None) -> list[float]:
        """Ground-truth g of every participant against the ego."""
        participants = self.ground_truth() if participants is None else participants
        return [safety_g(self.ego, p, self.scenario.safety) for p in participants]

    def light_decision_input(self) -> LightDecisionInput:
        path = self.paths[self.path_id]
        s = self.progress()
        phase, remaining = self.signal()
        return LightDecisionInput(
            front_vehicle_stopped_s=self._front_stopped_s,
            passed_stop_line=s >= path.s_stop,
            phase=phase,
            remaining_yellow=min(max(remaining, 0.0), 3.0) if phase == "Y" else 0.0,
            distance_to_stop_line=max(path.s_stop - s, 0.0),
            v_x=max(self.ego.v_x, 0.0),
        )

    def current_mode(self) -> str:
        return select_velocity_mode(self.light_decision_input())

    @property
    def finished(self) -> bool:
        return self.progress() >= self.paths[self.path_id].length - 1.0

    # ------------------------------------------------------------------
    # Private helpers
    # ------------------------------------------------------------------

    def _ego_obstacle(self) -> Obstacle:
        return Obstacle(self.ego.p_x, self.ego.p_y, self.ego.phi, self.ego.v_x,
                        self.scenario.safety.ego_length)

    def _update_congestion(self) -> None:
        lead = front_vehicle(self.paths[self.path_id], self.progress(), self.ground_truth())
        if lead is not None and lead.v < STOPPED_SPEED:
            self._front_stopped_s += self.dt
        else:
            self._front_stopped_s = 0.0


def front_vehicle(
    path: CandidatePath,
    s_ego: float,
    participants: list[ParticipantState],
) -> ParticipantState | None:
    """Nearest vehicle within ``CONGESTION_RANGE`` ahead of ``s_ego`` in the path corridor."""
    best, best_s = None, math.inf
    for p in participants:
        if p.kind != "vehicle":
            continue
        d = np.hypot(path.points[:, 0] - p.p_x, path.points[:, 1] - p.p_y)
        j = int(np.argmin(d))
        ahead = float(path.arc_length[j]) - s_ego
        if d[j] <= CORRIDOR_HALF_WIDTH and 0.0 < ahead <= CONGESTION_RANGE and ahead < best_s:
            best, best_s = p, ahead
    return best
