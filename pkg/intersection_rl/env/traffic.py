"""
Background Traffic
===================
A rule-based traffic model for surrounding vehicles, cyclists and
pedestrians:

    - Poisson arrivals per entrance lane (vehicles, cyclists) and per
      crosswalk (pedestrians), each source drawing from its own seeded
      stream so the arrival schedule never depends on the dynamics;
    - vehicles and cyclists follow a candidate route with a safe-speed
      car-following rule (planning deceleration 3 m/s², gap kept at
      max(2 m, 1.5 s headway)) and stop at red;
    - pedestrians cross when the vehicle phase of their arm is red;
    - abnormal behaviour: overspeeding of opposing straight vehicles and
      rounding (a straight vehicle diverting into the inside exit lane at the
      stop line), assigned by a per-agent uniform draw against the level.

Usage::

    traffic = TrafficModel(topology, schedule, TrafficConfig(seed=3))
    traffic.reset(t_start=12.0)
    advance_traffic(traffic, dt=0.1)
    participants = traffic.participants()
"""

from __future__ import annotations

import logging
import math
from collections import deque
from dataclasses import dataclass, field
from typing import Any, Iterable

import numpy as np

from intersection_rl.configuration import ConfigMixin
from intersection_rl.env.dynamics import ParticipantState
from intersection_rl.env.signals import SignalSchedule, signal_at
from intersection_rl.errors import IntersectionRLError
from intersection_rl.planning.path_planner import CandidatePath, IntersectionTopology, route_between

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

VEHICLE_SIZE = (4.8, 2.0)
CYCLIST_SIZE = (1.8, 0.6)
PEDESTRIAN_SIZE = (0.6, 0.6)
CYCLIST_SPEED = 4.0
PEDESTRIAN_SPEED = 1.4

COMFORT_DECEL = 3.0
MAX_ACCEL = 1.5
MIN_GAP = 2.0
HEADWAY_S = 1.5
CORRIDOR = 1.5          # lateral half-width of the leader search
LOOKAHEAD = 50.0
SPAWN_CLEARANCE = 25.0
CROSSWALK_SETBACK = 2.5  # crosswalk centre upstream of the lane endpoints
SIDEWALK = 2.0

_STRAIGHT_CURVATURE = 1e-6


@dataclass(frozen=True)
class TrafficConfig(ConfigMixin):
    """Arrival rates (per hour per source), seed and abnormal-behaviour knobs."""

    vehicle_rate: float = 400.0
    cyclist_rate: float = 100.0
    pedestrian_rate: float = 100.0
    seed: int = 0
    overspeed_fraction: float = 0.0
    overspeed_factor: float = 1.0
    rounding_fraction: float = 0.0
    outside_speed: float = 30.0 / 3.6
    inside_speed: float = 25.0 / 3.6
    warmup_s: float = 20.0

    def __post_init__(self) -> None:
        for name in ("overspeed_fraction", "rounding_fraction"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1]")
        if self.overspeed_factor < 1.0:
            raise ValueError("overspeed_factor must be >= 1")
        if min(self.vehicle_rate, self.cyclist_rate, self.pedestrian_rate) < 0:
            raise ValueError("Arrival rates must be >= 0")

    @classmethod
    def from_dict(cls, data: dict[str, Any] | None) -> "TrafficConfig":
        data = dict(data or {})
        rates = data.pop("rates", {})
        for kind in ("vehicle", "cyclist", "pedestrian"):
            if kind in rates:
                data[f"{kind}_rate"] = rates[kind]
        return super().from_dict(data)

    @classmethod
    def empty(cls, seed: int = 0) -> "TrafficConfig":
        return cls(vehicle_rate=0.0, cyclist_rate=0.0, pedestrian_rate=0.0, seed=seed)


# ---------------------------------------------------------------------------
# Tracks and agents
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Track:
    """A polyline an agent moves along, with its signal context."""

    points: np.ndarray
    headings: np.ndarray
    arc_length: np.ndarray
    curvature: np.ndarray
    s_stop: float
    s_exit: float
    approach: int | None
    movement: str
    entrance: int = -1
    exit: int = -1

    @classmethod
    def from_path(cls, path: CandidatePath, approach: int | None) -> "Track":
        return cls(path.points, path.headings, path.arc_length, path.curvature,
                   path.s_stop, path.s_exit, approach, path.movement, path.entrance, path.exit)

    @classmethod
    def segment(cls, start: np.ndarray, end: np.ndarray, approach: int | None) -> "Track":
        length = float(np.linalg.norm(end - start))
        n = max(int(math.ceil(length / 0.5)), 1)
        frac = np.linspace(0.0, 1.0, n + 1)
        heading = math.atan2(end[1] - start[1], end[0] - start[0])
        return cls(start + np.outer(frac, end - start), np.full(n + 1, heading), frac * length,
                   np.zeros(n + 1), 0.0, length, approach, "crossing")

    @property
    def length(self) -> float:
        return float(self.arc_length[-1])

    def pose(self, s: float) -> tuple[float, float, float, float]:
        """(x, y, heading, curvature) at arc length ``s``."""
        s_arr = self.arc_length
        return (
            float(np.interp(s, s_arr, self.points[:, 0])),
            float(np.interp(s, s_arr, self.points[:, 1])),
            float(np.interp(s, s_arr, self.headings)),
            float(np.interp(s, s_arr, self.curvature)),
        )


@dataclass
class Agent:
    agent_id: int
    kind: str
    track: Track
    s: float
    v: float
    length: float
    width: float
    speed_scale: float = 1.0
    rounding: bool = False
    diverted: bool = False
    walking: bool = False

    def participant(self) -> ParticipantState:
        x, y, heading, kappa = self.track.pose(self.s)
        radius = math.inf if abs(kappa) < _STRAIGHT_CURVATURE else 1.0 / kappa
        return ParticipantState(x, y, self.v, heading, self.length, self.width, self.kind, radius)


@dataclass(frozen=True)
class Obstacle:
    """Anything a background agent must not run into."""

    x: float
    y: float
    phi: float
    v: float
    length: float


@dataclass(frozen=True)
class _Arrival:
    time: float
    source: int
    choice: float
    u_perturb: float


@dataclass
class _Source:
    kind: str
    rate: float
    tracks: list[Track]
    rng: np.random.Generator
    next_arrival: _Arrival | None = None
    queue: deque = field(default_factory=deque)


# ---------------------------------------------------------------------------
# Traffic model
# ---------------------------------------------------------------------------


class TrafficModel:
    """Single-owner mutable state of all background participants."""

    def __init__(
        self,
        topology: IntersectionTopology,
        schedule: SignalSchedule,
        config: TrafficConfig,
        rho_bisect: float = 0.6,
        sample_ds: float = 0.5,
    ) -> None:
        self.topology = topology
        self.schedule = schedule
        self.config = config
        self._rho_bisect = rho_bisect
        self._sample_ds = sample_ds
        self._route_cache: dict[tuple[int, int], Track] = {}
        self._opposing = _opposing_approach(topology)

        self.vehicle_tracks = {
            i: [self._track(c.entrance, c.exit, c.tag) for c in topology.connections if c.entrance == i]
            for i in range(len(topology.entrance_lanes))
        }
        self.crosswalks = build_crosswalks(topology)

        self.time = 0.0
        self.agents: list[Agent] = []
        self.exposure: dict[str, int] = {"overspeed": 0, "rounding": 0}
        self._sources: list[_Source] = []
        self._next_id = 0

    # ------------------------------------------------------------------
    # Lifecycle
    # ------------------------------------------------------------------

    def reset(self, t_start: float = 0.0) -> None:
        """Clear all agents and warm the traffic up so it is in flow at ``t_start``."""
        self.agents = []
        self.exposure = {"overspeed": 0, "rounding": 0}
        self._next_id = 0
        warmup = min(self.config.warmup_s, t_start)
        self.time = t_start - warmup
        self._sources = self._build_sources()
        dt = 0.1
        for _ in range(int(round(warmup / dt))):
            self.advance(dt)
        self.time = t_start

    def advance(self, dt: float, obstacles: Iterable[Obstacle] = ()) -> None:
        """Advance every agent by ``dt`` seconds, then insert due arrivals."""
        external = list(obstacles)
        snapshot = []
        for agent in self.agents:
            p = agent.participant()
            snapshot.append((agent, Obstacle(p.p_x, p.p_y, p.phi, p.v, p.length)))
        for agent, _ in snapshot:
            if agent.kind == "pedestrian":
                self._advance_pedestrian(agent, dt)
            else:
                others = [ob for a, ob in snapshot if a is not agent] + external
                self._advance_rider(agent, dt, others)
        self.agents = [a for a in self.agents if a.s < a.track.length]
        self.time += dt
        self._spawn_due()
        if logger.isEnabledFor(logging.DEBUG):
            self._log_collisions()

    def participants(self) -> list[ParticipantState]:
        return [a.participant() for a in self.agents]

    def place(self, kind: str, track: Track, s: float, v: float, **flags: Any) -> Agent:
        """Put an agent on ``track`` directly, bypassing the arrival streams."""
        size = {"vehicle": VEHICLE_SIZE, "cyclist": CYCLIST_SIZE, "pedestrian": PEDESTRIAN_SIZE}[kind]
        agent = Agent(self._next_id, kind, track, s, v, *size, **flags)
        self._next_id += 1
        self.agents.append(agent)
        return agent

    def track_for(self, entrance: int, exit_: int) -> Track:
        """The (cached) route track between two lanes."""
        for conn in self.topology.connections:
            if (conn.entrance, conn.exit) == (entrance, exit_):
                return self._track(entrance, exit_, conn.tag)
        return self._track(entrance, exit_, "straight")

    # ------------------------------------------------------------------
    # Agent motion
    # ------------------------------------------------------------------

    def _advance_pedestrian(self, agent: Agent, dt: float) -> None:
        if not agent.walking:
            phase, _ = signal_at(self.schedule, agent.track.approach, self.time)
            agent.walking = phase == "R"
        agent.v = PEDESTRIAN_SPEED if agent.walking else 0.0
        agent.s += agent.v * dt

    def _advance_rider(self, agent: Agent, dt: float, obstacles: list[Obstacle]) -> None:
        track = agent.track
        front = agent.s + agent.length / 2.0
        v_new = min(agent.v + MAX_ACCEL * dt, self._desired_speed(agent))

        if front < track.s_stop:
            phase, _ = signal_at(self.schedule, track.approach, self.time, track.movement)
            d_stop = track.s_stop - front
            if phase == "R" or (phase == "Y" and d_stop >= agent.v ** 2 / (2.0 * COMFORT_DECEL)):
                v_new = min(v_new, safe_speed(d_stop, dt))

        leader = self._leader(agent, obstacles)
        if leader is not None:
            gap, v_lead = leader
            d = gap - max(MIN_GAP, HEADWAY_S * agent.v) + v_lead ** 2 / (2.0 * COMFORT_DECEL)
            v_new = min(v_new, safe_speed(d, dt))

        agent.v = max(v_new, 0.0)
        agent.s += agent.v * dt

        if agent.rounding and not agent.diverted and agent.s + agent.length / 2.0 >= track.s_stop:
            self._divert(agent)

    def _desired_speed(self, agent: Agent) -> float:
        if agent.kind == "cyclist":
            return CYCLIST_SPEED
        inside = agent.track.s_stop <= agent.s < agent.track.s_exit
        base = self.config.inside_speed if inside else self.config.outside_speed
        return base * agent.speed_scale

    @staticmethod
    def _leader(agent: Agent, obstacles: list[Obstacle]) -> tuple[float, float] | None:
        """Gap to and along-track speed of the nearest obstacle ahead in the corridor."""
        track = agent.track
        window = (track.arc_length > agent.s) & (track.arc_length <= agent.s + LOOKAHEAD)
        if not window.any():
            return None
        pts, s_win, heads = track.points[window], track.arc_length[window], track.headings[window]

        best: tuple[float, float] | None = None
        for ob in obstacles:
            dist = np.hypot(pts[:, 0] - ob.x, pts[:, 1] - ob.y)
            j = int(np.argmin(dist))
            if dist[j] > CORRIDOR:
                continue
            gap = float(s_win[j] - agent.s - (agent.length + ob.length) / 2.0)
            v_lead = max(ob.v * math.cos(ob.phi - heads[j]), 0.0)
            if best is None or gap < best[0]:
                best = (gap, v_lead)
        return best

    def _divert(self, agent: Agent) -> None:
        track = agent.track
        target = self.topology.exit_lanes[track.exit]
        inside = _inside_exit(self.topology, target.approach, track.exit)
        agent.diverted = True
        if inside == track.exit:
            return
        try:
            new_track = self._track(track.entrance, inside, "straight")
        except IntersectionRLError as exc:
            logger.warning("Rounding diversion skipped for agent %d: %s", agent.agent_id, exc)
            return
        agent.track = new_track
        logger.debug("Agent %d rounds into exit lane %d", agent.agent_id, inside)

    # ------------------------------------------------------------------
    # Arrivals
    # ------------------------------------------------------------------

    def _build_sources(self) -> list[_Source]:
        specs: list[tuple[str, float, list[Track]]] = []
        for lane_index, tracks in self.vehicle_tracks.items():
            if tracks:
                specs.append(("vehicle", self.config.vehicle_rate, tracks))
        for lane_index in _outermost_lanes(self.topology):
            tracks = self.vehicle_tracks.get(lane_index, [])
            if tracks:
                specs.append(("cyclist", self.config.cyclist_rate, tracks))
        for both_ways in self.crosswalks:
            specs.append(("pedestrian", self.config.pedestrian_rate, list(both_ways)))

        seeds = np.random.SeedSequence(self.config.seed).spawn(max(len(specs), 1))
        sources = [
            _Source(kind, rate, tracks, np.random.default_rng(seq))
            for (kind, rate, tracks), seq in zip(specs, seeds)
        ]
        for index, source in enumerate(sources):
            source.next_arrival = self._draw_arrival(source, index, self.time)
        return sources

    @staticmethod
    def _draw_arrival(source: _Source, index: int, after: float) -> _Arrival | None:
        if source.rate <= 0:
            return None
        wait = source.rng.exponential(3600.0 / source.rate)
        return _Arrival(after + wait, index, float(source.rng.random()), float(source.rng.random()))

    def _spawn_due(self) -> None:
        for index, source in enumerate(self._sources):
            while source.next_arrival is not None and source.next_arrival.time <= self.time:
                arrival = source.next_arrival
                source.queue.append(arrival)
                self._count_exposure(source, arrival)
                source.next_arrival = self._draw_arrival(source, index, arrival.time)
            while source.queue and self._insert(source, source.queue[0]):
                source.queue.popleft()

    def _count_exposure(self, source: _Source, arrival: _Arrival) -> None:
        if source.kind != "vehicle":
            return
        track = _choose(source.tracks, arrival.choice)
        if self._is_overspeed(track, arrival):
            self.exposure["overspeed"] += 1
        if self._is_rounding(track, arrival):
            self.exposure["rounding"] += 1

    def _is_overspeed(self, track: Track, arrival: _Arrival) -> bool:
        opposing = self._opposing is None or track.approach == self._opposing
        return (track.movement == "straight" and opposing
                and arrival.u_perturb < self.config.overspeed_fraction)

    def _is_rounding(self, track: Track, arrival: _Arrival) -> bool:
        return track.movement == "straight" and arrival.u_perturb < self.config.rounding_fraction

    def _insert(self, source: _Source, arrival: _Arrival) -> bool:
        track = _choose(source.tracks, arrival.choice)
        start = track.points[0]
        if source.kind != "pedestrian":
            for other in self.agents:
                if other.kind == "pedestrian":
                    continue
                x, y, _, _ = other.track.pose(other.s)
                if math.hypot(x - start[0], y - start[1]) < SPAWN_CLEARANCE:
                    return False

        if source.kind == "vehicle":
            overspeed = self._is_overspeed(track, arrival)
            scale = self.config.overspeed_factor if overspeed else 1.0
            agent = Agent(self._next_id, "vehicle", track, 0.0, self.config.outside_speed * scale,
                          *VEHICLE_SIZE, speed_scale=scale, rounding=self._is_rounding(track, arrival))
        elif source.kind == "cyclist":
            agent = Agent(self._next_id, "cyclist", track, 0.0, CYCLIST_SPEED, *CYCLIST_SIZE)
        else:
            agent = Agent(self._next_id, "pedestrian", track, 0.0, 0.0, *PEDESTRIAN_SIZE)
        self._next_id += 1
        self.agents.append(agent)
        return True

    # ------------------------------------------------------------------
    # Helpers
    # ------------------------------------------------------------------

    def _track(self, entrance: int, exit_: int, movement: str) -> Track:
        key = (entrance, exit_)
        if key not in self._route_cache:
            path = route_between(self.topology, entrance, exit_, movement,
                                 self._rho_bisect, self._sample_ds)
            approach = self.topology.entrance_lanes[entrance].approach
            self._route_cache[key] = Track.from_path(path, approach)
        return self._route_cache[key]

    def _log_collisions(self) -> None:
        riders = [(a, a.participant()) for a in self.agents]
        for i, (a, pa) in enumerate(riders):
            for b, pb in riders[i + 1:]:
                if math.hypot(pa.p_x - pb.p_x, pa.p_y - pb.p_y) < 0.5 * (a.width + b.width):
                    logger.debug("Background collision t=%.1f: agents %d and %d",
                                 self.time, a.agent_id, b.agent_id)


def advance_traffic(traffic: TrafficModel, dt: float, obstacles: Iterable[Obstacle] = ()) -> TrafficModel:
    """Advance the background traffic by one step and return it."""
    traffic.advance(dt, obstacles)
    return traffic


def safe_speed(distance: float, dt: float, decel: float = COMFORT_DECEL) -> float:
    """Largest speed v with v·dt + v²/(2·decel) ≤ distance."""
    if distance <= 0:
        return 0.0
    bdt = decel * dt
    return -bdt + math.sqrt(bdt * bdt + 2.0 * decel * distance)


def build_crosswalks(topology: IntersectionTopology) -> list[tuple[Track, Track]]:
    """One crosswalk per arm (both walking directions), just upstream of the lane endpoints."""
    arms: dict[int, list[tuple[np.ndarray, np.ndarray]]] = {}
    for lane in topology.entrance_lanes:
        if lane.approach is not None:
            arms.setdefault(lane.approach, []).append((lane.point, -lane.direction))
    for lane in topology.exit_lanes:
        if lane.approach is not None:
            arms.setdefault(lane.approach, []).append((lane.point, lane.direction))

    crosswalks = []
    for approach in sorted(arms):
        entries = arms[approach]
        outward = entries[0][1]
        across = np.array([-outward[1], outward[0]])
        shifted = [p + CROSSWALK_SETBACK * outward for p, _ in entries]
        base = shifted[0]
        offsets = [float((q - base) @ across) for q in shifted]
        start = base + (min(offsets) - SIDEWALK) * across
        end = base + (max(offsets) + SIDEWALK) * across
        crosswalks.append((Track.segment(start, end, approach), Track.segment(end, start, approach)))
    return crosswalks


def _choose(tracks: list[Track], u: float) -> Track:
    return tracks[min(int(u * len(tracks)), len(tracks) - 1)]


def _outermost_lanes(topology: IntersectionTopology) -> list[int]:
    by_arm: dict[Any, int] = {}
    for index, lane in enumerate(topology.entrance_lanes):
        key = lane.approach if lane.approach is not None else f"lane{index}"
        by_arm[key] = index
    return sorted(by_arm.values())


def _inside_exit(topology: IntersectionTopology, approach: int | None, current: int) -> int:
    """Exit lane of the same arm closest to the median (leftmost in travel direction)."""
    lanes = [
        (i, lane) for i, lane in enumerate(topology.exit_lanes)
        if approach is not None and lane.approach == approach
    ]
    if not lanes:
        return current
    left = lambda lane: np.array([-math.sin(lane.heading), math.cos(lane.heading)])  # noqa: E731
    return max(lanes, key=lambda item: float(item[1].point @ left(item[1])))[0]


def _opposing_approach(topology: IntersectionTopology) -> int | None:
    """The arm facing the ego arm (entrance heading most anti-parallel)."""
    if topology.ego_approach is None:
        return None
    ego_lanes = [l for l in topology.entrance_lanes if l.approach == topology.ego_approach]
    if not ego_lanes:
        return None
    ego_dir = ego_lanes[0].direction
    best, best_dot = None, math.inf
    for lane in topology.entrance_lanes:
        if lane.approach in (None, topology.ego_approach):
            continue
        dot = float(lane.direction @ ego_dir)
        if dot < best_dot:
            best, best_dot = lane.approach, dot
    return best
