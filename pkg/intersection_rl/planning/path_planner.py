"""
Stage 1 — General Static Path Planner
=======================================
Generates candidate paths for arbitrary crossroad topologies from static road
information only.  Every candidate path is the concatenation of

    - the entrance route  X0 → X1  (straight, along the entrance lane centre),
    - the curve route     X1 → X4  (cubic Bezier through X1, X2, X3, X4),
    - the exit route      X4 → X5  (straight, along the exit lane centre),

plus two expected-velocity profiles over arc length:

    pass  — 0.8·V_limit outside the junction, min(0.5·V_limit, 30 km/h) inside
    stop  — uniform deceleration to the stop line over ``decel_zone`` metres,
            zero through the junction interior, 0.8·V_limit after the exit

The middle control points X2 / X3 are the feet of the perpendiculars dropped
from the ρ-bisection points of X1X4 onto the entrance / exit lines, written in
closed matrix form in :func:`compute_control_points`.

Usage::

    from intersection_rl.planning.path_planner import load_topology, generate_path_set

    topology = load_topology("scenarios/mini_topology.json")
    paths = generate_path_set(topology, task="left", rho_bisect=0.6)
    paths[0].to_frame().head()
"""

from __future__ import annotations

import dataclasses
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd

from intersection_rl.errors import DegenerateProjectionError, ProfileError, TopologyError

logger = logging.getLogger(__name__)

# ---------------------------------------------------------------------------
# Constants
# ---------------------------------------------------------------------------

MOVEMENTS: tuple[str, ...] = ("left", "straight", "right")
VELOCITY_MODES: tuple[str, ...] = ("pass", "stop")

#: Cap on the expected speed inside the junction (30 km/h)
JUNCTION_SPEED_CAP = 30.0 / 3.6

_OUTSIDE_SPEED_RATIO = 0.8
_INSIDE_SPEED_RATIO = 0.5
_BEZIER_TABLE_SIZE = 200      # uniform-t samples used for arc-length reparameterisation
_BEZIER_SPACING_RATIO = 0.9   # Bezier resampling spacing relative to sample_ds
_DEGENERATE_TOL = 1e-6        # metres


# ---------------------------------------------------------------------------
# Topology types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class LaneRef:
    """One lane at the junction boundary.

    ``endpoint`` is X1 for an entrance lane and X4 for an exit lane;
    ``heading`` is the direction of travel.
    """

    endpoint: tuple[float, float]
    heading: float
    speed_limit: float
    length: float
    approach: int | None = None

    def __post_init__(self) -> None:
        if not math.isfinite(self.heading):
            raise TopologyError(f"Lane heading must be finite, got {self.heading}")
        if self.length <= 0:
            raise TopologyError(f"Lane length must be > 0, got {self.length}")
        if self.speed_limit <= 0:
            raise TopologyError(f"Lane speed limit must be > 0, got {self.speed_limit}")

    @property
    def direction(self) -> np.ndarray:
        return np.array([math.cos(self.heading), math.sin(self.heading)])

    @property
    def point(self) -> np.ndarray:
        return np.asarray(self.endpoint, dtype=np.float64)


@dataclass(frozen=True)
class Connection:
    """A permitted movement from one entrance lane to one exit lane."""

    entrance: int
    exit: int
    tag: str


@dataclass(frozen=True)
class IntersectionTopology:
    """Static description of one crossroad.

    Parameters
    ----------
    entrance_lanes, exit_lanes:
        Lanes leading into / out of the junction.
    connections:
        Permitted movements between them.
    stop_line_distance:
        Distance of the stop line upstream of X1, measured along the
        entrance lane.
    ego_approach:
        Arm the automated vehicle departs from; ``None`` means every
        entrance lane is eligible.
    """

    entrance_lanes: tuple[LaneRef, ...]
    exit_lanes: tuple[LaneRef, ...]
    connections: tuple[Connection, ...]
    stop_line_distance: float = 0.0
    ego_approach: int | None = None
    name: str = "intersection"

    def __post_init__(self) -> None:
        if self.stop_line_distance < 0:
            raise TopologyError("stop_line_distance must be >= 0")
        for i, conn in enumerate(self.connections):
            if not 0 <= conn.entrance < len(self.entrance_lanes):
                raise TopologyError(f"Connection {i} references entrance {conn.entrance}")
            if not 0 <= conn.exit < len(self.exit_lanes):
                raise TopologyError(f"Connection {i} references exit {conn.exit}")
            if conn.tag not in MOVEMENTS:
                raise TopologyError(f"Connection {i} has unknown tag '{conn.tag}'")

    # ------------------------------------------------------------------
    # Serialisation
    # ------------------------------------------------------------------

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "IntersectionTopology":
        """Build a topology from the scenario JSON layout."""

        def _lane(d: dict[str, Any]) -> LaneRef:
            return LaneRef(
                endpoint=(float(d["x"]), float(d["y"])),
                heading=float(d["heading_rad"]),
                speed_limit=float(d["speed_limit_mps"]),
                length=float(d["length_m"]),
                approach=d.get("approach"),
            )

        try:
            return cls(
                entrance_lanes=tuple(_lane(d) for d in data["entrances"]),
                exit_lanes=tuple(_lane(d) for d in data["exits"]),
                connections=tuple(
                    Connection(int(c["from"]), int(c["to"]), str(c["tag"]))
                    for c in data["connections"]
                ),
                stop_line_distance=float(data.get("stop_line_m", 0.0)),
                ego_approach=data.get("ego_approach"),
                name=str(data.get("name", "intersection")),
            )
        except KeyError as exc:
            raise TopologyError(f"Topology document is missing key {exc}") from exc

    def to_dict(self) -> dict[str, Any]:
        def _lane(lane: LaneRef) -> dict[str, Any]:
            out = {
                "x": lane.endpoint[0],
                "y": lane.endpoint[1],
                "heading_rad": lane.heading,
                "speed_limit_mps": lane.speed_limit,
                "length_m": lane.length,
            }
            if lane.approach is not None:
                out["approach"] = lane.approach
            return out

        return {
            "name": self.name,
            "entrances": [_lane(l) for l in self.entrance_lanes],
            "exits": [_lane(l) for l in self.exit_lanes],
            "connections": [
                {"from": c.entrance, "to": c.exit, "tag": c.tag} for c in self.connections
            ],
            "stop_line_m": self.stop_line_distance,
            "ego_approach": self.ego_approach,
        }


def load_topology(path: str | Path) -> IntersectionTopology:
    """Load an :class:`IntersectionTopology` from a JSON file."""
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(f"Topology file not found: '{path}'")
    with open(path) as fh:
        return IntersectionTopology.from_dict(json.load(fh))


# ---------------------------------------------------------------------------
# Path types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ControlPoints:
    """The six control points X0..X5 of one candidate route."""

    x0: np.ndarray
    x1: np.ndarray
    x2: np.ndarray
    x3: np.ndarray
    x4: np.ndarray
    x5: np.ndarray

    def as_array(self) -> np.ndarray:
        return np.vstack([self.x0, self.x1, self.x2, self.x3, self.x4, self.x5])


@dataclass(frozen=True)
class VelocityProfile:
    """Expected speed as a function of arc-length position."""

    mode: str
    outside_speed: float
    inside_speed: float
    s_stop: float
    s_exit: float
    decel_zone: float

    def speed_at(self, s: float | np.ndarray) -> float | np.ndarray:
        """Return the expected speed at arc length ``s`` (scalar or array)."""
        s_arr = np.asarray(s, dtype=np.float64)
        if self.mode == "pass":
            v = np.where(
                (s_arr >= self.s_stop) & (s_arr < self.s_exit),
                self.inside_speed,
                self.outside_speed,
            )
        else:
            remaining = np.clip(self.s_stop - s_arr, 0.0, None)
            ramp = self.outside_speed * np.sqrt(np.minimum(remaining / self.decel_zone, 1.0))
            v = np.where(s_arr >= self.s_exit, self.outside_speed,
                         np.where(s_arr >= self.s_stop, 0.0, ramp))
        return float(v) if np.ndim(v) == 0 else v


@dataclass(frozen=True)
class CandidatePath:
    """One route τ ∈ Π with its sampled geometry and velocity profiles."""

    path_id: int
    points: np.ndarray        # (N, 2)
    headings: np.ndarray      # (N,)  continuous (unwrapped)
    arc_length: np.ndarray    # (N,)  cumulative metres from X0
    curvature: np.ndarray     # (N,)  signed, 1/m
    movement: str
    entrance: int
    exit: int
    connection: int
    control_points: ControlPoints
    s_stop: float
    s_exit: float
    profiles: dict[str, VelocityProfile] = field(default_factory=dict)

    @property
    def length(self) -> float:
        return float(self.arc_length[-1])

    def speeds(self, mode: str) -> np.ndarray:
        """Expected speed of ``mode`` at every path sample."""
        return np.asarray(self.profiles[mode].speed_at(self.arc_length), dtype=np.float64)

    def to_frame(self) -> pd.DataFrame:
        """Sampled path as a DataFrame with columns s, x, y, heading, v_pass, v_stop."""
        return pd.DataFrame({
            "s": self.arc_length,
            "x": self.points[:, 0],
            "y": self.points[:, 1],
            "heading": self.headings,
            "v_pass": self.speeds("pass") if "pass" in self.profiles else np.nan,
            "v_stop": self.speeds("stop") if "stop" in self.profiles else np.nan,
        })


# ---------------------------------------------------------------------------
# Public API — geometry
# ---------------------------------------------------------------------------


def compute_control_points(
    x1: np.ndarray,
    theta_in: float,
    x4: np.ndarray,
    theta_out: float,
    rho_bisect: float,
) -> tuple[np.ndarray, np.ndarray]:
    """Return the middle Bezier control points (X2, X3).

    X2 is the foot of the perpendicular from the bisection point of X1X4
    onto the entrance line through X1; X3 likewise on the exit line through
    X4.  Computed with the closed 2×2 matrix form.

    Parameters
    ----------
    x1, x4:
        Entrance end point and exit start point (metres).
    theta_in, theta_out:
        Entrance / exit travel headings (radians).
    rho_bisect:
        Bisection ratio in (0, 1); ρ → 1 collapses X2 onto X1 and X3 onto X4.

    Returns
    -------
    tuple of two ``(2,)`` arrays
        A degenerate projection (X2 = X1) is returned as-is; callers check
        it with :func:`projection_is_degenerate`.
    """
    if not 0.0 < rho_bisect < 1.0:
        raise ValueError(f"rho_bisect must lie in (0, 1), got {rho_bisect}")
    x1 = np.asarray(x1, dtype=np.float64)
    x4 = np.asarray(x4, dtype=np.float64)
    if np.array_equal(x1, x4):
        raise ValueError("X1 and X4 must be distinct points")

    own_in, other_in = _feature_matrices(theta_in, rho_bisect)
    own_out, other_out = _feature_matrices(theta_out, rho_bisect)
    x2 = own_in @ x1 + other_in @ x4
    x3 = other_out @ x1 + own_out @ x4
    return x2, x3


def projection_is_degenerate(anchor: np.ndarray, foot: np.ndarray, tol: float = _DEGENERATE_TOL) -> bool:
    """True when a projected control point coincides with its lane endpoint."""
    return bool(np.linalg.norm(np.asarray(foot) - np.asarray(anchor)) <= tol)


def bezier_point(
    x1: np.ndarray,
    x2: np.ndarray,
    x3: np.ndarray,
    x4: np.ndarray,
    t: float | np.ndarray,
) -> np.ndarray:
    """Evaluate the cubic Bezier curve B(t) for ``t`` in [0, 1].

    ``t`` may be a scalar (returns ``(2,)``) or a 1-D array (returns ``(n, 2)``).
    """
    t_arr = np.asarray(t, dtype=np.float64)
    if np.any(t_arr < 0.0) or np.any(t_arr > 1.0) or not np.all(np.isfinite(t_arr)):
        raise ValueError("Bezier parameter t must lie in [0, 1]")
    tt = t_arr[..., None]
    u = 1.0 - tt
    return (
        np.asarray(x1) * u ** 3
        + 3.0 * np.asarray(x2) * tt * u ** 2
        + 3.0 * np.asarray(x3) * tt ** 2 * u
        + np.asarray(x4) * tt ** 3
    )


def bezier_derivative(
    x1: np.ndarray,
    x2: np.ndarray,
    x3: np.ndarray,
    x4: np.ndarray,
    t: float | np.ndarray,
) -> np.ndarray:
    """First derivative B'(t) of the cubic Bezier curve."""
    tt = np.asarray(t, dtype=np.float64)[..., None]
    u = 1.0 - tt
    return (
        3.0 * u ** 2 * (np.asarray(x2) - np.asarray(x1))
        + 6.0 * u * tt * (np.asarray(x3) - np.asarray(x2))
        + 3.0 * tt ** 2 * (np.asarray(x4) - np.asarray(x3))
    )


def build_route(
    topology: IntersectionTopology,
    connection: int,
    rho_bisect: float = 0.6,
    sample_ds: float = 0.5,
    path_id: int = 0,
) -> CandidatePath:
    """Build the geometry of one candidate route (no velocity profiles).

    Parameters
    ----------
    topology:
        Crossroad description.
    connection:
        Index into ``topology.connections``.
    rho_bisect:
        Control-point bisection ratio.
    sample_ds:
        Maximum spacing between consecutive samples, in (0, 0.5] metres.

    Raises
    ------
    DegenerateProjectionError
        When X2 collapses onto X1 or X3 onto X4.
    """
    if not 0 <= connection < len(topology.connections):
        raise TopologyError(f"No connection with index {connection}")
    conn = topology.connections[connection]
    return route_between(
        topology, conn.entrance, conn.exit,
        movement=conn.tag, rho_bisect=rho_bisect, sample_ds=sample_ds,
        path_id=path_id, connection=connection,
    )


def route_between(
    topology: IntersectionTopology,
    entrance: int,
    exit_: int,
    movement: str,
    rho_bisect: float = 0.6,
    sample_ds: float = 0.5,
    path_id: int = 0,
    connection: int = -1,
) -> CandidatePath:
    """Build a route between any entrance / exit lane pair.

    Used directly for movements that are not permitted connections (a
    rounding vehicle diverting into the inside lane).
    """
    if not 0.0 < sample_ds <= 0.5:
        raise ValueError(f"sample_ds must lie in (0, 0.5], got {sample_ds}")
    ent = topology.entrance_lanes[entrance]
    ext = topology.exit_lanes[exit_]
    x1, x4 = ent.point, ext.point
    d_in, d_out = ent.direction, ext.direction

    x2, x3 = compute_control_points(x1, ent.heading, x4, ext.heading, rho_bisect)
    if projection_is_degenerate(x1, x2):
        raise DegenerateProjectionError(connection, entrance, exit_, "X2")
    if projection_is_degenerate(x4, x3):
        raise DegenerateProjectionError(connection, entrance, exit_, "X3")

    x0 = x1 - ent.length * d_in
    x5 = x4 + ext.length * d_out

    # ---- Entrance route X0 → X1 (X1 excluded; it starts the curve) ----
    n_in = int(math.ceil(ent.length / sample_ds))
    frac_in = np.linspace(0.0, 1.0, n_in + 1)[:-1]
    entrance_pts = x0 + np.outer(frac_in * ent.length, d_in)

    # ---- Curve route X1 → X4, resampled to near-uniform arc length ----
    t_table = np.linspace(0.0, 1.0, _BEZIER_TABLE_SIZE)
    table_pts = bezier_point(x1, x2, x3, x4, t_table)
    s_table = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(table_pts, axis=0), axis=1))])
    n_curve = max(int(math.ceil(s_table[-1] / (_BEZIER_SPACING_RATIO * sample_ds))), 1)
    t_resampled = np.interp(np.linspace(0.0, s_table[-1], n_curve + 1), s_table, t_table)
    t_resampled[0], t_resampled[-1] = 0.0, 1.0
    curve_pts = bezier_point(x1, x2, x3, x4, t_resampled)
    tangent = bezier_derivative(x1, x2, x3, x4, t_resampled)
    curve_headings = np.arctan2(tangent[:, 1], tangent[:, 0])

    # ---- Exit route X4 → X5 (X4 excluded; it ends the curve) ----
    n_out = int(math.ceil(ext.length / sample_ds))
    frac_out = np.linspace(0.0, 1.0, n_out + 1)[1:]
    exit_pts = x4 + np.outer(frac_out * ext.length, d_out)

    points = np.vstack([entrance_pts, curve_pts, exit_pts])
    headings = np.unwrap(np.concatenate([
        np.full(n_in, math.atan2(d_in[1], d_in[0])),
        curve_headings,
        np.full(n_out, math.atan2(d_out[1], d_out[0])),
    ]))
    arc_length = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(points, axis=0), axis=1))])

    x4_index = n_in + n_curve
    return CandidatePath(
        path_id=path_id,
        points=points,
        headings=headings,
        arc_length=arc_length,
        curvature=_menger_curvature(points),
        movement=movement,
        entrance=entrance,
        exit=exit_,
        connection=connection,
        control_points=ControlPoints(x0, x1, x2, x3, x4, x5),
        s_stop=float(arc_length[n_in] - topology.stop_line_distance),
        s_exit=float(arc_length[x4_index]),
    )


# ---------------------------------------------------------------------------
# Public API — velocity planning and path sets
# ---------------------------------------------------------------------------


def build_velocity_profiles(
    path: CandidatePath,
    topology: IntersectionTopology,
    decel_zone: float = 30.0,
) -> dict[str, VelocityProfile]:
    """Return the ``{"pass", "stop"}`` profiles for ``path``.

    Raises
    ------
    ProfileError
        When the deceleration zone does not fit on the entrance segment.
    """
    if decel_zone <= 0:
        raise ValueError(f"decel_zone must be > 0, got {decel_zone}")
    if path.s_stop < decel_zone:
        raise ProfileError(
            f"Deceleration zone ({decel_zone:.1f} m) is longer than the entrance "
            f"segment before the stop line ({path.s_stop:.1f} m) on path {path.path_id}"
        )
    v_limit = topology.entrance_lanes[path.entrance].speed_limit
    outside = _OUTSIDE_SPEED_RATIO * v_limit
    inside = min(_INSIDE_SPEED_RATIO * v_limit, JUNCTION_SPEED_CAP)
    common = dict(
        outside_speed=outside,
        inside_speed=inside,
        s_stop=path.s_stop,
        s_exit=path.s_exit,
        decel_zone=decel_zone,
    )
    return {
        "pass": VelocityProfile(mode="pass", **common),
        "stop": VelocityProfile(mode="stop", **common),
    }


def generate_path_set(
    topology: IntersectionTopology,
    task: str,
    rho_bisect: float = 0.6,
    sample_ds: float = 0.5,
    decel_zone: float = 30.0,
    approach: int | None = None,
) -> list[CandidatePath]:
    """Generate the candidate path set Π for one movement.

    One path per connection tagged ``task`` whose entrance belongs to
    ``approach`` (default: ``topology.ego_approach``), ordered by exit index.
    """
    if task not in MOVEMENTS:
        raise ValueError(f"task must be one of {MOVEMENTS}, got '{task}'")
    if approach is None:
        approach = topology.ego_approach

    matches = [
        (i, conn) for i, conn in enumerate(topology.connections)
        if conn.tag == task
        and (approach is None or topology.entrance_lanes[conn.entrance].approach == approach)
    ]
    if not matches:
        raise TopologyError(
            f"Topology '{topology.name}' has no '{task}' connection from approach {approach}"
        )
    matches.sort(key=lambda item: (item[1].exit, item[1].entrance))

    paths: list[CandidatePath] = []
    for path_id, (index, _) in enumerate(matches):
        route = build_route(topology, index, rho_bisect, sample_ds, path_id=path_id)
        profiles = build_velocity_profiles(route, topology, decel_zone)
        paths.append(dataclasses.replace(route, profiles=profiles))

    logger.debug(
        "Path set for '%s' on %s: %d candidate(s)", task, topology.name, len(paths)
    )
    return paths


def export_paths_csv(paths: list[CandidatePath], out_dir: str | Path) -> list[Path]:
    """Write one ``path_<id>.csv`` per candidate path; return the file paths."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written: list[Path] = []
    for path in paths:
        target = out_dir / f"path_{path.path_id}.csv"
        path.to_frame().to_csv(target, index=False, float_format="%.10g")
        written.append(target)
    logger.info("Exported %d candidate path(s) → %s", len(written), out_dir)
    return written


# ---------------------------------------------------------------------------
# Private helpers
# ---------------------------------------------------------------------------


def _feature_matrices(theta: float, rho: float) -> tuple[np.ndarray, np.ndarray]:
    """Matrices acting on the lane's own endpoint and on the opposite endpoint."""
    c, s = math.cos(theta), math.sin(theta)
    own = np.array([
        [rho * c * c + s * s, (rho - 1.0) * s * c],
        [(rho - 1.0) * s * c, c * c + rho * s * s],
    ])
    other = (1.0 - rho) * np.array([
        [c * c, s * c],
        [s * c, s * s],
    ])
    return own, other


def _menger_curvature(points: np.ndarray) -> np.ndarray:
    """Signed curvature of the circle through each consecutive sample triple."""
    a, b, c = points[:-2], points[1:-1], points[2:]
    ab, bc, ca = b - a, c - b, a - c
    cross = ab[:, 0] * bc[:, 1] - ab[:, 1] * bc[:, 0]
    denom = (
        np.linalg.norm(ab, axis=1) * np.linalg.norm(bc, axis=1) * np.linalg.norm(ca, axis=1)
    )
    kappa = np.where(denom > 0, 2.0 * cross / np.where(denom > 0, denom, 1.0), 0.0)
    return np.concatenate([[kappa[0]], kappa, [kappa[-1]]])
