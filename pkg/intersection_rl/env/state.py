"""
Driving State, Utility and Safety Constraints
===============================================
Builds the fixed-size driving state

    s = [x_ego (8), x_track (4), x_other (16 × 6)]   → 108 values

where x_track = [Δx, Δy, Δv, Δφ] is the ego error in the frame of the
closest path sample (longitudinal, left-positive lateral) and x_other holds
the nearest 8 vehicles, 4 cyclists and 4 pedestrians in the ego frame
(relative x forward, relative y left, v, relative heading, L, W), nearest
first per kind and padded with far placeholders.

Tracking error, utility and the disc-based safety function are written on
torch tensors so the model rollouts can differentiate through them; the
scalar helpers wrap them for the world loop.

Usage::

    state = build_state(ego, path, "pass", perceived)
    cost = utility(state.track, state.ego, action.as_array())
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np
import torch

from intersection_rl.configuration import ConfigMixin
from intersection_rl.env.dynamics import EgoState, ParticipantState
from intersection_rl.planning.path_planner import VELOCITY_MODES, CandidatePath

# ---------------------------------------------------------------------------
# Layout
# ---------------------------------------------------------------------------

SLOT_COUNTS: dict[str, int] = {"vehicle": 8, "cyclist": 4, "pedestrian": 4}
SLOT_KINDS: tuple[str, ...] = tuple(k for k, n in SLOT_COUNTS.items() for _ in range(n))
N_SLOTS = len(SLOT_KINDS)
OTHER_DIM = 6
TRACK_DIM = 4
EGO_DIM = 8
STATE_DIM = EGO_DIM + TRACK_DIM + N_SLOTS * OTHER_DIM

PLACEHOLDER = np.array([0.0, 100.0, 0.0, 0.0, 1.0, 1.0])

#: Per-component scale dividing the state before it enters a network
STATE_SCALE = np.concatenate([
    [50.0, 50.0, 10.0, 2.0, math.pi, 1.0, 0.4, 3.0],
    [2.0, 2.0, 5.0, 1.0],
    np.tile([50.0, 50.0, 10.0, math.pi, 5.0, 2.0], N_SLOTS),
])

_PEDESTRIAN_MASK = np.array([k == "pedestrian" for k in SLOT_KINDS])

_UTILITY_WEIGHTS = {
    "dv": 0.03, "dx": 0.8, "dy": 0.8, "dphi": 30.0,
    "omega": 0.02, "delta": 5.0, "a": 0.05, "d_delta": 0.4, "d_a": 0.1,
}


@dataclass(frozen=True)
class SafetyConfig(ConfigMixin):
    """Disc layout of the safety constraints (metres)."""

    ego_length: float = 4.8
    ego_width: float = 2.0
    ego_margin: float = 0.2
    safety_distance: float = 0.5


@dataclass(frozen=True)
class DrivingState:
    """One driving state plus the side information the model rollout needs.

    ``occupancy`` marks real (non-placeholder) slots; ``inverse_radius`` is
    the turn curvature used to propagate each slot with f_other.
    """

    ego: np.ndarray            # (8,)
    track: np.ndarray          # (4,)
    other: np.ndarray          # (16, 6)
    occupancy: np.ndarray      # (16,) bool
    inverse_radius: np.ndarray  # (16,)

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.ego, self.track, self.other.reshape(-1)])


# ---------------------------------------------------------------------------
# Path tensors and tracking error
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class PathTensors:
    """Padded tensors of one or more paths, indexable per batch row.

    ``speeds`` has shape (P, 2, N) with the mode axis ordered as
    ``VELOCITY_MODES``; short paths are padded by repeating their last sample.
    """

    points: torch.Tensor    # (P, N, 2)
    headings: torch.Tensor  # (P, N)
    speeds: torch.Tensor    # (P, 2, N)

    @classmethod
    def from_paths(cls, paths: Sequence[CandidatePath]) -> "PathTensors":
        n_max = max(len(p.arc_length) for p in paths)

        def _pad(values: np.ndarray) -> np.ndarray:
            pad = n_max - values.shape[0]
            return np.concatenate([values, np.repeat(values[-1:], pad, axis=0)])

        points = np.stack([_pad(p.points) for p in paths])
        headings = np.stack([_pad(p.headings) for p in paths])
        speeds = np.stack([[_pad(p.speeds(m)) for m in VELOCITY_MODES] for p in paths])
        as_t = lambda a: torch.as_tensor(a, dtype=torch.float64)  # noqa: E731
        return cls(as_t(points), as_t(headings), as_t(speeds))

    def select(self, path_index: torch.Tensor, mode_index: torch.Tensor) -> tuple[torch.Tensor, ...]:
        """Per-row (points, headings, reference speeds) for a batch."""
        return (
            self.points[path_index],
            self.headings[path_index],
            self.speeds[path_index, mode_index],
        )


def tracking_error(
    ego: torch.Tensor,
    points: torch.Tensor,
    headings: torch.Tensor,
    speeds: torch.Tensor,
) -> torch.Tensor:
    """x_track = [Δx, Δy, Δv, Δφ] of ``ego`` (B, 8) against (B, N, ·) paths."""
    position = ego[..., :2]
    offset = position.unsqueeze(-2) - points
    index = (offset ** 2).sum(-1).argmin(dim=-1, keepdim=True)

    nearest_offset = torch.gather(offset, -2, index.unsqueeze(-1).expand(*index.shape, 2)).squeeze(-2)
    heading = torch.gather(headings, -1, index).squeeze(-1)
    v_ref = torch.gather(speeds, -1, index).squeeze(-1)

    cos_h, sin_h = torch.cos(heading), torch.sin(heading)
    dx = nearest_offset[..., 0] * cos_h + nearest_offset[..., 1] * sin_h
    dy = -nearest_offset[..., 0] * sin_h + nearest_offset[..., 1] * cos_h
    diff = ego[..., 4] - heading
    dphi = torch.atan2(torch.sin(diff), torch.cos(diff))
    dv = ego[..., 2] - v_ref
    return torch.stack([dx, dy, dv, dphi], dim=-1)


def relative_others(ego: torch.Tensor, others: torch.Tensor, extents: torch.Tensor) -> torch.Tensor:
    """Express absolute participants (B, 16, 4) in the ego frame → (B, 16, 6)."""
    cos_phi = torch.cos(ego[..., 4]).unsqueeze(-1)
    sin_phi = torch.sin(ego[..., 4]).unsqueeze(-1)
    dx = others[..., 0] - ego[..., 0].unsqueeze(-1)
    dy = others[..., 1] - ego[..., 1].unsqueeze(-1)
    return torch.stack([
        cos_phi * dx + sin_phi * dy,
        -sin_phi * dx + cos_phi * dy,
        others[..., 2],
        others[..., 3] - ego[..., 4].unsqueeze(-1),
        extents[..., 0],
        extents[..., 1],
    ], dim=-1)


def absolute_others(ego: torch.Tensor, other: torch.Tensor) -> torch.Tensor:
    """Inverse of :func:`relative_others`: (B, 16, 6) → absolute (B, 16, 4)."""
    cos_phi = torch.cos(ego[..., 4]).unsqueeze(-1)
    sin_phi = torch.sin(ego[..., 4]).unsqueeze(-1)
    rx, ry = other[..., 0], other[..., 1]
    return torch.stack([
        ego[..., 0].unsqueeze(-1) + cos_phi * rx - sin_phi * ry,
        ego[..., 1].unsqueeze(-1) + sin_phi * rx + cos_phi * ry,
        other[..., 2],
        other[..., 3] + ego[..., 4].unsqueeze(-1),
    ], dim=-1)


# ---------------------------------------------------------------------------
# State construction
# ---------------------------------------------------------------------------


def build_state(
    ego: EgoState,
    path: CandidatePath,
    mode: str,
    perceived: Sequence[ParticipantState],
) -> DrivingState:
    """Assemble the driving state of ``ego`` tracking ``path`` in ``mode``."""
    if mode not in VELOCITY_MODES:
        raise ValueError(f"mode must be one of {VELOCITY_MODES}, got '{mode}'")
    if len(path.arc_length) == 0:
        raise ValueError("path must be non-empty")

    ego_arr = ego.as_array()
    ego_t = torch.as_tensor(ego_arr, dtype=torch.float64)
    track = tracking_error(
        ego_t,
        torch.as_tensor(path.points, dtype=torch.float64),
        torch.as_tensor(path.headings, dtype=torch.float64),
        torch.as_tensor(path.speeds(mode), dtype=torch.float64),
    ).numpy()

    other = np.tile(PLACEHOLDER, (N_SLOTS, 1))
    occupancy = np.zeros(N_SLOTS, dtype=bool)
    inverse_radius = np.zeros(N_SLOTS)

    cos_phi, sin_phi = math.cos(ego.phi), math.sin(ego.phi)
    start = 0
    for kind, count in SLOT_COUNTS.items():
        members = [p for p in perceived if p.kind == kind]
        members.sort(key=lambda p: math.hypot(p.p_x - ego.p_x, p.p_y - ego.p_y))
        for slot, p in enumerate(members[:count], start=start):
            dx, dy = p.p_x - ego.p_x, p.p_y - ego.p_y
            other[slot] = (
                cos_phi * dx + sin_phi * dy,
                -sin_phi * dx + cos_phi * dy,
                p.v,
                p.phi - ego.phi,
                p.length,
                p.width,
            )
            occupancy[slot] = True
            inverse_radius[slot] = p.inverse_radius
        start += count

    return DrivingState(ego_arr, track, other, occupancy, inverse_radius)


# ---------------------------------------------------------------------------
# Utility and safety
# ---------------------------------------------------------------------------


def utility(x_track, ego, u):
    """Quadratic tracking utility l(s, u) on arrays or tensors (last axis)."""
    w = _UTILITY_WEIGHTS
    return (
        w["dv"] * x_track[..., 2] ** 2
        + w["dx"] * x_track[..., 0] ** 2
        + w["dy"] * x_track[..., 1] ** 2
        + w["dphi"] * x_track[..., 3] ** 2
        + w["omega"] * ego[..., 5] ** 2
        + w["delta"] * ego[..., 6] ** 2
        + w["a"] * ego[..., 7] ** 2
        + w["d_delta"] * u[..., 0] ** 2
        + w["d_a"] * u[..., 1] ** 2
    )


def penalty(g: torch.Tensor) -> torch.Tensor:
    """φ(g) = min{0, −g}² — zero on the safe set g ≤ 0."""
    return torch.relu(g) ** 2


def safety_g_tensor(
    ego: torch.Tensor,
    others: torch.Tensor,
    extents: torch.Tensor,
    config: SafetyConfig = SafetyConfig(),
) -> torch.Tensor:
    """g for every slot: ``ego`` (B, 8), ``others`` (B, 16, 4), ``extents`` (B, 16, 2)."""
    ego_dir = torch.stack([torch.cos(ego[..., 4]), torch.sin(ego[..., 4])], dim=-1)
    ego_offset = (config.ego_length / 4.0) * ego_dir
    ego_centres = torch.stack([ego[..., :2] + ego_offset, ego[..., :2] - ego_offset], dim=-2)
    ego_radius = config.ego_width / 2.0 + config.ego_margin

    length, width = extents[..., 0], extents[..., 1]
    pedestrian = torch.as_tensor(_PEDESTRIAN_MASK[: others.shape[-2]])
    other_radius = torch.where(
        pedestrian,
        torch.maximum(length, width) / 2.0,
        torch.maximum(width / 2.0, length / 4.0),
    )
    reach = torch.where(pedestrian, torch.zeros_like(length), length / 4.0)
    other_dir = torch.stack([torch.cos(others[..., 3]), torch.sin(others[..., 3])], dim=-1)
    other_offset = reach.unsqueeze(-1) * other_dir
    other_centres = torch.stack(
        [others[..., :2] + other_offset, others[..., :2] - other_offset], dim=-2
    )  # (B, 16, 2, 2)

    diff = other_centres.unsqueeze(-2) - ego_centres.unsqueeze(-3).unsqueeze(-4)  # (B,16,2,2,2)
    distance = torch.sqrt((diff ** 2).sum(-1) + 1e-12).flatten(-2).min(dim=-1).values
    return ego_radius + other_radius + config.safety_distance - distance


def safety_g(
    ego: EgoState,
    participant: ParticipantState,
    config: SafetyConfig = SafetyConfig(),
) -> float:
    """Scalar g between the ego and one participant (g ≤ 0 is safe)."""
    slot = SLOT_KINDS.index(participant.kind)
    others = torch.zeros(1, N_SLOTS, 4, dtype=torch.float64)
    extents = torch.ones(1, N_SLOTS, 2, dtype=torch.float64)
    others[0, slot] = torch.tensor([participant.p_x, participant.p_y, participant.v, participant.phi])
    extents[0, slot] = torch.tensor([participant.length, participant.width])
    ego_t = torch.as_tensor(ego.as_array(), dtype=torch.float64).unsqueeze(0)
    return float(safety_g_tensor(ego_t, others, extents, config)[0, slot])
