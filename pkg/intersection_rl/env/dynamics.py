"""
Stage 2 — Vehicle and Participant Dynamics
============================================
Discrete-time models used both by the driving environment and, through torch
autograd, inside the differentiable model rollouts:

    f_ego    — dynamic bicycle model of the automated vehicle
               (state [p_x, p_y, v_x, v_y, φ, ω, δ, a], action [Δδ, Δa])
    f_other  — kinematic model of a surrounding participant with additive
               bounded uncertainty ξ = [ξ_x, ξ_y, ξ_v, ξ_φ]

Tensor functions (``ego_step`` / ``participant_step``) operate on the last
dimension and broadcast over any leading batch dimensions.  The dataclass
wrappers (``step_ego`` / ``step_participant``) serve the scalar world loop.

Usage::

    from intersection_rl.env.dynamics import EgoState, Action, EgoParams, step_ego

    s = EgoState(p_x=0.0, p_y=0.0, v_x=10.0)
    s_next = step_ego(s, Action(0.0, 0.5), EgoParams())
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields, replace

import numpy as np
import torch

from intersection_rl.configuration import ConfigMixin
from intersection_rl.errors import DynamicsSingularityError

# ---------------------------------------------------------------------------
# Bounds
# ---------------------------------------------------------------------------

EGO_DIM = 8
PARTICIPANT_DIM = 4  # [p_x, p_y, v, φ], propagated part of a participant

DELTA_BOUND = 0.4
ACCEL_LOW, ACCEL_HIGH = -3.0, 1.5

ACTION_LOW = np.array([-0.4, -4.5])
ACTION_HIGH = np.array([0.4, 4.5])

NOISE_LOW = np.array([-0.8, -0.8, -0.075, -0.025])
NOISE_HIGH = np.array([0.8, 0.8, 0.225, 0.025])

PARTICIPANT_KINDS: tuple[str, ...] = ("vehicle", "cyclist", "pedestrian")

_SINGULAR_TOL = 1e-9


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EgoParams(ConfigMixin):
    """Parameters of f_ego (cornering stiffness in N/rad, lengths in m)."""

    k_f: float = -155495.0
    k_r: float = -155495.0
    l_f: float = 1.19
    l_r: float = 1.46
    mass: float = 1520.0
    i_z: float = 2642.0
    dt: float = 0.1

    def denominators(self, v_x: float | torch.Tensor) -> tuple:
        """The two coupled-update denominators of f_ego at speed ``v_x``."""
        den_vy = self.mass * v_x - self.dt * (self.k_f + self.k_r)
        den_omega = self.dt * (self.l_f ** 2 * self.k_f + self.l_r ** 2 * self.k_r) - self.i_z * v_x
        return den_vy, den_omega


@dataclass(frozen=True)
class EgoState:
    p_x: float = 0.0
    p_y: float = 0.0
    v_x: float = 0.0
    v_y: float = 0.0
    phi: float = 0.0
    omega: float = 0.0
    delta: float = 0.0
    a: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([getattr(self, f.name) for f in fields(self)], dtype=np.float64)

    @classmethod
    def from_array(cls, values: np.ndarray | torch.Tensor) -> "EgoState":
        values = np.asarray(values, dtype=np.float64).reshape(-1)
        return cls(*(float(v) for v in values[:EGO_DIM]))

    @property
    def position(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y])


@dataclass(frozen=True)
class Action:
    d_delta: float = 0.0
    d_a: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.d_delta, self.d_a], dtype=np.float64)

    def clamped(self) -> "Action":
        lo, hi = ACTION_LOW, ACTION_HIGH
        return Action(
            float(np.clip(self.d_delta, lo[0], hi[0])),
            float(np.clip(self.d_a, lo[1], hi[1])),
        )


@dataclass(frozen=True)
class ParticipantState:
    """A surrounding participant.

    ``turn_radius`` is signed (positive turns left); ``math.inf`` means
    straight motion.
    """

    p_x: float
    p_y: float
    v: float
    phi: float
    length: float
    width: float
    kind: str = "vehicle"
    turn_radius: float = math.inf

    def __post_init__(self) -> None:
        if self.kind not in PARTICIPANT_KINDS:
            raise ValueError(f"Unknown participant kind '{self.kind}'")
        if self.length <= 0 or self.width <= 0:
            raise ValueError("Participant length and width must be > 0")
        if self.v < 0:
            raise ValueError(f"Participant speed must be >= 0, got {self.v}")

    @property
    def inverse_radius(self) -> float:
        return 0.0 if math.isinf(self.turn_radius) else 1.0 / self.turn_radius

    @property
    def position(self) -> np.ndarray:
        return np.array([self.p_x, self.p_y])


@dataclass(frozen=True)
class NoiseVector:
    xi_x: float = 0.0
    xi_y: float = 0.0
    xi_v: float = 0.0
    xi_phi: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.xi_x, self.xi_y, self.xi_v, self.xi_phi], dtype=np.float64)


# ---------------------------------------------------------------------------
# Tensor models
# ---------------------------------------------------------------------------


def ego_step(x: torch.Tensor, u: torch.Tensor, params: EgoParams) -> torch.Tensor:
    """f_ego on tensors: ``x`` (..., 8), ``u`` (..., 2) → (..., 8).

    δ and a are hard-clamped after the Euler update; the clamp passes
    gradients inside the interval and blocks them outside.
    """
    p_x, p_y, v_x, v_y, phi, omega, delta, a = x.unbind(-1)
    d_delta, d_a = u.unbind(-1)
    dt, k_f, k_r = params.dt, params.k_f, params.k_r
    l_f, l_r, m, i_z = params.l_f, params.l_r, params.mass, params.i_z

    cos_phi, sin_phi = torch.cos(phi), torch.sin(phi)
    den_vy, den_omega = params.denominators(v_x)
    moment = l_f * k_f - l_r * k_r

    return torch.stack([
        p_x + dt * (v_x * cos_phi - v_y * sin_phi),
        p_y + dt * (v_x * sin_phi + v_y * cos_phi),
        v_x + dt * (a + v_y * omega),
        (m * v_x * v_y + dt * (moment * omega - k_f * delta * v_x - m * v_x ** 2 * omega)) / den_vy,
        phi + dt * omega,
        (-i_z * omega * v_x - dt * (moment * v_y - l_f * k_f * delta * v_x)) / den_omega,
        torch.clamp(delta + dt * d_delta, -DELTA_BOUND, DELTA_BOUND),
        torch.clamp(a + dt * d_a, ACCEL_LOW, ACCEL_HIGH),
    ], dim=-1)


def ego_step_is_regular(v_x: torch.Tensor, params: EgoParams, tol: float = _SINGULAR_TOL) -> torch.Tensor:
    """Boolean mask of speeds at which both f_ego denominators are non-zero."""
    den_vy, den_omega = params.denominators(v_x)
    return (den_vy.abs() > tol) & (den_omega.abs() > tol)


def participant_step(
    x: torch.Tensor,
    xi: torch.Tensor,
    inverse_radius: torch.Tensor,
    dt: float,
) -> torch.Tensor:
    """f_other on tensors: ``x`` (..., 4) = [p_x, p_y, v, φ], ``xi`` (..., 4).

    The turn is given as an inverse radius (0 for straight motion); speed is
    floored at zero.
    """
    p_x, p_y, v, phi = x.unbind(-1)
    xi_x, xi_y, xi_v, xi_phi = xi.unbind(-1)
    return torch.stack([
        p_x + dt * v * torch.cos(phi) + xi_x,
        p_y + dt * v * torch.sin(phi) + xi_y,
        torch.clamp(v + xi_v, min=0.0),
        phi + dt * v * inverse_radius + xi_phi,
    ], dim=-1)


# ---------------------------------------------------------------------------
# Dataclass wrappers
# ---------------------------------------------------------------------------


def step_ego(s: EgoState, u: Action, p: EgoParams) -> EgoState:
    """Advance the ego vehicle one step.

    Raises
    ------
    DynamicsSingularityError
        When either coupled-update denominator vanishes at ``s.v_x``.
    """
    den_vy, den_omega = p.denominators(s.v_x)
    if abs(den_vy) <= _SINGULAR_TOL or abs(den_omega) <= _SINGULAR_TOL:
        raise DynamicsSingularityError(s.v_x)
    x = torch.as_tensor(s.as_array(), dtype=torch.float64)
    action = torch.as_tensor(u.as_array(), dtype=torch.float64)
    return EgoState.from_array(ego_step(x, action, p).numpy())


def step_participant(s: ParticipantState, xi: NoiseVector, dt: float) -> ParticipantState:
    """Advance a participant one step with uncertainty ``xi``."""
    if s.turn_radius == 0:
        raise ValueError("turn_radius must be non-zero (use math.inf for straight motion)")
    x = torch.tensor([s.p_x, s.p_y, s.v, s.phi], dtype=torch.float64)
    out = participant_step(
        x,
        torch.as_tensor(xi.as_array(), dtype=torch.float64),
        torch.tensor(s.inverse_radius, dtype=torch.float64),
        dt,
    ).tolist()
    return replace(s, p_x=out[0], p_y=out[1], v=out[2], phi=out[3])
