"""
Model Rollout
==============
Predicts T steps ahead from a batch of sampled states through the
differentiable environment model, recording utilities and penalties on one
autograd graph:

    for i in 0 … T−1:
        u_i  ~ π_θ(s_i)              (reparameterised, clamped to action bounds)
        ξ_i  ~ π_φ(s_i)              (per occupied slot; zero without adversary)
        l_i  = l(x_track_i, x_ego_i, u_i)
        ego ← f_ego(ego, u_i);  participants ← f_other(participants, ξ_i)
        φ_i  = Σ_slots min{0, −g}²   against the fixed path and mode

Usage::

    result = model_rollout(batch, paths, policy, adversary, horizon=25, ...)
    loss = policy_loss(result, rho_penalty=15.0)
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable

import torch

from intersection_rl.env.dynamics import (
    ACTION_HIGH, ACTION_LOW, NOISE_HIGH, NOISE_LOW, EgoParams,
    ego_step, ego_step_is_regular, participant_step,
)
from intersection_rl.env.state import (
    EGO_DIM, N_SLOTS, OTHER_DIM, PLACEHOLDER, TRACK_DIM, PathTensors, SafetyConfig,
    absolute_others, penalty, relative_others, safety_g_tensor, tracking_error, utility,
)
from intersection_rl.models.networks import gaussian_sample
from intersection_rl.training.buffer import Batch

logger = logging.getLogger(__name__)

GaussianNet = Callable[[torch.Tensor], tuple[torch.Tensor, torch.Tensor]]

_ACTION_BOUNDS = (torch.as_tensor(ACTION_LOW), torch.as_tensor(ACTION_HIGH))
_NOISE_BOUNDS = (torch.as_tensor(NOISE_LOW), torch.as_tensor(NOISE_HIGH))
_PLACEHOLDER = torch.as_tensor(PLACEHOLDER)


class ZeroAdversary:
    """Adversary stand-in emitting ξ ≡ 0 (mean 0, zero spread)."""

    def __init__(self, output_dim: int = 4 * N_SLOTS) -> None:
        self.output_dim = output_dim

    def __call__(self, s: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        shape = (*s.shape[:-1], self.output_dim)
        return (torch.zeros(shape, dtype=s.dtype),
                torch.full(shape, float("-inf"), dtype=s.dtype))


@dataclass
class RolloutResult:
    utilities: torch.Tensor      # (B, T)
    penalties: torch.Tensor      # (B, T)  φ(s_{i+1})
    valid: torch.Tensor          # (B,) bool
    initial_state: torch.Tensor  # (B, 108)
    egos: torch.Tensor | None = None     # (B, T+1, 8)
    noises: torch.Tensor | None = None   # (B, T, 16, 4)

    @property
    def n_discarded(self) -> int:
        return int((~self.valid).sum())


def model_rollout(
    batch: Batch,
    paths: PathTensors,
    policy: GaussianNet,
    adversary: GaussianNet | None,
    horizon: int,
    params: EgoParams = EgoParams(),
    safety: SafetyConfig = SafetyConfig(),
    policy_generator: torch.Generator | None = None,
    adversary_generator: torch.Generator | None = None,
    deterministic: bool = False,
    detach_policy_inputs: bool = False,
) -> RolloutResult:
    """Roll ``batch`` forward ``horizon`` steps through the environment model.

    Parameters
    ----------
    deterministic:
        Use mean actions / mean noise instead of reparameterised samples.
    detach_policy_inputs:
        Cut the path from the state into the driving policy, so gradients
        with respect to the adversary flow through the states only.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    states = batch.states
    n = states.shape[0]
    occupied = batch.occupancy.to(states.dtype)

    ego = states[:, :EGO_DIM]
    track = states[:, EGO_DIM: EGO_DIM + TRACK_DIM]
    other_rel = states[:, EGO_DIM + TRACK_DIM:].reshape(n, N_SLOTS, OTHER_DIM)
    others = absolute_others(ego, other_rel)
    extents = other_rel[..., 4:6]
    points, headings, speeds = paths.select(batch.path_index, batch.mode_index)

    s = states
    valid = torch.ones(n, dtype=torch.bool)
    utilities, penalties, egos, noises = [], [], [ego], []
    for _ in range(horizon):
        mean, log_std = policy(s.detach() if detach_policy_inputs else s)
        u = mean if deterministic else gaussian_sample(mean, log_std, policy_generator, *_ACTION_BOUNDS)

        if adversary is None:
            xi = torch.zeros(n, N_SLOTS, 4, dtype=states.dtype)
        else:
            xi_mean, xi_log_std = adversary(s)
            xi = xi_mean if deterministic else gaussian_sample(
                xi_mean, xi_log_std, adversary_generator,
                _NOISE_BOUNDS[0].repeat(N_SLOTS), _NOISE_BOUNDS[1].repeat(N_SLOTS),
            )
            xi = xi.reshape(n, N_SLOTS, 4) * occupied.unsqueeze(-1)

        utilities.append(utility(track, ego, u))
        valid &= ego_step_is_regular(ego[:, 2].detach(), params)
        ego = ego_step(ego, u, params)
        others = participant_step(others, xi, batch.inverse_radius, params.dt)
        track = tracking_error(ego, points, headings, speeds)
        g = safety_g_tensor(ego, others, extents, safety)
        penalties.append((penalty(g) * occupied).sum(-1))
        rel = relative_others(ego, others, extents)
        # empty slots stay the far placeholder regardless of ego motion
        rel = torch.where(occupied.unsqueeze(-1) > 0, rel, _PLACEHOLDER.to(rel.dtype))
        s = torch.cat([ego, track, rel.reshape(n, -1)], dim=-1)
        egos.append(ego)
        noises.append(xi)

    utilities_t = torch.stack(utilities, dim=1)
    penalties_t = torch.stack(penalties, dim=1)
    valid &= torch.isfinite(utilities_t.detach()).all(dim=1) & torch.isfinite(penalties_t.detach()).all(dim=1)
    result = RolloutResult(utilities_t, penalties_t, valid, states,
                           torch.stack(egos, dim=1), torch.stack(noises, dim=1))
    if result.n_discarded:
        logger.warning("Discarded %d of %d rollouts (singular dynamics)", result.n_discarded, n)
    return result
