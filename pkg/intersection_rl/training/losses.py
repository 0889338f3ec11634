"""
Training Losses
================
    J_track = mean_B Σ_i l_i
    J_safe  = mean_B Σ_i φ(s_{i+1})
    J_π     = J_track + ρ · J_safe
    J_v     = mean_B (Σ_i l_i − v_w(s_t))²

Means run over the rollouts that stayed regular; discarded rows never enter
the graph.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Callable

import torch

from intersection_rl.training.rollout import RolloutResult

LOSS_COLUMNS = ("iteration", "J_track", "J_safe", "J_pi", "J_v", "TAR")


@dataclass(frozen=True)
class PolicyLoss:
    j_pi: torch.Tensor
    j_track: torch.Tensor
    j_safe: torch.Tensor


@dataclass(frozen=True)
class LossReport:
    iteration: int
    j_track: float
    j_safe: float
    j_pi: float
    j_v: float
    policy_lr: float
    value_lr: float
    adversary_lr: float
    tar: float = float("nan")
    wall_time: float = 0.0

    def row(self) -> dict[str, Any]:
        """The ``losses.csv`` row of this report."""
        return {
            "iteration": self.iteration,
            "J_track": self.j_track,
            "J_safe": self.j_safe,
            "J_pi": self.j_pi,
            "J_v": self.j_v,
            "TAR": self.tar,
        }

    def to_dict(self) -> dict[str, Any]:
        return asdict(self)


def policy_loss(rollout: RolloutResult, rho_penalty: float) -> PolicyLoss:
    if rho_penalty <= 0:
        raise ValueError("rho_penalty must be > 0")
    valid = rollout.valid
    if not bool(valid.any()):
        nan = torch.tensor(float("nan"), dtype=torch.float64)
        return PolicyLoss(nan, nan, nan)
    j_track = rollout.utilities[valid].sum(dim=1).mean()
    j_safe = rollout.penalties[valid].sum(dim=1).mean()
    return PolicyLoss(j_track + rho_penalty * j_safe, j_track, j_safe)


def value_loss(rollout: RolloutResult, value_fn: Callable[[torch.Tensor], torch.Tensor]) -> torch.Tensor:
    valid = rollout.valid
    if not bool(valid.any()):
        return torch.tensor(float("nan"), dtype=torch.float64)
    target = rollout.utilities[valid].sum(dim=1).detach()
    predicted = value_fn(rollout.initial_state[valid]).reshape(-1)
    return ((target - predicted) ** 2).mean()
