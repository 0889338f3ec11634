"""Adam updates on flat parameter vectors and the cosine learning-rate schedule."""

from __future__ import annotations

import math

import torch


class AdamState:
    """Moment estimates of one parameter vector (torch Adam, bias-corrected).

    ``maximize=True`` turns the step into gradient ascent (the adversary).
    """

    def __init__(
        self,
        param: torch.Tensor,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
        maximize: bool = False,
    ) -> None:
        self.param = param
        self.optimizer = torch.optim.Adam([param], lr=1.0, betas=betas, eps=eps, maximize=maximize)

    @property
    def steps(self) -> int:
        state = self.optimizer.state.get(self.param, {})
        return int(state.get("step", 0))


def adam_step(params: torch.Tensor, grads: torch.Tensor, state: AdamState, lr: float) -> torch.Tensor:
    """Apply one Adam update to ``params`` in place and return it."""
    if params is not state.param:
        raise ValueError("AdamState belongs to a different parameter tensor")
    if grads.shape != params.shape:
        raise ValueError(f"Gradient shape {tuple(grads.shape)} != parameter shape {tuple(params.shape)}")
    params.grad = grads.detach().clone()
    for group in state.optimizer.param_groups:
        group["lr"] = lr
    state.optimizer.step()
    params.grad = None
    return params


def cosine_lr(step: int, total: int, lr0: float, lr1: float) -> float:
    """Cosine annealing from ``lr0`` at step 0 to ``lr1`` at ``total``."""
    if total <= 0:
        return lr1
    step = min(max(step, 0), total)
    return lr1 + 0.5 * (lr0 - lr1) * (1.0 + math.cos(math.pi * step / total))
