"""
Gradient Tape
==============
A thin single-use wrapper over torch autograd.  Leaves are registered with
:meth:`Tape.watch` (fresh tensors) or :meth:`Tape.watch_module` (existing
network parameters); one :func:`backward` call returns the gradient of a
scalar output for every watched leaf, zeros for leaves the output does not
depend on.

Usage::

    with Tape() as tape:
        x = tape.watch("x", 3.0)
        y = x ** 2
    grads = backward(tape, y)      # {"x": tensor(6.)}
"""

from __future__ import annotations

from typing import Callable

import numpy as np
import torch
from torch import nn

from intersection_rl.errors import TapeError


class Tape:
    """Records one forward computation; supports exactly one backward sweep."""

    def __init__(self) -> None:
        self._leaves: dict[str, torch.Tensor] = {}
        self._consumed = False
        self._grad_mode = None

    def __enter__(self) -> "Tape":
        self._grad_mode = torch.enable_grad()
        self._grad_mode.__enter__()
        return self

    def __exit__(self, *exc) -> None:
        if self._grad_mode is not None:
            self._grad_mode.__exit__(*exc)

    def watch(self, name: str, value) -> torch.Tensor:
        """Register a new float64 leaf and return it."""
        leaf = torch.as_tensor(value, dtype=torch.float64).detach().clone().requires_grad_(True)
        self._leaves[name] = leaf
        return leaf

    def watch_module(self, name: str, module: nn.Module) -> None:
        """Register every parameter of ``module`` under ``name.<param>``."""
        for pname, param in module.named_parameters():
            self._leaves[f"{name}.{pname}"] = param

    @property
    def consumed(self) -> bool:
        return self._consumed

    def backward(self, output: torch.Tensor) -> dict[str, torch.Tensor]:
        if self._consumed:
            raise TapeError("This tape has already been used for a backward sweep")
        if output.numel() != 1:
            raise TapeError(f"backward needs a scalar output, got shape {tuple(output.shape)}")
        self._consumed = True

        names = list(self._leaves)
        leaves = [self._leaves[n] for n in names]
        if not output.requires_grad:
            return {n: torch.zeros_like(l) for n, l in zip(names, leaves)}
        grads = torch.autograd.grad(output.reshape(()), leaves, allow_unused=True)
        return {
            n: torch.zeros_like(l) if g is None else g
            for n, l, g in zip(names, leaves, grads)
        }


def backward(tape: Tape, scalar_output: torch.Tensor) -> dict[str, torch.Tensor]:
    """Reverse-mode gradients of ``scalar_output`` for every leaf on ``tape``."""
    return tape.backward(scalar_output)


def central_difference(
    fn: Callable[[np.ndarray], float],
    x: np.ndarray,
    h: float = 1e-5,
    indices: list[int] | None = None,
) -> np.ndarray:
    """Central finite-difference gradient of a scalar ``fn`` at ``x``.

    Only ``indices`` are evaluated when given; other entries are left at 0.
    """
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    for i in indices if indices is not None else range(x.size):
        step = np.zeros_like(x)
        step.flat[i] = h
        grad.flat[i] = (fn(x + step) - fn(x - step)) / (2.0 * h)
    return grad
