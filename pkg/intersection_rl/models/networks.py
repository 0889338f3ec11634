"""
Stage 4 — Networks
===================
Multi-layer perceptrons stored as one flat float64 parameter vector:

    affine → GeLU (tanh approximation) → … → affine → head

Heads:

    gaussian       — mean = centre + half_range · tanh(pre), log_std clamped
                     to [−5, 2]; used by the driving policy (action bounds)
                     and the adversary (noise bounds, 16 slots × 4)
    scalar-nonneg  — ReLU output; used by the value network

Usage::

    policy = MLP(policy_spec((64, 64)), seed=0)
    mean, log_std = policy(state_batch)
    action = gaussian_sample(mean, log_std, generator, *policy.spec.bounds())
"""

from __future__ import annotations

import copy
import math
from dataclasses import dataclass
from typing import Any

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from intersection_rl.env.dynamics import ACTION_HIGH, ACTION_LOW, NOISE_HIGH, NOISE_LOW
from intersection_rl.env.state import N_SLOTS, STATE_DIM, STATE_SCALE

HEADS: tuple[str, ...] = ("gaussian", "scalar-nonneg")
LOG_STD_MIN, LOG_STD_MAX = -5.0, 2.0

_OUTPUT_SCALE = 0.01
_INITIAL_STD_RATIO = 0.25   # initial std as a fraction of the half range
_VALUE_BIAS = 1.0           # positive so the ReLU head starts active


@dataclass(frozen=True)
class MLPSpec:
    input_dim: int
    hidden: tuple[int, ...]
    output_dim: int
    head: str = "gaussian"
    low: tuple[float, ...] | None = None
    high: tuple[float, ...] | None = None

    def __post_init__(self) -> None:
        if self.head not in HEADS:
            raise ValueError(f"head must be one of {HEADS}, got '{self.head}'")
        if self.input_dim < 1 or self.output_dim < 1 or any(h < 1 for h in self.hidden):
            raise ValueError("Layer widths must be >= 1")
        if self.head == "gaussian":
            if self.low is None or self.high is None:
                raise ValueError("A gaussian head needs low/high bounds")
            if len(self.low) != self.output_dim or len(self.high) != self.output_dim:
                raise ValueError("Bounds must have output_dim entries")

    @property
    def layer_shapes(self) -> list[tuple[int, int]]:
        out = 2 * self.output_dim if self.head == "gaussian" else self.output_dim
        widths = [self.input_dim, *self.hidden, out]
        return list(zip(widths[:-1], widths[1:]))

    @property
    def n_params(self) -> int:
        return sum(i * o + o for i, o in self.layer_shapes)

    def bounds(self) -> tuple[torch.Tensor, torch.Tensor]:
        return (torch.tensor(self.low, dtype=torch.float64),
                torch.tensor(self.high, dtype=torch.float64))

    def to_dict(self) -> dict[str, Any]:
        return {
            "input_dim": self.input_dim,
            "hidden": list(self.hidden),
            "output_dim": self.output_dim,
            "head": self.head,
            "low": None if self.low is None else list(self.low),
            "high": None if self.high is None else list(self.high),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> "MLPSpec":
        return cls(
            input_dim=int(data["input_dim"]),
            hidden=tuple(int(h) for h in data["hidden"]),
            output_dim=int(data["output_dim"]),
            head=str(data["head"]),
            low=None if data.get("low") is None else tuple(data["low"]),
            high=None if data.get("high") is None else tuple(data["high"]),
        )


@dataclass(frozen=True)
class ParameterVector:
    """Flat parameters plus the layer-shape manifest and init seed."""

    values: np.ndarray
    manifest: tuple[tuple[int, int], ...]
    seed: int

    def __post_init__(self) -> None:
        expected = sum(i * o + o for i, o in self.manifest)
        if self.values.shape != (expected,):
            raise ValueError(
                f"Parameter vector has {self.values.size} values, manifest implies {expected}"
            )


# ---------------------------------------------------------------------------
# Specs for the three networks
# ---------------------------------------------------------------------------


def policy_spec(hidden: tuple[int, ...] = (64, 64)) -> MLPSpec:
    return MLPSpec(STATE_DIM, tuple(hidden), 2, "gaussian",
                   tuple(ACTION_LOW.tolist()), tuple(ACTION_HIGH.tolist()))


def adversary_spec(hidden: tuple[int, ...] = (64, 64)) -> MLPSpec:
    return MLPSpec(STATE_DIM, tuple(hidden), 4 * N_SLOTS, "gaussian",
                   tuple(np.tile(NOISE_LOW, N_SLOTS).tolist()),
                   tuple(np.tile(NOISE_HIGH, N_SLOTS).tolist()))


def value_spec(hidden: tuple[int, ...] = (64, 64)) -> MLPSpec:
    return MLPSpec(STATE_DIM, tuple(hidden), 1, "scalar-nonneg")


# ---------------------------------------------------------------------------
# Functional core
# ---------------------------------------------------------------------------


def init_parameters(spec: MLPSpec, seed: int) -> ParameterVector:
    """Scaled-uniform weights; layer ``l`` draws from seed ``seed * 1000 + l``.

    The output layer is scaled by 0.01.  Gaussian heads start with log_std
    at log(0.25 · half_range); the scalar head starts with a positive bias.
    """
    chunks = []
    shapes = spec.layer_shapes
    for layer, (fan_in, fan_out) in enumerate(shapes):
        rng = np.random.default_rng(seed * 1000 + layer)
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        weight = rng.uniform(-limit, limit, size=(fan_in, fan_out))
        bias = np.zeros(fan_out)
        if layer == len(shapes) - 1:
            weight *= _OUTPUT_SCALE
            if spec.head == "gaussian":
                half = (np.asarray(spec.high) - np.asarray(spec.low)) / 2.0
                bias[spec.output_dim:] = np.clip(np.log(_INITIAL_STD_RATIO * half), LOG_STD_MIN, LOG_STD_MAX)
            else:
                bias[:] = _VALUE_BIAS
        chunks += [weight.reshape(-1), bias]
    return ParameterVector(np.concatenate(chunks), tuple(shapes), seed)


def gelu(x: torch.Tensor) -> torch.Tensor:
    return F.gelu(x, approximate="tanh")


def mlp_forward(spec: MLPSpec, params: torch.Tensor, x: torch.Tensor):
    """Evaluate the network on ``x`` (..., input_dim).

    Returns ``(mean, log_std)`` for a gaussian head, the ReLU output
    otherwise.
    """
    if x.shape[-1] != spec.input_dim:
        raise ValueError(f"Expected input dim {spec.input_dim}, got {x.shape[-1]}")
    shapes = spec.layer_shapes
    offset = 0
    h = x
    for layer, (fan_in, fan_out) in enumerate(shapes):
        weight = params[offset: offset + fan_in * fan_out].reshape(fan_in, fan_out)
        offset += fan_in * fan_out
        bias = params[offset: offset + fan_out]
        offset += fan_out
        h = h @ weight + bias
        if layer < len(shapes) - 1:
            h = gelu(h)

    if spec.head == "scalar-nonneg":
        return torch.relu(h)
    low, high = spec.bounds()
    k = spec.output_dim
    mean = (high + low) / 2.0 + (high - low) / 2.0 * torch.tanh(h[..., :k])
    log_std = torch.clamp(h[..., k:], LOG_STD_MIN, LOG_STD_MAX)
    return mean, log_std


def gaussian_sample(
    mean: torch.Tensor,
    log_std: torch.Tensor,
    generator: torch.Generator | None = None,
    low: torch.Tensor | None = None,
    high: torch.Tensor | None = None,
    noise: torch.Tensor | None = None,
) -> torch.Tensor:
    """Reparameterised draw mean + exp(log_std)·z, re-clamped to the bounds."""
    if noise is None:
        if generator is None:
            raise ValueError("gaussian_sample needs a generator or explicit noise")
        noise = torch.randn(mean.shape, generator=generator, dtype=mean.dtype)
    value = mean + torch.exp(log_std) * noise
    if low is not None and high is not None:
        value = torch.maximum(torch.minimum(value, high), low)
    return value


# ---------------------------------------------------------------------------
# Module wrapper
# ---------------------------------------------------------------------------


class MLP(nn.Module):
    """An :class:`MLPSpec` network whose inputs are divided by ``STATE_SCALE``."""

    def __init__(self, spec: MLPSpec, params: ParameterVector | None = None, seed: int = 0) -> None:
        super().__init__()
        self.spec = spec
        params = params if params is not None else init_parameters(spec, seed)
        if tuple(params.manifest) != tuple(spec.layer_shapes):
            raise ValueError("Parameter manifest does not match the network spec")
        self.seed = params.seed
        self.flat = nn.Parameter(torch.as_tensor(params.values.copy(), dtype=torch.float64))
        scale = STATE_SCALE if spec.input_dim == STATE_DIM else np.ones(spec.input_dim)
        self.register_buffer("input_scale", torch.as_tensor(scale, dtype=torch.float64))

    def forward(self, x: torch.Tensor):
        return mlp_forward(self.spec, self.flat, x / self.input_scale)

    def parameter_vector(self) -> ParameterVector:
        values = self.flat.detach().cpu().numpy().astype(np.float64).copy()
        return ParameterVector(values, tuple(self.spec.layer_shapes), self.seed)

    def snapshot(self) -> "MLP":
        """A frozen copy for concurrent readers."""
        frozen = copy.deepcopy(self)
        frozen.flat.requires_grad_(False)
        return frozen
