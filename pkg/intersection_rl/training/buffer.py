"""Ring buffer of sampled driving states."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

import numpy as np
import torch

from intersection_rl.env.state import N_SLOTS, STATE_DIM
from intersection_rl.planning.path_planner import VELOCITY_MODES


@dataclass(frozen=True)
class Transition:
    """One sampled state s_t with the path and velocity mode it was built for."""

    state: np.ndarray
    occupancy: np.ndarray
    inverse_radius: np.ndarray
    path_index: int
    mode: str


@dataclass(frozen=True)
class Batch:
    states: torch.Tensor          # (B, 108)
    occupancy: torch.Tensor       # (B, 16) bool
    inverse_radius: torch.Tensor  # (B, 16)
    path_index: torch.Tensor      # (B,) long
    mode_index: torch.Tensor      # (B,) long

    def __len__(self) -> int:
        return int(self.states.shape[0])


class RolloutBuffer:
    def __init__(self, capacity: int) -> None:
        if capacity < 1:
            raise ValueError("capacity must be >= 1")
        self.capacity = capacity
        self._states = np.zeros((capacity, STATE_DIM))
        self._occupancy = np.zeros((capacity, N_SLOTS), dtype=bool)
        self._inverse_radius = np.zeros((capacity, N_SLOTS))
        self._path = np.zeros(capacity, dtype=np.int64)
        self._mode = np.zeros(capacity, dtype=np.int64)
        self._next = 0
        self._size = 0

    def __len__(self) -> int:
        return self._size

    def add(self, t: Transition) -> None:
        i = self._next
        self._states[i] = t.state
        self._occupancy[i] = t.occupancy
        self._inverse_radius[i] = t.inverse_radius
        self._path[i] = t.path_index
        self._mode[i] = VELOCITY_MODES.index(t.mode)
        self._next = (i + 1) % self.capacity
        self._size = min(self._size + 1, self.capacity)

    def extend(self, transitions: Iterable[Transition]) -> None:
        for t in transitions:
            self.add(t)

    def fetch(self, batch: int, rng: np.random.Generator) -> Batch:
        """Up to ``batch`` distinct transitions drawn uniformly."""
        if self._size == 0:
            raise ValueError("Cannot fetch from an empty buffer")
        idx = np.sort(rng.choice(self._size, size=min(batch, self._size), replace=False))
        return Batch(
            torch.as_tensor(self._states[idx], dtype=torch.float64),
            torch.as_tensor(self._occupancy[idx]),
            torch.as_tensor(self._inverse_radius[idx], dtype=torch.float64),
            torch.as_tensor(self._path[idx]),
            torch.as_tensor(self._mode[idx]),
        )
