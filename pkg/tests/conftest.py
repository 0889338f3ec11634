"""Shared fixtures: worked-example crossroad, desk scenarios and small networks."""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest
import torch

from intersection_rl.env.dynamics import EgoState
from intersection_rl.models.networks import MLP, adversary_spec, policy_spec, value_spec
from intersection_rl.planning.path_planner import (
    Connection,
    IntersectionTopology,
    LaneRef,
    generate_path_set,
)
from intersection_rl.planning.topologies import desk_topologies
from intersection_rl.scenario import builtin_scenario
from intersection_rl.training.apg_trainer import APGTrainer, TrainerConfig, train
from intersection_rl.training.buffer import RolloutBuffer, Transition

torch.set_default_dtype(torch.float64)

V_LIMIT = 37.5 / 3.6

CONFIGS = Path(__file__).resolve().parents[1] / "configs"
ACCEPTANCE_SEEDS = (0, 1, 2)


@pytest.fixture(scope="session")
def desk():
    return desk_topologies()


@pytest.fixture(scope="session")
def worked_topology() -> IntersectionTopology:
    """Left turn (5,−20)→(−20,5) and straight (0,−20)→(0,20), stop line 5 m upstream."""
    north, west = math.pi / 2, math.pi
    return IntersectionTopology(
        entrance_lanes=(
            LaneRef((5.0, -20.0), north, V_LIMIT, 60.0, approach=0),
            LaneRef((0.0, -20.0), north, V_LIMIT, 60.0, approach=0),
        ),
        exit_lanes=(
            LaneRef((-20.0, 5.0), west, V_LIMIT, 60.0, approach=3),
            LaneRef((0.0, 20.0), north, V_LIMIT, 60.0, approach=2),
        ),
        connections=(Connection(0, 0, "left"), Connection(1, 1, "straight")),
        stop_line_distance=5.0,
        ego_approach=0,
        name="worked-example",
    )


@pytest.fixture(scope="session")
def desk_left():
    return builtin_scenario("desk-left")


@pytest.fixture(scope="session")
def desk_empty():
    return builtin_scenario("desk-empty")


@pytest.fixture(scope="session")
def left_paths(desk_empty):
    s = desk_empty
    return generate_path_set(s.topology, s.task, s.rho_bisect, s.sample_ds, s.decel_zone)


@pytest.fixture
def small_nets() -> dict[str, MLP]:
    hidden = (16, 16)
    return {
        "policy": MLP(policy_spec(hidden), seed=0),
        "adversary": MLP(adversary_spec(hidden), seed=1),
        "value": MLP(value_spec(hidden), seed=2),
    }


@pytest.fixture
def ego_on_path(left_paths) -> EgoState:
    """Ego 10 m along path 0 at its pass-mode speed."""
    path = left_paths[0]
    i = int(np.searchsorted(path.arc_length, 10.0))
    return EgoState(p_x=float(path.points[i, 0]), p_y=float(path.points[i, 1]),
                    v_x=float(path.speeds("pass")[i]), phi=float(path.headings[i]))


@pytest.fixture
def buffer_of():
    """Factory: a buffer holding the given DrivingStates."""

    def _make(states, path_index: int = 0, mode: str = "pass") -> RolloutBuffer:
        buffer = RolloutBuffer(max(len(states), 1))
        for s in states:
            buffer.add(Transition(s.vector, s.occupancy, s.inverse_radius, path_index, mode))
        return buffer

    return _make


@pytest.fixture(scope="session")
def desk_trained() -> dict[str, list[APGTrainer]]:
    """APG and DPG trained on desk-left at the desk config, one trainer per acceptance seed."""
    config = TrainerConfig.from_json(CONFIGS / "desk.json")
    scenario = builtin_scenario("desk-left")
    return {
        mode: [train(dataclasses.replace(config, mode=mode, seed=seed), scenario, progress=False)
               for seed in ACCEPTANCE_SEEDS]
        for mode in ("apg", "dpg")
    }
