"""Scenario documents and built-in scenarios."""

from __future__ import annotations

import json
from pathlib import Path

import pytest

from intersection_rl.errors import TopologyError
from intersection_rl.planning.path_planner import generate_path_set
from intersection_rl.scenario import (
    BUILTIN_SCENARIOS,
    Scenario,
    builtin_scenario,
    load_scenario,
    resolve_scenario,
)

SCENARIOS = Path(__file__).resolve().parents[1] / "scenarios"


@pytest.mark.parametrize("name", BUILTIN_SCENARIOS)
def test_builtins_resolve(name):
    scenario = resolve_scenario(name)
    assert scenario.name == name
    assert generate_path_set(scenario.topology, scenario.task)


def test_empty_builtin_has_no_traffic():
    rates = builtin_scenario("desk-empty").traffic
    assert (rates.vehicle_rate, rates.cyclist_rate, rates.pedestrian_rate) == (0, 0, 0)


def test_unknown_builtin():
    with pytest.raises(ValueError):
        builtin_scenario("highway")


def test_shipped_scenario_matches_builtin(desk_left):
    scenario = load_scenario(SCENARIOS / "desk_left_turn.json")
    assert scenario.topology == desk_left.topology
    assert scenario.task == "left"
    assert scenario.traffic == desk_left.traffic


def test_inline_topology_round_trip(desk_left, tmp_path):
    path = tmp_path / "inline.json"
    path.write_text(json.dumps(desk_left.to_dict()))
    loaded = load_scenario(path)
    a = generate_path_set(loaded.topology, "left")
    b = generate_path_set(desk_left.topology, "left")
    assert [p.points.tobytes() for p in a] == [p.points.tobytes() for p in b]


@pytest.mark.parametrize("doc, error", [
    ({"topology": "desk:b", "weather": {}}, ValueError),
    ({"task": "left"}, TopologyError),
    ({"topology": "desk:z"}, TopologyError),
    ({"topology": "desk:b", "task": "u-turn"}, ValueError),
])
def test_invalid_documents(doc, error):
    with pytest.raises(error):
        Scenario.from_dict(doc)


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError, match="desk-left"):
        load_scenario(tmp_path / "none.json")
