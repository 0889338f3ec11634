"""Run classification, metrics report, plots, episode export and the CLIs."""

from __future__ import annotations

import math

import numpy as np
import pandas as pd
import pytest

from intersection_rl import __main__ as entry
from intersection_rl import eval_cli
from intersection_rl.control.online_controller import OnlineController
from intersection_rl.env.world import IntersectionWorld
from intersection_rl.evaluation import (
    METRIC_COLUMNS,
    REFERENCE_COLUMNS,
    EvalConfig,
    EvalReport,
    TRACKING_PERCENTILES,
    RunOutcome,
    classify_run,
    eval_generalization,
    eval_tracking,
    export_episode,
    plot_losses,
    report,
    run_episode,
)
from intersection_rl.training.apg_trainer import write_losses
from intersection_rl.training.losses import LossReport


def _log(s, phase=None, worst_g=None, lateral=None, t=None, s_stop=55.0, s_exit=85.0) -> pd.DataFrame:
    n = len(s)
    return pd.DataFrame({
        "t": t if t is not None else [0.1 * (i + 1) for i in range(n)],
        "s": s,
        "s_stop": [s_stop] * n,
        "s_exit": [s_exit] * n,
        "worst_g": worst_g if worst_g is not None else [-1.0] * n,
        "lateral": lateral if lateral is not None else [0.1] * n,
        "phase": phase if phase is not None else ["G"] * n,
    })


def _outcome(run: int, success: bool, travel: float = float("nan")) -> RunOutcome:
    return RunOutcome(run, success, success, False, False, False, travel)


class TestClassifyRun:
    def test_success_with_travel_time(self):
        out = classify_run(_log([50.0, 56.0, 70.0, 90.0], t=[1.0, 2.0, 3.0, 6.0]), run=4, exposure=2)
        assert out.success and out.exited
        assert out.travel_time == pytest.approx(4.0)
        assert (out.run, out.exposure) == (4, 2)

    def test_collision(self):
        out = classify_run(_log([50.0, 60.0, 90.0], worst_g=[-1.0, 0.3, -1.0]))
        assert out.collision
        assert not out.success
        assert math.isnan(out.travel_time)

    def test_red_light_crossing(self):
        out = classify_run(_log([50.0, 56.0, 90.0], phase=["R", "R", "G"]))
        assert out.red_violation
        assert not out.success

    def test_red_before_the_line_is_fine(self):
        out = classify_run(_log([50.0, 56.0, 90.0], phase=["R", "G", "G"]))
        assert not out.red_violation
        assert out.success

    def test_road_departure(self):
        out = classify_run(_log([50.0, 60.0, 90.0], lateral=[0.1, 3.5, 0.2]))
        assert out.departure
        assert not out.success

    def test_not_exited(self):
        out = classify_run(_log([50.0, 60.0, 70.0]))
        assert not out.exited
        assert not out.success

    def test_empty_log(self):
        out = classify_run(pd.DataFrame(), run=3)
        assert not out.success
        assert out.run == 3

    def test_pure_function_of_log(self):
        log = _log([50.0, 56.0, 70.0, 90.0])
        assert classify_run(log) == classify_run(log.copy())


class TestEvalReport:
    def test_row(self):
        r = EvalReport("apg", "overspeed", 0.2, [_outcome(0, True, 4.0), _outcome(1, True, 6.0), _outcome(2, False)])
        row = r.row()
        assert row["passing_rate"] == pytest.approx(2 / 3)
        assert row["travel_mean"] == pytest.approx(5.0)
        assert row["travel_std"] == pytest.approx(1.0)
        assert row["n"] == 3

    def test_no_successes(self):
        row = EvalReport("dpg", "rounding", 0.5, [_outcome(0, False)]).row()
        assert row["passing_rate"] == 0.0
        assert math.isnan(row["travel_mean"])


class TestReport:
    REPORTS = [
        EvalReport("apg", "overspeed", 0.1, [_outcome(0, True, 4.0), _outcome(1, False)]),
        EvalReport("dpg", "overspeed", 0.1, [_outcome(0, False), _outcome(1, False)]),
    ]

    def test_outputs(self, tmp_path):
        metrics = report(self.REPORTS, tmp_path)
        assert list(metrics.columns) == list(METRIC_COLUMNS)
        assert len(metrics) == 2
        assert (tmp_path / "metrics.csv").exists()
        assert (tmp_path / "published_reference.csv").exists()
        assert (tmp_path / "passing_rate_overspeed.svg").exists()

    def test_byte_identical_reruns(self, tmp_path):
        report(self.REPORTS, tmp_path / "a")
        report(self.REPORTS, tmp_path / "b")
        for name in ("metrics.csv", "published_reference.csv", "passing_rate_overspeed.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_published_reference_carries_travel_times(self, tmp_path):
        report(self.REPORTS, tmp_path)
        ref = pd.read_csv(tmp_path / "published_reference.csv")
        assert list(ref.columns) == list(REFERENCE_COLUMNS)
        assert len(ref) == 12
        assert ref[["passing_rate", "travel_mean", "travel_std"]].notna().all().all()
        row = ref[(ref.method == "dpg") & (ref.perturbation == "rounding") & (ref.level == 0.5)].iloc[0]
        assert row.passing_rate == pytest.approx(0.34)
        assert row.travel_mean == pytest.approx(10.50)
        assert row.travel_std == pytest.approx(4.94)

    def test_empty(self, tmp_path):
        with pytest.raises(ValueError):
            report([], tmp_path)


class TestLossPlot:
    def test_round_trip_through_csv(self, tmp_path):
        history = [LossReport(k, 1.0 / k, 0.1, 1.0 / k + 1.5, 2.0, 1e-4, 3e-4, 1e-4, tar=-k)
                   for k in (1000, 2000, 3000)]
        csv = write_losses(history, tmp_path / "losses.csv")
        frame = pd.read_csv(csv)
        assert frame["iteration"].tolist() == [1000, 2000, 3000]
        svg = plot_losses(csv, tmp_path / "losses.svg")
        assert svg.read_text().lstrip().startswith("<?xml")

    def test_missing_log(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            plot_losses(tmp_path / "losses.csv", tmp_path / "losses.svg")


class TestEpisode:
    @pytest.fixture
    def driven(self, desk_empty, left_paths, small_nets):
        world = IntersectionWorld(desk_empty, seed=0, paths=left_paths).reset(randomize=False)
        controller = OnlineController(small_nets["policy"], small_nets["value"], left_paths)
        return world, run_episode(controller, world, max_steps=5)

    def test_log_columns(self, driven):
        _, log = driven
        assert 1 <= len(log) <= 5
        for col in ("t", "s", "s_stop", "s_exit", "worst_g", "lateral", "phase", "dx", "dv"):
            assert col in log.columns
        assert np.all(np.diff(log["t"]) > 0)
        assert (log["worst_g"] == -np.inf).all()

    @pytest.mark.parametrize("fmt, name", [("csv", "episode.csv"), ("svg", "trajectory.svg")])
    def test_export(self, driven, tmp_path, fmt, name):
        world, log = driven
        assert export_episode(world, log, tmp_path, fmt).name == name

    def test_export_format(self, driven, tmp_path):
        world, log = driven
        with pytest.raises(ValueError):
            export_episode(world, log, tmp_path, "gif")


class TestEvalConfig:
    @pytest.mark.parametrize("changes", [{"runs": 0}, {"levels": (0.2, 1.5)}, {"workers": -1}])
    def test_invalid(self, changes):
        with pytest.raises(ValueError):
            EvalConfig(**changes)


def test_unknown_perturbation(desk_left, small_nets):
    with pytest.raises(ValueError):
        eval_generalization(small_nets["policy"], small_nets["value"], desk_left, "hail", 0.1)


@pytest.mark.slow
def test_perturbed_agents_nested_across_levels(desk_left, small_nets):
    config = EvalConfig(runs=3, max_steps=60)
    exposure = [
        eval_generalization(small_nets["policy"], small_nets["value"], desk_left, "overspeed", level, config).exposure
        for level in (0.1, 0.2, 0.5)
    ]
    assert exposure == sorted(exposure)


class TestTracking:
    def test_records_and_summary(self, small_nets):
        config = EvalConfig(tracking_runs=4, tracking_steps=5)
        result = eval_tracking(small_nets["policy"], small_nets["value"], ["a", "f"], config)
        records, summary = result.records, result.summary
        assert sorted(records["run"].unique()) == [0, 1, 2, 3]
        assert set(records["topology"]) == {"a", "f"}
        assert records.groupby("run").size().max() <= 5
        assert list(summary.index) == ["p50", "p95", "p99", "max"]
        assert list(summary.columns) == ["distance_error", "speed_error", "steering", "acceleration"]
        assert len(TRACKING_PERCENTILES) == len(summary)
        assert (summary.diff().dropna() >= 0).all().all()
        assert summary.loc["max", "distance_error"] == pytest.approx(records["distance_error"].max())

    def test_same_seed_same_records(self, small_nets):
        config = EvalConfig(tracking_runs=2, tracking_steps=4, seed=7)
        a = eval_tracking(small_nets["policy"], small_nets["value"], ["b"], config)
        b = eval_tracking(small_nets["policy"], small_nets["value"], ["b"], config)
        pd.testing.assert_frame_equal(a.records, b.records)

    def test_unknown_topology(self, small_nets):
        with pytest.raises(ValueError):
            eval_tracking(small_nets["policy"], small_nets["value"], ["z"], EvalConfig(tracking_runs=1))


@pytest.mark.slow
def test_trained_policy_tracks_empty_crossroads(desk_trained):
    trainer = desk_trained["apg"][0]
    summary = eval_tracking(trainer.policy, trainer.value, config=EvalConfig(tracking_runs=50)).summary
    assert summary.loc["p95", "distance_error"] <= 0.5
    assert summary.loc["p95", "speed_error"] <= 3.0


@pytest.mark.slow
@pytest.mark.parametrize("perturbation", ["overspeed", "rounding"])
def test_adversarial_training_generalizes_at_least_as_well(desk_trained, desk_left, perturbation):
    config = EvalConfig(runs=100)
    rates, violations = {}, {}
    for method, trainers in desk_trained.items():
        reports = [eval_generalization(t.policy, t.value, desk_left, perturbation, 0.5, config, method)
                   for t in trainers]
        rates[method] = np.median([r.passing_rate for r in reports])
        violations[method] = sum(r.violation_count for r in reports)
    assert rates["apg"] >= rates["dpg"]
    assert violations["apg"] <= violations["dpg"]


class TestCli:
    def test_usage(self, capsys):
        assert entry.main([]) == 2
        assert "usage" in capsys.readouterr().err

    def test_unknown_command(self):
        assert entry.main(["fly"]) == 2

    def test_missing_checkpoint(self, tmp_path):
        assert eval_cli.main([str(tmp_path / "none.apgn")], out_dir=str(tmp_path)) == 1
