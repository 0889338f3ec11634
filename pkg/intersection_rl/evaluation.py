"""
Stage 7 — Evaluation & Reporting
==================================
Closed-loop evaluation of trained networks in the driving environment:

    eval_tracking        — empty-traffic runs over every desk crossroad with a
                           random route and velocity mode; distribution of the
                           tracking error and of the control commands
    eval_generalization  — left turns through perturbed traffic (overspeeding
                           opposing vehicles or vehicles rounding into the
                           inside lane); passing rate and travel time
    report               — metrics CSV, published reference table and SVG
                           bar charts

A run succeeds when the ego leaves the junction without any g > 0 event,
without drifting more than ``departure_m`` from every candidate path and
without crossing the stop line on red.  Travel time runs from the first
stop-line crossing to the first junction-exit crossing.

Outputs (``report``):
    - ``metrics.csv``              — method, perturbation, level, passing_rate,
                                     travel_mean, travel_std, n
    - ``published_reference.csv``  — full-scale APG/DPG passing rates and
                                     travel times, same columns without n
    - ``passing_rate_<perturbation>.svg``

Usage::

    from intersection_rl.evaluation import eval_generalization, report

    r = eval_generalization(policy, value, resolve_scenario("desk-left"), "overspeed", 0.5)
    report([r], "runs/eval")
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import matplotlib
matplotlib.use("Agg")   # non-interactive backend (no display required)
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from joblib import Parallel, delayed

from intersection_rl.configuration import ConfigMixin
from intersection_rl.control.online_controller import OnlineController
from intersection_rl.env.signals import SignalSchedule
from intersection_rl.env.traffic import TrafficConfig
from intersection_rl.env.world import IntersectionWorld
from intersection_rl.models.networks import MLP
from intersection_rl.planning.path_planner import MOVEMENTS, VELOCITY_MODES, generate_path_set
from intersection_rl.planning.topologies import desk_topologies
from intersection_rl.scenario import Scenario

logger = logging.getLogger(__name__)

PERTURBATIONS: tuple[str, ...] = ("overspeed", "rounding")

METRIC_COLUMNS = ("method", "perturbation", "level", "passing_rate", "travel_mean", "travel_std", "n")

#: Full-scale (passing rate, travel mean s, travel std s) per method, 200 runs per cell
PUBLISHED_REFERENCE: dict[tuple[str, float], dict[str, tuple[float, float, float]]] = {
    ("overspeed", 0.1): {"apg": (1.00, 13.08, 2.35), "dpg": (0.90, 12.30, 3.96)},
    ("overspeed", 0.2): {"apg": (0.90, 13.38, 4.98), "dpg": (0.82, 12.08, 1.71)},
    ("overspeed", 0.5): {"apg": (0.90, 16.18, 4.85), "dpg": (0.75, 10.33, 3.28)},
    ("rounding", 0.1): {"apg": (0.96, 12.83, 3.07), "dpg": (0.80, 12.71, 2.88)},
    ("rounding", 0.2): {"apg": (0.94, 13.38, 3.91), "dpg": (0.72, 12.30, 3.96)},
    ("rounding", 0.5): {"apg": (0.84, 13.60, 3.58), "dpg": (0.34, 10.50, 4.94)},
}

REFERENCE_COLUMNS = ("method", "perturbation", "level", "passing_rate", "travel_mean", "travel_std")

TRACKING_PERCENTILES = (50, 95, 99, 100)

_SVG_HASHSALT = "intersection-rl"
_SEED_STRIDE = 100_003


@dataclass(frozen=True)
class EvalConfig(ConfigMixin):
    runs: int = 100
    max_steps: int = 400
    levels: tuple[float, ...] = (0.1, 0.2, 0.5)
    seed: int = 0
    workers: int = 0
    departure_m: float = 3.0
    tracking_runs: int = 50
    tracking_steps: int = 200

    def __post_init__(self) -> None:
        if self.runs < 1 or self.max_steps < 1:
            raise ValueError("runs and max_steps must be >= 1")
        if any(not 0.0 <= lv <= 1.0 for lv in self.levels):
            raise ValueError("levels must lie in [0, 1]")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")


@dataclass(frozen=True)
class RunOutcome:
    run: int
    success: bool
    exited: bool
    collision: bool
    departure: bool
    red_violation: bool
    travel_time: float
    exposure: int = 0


@dataclass
class EvalReport:
    method: str
    perturbation: str
    level: float
    outcomes: list[RunOutcome] = field(default_factory=list)

    @property
    def n(self) -> int:
        return len(self.outcomes)

    @property
    def passing_rate(self) -> float:
        return sum(o.success for o in self.outcomes) / self.n if self.outcomes else 0.0

    @property
    def travel_times(self) -> np.ndarray:
        return np.array([o.travel_time for o in self.outcomes if o.success])

    @property
    def violation_count(self) -> int:
        return sum(o.collision for o in self.outcomes)

    @property
    def exposure(self) -> int:
        return sum(o.exposure for o in self.outcomes)

    def row(self) -> dict[str, Any]:
        times = self.travel_times
        return {
            "method": self.method,
            "perturbation": self.perturbation,
            "level": self.level,
            "passing_rate": self.passing_rate,
            "travel_mean": float(times.mean()) if times.size else float("nan"),
            "travel_std": float(times.std()) if times.size else float("nan"),
            "n": self.n,
        }


@dataclass(frozen=True)
class TrackingReport:
    records: pd.DataFrame   # one row per control step
    summary: pd.DataFrame   # percentile × quantity


# ---------------------------------------------------------------------------
# Episode runner
# ---------------------------------------------------------------------------


def run_episode(
    controller: OnlineController,
    world: IntersectionWorld,
    max_steps: int,
    departure_m: float = 3.0,
    stop_on_exit: bool = True,
) -> pd.DataFrame:
    """Drive ``world`` with ``controller``; one log row per control step.

    Stops early on exit, on a g > 0 event or on road departure.
    """
    rows = []
    for _ in range(max_steps):
        decision = controller.control_step(world)
        path = world.paths[decision.path_id]
        ego = world.ego
        record = world.last_record
        s = world.progress(decision.path_id)
        lateral = world.lateral_distance()
        rows.append({
            "t": world.time,
            "x": ego.p_x,
            "y": ego.p_y,
            "v": ego.v_x,
            "phi": ego.phi,
            "delta": ego.delta,
            "a": ego.a,
            "path_id": decision.path_id,
            "mode": decision.mode,
            "phase": world.signal()[0],
            "s": s,
            "s_stop": path.s_stop,
            "s_exit": path.s_exit,
            "dx": decision.state.track[0],
            "dy": decision.state.track[1],
            "dv": decision.state.track[2],
            "dphi": decision.state.track[3],
            "utility": record.utility,
            "worst_g": record.worst_g,
            "lateral": lateral,
        })
        if record.worst_g > 0 or lateral > departure_m:
            break
        if stop_on_exit and s >= path.s_exit:
            break
        if world.finished:
            break
    return pd.DataFrame(rows)


def classify_run(log: pd.DataFrame, departure_m: float = 3.0, run: int = 0, exposure: int = 0) -> RunOutcome:
    """Outcome of one run; a pure function of its log."""
    if log.empty:
        return RunOutcome(run, False, False, False, False, False, float("nan"), exposure)
    passed = (log["s"] >= log["s_stop"]).to_numpy()
    exited = (log["s"] >= log["s_exit"]).to_numpy()
    collision = bool((log["worst_g"] > 0).any())
    departure = bool((log["lateral"] > departure_m).any())

    red_violation = False
    travel = float("nan")
    if passed.any():
        i = int(np.argmax(passed))
        # the phase logged on a row is the one in force when the step ended
        red_violation = bool(log["phase"].iloc[i] == "R")
        if exited.any():
            travel = float(log["t"].iloc[int(np.argmax(exited))] - log["t"].iloc[i])

    success = bool(exited.any()) and not (collision or departure or red_violation)
    return RunOutcome(run, success, bool(exited.any()), collision, departure, red_violation,
                      travel if success else float("nan"), exposure)


# ---------------------------------------------------------------------------
# Protocols
# ---------------------------------------------------------------------------


def eval_generalization(
    policy: MLP,
    value: MLP,
    scenario: Scenario,
    perturbation: str,
    level: float,
    config: EvalConfig = EvalConfig(),
    method: str = "apg",
) -> EvalReport:
    """Passing rate of ``scenario`` with ``level`` of the traffic perturbed.

    The ego axis is held on green and the crossing axis on red; run ``i``
    uses the traffic seed ``seed * 100003 + i`` for every level so the
    perturbed agents are nested across levels.
    """
    if perturbation not in PERTURBATIONS:
        raise ValueError(f"perturbation must be one of {PERTURBATIONS}, got '{perturbation}'")
    if not 0.0 <= level <= 1.0:
        raise ValueError(f"level must lie in [0, 1], got {level}")

    if perturbation == "overspeed":
        changes = {"overspeed_fraction": level, "overspeed_factor": 1.0 + level}
    else:
        changes = {"rounding_fraction": level}
    base = scenario.replace(signal=_axis_phasing(scenario, "G", "R")).with_traffic(**changes)
    paths = generate_path_set(base.topology, base.task, base.rho_bisect, base.sample_ds, base.decel_zone)
    controller = OnlineController(policy, value, paths)

    def _one(run: int) -> RunOutcome:
        run_seed = config.seed * _SEED_STRIDE + run
        world = IntersectionWorld(base.with_traffic(seed=run_seed), seed=run_seed, paths=paths)
        world.reset(path_id=0, randomize=False)
        log = run_episode(controller, world, config.max_steps, config.departure_m)
        return classify_run(log, config.departure_m, run, world.traffic.exposure[perturbation])

    outcomes = _map_runs(_one, config.runs, config.workers)
    result = EvalReport(method, perturbation, level, outcomes)
    logger.info("%s %s %.0f%%: passing rate %.2f over %d runs (%d violations, %d perturbed agents)",
                method.upper(), perturbation, 100 * level, result.passing_rate, result.n,
                result.violation_count, result.exposure)
    return result


def eval_tracking(
    policy: MLP,
    value: MLP,
    topologies: Sequence[str] | None = None,
    config: EvalConfig = EvalConfig(),
) -> TrackingReport:
    """Tracking error and control commands on empty crossroads.

    Run ``i`` drives desk topology ``topologies[i % len]`` with a random
    movement, route and velocity mode; the mode is forced through a fixed
    signal phase on the ego approach.
    """
    desk = desk_topologies()
    keys = list(topologies) if topologies is not None else sorted(desk)
    unknown = [k for k in keys if k not in desk]
    if unknown:
        raise ValueError(f"Unknown desk topologies {unknown}")

    def _one(run: int) -> pd.DataFrame:
        rng = np.random.default_rng(config.seed * _SEED_STRIDE + run)
        key = keys[run % len(keys)]
        task = MOVEMENTS[int(rng.integers(len(MOVEMENTS)))]
        mode = VELOCITY_MODES[int(rng.integers(len(VELOCITY_MODES)))]
        scenario = Scenario(f"tracking-{key}", desk[key], task=task, traffic=TrafficConfig.empty(run))
        phase = "G" if mode == "pass" else "R"
        scenario = scenario.replace(signal=_axis_phasing(scenario, phase, phase))
        paths = generate_path_set(scenario.topology, task, scenario.rho_bisect,
                                  scenario.sample_ds, scenario.decel_zone)
        path = paths[int(rng.integers(len(paths)))]
        world = IntersectionWorld(scenario, seed=run, paths=[path])
        world.reset(path_id=0, randomize=False)
        log = run_episode(OnlineController(policy, value, [path]), world, config.tracking_steps,
                          config.departure_m, stop_on_exit=False)
        return log.assign(run=run, topology=key, task=task)

    logs = _map_runs(_one, config.tracking_runs, config.workers)
    records = pd.concat(logs, ignore_index=True)
    records["distance_error"] = np.hypot(records["dx"], records["dy"])
    records["speed_error"] = records["dv"].abs()
    quantities = {
        "distance_error": records["distance_error"],
        "speed_error": records["speed_error"],
        "steering": records["delta"].abs(),
        "acceleration": records["a"].abs(),
    }
    summary = pd.DataFrame(
        {name: [float(np.percentile(col, q)) for q in TRACKING_PERCENTILES] for name, col in quantities.items()},
        index=[f"p{q}" if q < 100 else "max" for q in TRACKING_PERCENTILES],
    )
    logger.info("Tracking over %d runs:\n%s", config.tracking_runs, summary.to_string())
    return TrackingReport(records, summary)


# ---------------------------------------------------------------------------
# Reporting
# ---------------------------------------------------------------------------


def report(reports: Sequence[EvalReport], out_dir: str | Path) -> pd.DataFrame:
    """Write ``metrics.csv``, the published reference table and bar charts."""
    if not reports:
        raise ValueError("report needs at least one EvalReport")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    metrics = pd.DataFrame([r.row() for r in reports], columns=list(METRIC_COLUMNS))
    metrics = metrics.sort_values(["perturbation", "level", "method"], kind="mergesort").reset_index(drop=True)
    metrics.to_csv(out / "metrics.csv", index=False, float_format="%.10g")
    logger.info("Metrics CSV → %s", out / "metrics.csv")

    reference = pd.DataFrame(
        [
            {"method": method, "perturbation": p, "level": lv,
             "passing_rate": rate, "travel_mean": mean, "travel_std": std}
            for (p, lv), methods in PUBLISHED_REFERENCE.items()
            for method, (rate, mean, std) in methods.items()
        ],
        columns=list(REFERENCE_COLUMNS),
    )
    reference.to_csv(out / "published_reference.csv", index=False, float_format="%.10g")

    for perturbation, frame in metrics.groupby("perturbation", sort=True):
        _bar_chart(frame, perturbation, out / f"passing_rate_{perturbation}.svg")

    _print_summary(metrics)
    return metrics


def plot_losses(losses_csv: str | Path, out_path: str | Path) -> Path:
    """Line plot of J_track, J_safe, J_pi, J_v and TAR against iteration."""
    losses_csv = Path(losses_csv)
    if not losses_csv.exists():
        raise FileNotFoundError(
            f"Loss log not found: '{losses_csv}'. Run `python -m intersection_rl train` first."
        )
    frame = pd.read_csv(losses_csv)
    columns = ["J_track", "J_safe", "J_pi", "J_v", "TAR"]
    fig, axes = plt.subplots(len(columns), 1, figsize=(8, 2.2 * len(columns)), sharex=True)
    for ax, col in zip(axes, columns):
        ax.plot(frame["iteration"], frame[col], marker="o", markersize=3)
        ax.set_ylabel(col)
        ax.grid(alpha=0.3)
    axes[-1].set_xlabel("iteration")
    fig.suptitle("Training losses")
    fig.tight_layout()
    return _save_svg(fig, out_path)


def export_episode(world: IntersectionWorld, log: pd.DataFrame, out_dir: str | Path, fmt: str = "csv") -> Path:
    """Write an episode replay as CSV or a trajectory SVG."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    if fmt == "csv":
        path = out / "episode.csv"
        log.to_csv(path, index=False, float_format="%.10g")
        return path
    if fmt != "svg":
        raise ValueError(f"fmt must be 'csv' or 'svg', got '{fmt}'")

    fig, ax = plt.subplots(figsize=(7, 7))
    chosen = set(log["path_id"].unique()) if not log.empty else set()
    for i, path in enumerate(world.paths):
        style = {"color": "tab:blue", "linewidth": 1.5} if i in chosen else {"color": "0.75", "linewidth": 0.8}
        ax.plot(path.points[:, 0], path.points[:, 1], **style)
    if not log.empty:
        ax.plot(log["x"], log["y"], color="tab:red", linewidth=2, label="ego")
    markers = {"vehicle": "s", "cyclist": "^", "pedestrian": "o"}
    for p in world.ground_truth():
        ax.scatter(p.p_x, p.p_y, marker=markers[p.kind], color="k", s=20)
    ax.set_aspect("equal")
    ax.set_title(f"{world.scenario.name} — {world.scenario.task}")
    ax.legend(loc="upper right")
    return _save_svg(fig, out / "trajectory.svg")


# ---------------------------------------------------------------------------
# Private helpers
# ---------------------------------------------------------------------------


def _axis_phasing(scenario: Scenario, ego_axis: str, cross_axis: str) -> SignalSchedule:
    """Signal pinned to ``ego_axis`` on arms parallel to the ego approach."""
    topology = scenario.topology
    ego_heading = next(
        (lane.heading for lane in topology.entrance_lanes if lane.approach == topology.ego_approach),
        topology.entrance_lanes[0].heading,
    )
    fixed = {}
    for lane in topology.entrance_lanes:
        if lane.approach is None:
            continue
        parallel = abs(math.cos(lane.heading - ego_heading)) >= math.sqrt(0.5)
        fixed[lane.approach] = ego_axis if parallel else cross_axis
    s = scenario.signal
    return SignalSchedule(s.green_s, s.yellow_s, s.red_s, dict(s.offsets), fixed)


def _map_runs(fn, runs: int, workers: int) -> list:
    if workers == 0:
        return [fn(i) for i in range(runs)]
    return Parallel(n_jobs=workers, prefer="threads")(delayed(fn)(i) for i in range(runs))


def _bar_chart(frame: pd.DataFrame, perturbation: str, path: Path) -> Path:
    levels = sorted(frame["level"].unique())
    methods = sorted(frame["method"].unique())
    width = 0.8 / max(len(methods), 1)
    fig, ax = plt.subplots(figsize=(7, 4))
    x = np.arange(len(levels))
    for j, method in enumerate(methods):
        rates = [frame[(frame["method"] == method) & (frame["level"] == lv)]["passing_rate"].mean() for lv in levels]
        ax.bar(x + j * width, rates, width, label=method.upper())
    ax.set_xticks(x + width * (len(methods) - 1) / 2)
    ax.set_xticklabels([f"{100 * lv:.0f}%" for lv in levels])
    ax.set_ylim(0, 1.05)
    ax.set_ylabel("passing rate")
    ax.set_title(f"Passing rate — {perturbation}")
    ax.legend()
    fig.tight_layout()
    return _save_svg(fig, path)


def _save_svg(fig, path: str | Path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with plt.rc_context({"svg.hashsalt": _SVG_HASHSALT}):
        fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)
    logger.info("Plot → %s", path)
    return path


def _print_summary(metrics: pd.DataFrame) -> None:
    lines = ["=" * 70, "  GENERALIZATION REPORT", "=" * 70,
             f"{'Method':<8} {'Perturbation':<12} {'Level':>6} {'Pass':>6} {'Travel (s)':>14} {'n':>5}",
             "-" * 70]
    for _, row in metrics.iterrows():
        travel = "N/A" if np.isnan(row["travel_mean"]) else f"{row['travel_mean']:.1f} ± {row['travel_std']:.1f}"
        lines.append(
            f"{row['method'].upper():<8} {row['perturbation']:<12} {100 * row['level']:>5.0f}% "
            f"{row['passing_rate']:>6.2f} {travel:>14} {row['n']:>5d}"
        )
    lines.append("=" * 70)
    print("\n".join(lines))
