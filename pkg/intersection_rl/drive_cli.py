"""
Drive CLI
==========
Loads a checkpoint and drives one episode with the online controller,
exporting the replay as CSV or the trajectory as SVG.

Usage::

    python -m intersection_rl drive --checkpoint runs/apg/checkpoint_20000.apgn \\
        --scenario desk-left --steps 300 --export svg --out runs/drive
"""

from __future__ import annotations

import argparse
import logging
import sys

from intersection_rl.configuration import configure_logging
from intersection_rl.errors import IntersectionRLError

logger = logging.getLogger("drive")

_DEFAULT_OUT = "runs/drive"


def main(
    checkpoint: str,
    scenario: str = "desk-left",
    task: str | None = None,
    steps: int = 300,
    export: str = "csv",
    out_dir: str = _DEFAULT_OUT,
    seed: int = 0,
) -> int:
    from intersection_rl.control.online_controller import OnlineController
    from intersection_rl.env.world import IntersectionWorld
    from intersection_rl.evaluation import classify_run, export_episode, run_episode
    from intersection_rl.models.checkpoint import load_checkpoint
    from intersection_rl.scenario import resolve_scenario

    try:
        ckpt = load_checkpoint(checkpoint)
        scn = resolve_scenario(scenario)
        if task is not None:
            scn = scn.replace(task=task)
        world = IntersectionWorld(scn.with_traffic(seed=seed), seed=seed)
        world.reset(path_id=0, randomize=False)
        controller = OnlineController(ckpt.networks["policy"], ckpt.networks["value"], world.paths)
        log = run_episode(controller, world, steps)
        path = export_episode(world, log, out_dir, export)
    except (FileNotFoundError, KeyError, ValueError, IntersectionRLError) as exc:
        logger.error("%s", exc)
        return 1

    outcome = classify_run(log)
    logger.info("Episode: %d steps, %s (travel %.1f s)", len(log),
                "success" if outcome.success else "failure", outcome.travel_time)
    logger.info("Export → %s", path)
    return 0


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Drive one episode with a trained controller.")
    parser.add_argument("--checkpoint", required=True)
    parser.add_argument("--scenario", default="desk-left")
    parser.add_argument("--task", choices=("left", "straight", "right"), default=None)
    parser.add_argument("--steps", type=int, default=300)
    parser.add_argument("--export", choices=("csv", "svg"), default="csv")
    parser.add_argument("--out", default=_DEFAULT_OUT)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--verbose", action="store_true")
    return parser.parse_args(argv)


def cli(argv: list[str] | None = None) -> int:
    args = _parse_args(argv)
    configure_logging(args.verbose)
    return main(args.checkpoint, args.scenario, args.task, args.steps, args.export, args.out, args.seed)


if __name__ == "__main__":
    sys.exit(cli())
