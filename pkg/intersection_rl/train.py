"""
Training Script — train.py
============================
Trains the driving policy, value network and (APG only) adversary on one
scenario and writes checkpoints plus ``losses.csv`` to the output directory.

    Stage 1  — candidate path generation for the scenario task
    Stage 2  — initial buffer fill with the untrained stochastic policy
    Stage 3  — APG / DPG optimisation (checkpoint + TAR every log interval)
    Stage 4  — loss curves (``losses.svg``)

Usage::

    # From the project root:
    python -m intersection_rl train --mode apg --scenario desk-left --out runs/apg

    # DPG ablation from a config file:
    python -m intersection_rl train --mode dpg --config configs/desk.json --seed 1 --out runs/dpg
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from intersection_rl.configuration import configure_logging
from intersection_rl.errors import IntersectionRLError

logger = logging.getLogger("train")

_DEFAULT_SCENARIO = "desk-left"
_DEFAULT_OUT = "runs/train"


# ---------------------------------------------------------------------------
# Entry point
# ---------------------------------------------------------------------------


def main(
    mode: str = "apg",
    scenario: str = _DEFAULT_SCENARIO,
    config_path: str | None = None,
    seed: int | None = None,
    out_dir: str = _DEFAULT_OUT,
    iterations: int | None = None,
    workers: int | None = None,
) -> int:
    """Run one training job; returns the process exit status.

    Parameters
    ----------
    mode:
        ``"apg"`` (with adversary) or ``"dpg"`` (ξ ≡ 0).
    scenario:
        Built-in scenario name or scenario JSON path.
    config_path:
        Optional ``TrainerConfig`` JSON; CLI arguments override its fields.
    """
    from intersection_rl.evaluation import plot_losses
    from intersection_rl.scenario import resolve_scenario
    from intersection_rl.training.apg_trainer import APGTrainer, TrainerConfig

    t0 = time.time()
    try:
        base = TrainerConfig.from_json(config_path) if config_path else TrainerConfig()
        overrides = {"mode": mode}
        if seed is not None:
            overrides["seed"] = seed
        if iterations is not None:
            overrides["total_iterations"] = iterations
        if workers is not None:
            overrides["workers"] = workers
        config = TrainerConfig.from_dict({**base.to_dict(), **overrides})
        scn = resolve_scenario(scenario)
    except (FileNotFoundError, ValueError, IntersectionRLError) as exc:
        logger.error("%s", exc)
        return 1

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    try:
        logger.info("\n%s\nSTAGE 1 — Candidate paths (%s, task=%s)\n%s", "=" * 60, scn.name, scn.task, "=" * 60)
        trainer = APGTrainer(config, scn)
        logger.info("%d candidate paths", len(trainer.paths))

        logger.info("\n%s\nSTAGE 2/3 — Sampling and optimisation\n%s", "=" * 60, "=" * 60)
        trainer.run(out)
        if trainer.iteration % config.log_interval != 0:
            trainer.save(out)
    except IntersectionRLError as exc:
        logger.error("Training failed: %s", exc)
        return 1

    if trainer.history:
        logger.info("\n%s\nSTAGE 4 — Loss curves\n%s", "=" * 60, "=" * 60)
        plot_losses(out / "losses.csv", out / "losses.svg")

    logger.info("\nAll done!  Total time: %.1f s", time.time() - t0)
    _print_artifact_summary(out)
    return 0


# ---------------------------------------------------------------------------
# Helper
# ---------------------------------------------------------------------------


def _print_artifact_summary(out_dir: Path) -> None:
    logger.info("\nSaved artifacts:")
    for f in sorted(out_dir.glob("*")):
        logger.info("  %-40s  %8.1f KB", f.name, f.stat().st_size / 1024)


# ---------------------------------------------------------------------------
# CLI
# ---------------------------------------------------------------------------


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Train the intersection driving policy (APG or DPG).")
    parser.add_argument("--mode", choices=("apg", "dpg"), default="apg")
    parser.add_argument(
        "--scenario",
        default=_DEFAULT_SCENARIO,
        help=f"Built-in scenario name or scenario JSON (default: {_DEFAULT_SCENARIO})",
    )
    parser.add_argument("--config", default=None, help="TrainerConfig JSON (e.g. configs/desk.json)")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=_DEFAULT_OUT, help=f"Output directory (default: {_DEFAULT_OUT})")
    parser.add_argument("--iterations", type=int, default=None, help="Override total_iterations")
    parser.add_argument("--workers", type=int, default=None, help="Sampler threads; 0 = deterministic")
    parser.add_argument("--verbose", action="store_true", help="DEBUG logging")
    return parser.parse_args(argv)


def cli(argv: list[str] | None = None) -> int:
    args = _parse_args(argv)
    configure_logging(args.verbose)
    return main(
        mode=args.mode,
        scenario=args.scenario,
        config_path=args.config,
        seed=args.seed,
        out_dir=args.out,
        iterations=args.iterations,
        workers=args.workers,
    )


if __name__ == "__main__":
    sys.exit(cli())
