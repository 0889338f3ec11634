"""
Evaluation CLI
===============
Runs the generalization protocol (overspeed / rounding) or the tracking
protocol for one or more checkpoints and writes the metrics report.

Usage::

    python -m intersection_rl eval \\
        --checkpoint apg=runs/apg/checkpoint_20000.apgn dpg=runs/dpg/checkpoint_20000.apgn \\
        --perturbation overspeed --levels 0.1 0.2 0.5 --runs 100 --out runs/eval

    python -m intersection_rl eval --checkpoint runs/apg/checkpoint_20000.apgn --perturbation tracking
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

from intersection_rl.configuration import configure_logging
from intersection_rl.errors import IntersectionRLError

logger = logging.getLogger("eval")

_DEFAULT_OUT = "runs/eval"


def main(
    checkpoints: list[str],
    scenario: str = "desk-left",
    perturbation: str = "overspeed",
    levels: tuple[float, ...] = (0.1, 0.2, 0.5),
    runs: int = 100,
    seed: int = 0,
    out_dir: str = _DEFAULT_OUT,
    workers: int = 0,
) -> int:
    """Evaluate ``checkpoints`` (``method=path`` or bare paths)."""
    from intersection_rl.evaluation import EvalConfig, eval_generalization, eval_tracking, report
    from intersection_rl.models.checkpoint import load_checkpoint
    from intersection_rl.scenario import resolve_scenario

    try:
        labelled = [_label(entry) for entry in checkpoints]
        config = EvalConfig(runs=runs, levels=tuple(levels), seed=seed, workers=workers, tracking_runs=runs)
        scn = resolve_scenario(scenario)
        nets = {method: load_checkpoint(path).networks for method, path in labelled}
    except (FileNotFoundError, ValueError, IntersectionRLError) as exc:
        logger.error("%s", exc)
        return 1

    out = Path(out_dir)
    try:
        if perturbation == "tracking":
            for method, n in nets.items():
                logger.info("\n%s\nTRACKING — %s\n%s", "=" * 60, method.upper(), "=" * 60)
                result = eval_tracking(n["policy"], n["value"], config=config)
                out.mkdir(parents=True, exist_ok=True)
                result.summary.to_csv(out / f"tracking_{method}.csv", float_format="%.10g")
            return 0

        reports = []
        for method, n in nets.items():
            logger.info("\n%s\nGENERALIZATION — %s, %s\n%s", "=" * 60, method.upper(), perturbation, "=" * 60)
            for level in config.levels:
                reports.append(eval_generalization(n["policy"], n["value"], scn, perturbation, level,
                                                   config, method=method))
        report(reports, out)
    except (KeyError, ValueError, IntersectionRLError) as exc:
        logger.error("Evaluation failed: %s", exc)
        return 1
    return 0


def _label(entry: str) -> tuple[str, str]:
    method, sep, path = entry.partition("=")
    if not sep:
        return Path(entry).parent.name or "policy", entry
    return method, path


def _parse_args(argv: list[str] | None = None) -> argparse.Namespace:
    parser = argparse.ArgumentParser(description="Evaluate trained controllers.")
    parser.add_argument("--checkpoint", nargs="+", required=True, help="method=path entries (or bare paths)")
    parser.add_argument("--scenario", default="desk-left")
    parser.add_argument("--perturbation", choices=("overspeed", "rounding", "tracking"), default="overspeed")
    parser.add_argument("--levels", type=float, nargs="+", default=[0.1, 0.2, 0.5])
    parser.add_argument("--runs", type=int, default=100)
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--out", default=_DEFAULT_OUT)
    parser.add_argument("--workers", type=int, default=0)
    parser.add_argument("--verbose", action="store_true")
    return parser.parse_args(argv)


def cli(argv: list[str] | None = None) -> int:
    args = _parse_args(argv)
    configure_logging(args.verbose)
    return main(args.checkpoint, args.scenario, args.perturbation, tuple(args.levels),
                args.runs, args.seed, args.out, args.workers)


if __name__ == "__main__":
    sys.exit(cli())
