"""
Stage 5 — Adversarial Policy Gradient Trainer
===============================================
Solves the penalty-relaxed minimax problem with three networks:

    π_θ  driving policy   — descent on J_π = J_track + ρ·J_safe
    v_w  value network    — descent on J_v
    π_φ  adversary        — ascent on J_π every ``update_interval`` iterations
                            (absent in DPG mode, where ξ ≡ 0)

Each iteration samples environment steps with the stochastic policy into the
buffer, fetches a batch of states, rolls them through the differentiable
model and applies one Adam step per network.  Every ``log_interval``
iterations the total average return (TAR) is measured in the real
environment, a checkpoint is written and ``losses.csv`` refreshed.

Usage::

    config = TrainerConfig.from_json("configs/desk.json")
    trainer = APGTrainer(config, resolve_scenario("desk-left"))
    history = trainer.run(out_dir="runs/apg")
"""

from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Protocol

import numpy as np
import pandas as pd
import torch
from joblib import Parallel, delayed
from tqdm import tqdm

from intersection_rl.configuration import ConfigMixin
from intersection_rl.control.online_controller import policy_action
from intersection_rl.env.dynamics import ACTION_HIGH, ACTION_LOW, Action
from intersection_rl.env.state import PathTensors
from intersection_rl.env.world import IntersectionWorld, StepRecord
from intersection_rl.errors import DynamicsSingularityError, TrainingDivergedError
from intersection_rl.models.autodiff import Tape, backward
from intersection_rl.models.checkpoint import save_checkpoint
from intersection_rl.models.networks import MLP, adversary_spec, gaussian_sample, policy_spec, value_spec
from intersection_rl.models.optim import AdamState, adam_step, cosine_lr
from intersection_rl.planning.path_planner import CandidatePath, generate_path_set
from intersection_rl.scenario import Scenario
from intersection_rl.training.buffer import RolloutBuffer, Transition
from intersection_rl.training.losses import LOSS_COLUMNS, LossReport, policy_loss, value_loss
from intersection_rl.training.rollout import model_rollout

logger = logging.getLogger(__name__)

TRAINING_MODES: tuple[str, ...] = ("apg", "dpg")

#: Lateral distance from every candidate path that ends a sampling episode
ROAD_DEPARTURE_M = 3.0

_ACTION_BOUNDS = (torch.as_tensor(ACTION_LOW), torch.as_tensor(ACTION_HIGH))

# SeedSequence stream tags
_STREAM_SAMPLER = 1
_STREAM_FETCH = 2
_STREAM_TAR = 3


@dataclass(frozen=True)
class TrainerConfig(ConfigMixin):
    mode: str = "apg"
    horizon: int = 25
    rho_penalty: float = 15.0
    update_interval: int = 5
    batch_size: int = 256
    total_iterations: int = 20_000
    hidden: tuple[int, ...] = (64, 64)
    policy_lr: float = 1e-4
    policy_lr_final: float = 2e-6
    value_lr: float = 3e-4
    value_lr_final: float = 1e-6
    adversary_lr: float = 1e-4
    seed: int = 0
    buffer_capacity: int = 100_000
    initial_samples: int = 2_000
    sample_steps: int = 32
    episode_steps: int = 120
    log_interval: int = 1_000
    tar_episodes: int = 10
    tar_steps: int = 120
    workers: int = 0

    def __post_init__(self) -> None:
        if self.mode not in TRAINING_MODES:
            raise ValueError(f"mode must be one of {TRAINING_MODES}, got '{self.mode}'")
        if self.horizon < 1:
            raise ValueError("horizon must be >= 1")
        if self.update_interval < 1:
            raise ValueError("update_interval must be >= 1")
        if self.rho_penalty <= 0:
            raise ValueError("rho_penalty must be > 0")
        if self.seed < 0:
            raise ValueError("seed must be >= 0")
        if self.batch_size < 1 or self.total_iterations < 0 or self.log_interval < 1:
            raise ValueError("batch_size and log_interval must be >= 1, total_iterations >= 0")
        if self.workers < 0:
            raise ValueError("workers must be >= 0")


class _World(Protocol):
    path_id: int

    def reset(self, *args, **kwargs): ...
    def current_mode(self) -> str: ...
    def state(self, path_id: int, mode: str, perceived=None): ...
    def step(self, action: Action, path_id: int | None = None, mode: str | None = None) -> StepRecord: ...


# ---------------------------------------------------------------------------
# Environment sampling
# ---------------------------------------------------------------------------


class EpisodeSampler:
    """One world plus the episode bookkeeping of a sampler worker.

    Episodes start on a random candidate path; the velocity mode of every
    step comes from the traffic-light flowchart.
    """

    def __init__(self, scenario: Scenario, paths: list[CandidatePath], seed: int, episode_steps: int) -> None:
        self.world = IntersectionWorld(scenario, seed=seed, paths=paths)
        self.generator = torch.Generator().manual_seed(seed)
        self.episode_steps = episode_steps
        self._steps: int | None = None

    def collect(self, policy: MLP, n_steps: int) -> list[Transition]:
        world = self.world
        out: list[Transition] = []
        for _ in range(n_steps):
            if self._episode_over():
                world.reset()
                self._steps = 0
            mode = world.current_mode()
            state = world.state(world.path_id, mode)
            out.append(Transition(state.vector, state.occupancy, state.inverse_radius, world.path_id, mode))

            with torch.no_grad():
                mean, log_std = policy(torch.as_tensor(state.vector, dtype=torch.float64))
                u = gaussian_sample(mean, log_std, self.generator, *_ACTION_BOUNDS)
            try:
                world.step(Action(float(u[0]), float(u[1])), mode=mode)
            except DynamicsSingularityError as exc:
                logger.warning("Sampling episode aborted: %s", exc)
                self._steps = None
                continue
            self._steps += 1
        return out

    def _episode_over(self) -> bool:
        if self._steps is None or self._steps >= self.episode_steps:
            return True
        return self.world.finished or self.world.lateral_distance() > ROAD_DEPARTURE_M


# ---------------------------------------------------------------------------
# Total average return
# ---------------------------------------------------------------------------


def tar(policy, world: _World, episodes: int = 10, steps: int = 120, rho_penalty: float = 15.0) -> float:
    """Mean over episodes of Σ_t [l_t + ρ·φ(s_{t+1})] in the real environment.

    The deterministic mean action is applied; each episode starts from a
    fresh randomized ``world.reset()``.
    """
    if episodes < 1 or steps < 1:
        raise ValueError("episodes and steps must be >= 1")
    returns = []
    for _ in range(episodes):
        world.reset()
        total = 0.0
        for _ in range(steps):
            mode = world.current_mode()
            state = world.state(world.path_id, mode)
            record = world.step(policy_action(policy, state), mode=mode)
            total += record.utility + rho_penalty * record.penalty
        returns.append(total)
    return float(np.mean(returns))


# ---------------------------------------------------------------------------
# Trainer
# ---------------------------------------------------------------------------


class APGTrainer:
    """Single learner owning the networks, their optimizer states and the buffer."""

    def __init__(
        self,
        config: TrainerConfig,
        scenario: Scenario,
        paths: list[CandidatePath] | None = None,
    ) -> None:
        self.config = config
        self.scenario = scenario
        self.paths = paths if paths is not None else generate_path_set(
            scenario.topology, scenario.task, scenario.rho_bisect,
            scenario.sample_ds, scenario.decel_zone,
        )
        self.path_tensors = PathTensors.from_paths(self.paths)

        if config.workers == 0:
            torch.set_num_threads(1)
            torch.use_deterministic_algorithms(True)

        seed = config.seed
        self.policy = MLP(policy_spec(config.hidden), seed=3 * seed)
        self.adversary = MLP(adversary_spec(config.hidden), seed=3 * seed + 1) if config.mode == "apg" else None
        self.value = MLP(value_spec(config.hidden), seed=3 * seed + 2)

        self._policy_opt = AdamState(self.policy.flat)
        self._value_opt = AdamState(self.value.flat)
        self._adversary_opt = AdamState(self.adversary.flat, maximize=True) if self.adversary is not None else None

        self.buffer = RolloutBuffer(config.buffer_capacity)
        self.samplers = [
            EpisodeSampler(scenario, self.paths, _derive_seed(seed, _STREAM_SAMPLER, w), config.episode_steps)
            for w in range(max(config.workers, 1))
        ]
        self._fetch_rng = np.random.default_rng(np.random.SeedSequence([seed, _STREAM_FETCH]))

        self.iteration = 0
        self.adversary_updates = 0
        self.history: list[LossReport] = []

    # ------------------------------------------------------------------
    # Public API
    # ------------------------------------------------------------------

    @property
    def networks(self) -> dict[str, MLP]:
        nets = {"policy": self.policy, "value": self.value}
        if self.adversary is not None:
            nets["adversary"] = self.adversary
        return nets

    def sample(self, n_steps: int) -> int:
        """Collect ``n_steps`` environment steps into the buffer."""
        snapshot = self.policy.snapshot()
        if self.config.workers == 0:
            batches = [self.samplers[0].collect(snapshot, n_steps)]
        else:
            share = math.ceil(n_steps / len(self.samplers))
            batches = Parallel(n_jobs=self.config.workers, prefer="threads")(
                delayed(s.collect)(snapshot, share) for s in self.samplers
            )
        n = 0
        for transitions in batches:
            self.buffer.extend(transitions)
            n += len(transitions)
        return n

    def step(self) -> LossReport:
        """Run one training iteration and return its losses (TAR not measured)."""
        cfg = self.config
        k = self.iteration + 1
        if len(self.buffer) == 0:
            self.sample(cfg.initial_samples)
        self.sample(cfg.sample_steps)
        batch = self.buffer.fetch(cfg.batch_size, self._fetch_rng)

        policy_lr = cosine_lr(k, cfg.total_iterations, cfg.policy_lr, cfg.policy_lr_final)
        value_lr = cosine_lr(k, cfg.total_iterations, cfg.value_lr, cfg.value_lr_final)

        # J_π does not depend on w and J_v does not depend on θ, so one sweep
        # over their sum yields both gradients.
        with Tape() as tape:
            tape.watch_module("policy", self.policy)
            tape.watch_module("value", self.value)
            rollout = model_rollout(
                batch, self.path_tensors, self.policy, self.adversary, cfg.horizon,
                self.scenario.vehicle, self.scenario.safety, *_generators(cfg.seed, k),
            )
            losses = policy_loss(rollout, cfg.rho_penalty)
            j_v = value_loss(rollout, self.value)
        if not torch.isfinite(losses.j_pi):
            logger.error("J_pi is non-finite at iteration %d", k)
            raise TrainingDivergedError(k, float(losses.j_pi))
        grads = backward(tape, losses.j_pi + j_v)
        adam_step(self.policy.flat, grads["policy.flat"], self._policy_opt, policy_lr)
        adam_step(self.value.flat, grads["value.flat"], self._value_opt, value_lr)

        if self.adversary is not None and k % cfg.update_interval == 0:
            self._adversary_step(batch, k)

        self.iteration = k
        return LossReport(
            iteration=k,
            j_track=float(losses.j_track),
            j_safe=float(losses.j_safe),
            j_pi=float(losses.j_pi),
            j_v=float(j_v),
            policy_lr=policy_lr,
            value_lr=value_lr,
            adversary_lr=cfg.adversary_lr if self.adversary is not None else 0.0,
        )

    def measure_tar(self) -> float:
        """TAR of the current deterministic policy on a fixed-seed world."""
        world = IntersectionWorld(self.scenario, seed=_derive_seed(self.config.seed, _STREAM_TAR, 0),
                                  paths=self.paths)
        return tar(self.policy.snapshot(), world, self.config.tar_episodes,
                   self.config.tar_steps, self.config.rho_penalty)

    def run(self, out_dir: str | Path | None = None, progress: bool = True) -> list[LossReport]:
        """Train until ``total_iterations``; returns the logged reports."""
        cfg = self.config
        out = Path(out_dir) if out_dir is not None else None
        if out is not None:
            out.mkdir(parents=True, exist_ok=True)

        logger.info("\n%s\nSAMPLING — initial buffer fill (%d steps)\n%s", "=" * 60, cfg.initial_samples, "=" * 60)
        if len(self.buffer) == 0:
            self.sample(cfg.initial_samples)
        logger.info("Buffer holds %d transitions on %d candidate paths", len(self.buffer), len(self.paths))

        logger.info("\n%s\nOPTIMISING — %s, %d iterations\n%s", "=" * 60, cfg.mode.upper(),
                    cfg.total_iterations, "=" * 60)
        t0 = time.time()
        bar = tqdm(range(self.iteration, cfg.total_iterations), disable=not progress, desc=cfg.mode.upper())
        for _ in bar:
            report = self.step()
            bar.set_postfix(J_pi=f"{report.j_pi:.3g}", J_v=f"{report.j_v:.3g}")
            if report.iteration % cfg.log_interval == 0:
                report = replace(report, tar=self.measure_tar(), wall_time=time.time() - t0)
                self.history.append(report)
                logger.info(
                    "iter %6d  J_track=%.4g  J_safe=%.4g  J_pi=%.4g  J_v=%.4g  TAR=%.4g",
                    report.iteration, report.j_track, report.j_safe, report.j_pi, report.j_v, report.tar,
                )
                if out is not None:
                    self.save(out)

        logger.info("Training finished in %.1f s (%d adversary updates)", time.time() - t0, self.adversary_updates)
        return self.history

    def save(self, out_dir: str | Path) -> Path:
        """Write ``checkpoint_<iteration>.apgn`` and refresh ``losses.csv``."""
        out = Path(out_dir)
        path = save_checkpoint(
            out / f"checkpoint_{self.iteration}.apgn", self.networks, self.iteration,
            {"mode": self.config.mode, "scenario": self.scenario.name, "config": self.config.to_dict()},
        )
        write_losses(self.history, out / "losses.csv")
        return path

    # ------------------------------------------------------------------
    # Private helpers
    # ------------------------------------------------------------------

    def _adversary_step(self, batch, k: int) -> None:
        cfg = self.config
        with Tape() as tape:
            tape.watch_module("adversary", self.adversary)
            rollout = model_rollout(
                batch, self.path_tensors, self.policy, self.adversary, cfg.horizon,
                self.scenario.vehicle, self.scenario.safety, *_generators(cfg.seed, k),
                detach_policy_inputs=True,
            )
            j_pi = policy_loss(rollout, cfg.rho_penalty).j_pi
        if not torch.isfinite(j_pi):
            raise TrainingDivergedError(k, float(j_pi))
        grads = backward(tape, j_pi)
        adam_step(self.adversary.flat, grads["adversary.flat"], self._adversary_opt, cfg.adversary_lr)
        self.adversary_updates += 1


def train(
    config: TrainerConfig,
    scenario: Scenario,
    out_dir: str | Path | None = None,
    progress: bool = True,
) -> APGTrainer:
    """Build a trainer for ``scenario`` and run it to completion."""
    trainer = APGTrainer(config, scenario)
    trainer.run(out_dir, progress=progress)
    return trainer


def write_losses(history: list[LossReport], path: str | Path) -> Path:
    path = Path(path)
    frame = pd.DataFrame([r.row() for r in history], columns=list(LOSS_COLUMNS))
    frame.to_csv(path, index=False, float_format="%.10g")
    return path


# ---------------------------------------------------------------------------
# Seeding
# ---------------------------------------------------------------------------


def _derive_seed(seed: int, stream: int, index: int) -> int:
    return int(np.random.SeedSequence([seed, stream, index]).generate_state(1)[0])


def _generators(seed: int, iteration: int) -> tuple[torch.Generator, torch.Generator]:
    """Policy and adversary noise generators of one iteration."""
    a, b = np.random.SeedSequence([seed, iteration]).generate_state(2)
    return torch.Generator().manual_seed(int(a)), torch.Generator().manual_seed(int(b))
