"""Rollout buffer, model rollout, losses and the APG trainer loop."""

from __future__ import annotations

import dataclasses
import math
from pathlib import Path

import numpy as np
import pytest
import torch

from intersection_rl.env.dynamics import NOISE_HIGH, ParticipantState
from intersection_rl.env.state import EGO_DIM, N_SLOTS, OTHER_DIM, PLACEHOLDER, STATE_DIM, TRACK_DIM, PathTensors
from intersection_rl.env.world import IntersectionWorld
from intersection_rl.models.autodiff import Tape, backward, central_difference
from intersection_rl.models.networks import MLP, mlp_forward, policy_spec
from intersection_rl.models.optim import AdamState, adam_step
from intersection_rl.training.apg_trainer import APGTrainer, TrainerConfig, tar
from intersection_rl.training.buffer import Batch, RolloutBuffer, Transition
from intersection_rl.training.losses import policy_loss, value_loss
from intersection_rl.training.rollout import RolloutResult, ZeroAdversary, model_rollout

CONFIGS = Path(__file__).resolve().parents[1] / "configs"


def _transition(i: int, mode: str = "pass") -> Transition:
    return Transition(np.full(STATE_DIM, float(i)), np.zeros(N_SLOTS, dtype=bool),
                      np.zeros(N_SLOTS), 0, mode)


def _result(utilities, penalties, valid) -> RolloutResult:
    u = torch.as_tensor(utilities, dtype=torch.float64)
    return RolloutResult(u, torch.as_tensor(penalties, dtype=torch.float64),
                         torch.as_tensor(valid), torch.zeros(u.shape[0], STATE_DIM))


def _slots(s: torch.Tensor) -> torch.Tensor:
    return s[..., EGO_DIM + TRACK_DIM:].reshape(*s.shape[:-1], N_SLOTS, OTHER_DIM)


@pytest.fixture
def start_states(desk_empty, left_paths, buffer_of):
    """Factory: three fixed start states of the empty desk crossroad, slightly off the path.

    ``neighbour=(forward, left)`` adds one vehicle at that offset in the ego
    frame, 4 m long and moving with the ego's speed and heading.
    """
    world = IntersectionWorld(desk_empty, seed=0, paths=left_paths)

    def _make(neighbour: tuple[float, float] | None = None) -> Batch:
        states = []
        for k, start in enumerate((8.0, 15.0, 22.0)):
            world.reset(path_id=0, start_s=start, randomize=False)
            ego = dataclasses.replace(world.ego, p_x=world.ego.p_x + 0.2 * (k - 1), v_x=world.ego.v_x * 0.9)
            world.ego = ego
            perceived = []
            if neighbour is not None:
                forward, left = neighbour
                c, s = math.cos(ego.phi), math.sin(ego.phi)
                perceived.append(ParticipantState(ego.p_x + c * forward - s * left, ego.p_y + s * forward + c * left,
                                                  ego.v_x, ego.phi, 4.0, 2.0))
            states.append(world.state(0, "pass", perceived))
        return buffer_of(states).fetch(3, np.random.default_rng(0))

    return _make


@pytest.fixture
def start_batch(start_states):
    return start_states()


@pytest.fixture
def alongside_batch(start_states):
    """One vehicle half a metre ahead and 2.5 m to the left: discs already overlap."""
    return start_states((0.5, 2.5))

class TestBuffer:
    def test_fetch_without_replacement(self):
        buffer = RolloutBuffer(10)
        buffer.extend(_transition(i) for i in range(10))
        batch = buffer.fetch(6, np.random.default_rng(1))
        ids = batch.states[:, 0].tolist()
        assert len(batch) == 6
        assert len(set(ids)) == 6

    def test_fetch_capped_at_size(self):
        buffer = RolloutBuffer(10)
        buffer.extend(_transition(i) for i in range(3))
        assert len(buffer.fetch(256, np.random.default_rng(0))) == 3

    def test_empty_fetch(self):
        with pytest.raises(ValueError):
            RolloutBuffer(4).fetch(1, np.random.default_rng(0))

    def test_ring_overwrites_oldest(self):
        buffer = RolloutBuffer(3)
        buffer.extend(_transition(i, "stop") for i in range(5))
        assert len(buffer) == 3
        batch = buffer.fetch(3, np.random.default_rng(0))
        assert sorted(batch.states[:, 0].tolist()) == [2.0, 3.0, 4.0]
        assert batch.mode_index.tolist() == [1, 1, 1]

    def test_capacity_positive(self):
        with pytest.raises(ValueError):
            RolloutBuffer(0)


class TestLosses:
    def test_value_loss_worked_example(self):
        result = _result([[4.0]], [[0.0]], [True])
        j_v = value_loss(result, lambda s: torch.ones(s.shape[0], 1))
        assert float(j_v) == pytest.approx(9.0)

    def test_penalty_weighting(self):
        losses = policy_loss(_result([[4.0]], [[0.25]], [True]), rho_penalty=15.0)
        assert float(losses.j_safe) == pytest.approx(0.25)
        assert float(losses.j_pi - losses.j_track) == pytest.approx(3.75)

    def test_decomposition(self):
        result = _result([[1.0, 2.0], [3.0, 0.5]], [[0.0, 0.1], [0.2, 0.0]], [True, True])
        losses = policy_loss(result, rho_penalty=15.0)
        assert float(losses.j_track) == pytest.approx(3.25)
        assert float(losses.j_safe) == pytest.approx(0.15)
        assert float(losses.j_pi) == pytest.approx(3.25 + 15.0 * 0.15)

    def test_invalid_rows_excluded(self):
        result = _result([[1.0, 1.0], [float("nan"), 5.0]], [[0.0, 0.0], [0.0, 0.0]], [True, False])
        assert float(policy_loss(result, 15.0).j_track) == pytest.approx(2.0)
        assert result.n_discarded == 1

    def test_all_rows_invalid(self):
        result = _result([[1.0]], [[0.0]], [False])
        assert torch.isnan(policy_loss(result, 15.0).j_pi)

    @pytest.mark.parametrize("rho", [0.0, -1.0])
    def test_rho_positive(self, rho):
        with pytest.raises(ValueError):
            policy_loss(_result([[1.0]], [[0.0]], [True]), rho)


class TestRollout:
    def test_horizon_positive(self, start_batch, left_paths, small_nets):
        with pytest.raises(ValueError):
            model_rollout(start_batch, PathTensors.from_paths(left_paths), small_nets["policy"], None, 0)

    def test_shapes(self, start_batch, left_paths, small_nets):
        result = model_rollout(start_batch, PathTensors.from_paths(left_paths), small_nets["policy"],
                               small_nets["adversary"], 4,
                               policy_generator=torch.Generator().manual_seed(0),
                               adversary_generator=torch.Generator().manual_seed(1))
        assert result.utilities.shape == (3, 4)
        assert result.penalties.shape == (3, 4)
        assert result.egos.shape == (3, 5, 8)
        assert result.noises.shape == (3, 4, N_SLOTS, 4)
        assert result.valid.all()

    def test_empty_slots_receive_no_noise(self, start_batch, left_paths, small_nets):
        result = model_rollout(start_batch, PathTensors.from_paths(left_paths), small_nets["policy"],
                               small_nets["adversary"], 3,
                               policy_generator=torch.Generator().manual_seed(0),
                               adversary_generator=torch.Generator().manual_seed(1))
        assert not start_batch.occupancy.any()
        assert torch.count_nonzero(result.noises) == 0
        assert torch.count_nonzero(result.penalties) == 0

    def test_noise_only_on_occupied_slots(self, alongside_batch, left_paths, small_nets):
        result = model_rollout(alongside_batch, PathTensors.from_paths(left_paths), small_nets["policy"],
                               small_nets["adversary"], 3,
                               policy_generator=torch.Generator().manual_seed(0),
                               adversary_generator=torch.Generator().manual_seed(1))
        assert alongside_batch.occupancy[:, 0].all()
        assert not alongside_batch.occupancy[:, 1:].any()
        assert torch.count_nonzero(result.noises[:, :, 0]) > 0
        assert torch.count_nonzero(result.noises[:, :, 1:]) == 0

    def test_overlapping_neighbour_is_penalised(self, alongside_batch, left_paths, small_nets):
        result = model_rollout(alongside_batch, PathTensors.from_paths(left_paths), small_nets["policy"],
                               None, 3, deterministic=True)
        assert (result.penalties > 0).all()
        assert float(policy_loss(result, 15.0).j_safe) > 0

    def test_empty_slots_stay_placeholder(self, alongside_batch, left_paths, small_nets):
        seen = []

        def recording_policy(s):
            seen.append(s.detach().clone())
            return small_nets["policy"](s)

        model_rollout(alongside_batch, PathTensors.from_paths(left_paths), recording_policy,
                      small_nets["adversary"], 25, deterministic=True)
        slots = _slots(torch.stack(seen))
        assert slots.shape == (25, 3, N_SLOTS, OTHER_DIM)
        empty = slots[:, :, 1:]
        assert torch.equal(empty, torch.as_tensor(PLACEHOLDER).expand_as(empty))
        assert not torch.allclose(slots[-1, :, 0], slots[0, :, 0])

    def test_policy_gradient_matches_finite_differences(self, start_batch, left_paths):
        policy = MLP(policy_spec((16, 16)), seed=7)
        paths = PathTensors.from_paths(left_paths)
        with Tape() as tape:
            tape.watch_module("policy", policy)
            j_pi = policy_loss(model_rollout(start_batch, paths, policy, None, 5, deterministic=True), 15.0).j_pi
        grad = backward(tape, j_pi)["policy.flat"].numpy()

        def fn(p: np.ndarray) -> float:
            flat = torch.as_tensor(p)

            def net(s):
                return mlp_forward(policy.spec, flat, s / policy.input_scale)

            return float(policy_loss(model_rollout(start_batch, paths, net, None, 5, deterministic=True), 15.0).j_pi)

        indices = list(range(0, policy.spec.n_params, 53)) + [policy.spec.n_params - 1]
        fd = central_difference(fn, policy.flat.detach().numpy().copy(), indices=indices)
        np.testing.assert_allclose(grad[indices], fd[indices], rtol=1e-4, atol=1e-8)

    def test_zero_adversary_equals_no_adversary(self, start_batch, left_paths, small_nets):
        paths = PathTensors.from_paths(left_paths)

        def run(adversary):
            return model_rollout(start_batch, paths, small_nets["policy"], adversary, 6,
                                 policy_generator=torch.Generator().manual_seed(11),
                                 adversary_generator=torch.Generator().manual_seed(12))

        plain, zero = run(None), run(ZeroAdversary())
        assert torch.equal(policy_loss(plain, 15.0).j_pi, policy_loss(zero, 15.0).j_pi)
        assert torch.equal(plain.egos, zero.egos)


class _PushingAdversary:
    """Moves every participant straight at the ego by the largest position noise."""

    def __call__(self, s: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        rel = _slots(s)[..., :2]
        cos_phi, sin_phi = torch.cos(s[:, 4:5]), torch.sin(s[:, 4:5])
        # participant → ego, world frame
        dx = -(cos_phi * rel[..., 0] - sin_phi * rel[..., 1])
        dy = -(sin_phi * rel[..., 0] + cos_phi * rel[..., 1])
        scale = float(NOISE_HIGH[0]) / torch.sqrt(dx ** 2 + dy ** 2).clamp_min(1e-9)
        zeros = torch.zeros_like(dx)
        mean = torch.stack([dx * scale, dy * scale, zeros, zeros], dim=-1).reshape(s.shape[0], 4 * N_SLOTS)
        return mean, torch.full_like(mean, float("-inf"))


class TestAdversary:
    HORIZON = 5

    def _j_pi(self, batch, paths, policy, adversary) -> torch.Tensor:
        rollout = model_rollout(batch, paths, policy, adversary, self.HORIZON,
                                deterministic=True, detach_policy_inputs=True)
        return policy_loss(rollout, 15.0).j_pi

    def test_gradient_matches_finite_differences(self, alongside_batch, left_paths, small_nets):
        paths = PathTensors.from_paths(left_paths)
        policy, adversary = small_nets["policy"], small_nets["adversary"]
        with Tape() as tape:
            tape.watch_module("adversary", adversary)
            j_pi = self._j_pi(alongside_batch, paths, policy, adversary)
        grad = backward(tape, j_pi)["adversary.flat"].numpy()
        assert np.abs(grad).max() > 0

        def fn(p: np.ndarray) -> float:
            flat = torch.as_tensor(p)

            def net(s):
                return mlp_forward(adversary.spec, flat, s / adversary.input_scale)

            return float(self._j_pi(alongside_batch, paths, policy, net))

        n = adversary.spec.n_params
        mean_bias = n - 2 * adversary.spec.output_dim
        indices = list(range(0, n, 97)) + [mean_bias + i for i in range(4)]
        fd = central_difference(fn, adversary.flat.detach().numpy().copy(), indices=indices)
        assert np.abs(fd[mean_bias: mean_bias + 4]).max() > 0
        np.testing.assert_allclose(grad[indices], fd[indices], rtol=1e-4, atol=1e-8)

    def test_ascent_step_does_not_lower_policy_loss(self, alongside_batch, left_paths, small_nets):
        paths = PathTensors.from_paths(left_paths)
        policy, adversary = small_nets["policy"], small_nets["adversary"]
        with Tape() as tape:
            tape.watch_module("adversary", adversary)
            before = self._j_pi(alongside_batch, paths, policy, adversary)
        grads = backward(tape, before)["adversary.flat"]
        adam_step(adversary.flat, grads, AdamState(adversary.flat, maximize=True), 1e-8)
        with torch.no_grad():
            after = self._j_pi(alongside_batch, paths, policy, adversary)
        assert float(after) >= float(before)

    def test_pushing_adversary_breaks_a_safe_gap(self, start_states, left_paths, small_nets):
        batch = start_states((0.0, 4.5))
        paths = PathTensors.from_paths(left_paths)

        def j_safe(adversary):
            rollout = model_rollout(batch, paths, small_nets["policy"], adversary, 10, deterministic=True)
            return float(policy_loss(rollout, 15.0).j_safe)

        assert j_safe(None) == 0.0
        assert j_safe(_PushingAdversary()) > 0.0


def _tiny(mode: str, **changes) -> TrainerConfig:
    base = dict(mode=mode, horizon=3, batch_size=4, total_iterations=12, hidden=(8,),
                buffer_capacity=200, initial_samples=20, sample_steps=4, episode_steps=20,
                log_interval=1000, tar_episodes=1, tar_steps=5)
    return TrainerConfig(**{**base, **changes})


class TestTrainer:
    def test_adversary_updates_every_interval(self, desk_empty, left_paths):
        trainer = APGTrainer(_tiny("apg", update_interval=5), desk_empty, left_paths)
        reports = [trainer.step() for _ in range(12)]
        assert trainer.adversary_updates == 2
        assert trainer.iteration == 12
        assert all(np.isfinite(r.j_pi) and np.isfinite(r.j_v) for r in reports)

    def test_dpg_has_no_adversary(self, desk_empty, left_paths):
        trainer = APGTrainer(_tiny("dpg"), desk_empty, left_paths)
        for _ in range(6):
            trainer.step()
        assert trainer.adversary is None
        assert trainer.adversary_updates == 0
        assert set(trainer.networks) == {"policy", "value"}

    def test_same_seed_same_parameters(self, desk_empty, left_paths):
        def train(seed):
            trainer = APGTrainer(_tiny("apg", total_iterations=3, seed=seed), desk_empty, left_paths)
            for _ in range(3):
                trainer.step()
            return trainer.policy.flat.detach().numpy().tobytes()

        assert train(1) == train(1)

    def test_same_seed_writes_identical_losses(self, desk_empty, left_paths, tmp_path):
        for name in ("a", "b"):
            trainer = APGTrainer(_tiny("apg", total_iterations=4, log_interval=2, seed=3, workers=0),
                                 desk_empty, left_paths)
            trainer.run(tmp_path / name, progress=False)
        a, b = tmp_path / "a", tmp_path / "b"
        assert (a / "losses.csv").read_bytes() == (b / "losses.csv").read_bytes()
        assert (a / "checkpoint_4.apgn").read_bytes() == (b / "checkpoint_4.apgn").read_bytes()

    def test_run_writes_checkpoint_and_losses(self, desk_empty, left_paths, tmp_path):
        trainer = APGTrainer(_tiny("apg", total_iterations=4, log_interval=2), desk_empty, left_paths)
        history = trainer.run(tmp_path, progress=False)
        assert [r.iteration for r in history] == [2, 4]
        assert (tmp_path / "checkpoint_4.apgn").exists()
        lines = (tmp_path / "losses.csv").read_text().splitlines()
        assert lines[0] == "iteration,J_track,J_safe,J_pi,J_v,TAR"
        assert len(lines) == 3


class _StubWorld:
    """World whose every step costs 0.1 with no constraint violation."""

    path_id = 0

    def __init__(self, state):
        self._state = state
        self.resets = 0

    def reset(self, *args, **kwargs):
        self.resets += 1
        return self

    def current_mode(self):
        return "pass"

    def state(self, path_id, mode, perceived=None):
        return self._state

    def step(self, action, path_id=None, mode=None):
        return type("Record", (), {"utility": 0.1, "penalty": 0.0})()


class TestTar:
    def test_constant_utility(self, desk_empty, left_paths, small_nets):
        world = IntersectionWorld(desk_empty, seed=0, paths=left_paths)
        world.reset(randomize=False)
        stub = _StubWorld(world.state(0, "pass"))
        assert tar(small_nets["policy"], stub, episodes=3, steps=120) == pytest.approx(12.0)
        assert stub.resets == 3

    @pytest.mark.parametrize("episodes, steps", [(0, 10), (1, 0)])
    def test_counts_positive(self, small_nets, episodes, steps):
        with pytest.raises(ValueError):
            tar(small_nets["policy"], _StubWorld(None), episodes, steps)


class TestTrainerConfig:
    @pytest.mark.parametrize("changes", [
        {"mode": "ppo"}, {"horizon": 0}, {"update_interval": 0},
        {"rho_penalty": 0.0}, {"seed": -1}, {"batch_size": 0}, {"workers": -2},
    ])
    def test_invalid(self, changes):
        with pytest.raises(ValueError):
            TrainerConfig(**changes)

    def test_unknown_key(self):
        with pytest.raises(ValueError):
            TrainerConfig.from_dict({"learning_rate": 1.0})

    def test_from_json(self):
        config = TrainerConfig.from_json(CONFIGS / "desk.json")
        assert config.hidden == (64, 64)
        assert config.horizon == 25
        assert config.rho_penalty == 15.0

    def test_missing_json(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            TrainerConfig.from_json(tmp_path / "none.json")


@pytest.mark.slow
def test_dpg_lowers_tracking_loss(desk_empty, left_paths):
    config = _tiny("dpg", total_iterations=300, batch_size=32, hidden=(32, 32), horizon=10,
                   policy_lr=1e-3, policy_lr_final=1e-4, initial_samples=400, sample_steps=16)
    trainer = APGTrainer(config, desk_empty, left_paths)
    reports = [trainer.step() for _ in range(config.total_iterations)]
    early = np.mean([r.j_track for r in reports[:20]])
    late = np.mean([r.j_track for r in reports[-20:]])
    assert late < early


@pytest.mark.slow
@pytest.mark.parametrize("mode", ["apg", "dpg"])
def test_policy_loss_halves_across_seeds(desk_trained, mode):
    ratios = []
    for trainer in desk_trained[mode]:
        history = trainer.history
        assert history[0].iteration == 1000 and history[-1].iteration == 20000
        assert all(np.isfinite([r.j_pi, r.j_v, r.tar]).all() for r in history)
        ratios.append(history[-1].j_pi / history[0].j_pi)
    assert np.median(ratios) <= 0.5


@pytest.mark.slow
@pytest.mark.parametrize("mode", ["apg", "dpg"])
def test_tar_improves_over_training(desk_trained, mode):
    first = np.median([t.history[0].tar for t in desk_trained[mode]])
    final = np.median([t.history[-1].tar for t in desk_trained[mode]])
    assert final < first
