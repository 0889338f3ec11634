"""Ego bicycle model and the stochastic participant model."""

from __future__ import annotations

import math

import numpy as np
import pytest
import torch

from intersection_rl.env.dynamics import (
    ACCEL_HIGH,
    Action,
    EgoParams,
    EgoState,
    NoiseVector,
    ParticipantState,
    ego_step,
    participant_step,
    step_ego,
    step_participant,
)
from intersection_rl.errors import DynamicsSingularityError
from intersection_rl.models.autodiff import central_difference

PARAMS = EgoParams()


class TestEgo:
    def test_straight_coasting(self):
        s = step_ego(EgoState(v_x=10.0), Action(), PARAMS)
        assert s.p_x == pytest.approx(1.0, abs=1e-12)
        assert s == EgoState(p_x=s.p_x, v_x=10.0)

    def test_heading_north(self):
        s = step_ego(EgoState(v_x=10.0, phi=math.pi / 2), Action(), PARAMS)
        assert s.p_y == pytest.approx(1.0, abs=1e-12)
        assert s.p_x == pytest.approx(0.0, abs=1e-12)

    def test_acceleration_rate_is_clamped(self):
        s = step_ego(EgoState(v_x=10.0), Action(0.0, 4.5), PARAMS)
        assert s.a == pytest.approx(0.45)
        s = step_ego(EgoState(v_x=10.0, a=1.4), Action(0.0, 4.5), PARAMS)
        assert s.a == ACCEL_HIGH

    def test_bounds_hold_at_the_limit(self):
        s = EgoState(v_x=5.0, delta=0.4, a=ACCEL_HIGH)
        for _ in range(5):
            s = step_ego(s, Action(), PARAMS)
            assert abs(s.delta) <= 0.4
            assert s.a <= ACCEL_HIGH

    def test_action_clamp(self):
        assert Action(1.0, -9.0).clamped() == Action(0.4, -4.5)

    def test_singular_denominator(self):
        with pytest.raises(DynamicsSingularityError):
            step_ego(EgoState(v_x=0.0), Action(), EgoParams(k_f=0.0, k_r=0.0))

    def test_jacobian_matches_finite_differences(self):
        z0 = np.array([1.0, -2.0, 8.0, 0.1, 0.3, 0.05, 0.05, 0.2, 0.1, 0.5])

        def f(z):
            z = torch.as_tensor(z, dtype=torch.float64)
            return ego_step(z[:8], z[8:], PARAMS)

        jac = torch.autograd.functional.jacobian(f, torch.as_tensor(z0)).numpy()
        for row in range(8):
            fd = central_difference(lambda z: float(f(z)[row]), z0)
            np.testing.assert_allclose(jac[row], fd, rtol=1e-5, atol=1e-7)


class TestParticipant:
    def test_straight_without_noise(self):
        p = ParticipantState(0.0, 0.0, 5.0, 0.0, 4.8, 2.0)
        q = step_participant(p, NoiseVector(), 0.1)
        assert q.p_x == pytest.approx(0.5)
        assert q.phi == 0.0
        assert (q.v, q.length, q.width) == (5.0, 4.8, 2.0)

    def test_turning(self):
        p = ParticipantState(0.0, 0.0, 5.0, 0.0, 4.8, 2.0, turn_radius=10.0)
        assert step_participant(p, NoiseVector(), 0.1).phi == pytest.approx(0.05)

    def test_noise_at_bounds(self):
        p = ParticipantState(1.0, 2.0, 5.0, 0.0, 4.8, 2.0)
        q = step_participant(p, NoiseVector(0.8, -0.8, 0.225, 0.025), 0.1)
        assert q.p_x == pytest.approx(1.0 + 0.5 + 0.8)
        assert q.p_y == pytest.approx(2.0 - 0.8)
        assert q.v == pytest.approx(5.225)
        assert q.phi == pytest.approx(0.025)

    def test_speed_floored_at_zero(self):
        p = ParticipantState(0.0, 0.0, 0.05, 0.0, 0.6, 0.6, kind="pedestrian")
        assert step_participant(p, NoiseVector(xi_v=-0.075), 0.1).v == 0.0

    def test_two_half_steps_equal_one_step(self):
        p = ParticipantState(3.0, -1.0, 7.0, 0.4, 4.8, 2.0)
        half = step_participant(step_participant(p, NoiseVector(), 0.05), NoiseVector(), 0.05)
        full = step_participant(p, NoiseVector(), 0.1)
        assert half.p_x == pytest.approx(full.p_x, abs=1e-12)
        assert half.p_y == pytest.approx(full.p_y, abs=1e-12)

    def test_zero_radius_rejected(self):
        p = ParticipantState(0.0, 0.0, 5.0, 0.0, 4.8, 2.0, turn_radius=0.0)
        with pytest.raises(ValueError):
            step_participant(p, NoiseVector(), 0.1)

    @pytest.mark.parametrize("kwargs", [{"kind": "tram"}, {"length": 0.0}, {"v": -1.0}])
    def test_invalid_participant(self, kwargs):
        base = dict(p_x=0.0, p_y=0.0, v=1.0, phi=0.0, length=1.0, width=1.0)
        with pytest.raises(ValueError):
            ParticipantState(**{**base, **kwargs})

    def test_jacobian_matches_finite_differences(self):
        x0 = np.array([1.0, 2.0, 6.0, 0.3, 0.1, -0.2, 0.05, 0.01])

        def f(z):
            z = torch.as_tensor(z, dtype=torch.float64)
            return participant_step(z[:4], z[4:], torch.tensor(0.05), 0.1)

        jac = torch.autograd.functional.jacobian(f, torch.as_tensor(x0)).numpy()
        for row in range(4):
            fd = central_difference(lambda z: float(f(z)[row]), x0)
            np.testing.assert_allclose(jac[row], fd, rtol=1e-6, atol=1e-9)
