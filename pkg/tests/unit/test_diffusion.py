"""
Unit tests for the noise schedule, forward noising and the DDIM sampler.
"""
import math

import numpy as np
import pytest
import torch

from aggregate_decouple.core.diffusion import (
    ddim_generate, ddim_step, ddim_update, diffuse, forward_diffuse, make_schedule,
    timestep_embed, timestep_grid
)
from aggregate_decouple.core.exceptions import ShapeMismatchError, ValidationError
from aggregate_decouple.core.models import LabelMap, Volume
from aggregate_decouple.core.tensors import one_hot_encode, one_hot_tensor


class TestSchedule:
    """make_schedule."""

    def test_single_step(self):
        sched = make_schedule(1)
        assert sched.alpha_bar_at(1) == pytest.approx(0.9999, abs=1e-12)
        assert sched.alpha_bar_at(0) == 1.0

    @pytest.mark.parametrize("T", [2, 100, 1000])
    def test_strictly_decreasing(self, T):
        sched = make_schedule(T)
        assert np.all(np.diff(sched.alpha_bar) < 0)
        assert sched.alpha_bar[0] < 1.0
        assert sched.alpha_bar[-1] > 0.0

    def test_non_positive_T(self):
        with pytest.raises(ValidationError):
            make_schedule(0)

    def test_timestep_out_of_range(self):
        with pytest.raises(ValidationError):
            make_schedule(10).alpha_bar_at(11)


class TestForwardDiffuse:
    """forward_diffuse."""

    def test_limits(self, rng):
        y0 = rng.random((2, 3, 3, 3))
        eps = rng.standard_normal((2, 3, 3, 3))
        np.testing.assert_allclose(diffuse(y0, 1.0, eps), y0)
        np.testing.assert_allclose(diffuse(y0, 0.0, eps), eps)

    def test_quarter_alpha_bar(self):
        out = diffuse(np.ones((1, 1, 1, 1)), 0.25, np.full((1, 1, 1, 1), 0.5))
        assert out[0, 0, 0, 0] == pytest.approx(0.9330127, abs=1e-7)

    def test_formula_on_one_hot(self, rng):
        sched = make_schedule(50)
        y0 = one_hot_encode(LabelMap(rng.integers(0, 3, (4, 4, 4)), num_classes=3))
        eps = rng.standard_normal((3, 4, 4, 4))
        ab = sched.alpha_bar_at(20)
        expected = math.sqrt(ab) * y0.data + math.sqrt(1 - ab) * eps
        np.testing.assert_allclose(forward_diffuse(y0, 20, eps, sched), expected, atol=1e-12)

    def test_t_out_of_range(self, rng):
        sched = make_schedule(10)
        y0 = np.zeros((2, 2, 2, 2))
        with pytest.raises(ValidationError):
            forward_diffuse(y0, 0, y0, sched)
        with pytest.raises(ValidationError):
            forward_diffuse(y0, 11, y0, sched)

    def test_noise_shape(self):
        with pytest.raises(ShapeMismatchError):
            forward_diffuse(np.zeros((2, 2, 2, 2)), 1, np.zeros((2, 2, 2, 3)), make_schedule(10))

    def test_moments(self):
        sched = make_schedule(100)
        t = 60
        ab = sched.alpha_bar_at(t)
        rng = np.random.default_rng(0)
        y0 = np.ones((10000,))
        samples = forward_diffuse(y0, t, rng.standard_normal(10000), sched)
        se = math.sqrt(1 - ab) / math.sqrt(10000)
        assert abs(samples.mean() - math.sqrt(ab)) < 3 * se
        assert samples.var() == pytest.approx(1 - ab, rel=0.05)


class TestDDIMStep:
    """ddim_step."""

    def test_oracle_prediction(self, rng):
        sched = make_schedule(100)
        y0 = rng.random((2, 3, 3, 3))
        eps = rng.standard_normal(y0.shape)
        y_t = forward_diffuse(y0, 80, eps, sched)
        ab_prev = sched.alpha_bar_at(40)
        expected = math.sqrt(ab_prev) * y0 + math.sqrt(1 - ab_prev) * eps
        np.testing.assert_allclose(ddim_step(y_t, y0, 80, 40, sched), expected, atol=1e-6)

    def test_t_prev_zero_returns_prediction(self, rng):
        pred = rng.random((2, 2, 2, 2))
        out = ddim_step(rng.random((2, 2, 2, 2)), pred, 5, 0, make_schedule(10))
        np.testing.assert_array_equal(out, pred)

    def test_fixed_point(self, rng):
        y0 = rng.random((2, 2, 2, 2))
        y_t = diffuse(y0, 0.3, rng.standard_normal(y0.shape))
        np.testing.assert_allclose(ddim_update(y_t, y0, 0.3, 0.3), y_t, atol=1e-12)

    def test_order(self):
        sched = make_schedule(10)
        with pytest.raises(ValidationError):
            ddim_step(np.zeros(1), np.zeros(1), 4, 4, sched)

    def test_full_grid_recovers_label(self, rng):
        sched = make_schedule(1000)
        y0 = one_hot_encode(LabelMap(rng.integers(0, 2, (4, 4, 4)), num_classes=2)).data
        y = rng.standard_normal(y0.shape)
        grid = timestep_grid(1000, 10)
        for i, t in enumerate(grid):
            t_prev = int(grid[i + 1]) if i + 1 < len(grid) else 0
            y = ddim_step(y, y0, int(t), t_prev, sched)
        assert np.max(np.abs(y - y0)) <= 1e-5


class TestTimestepGrid:
    """timestep_grid."""

    def test_descending_and_bounded(self):
        grid = timestep_grid(1000, 10)
        assert len(grid) == 10
        assert grid[0] == 1000 and grid[-1] == 1
        assert np.all(np.diff(grid) < 0)

    def test_more_steps_than_T(self):
        np.testing.assert_array_equal(timestep_grid(3, 10), [3, 2, 1])

    def test_zero_steps(self):
        with pytest.raises(ValidationError):
            timestep_grid(10, 0)


class TestDDIMGenerate:
    """ddim_generate with hand-built denoisers."""

    def _label(self):
        labels = torch.zeros((1, 4, 4, 4), dtype=torch.long)
        labels[0, 1:3, 1:3, :] = 1
        return labels

    def test_oracle_denoiser(self):
        labels = self._label()
        target = one_hot_tensor(labels, 2).double()

        def oracle(x, y_t, t):
            return target

        x = torch.zeros((1, 1, 4, 4, 4), dtype=torch.float64)
        gen = torch.Generator().manual_seed(0)
        probs = ddim_generate(oracle, x, 5, make_schedule(100), generator=gen, num_classes=2)
        assert torch.equal(probs.argmax(dim=1), labels)
        torch.testing.assert_close(probs.sum(dim=1), torch.ones_like(probs[:, 0]))

    def test_single_step_is_one_jump(self):
        seen = []

        def denoiser(x, y_t, t):
            seen.append(t)
            return 2.0 * y_t

        x = torch.zeros((1, 1, 2, 2, 2), dtype=torch.float64)
        probs = ddim_generate(denoiser, x, 1, make_schedule(50),
                              generator=torch.Generator().manual_seed(3), num_classes=2)
        noise = torch.randn((1, 2, 2, 2, 2), generator=torch.Generator().manual_seed(3),
                            dtype=torch.float64)
        assert seen == [50]
        torch.testing.assert_close(probs, torch.softmax(2.0 * noise, dim=1))

    def test_seeded_runs_match(self):
        def denoiser(x, y_t, t):
            return y_t * 0.5 + x

        x = torch.rand((2, 1, 4, 4, 4), dtype=torch.float64)
        runs = [ddim_generate(denoiser, x, 4, make_schedule(100),
                              generator=torch.Generator().manual_seed(7), num_classes=3)
                for _ in range(2)]
        assert torch.equal(runs[0], runs[1])

    def test_accepts_volume(self):
        def denoiser(x, y_t, t):
            return y_t

        probs = ddim_generate(denoiser, Volume(np.zeros((4, 4, 4))), 2, make_schedule(10),
                              generator=torch.Generator().manual_seed(0), num_classes=2)
        assert probs.shape == (1, 2, 4, 4, 4)

    def test_shape_mismatch(self):
        def denoiser(x, y_t, t):
            return y_t[:, :1]

        with pytest.raises(ShapeMismatchError):
            ddim_generate(denoiser, torch.zeros((1, 1, 2, 2, 2)), 2, make_schedule(10),
                          num_classes=2)


class TestTimestepEmbed:
    """timestep_embed."""

    def test_zero_timestep(self):
        emb = timestep_embed(0, 16)
        np.testing.assert_array_equal(emb.values[:8], 0.0)
        np.testing.assert_array_equal(emb.values[8:], 1.0)

    def test_injective_over_schedule(self):
        table = np.stack([timestep_embed(t, 16).values for t in range(1001)])
        assert np.all(np.isfinite(table))
        assert len(np.unique(np.round(table, 10), axis=0)) == 1001

    def test_deterministic(self):
        np.testing.assert_array_equal(timestep_embed(123, 32).values,
                                      timestep_embed(123, 32).values)

    @pytest.mark.parametrize("dim", [0, 7])
    def test_odd_or_empty_width(self, dim):
        with pytest.raises(ValidationError):
            timestep_embed(5, dim)
