"""
Unit tests for the training step, the LR schedule and the fit loop.
"""
from dataclasses import replace

import numpy as np
import pytest
import torch

from aggregate_decouple.core import trainer
from aggregate_decouple.core.checkpoint_manager import CheckpointManager
from aggregate_decouple.core.exceptions import TrainingError, ValidationError
from aggregate_decouple.core.models import RSConfig, TaskConfig
from aggregate_decouple.core.trainer import (
    augment_batch, batch_class_dice, evaluation_pairs, fit, init_state, make_optimizer,
    poly_lr, rs_config_for, sample_batches, train_step
)
from aggregate_decouple.core.training_log import read_training_log


class TestPolyLR:
    """poly_lr"""

    def test_endpoints(self):
        assert poly_lr(0, 100, 1e-2) == 1e-2
        assert poly_lr(100, 100, 1e-2) == 0.0

    def test_halfway(self):
        assert poly_lr(50, 100, 1e-2) == pytest.approx(5.359e-3, abs=1e-6)

    def test_out_of_range(self):
        with pytest.raises(ValidationError):
            poly_lr(101, 100, 1e-2)


class TestOptimizer:
    """SGD with Nesterov momentum"""

    def test_matches_hand_recurrence(self):
        config = TaskConfig(base_lr=0.1, momentum=0.9, weight_decay=1e-4)
        p = torch.nn.Parameter(torch.tensor([1.0], dtype=torch.float64))
        optimizer = make_optimizer([p], config)

        value, buf = 1.0, None
        for _ in range(3):
            optimizer.zero_grad()
            (0.5 * p ** 2).sum().backward()
            optimizer.step()

            grad = value + 1e-4 * value
            buf = grad if buf is None else 0.9 * buf + grad
            value -= 0.1 * (grad + 0.9 * buf)
            assert p.item() == pytest.approx(value, abs=1e-12)


class TestBatches:
    """Sampling and augmentation of batches"""

    def test_augmented_shapes(self, tiny_config, tiny_split):
        state = init_state(tiny_config)
        labeled, unlabeled = sample_batches(state, tiny_split)
        x, y = augment_batch(state, labeled)
        assert x.shape == (1, 1, 16, 16, 16)
        assert y.shape == (1, 16, 16, 16)
        xu, yu = augment_batch(state, [(v, None) for v in unlabeled])
        assert xu.shape == (1, 1, 16, 16, 16)
        assert yu is None

    def test_worker_count_does_not_change_batches(self, tiny_config, tiny_split, monkeypatch):
        items = list(tiny_split.labeled) * 3
        x1, y1 = augment_batch(init_state(tiny_config), items)
        monkeypatch.setenv("AD_NUM_WORKERS", "3")
        x3, y3 = augment_batch(init_state(tiny_config), items)
        assert torch.equal(x1, x3)
        assert torch.equal(y1, y3)

    def test_batch_class_dice(self):
        labels = torch.tensor([[[[0, 1, 1, 0]]]])
        logits = torch.zeros((1, 3, 1, 1, 4))
        logits[0, 1, 0, 0, 1] = 5.0
        dice = batch_class_dice(logits, labels, 3)
        np.testing.assert_allclose(dice, [0.8, 2.0 / 3.0, 1.0])

    def test_evaluation_pairs(self, tiny_split):
        assert evaluation_pairs(tiny_split) == list(tiny_split.test)
        assert evaluation_pairs(tiny_split, "domain9") == list(tiny_split.labeled)


class TestTrainStep:
    """train_step"""

    def test_identical_seeds_identical_reports(self, tiny_config, tiny_split):
        reports = []
        for _ in range(2):
            state = init_state(tiny_config)
            labeled, unlabeled = sample_batches(state, tiny_split)
            reports.append([train_step(state, labeled, unlabeled) for _ in range(2)])
        assert reports[0] == reports[1]

    def test_report_is_consistent(self, tiny_config, tiny_split):
        state = init_state(tiny_config)
        labeled, unlabeled = sample_batches(state, tiny_split)
        report = train_step(state, labeled, unlabeled)
        assert state.iteration == 1
        assert report.total == pytest.approx(report.l_deno + report.l_diff
                                             + report.ramp_weight * report.l_u, abs=1e-6)
        assert report.l_u > 0

    def test_empty_unlabeled_batch_skips_flow(self, tiny_config, tiny_split):
        state = init_state(tiny_config)
        labeled, _ = sample_batches(state, tiny_split)
        with pytest.warns(UserWarning):
            report = train_step(state, labeled, [])
        assert report.l_u == 0.0

    def test_empty_labeled_batch(self, tiny_config, tiny_split):
        with pytest.raises(ValidationError):
            train_step(init_state(tiny_config), [], list(tiny_split.unlabeled))

    def test_stops_at_max_iterations(self, tiny_config, tiny_split):
        state = init_state(replace(tiny_config, max_iterations=1))
        labeled, unlabeled = sample_batches(state, tiny_split)
        train_step(state, labeled, unlabeled)
        with pytest.raises(TrainingError):
            train_step(state, labeled, unlabeled)

    def test_rs_switch(self, tiny_config):
        assert rs_config_for(replace(tiny_config, use_rs=False)).reparameterize is False
        assert rs_config_for(tiny_config, RSConfig(blur_sigma=2.0)).blur_sigma == 2.0

    def test_drs_off_keeps_uniform_weights(self, tiny_config, tiny_split):
        state = init_state(replace(tiny_config, use_drs=False))
        labeled, unlabeled = sample_batches(state, tiny_split)
        for _ in range(3):
            train_step(state, labeled, unlabeled)
        np.testing.assert_array_equal(state.last_weights, np.ones(2))
        assert len(state.difficulty) == 0


class TestFit:
    """fit"""

    def test_smoke_run(self, tiny_config, tiny_split, temp_workspace):
        result = fit(tiny_config, tiny_split, temp_workspace)
        assert result.log.all_finite()
        rows = read_training_log(temp_workspace / "training_log.csv")
        assert [int(r["iteration"]) for r in rows] == [1, 2, 3, 4]
        assert (temp_workspace / "checkpoints" / "best" / "checkpoint.yaml").is_file()
        assert (temp_workspace / "checkpoints" / "last" / "checkpoint.yaml").is_file()
        assert (temp_workspace / "drs_weights.csv").is_file()
        assert 0.0 <= result.best_score <= 1.0
        assert result.best_iteration == 4

    def test_returns_best_scoring_weights(self, tiny_config, tiny_split, temp_workspace,
                                         monkeypatch):
        scores = iter([0.2, 0.9, 0.5, 0.4])
        seen = []

        def fake_validation(model, pairs, patch_size, overlap=0.5):
            seen.append({k: v.detach().clone() for k, v in model.state_dict().items()})
            return next(scores)

        monkeypatch.setattr(trainer, "mean_foreground_dice", fake_validation)
        config = replace(tiny_config, validation_interval=1)
        result = fit(config, tiny_split, temp_workspace)

        assert result.best_iteration == 2
        assert result.best_score == 0.9
        returned = result.model.state_dict()
        for name, value in seen[1].items():
            assert torch.equal(returned[name], value), name
        assert any(not torch.equal(returned[n], v) for n, v in seen[-1].items())

        last = CheckpointManager(temp_workspace / "checkpoints").get_checkpoint("last")
        best = CheckpointManager(temp_workspace / "checkpoints").get_checkpoint("best")
        assert last.iteration == 4
        assert best.iteration == 2

    def test_class_count_mismatch(self, tiny_config, tiny_split):
        with pytest.raises(ValidationError):
            fit(replace(tiny_config, num_classes=3), tiny_split)
