"""
Integration tests: train, reload from disk, evaluate; reproducible logs.
"""
from dataclasses import replace

import numpy as np
import torch

from aggregate_decouple.core.checkpoint_manager import CheckpointManager
from aggregate_decouple.core.data import load_split, write_split
from aggregate_decouple.core.evaluation import evaluate_case, predict_label
from aggregate_decouple.core.network import DiffVNet
from aggregate_decouple.core.trainer import fit
from aggregate_decouple.core.training_log import read_training_log


class TestCheckpointRestore:
    """Checkpoints written by fit reload into an identical predictor"""

    def test_best_checkpoint_predicts_identically(self, tiny_config, tiny_split, temp_workspace):
        result = fit(tiny_config, tiny_split, temp_workspace / "run")
        model = DiffVNet(tiny_config.num_classes, tiny_config.feature_size)
        checkpoint = CheckpointManager.restore(model, temp_workspace / "run" / "checkpoints" / "best")
        assert checkpoint.iteration == result.best_iteration

        volume, label = tiny_split.test[0]
        restored = predict_label(model, volume, tiny_config.patch_size)
        original = predict_label(result.model, volume, tiny_config.patch_size)
        np.testing.assert_array_equal(restored.data, original.data)
        report = evaluate_case(restored, label, volume.spacing, case="case_000")
        assert 0.0 <= report.mean("dice") <= 1.0

    def test_difficulty_state_is_stored(self, tiny_config, tiny_split, temp_workspace):
        fit(tiny_config, tiny_split, temp_workspace)
        checkpoint = CheckpointManager(temp_workspace / "checkpoints").get_checkpoint("last")
        history = checkpoint.metadata["difficulty"]["history"]
        assert len(history) == tiny_config.max_iterations
        assert checkpoint.config["num_classes"] == 2


class TestReproducibility:
    """Same seed, same bytes"""

    def test_logs_are_byte_identical_over_fifty_iterations(self, tiny_config, tiny_split,
                                                           temp_workspace):
        config = replace(tiny_config, max_iterations=50, tau=5, validation_interval=25)
        for name in ("a", "b"):
            fit(config, tiny_split, temp_workspace / name)
        for log in ("training_log.csv", "drs_weights.csv"):
            first = (temp_workspace / "a" / log).read_bytes()
            second = (temp_workspace / "b" / log).read_bytes()
            assert first == second, log

        rows = read_training_log(temp_workspace / "a" / "training_log.csv")
        assert len(rows) == 50
        ramps = [float(r["ramp"]) for r in rows]
        assert ramps[-1] > ramps[0]
        assert len({r["lr"] for r in rows}) == 50

    def test_written_split_trains_like_memory_split(self, tiny_config, tiny_split, temp_workspace):
        manifest = write_split(tiny_split, temp_workspace / "data")
        loaded = load_split(manifest)
        a = fit(tiny_config, tiny_split)
        b = fit(tiny_config, loaded)
        assert a.log.rows == b.log.rows
        for (name, p), q in zip(a.model.named_parameters(), b.model.parameters()):
            assert torch.equal(p, q), name
