"""
Unit tests for error handling and edge cases.
"""
import numpy as np
import pytest

from aggregate_decouple.cli.base import error_module
from aggregate_decouple.core.checkpoint_manager import CheckpointManager
from aggregate_decouple.core.data import num_workers, preprocess
from aggregate_decouple.core.enums import NormalizeMode
from aggregate_decouple.core.exceptions import (
    CheckpointError, ConfigError, DegenerateInputError, InvalidLabelError, TrainingError,
    ValidationError
)
from aggregate_decouple.core.models import LabelMap, PreprocessSpec, Volume


class TestErrorMessages:
    """Rendered messages stay on one line"""

    def test_validation_error_format(self):
        error = ValidationError("Bad value", field="tau", value=0, context={"min": 1})
        assert str(error) == "Bad value | Field: tau | Value: 0 | Context: min=1"

    def test_training_error_format(self):
        error = TrainingError("Out of memory", iteration=12, module="trainer")
        assert str(error) == "Out of memory | Iteration: 12 | Module: trainer"
        assert "\n" not in str(error)

    def test_hierarchy(self):
        for cls in (InvalidLabelError, DegenerateInputError, ConfigError, CheckpointError):
            assert issubclass(cls, ValidationError)
        assert not issubclass(TrainingError, ValidationError)


class TestErrorModule:
    """Which module the CLI blames"""

    def test_raising_module_is_named(self, temp_workspace):
        with pytest.raises(CheckpointError) as exc:
            CheckpointManager.read_metadata(temp_workspace / "missing")
        assert error_module(exc.value, "cli") == "checkpoint_manager"

    def test_training_error_names_its_module(self):
        assert error_module(TrainingError("x", module="drs"), "cli") == "drs"

    def test_default_for_foreign_errors(self):
        assert error_module(KeyError("x"), "cli") == "cli"


class TestEdgeCases:
    """Degenerate inputs are rejected instead of propagating NaN"""

    def test_constant_volume_cannot_be_standardized(self):
        volume = Volume(np.full((4, 4, 4), 3.0, dtype=np.float32))
        with pytest.raises(DegenerateInputError):
            preprocess(volume, PreprocessSpec(normalize=NormalizeMode.ZERO_MEAN_UNIT_VAR))

    def test_constant_volume_unit_range_is_zero(self):
        volume = Volume(np.full((4, 4, 4), 3.0, dtype=np.float32))
        out = preprocess(volume, PreprocessSpec(normalize=NormalizeMode.UNIT_RANGE))
        assert np.all(out.data == 0.0)

    def test_label_out_of_range(self):
        with pytest.raises(InvalidLabelError):
            LabelMap(np.full((2, 2, 2), 2, dtype=np.int64), num_classes=2)

    def test_nan_volume(self):
        data = np.zeros((2, 2, 2), dtype=np.float32)
        data[0, 0, 0] = np.nan
        with pytest.raises(ValidationError):
            Volume(data)

    @pytest.mark.parametrize("raw", ["zero", "0"])
    def test_bad_worker_count(self, monkeypatch, raw):
        monkeypatch.setenv("AD_NUM_WORKERS", raw)
        with pytest.raises(ConfigError):
            num_workers()
