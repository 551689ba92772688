"""
Unit tests for ConfigLoader and SchemaLoader
"""
import json
from pathlib import Path

import pytest
import yaml

from aggregate_decouple.core.config_loader import PRESETS, ConfigLoader, parse_config
from aggregate_decouple.core.enums import NormalizeMode, TaskKind
from aggregate_decouple.core.exceptions import ConfigError
from aggregate_decouple.core.schema_loader import SchemaLoader


def _write_yaml(path: Path, data) -> Path:
    with open(path, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f)
    return path


class TestPresets:
    """Dataset presets"""

    def test_synapse(self, temp_workspace):
        resolved = parse_config(_write_yaml(temp_workspace / "c.yaml", {"preset": "synapse"}))
        task = resolved.task
        assert task.patch_size == (64, 128, 128)
        assert task.base_lr == pytest.approx(3e-2)
        assert task.batch_size == 4
        assert task.feature_size == 32
        assert task.task == TaskKind.IBSSL
        assert task.diffusion_steps == 1000

    @pytest.mark.parametrize("preset,patch,lr,batch", [
        ("laseg", (112, 112, 80), 1e-2, 4),
        ("mmwhs", (128, 128, 128), 5e-3, 2),
        ("mnms", (32, 128, 128), 1e-2, 4),
    ])
    def test_benchmark_hyperparameters(self, temp_workspace, preset, patch, lr, batch):
        resolved = parse_config(_write_yaml(temp_workspace / "c.yaml", {"preset": preset}))
        assert resolved.task.patch_size == patch
        assert resolved.task.base_lr == pytest.approx(lr)
        assert resolved.task.batch_size == batch

    def test_dataset_preprocessing(self, temp_workspace):
        mnms = parse_config(_write_yaml(temp_workspace / "c.yaml", {"preset": "mnms"}))
        assert mnms.preprocess.stack_depth == 32
        laseg = parse_config(_write_yaml(temp_workspace / "d.yaml", {"preset": "laseg"}))
        assert laseg.preprocess.normalize == NormalizeMode.ZERO_MEAN_UNIT_VAR

    def test_desk(self, temp_workspace):
        resolved = parse_config(_write_yaml(temp_workspace / "c.yaml", {"preset": "desk"}))
        assert resolved.task.patch_size == (16, 16, 16)
        assert resolved.task.feature_size == 8
        assert resolved.task.diffusion_steps == 100
        assert resolved.task.max_iterations == 200
        assert resolved.synthetic.grid_size == (16, 16, 16)
        assert resolved.manifest is None

    def test_unknown_preset(self, temp_workspace):
        with pytest.raises(ConfigError):
            parse_config(_write_yaml(temp_workspace / "c.yaml", {"preset": "brats"}))

    def test_every_preset_resolves(self):
        for name in PRESETS:
            assert parse_config(None, [f"preset={name}"]).preset == name


class TestPrecedence:
    """Preset < file < --seed < --set"""

    def test_override_wins_over_preset(self, temp_workspace):
        path = _write_yaml(temp_workspace / "c.yaml", {"preset": "synapse"})
        assert parse_config(path, ["base_lr=1e-3"]).task.base_lr == pytest.approx(1e-3)

    def test_file_wins_over_preset(self, temp_workspace):
        path = _write_yaml(temp_workspace / "c.yaml", {"preset": "desk", "batch_size": 1})
        assert parse_config(path).task.batch_size == 1

    def test_override_wins_over_seed(self, temp_workspace):
        path = _write_yaml(temp_workspace / "c.yaml", {"preset": "desk", "seed": 3})
        assert parse_config(path, seed=5).task.seed == 5
        assert parse_config(path, ["seed=9"], seed=5).task.seed == 9

    def test_seed_reaches_synthetic_spec(self, temp_workspace):
        path = _write_yaml(temp_workspace / "c.yaml", {"preset": "desk"})
        assert parse_config(path, seed=11).synthetic.seed == 11


class TestCoercion:
    """String values from --set"""

    @pytest.mark.parametrize("text", ["16,16,16", "[16, 16, 16]", "16x16x16"])
    def test_triples(self, text):
        assert ConfigLoader().coerce("patch_size", text) == [16, 16, 16]

    def test_booleans(self):
        loader = ConfigLoader()
        assert loader.coerce("use_drs", "off") is False
        assert loader.coerce("use_drs", "True") is True

    def test_null_only_for_nullable_keys(self):
        loader = ConfigLoader()
        assert loader.coerce("stack_depth", "none") is None
        assert loader.coerce("normalize", "none") == "none"

    def test_integer_from_float_text(self):
        assert ConfigLoader().coerce("batch_size", "4.0") == 4

    def test_type_mismatch(self, temp_workspace):
        path = _write_yaml(temp_workspace / "c.yaml", {"preset": "desk"})
        with pytest.raises(ConfigError):
            parse_config(path, ["batch_size=four"])
        with pytest.raises(ConfigError):
            parse_config(_write_yaml(temp_workspace / "d.yaml",
                                     {"preset": "desk", "use_rs": [1, 2]}))

    def test_malformed_override(self):
        with pytest.raises(ConfigError):
            ConfigLoader.parse_override("batch_size")
        with pytest.raises(ConfigError):
            ConfigLoader.parse_override("=4")


class TestValidation:
    """Schema checks"""

    def test_unknown_key(self, temp_workspace):
        path = _write_yaml(temp_workspace / "c.yaml", {"preset": "desk", "learning_rate": 0.1})
        with pytest.raises(ConfigError) as exc:
            parse_config(path)
        assert "learning_rate" in str(exc.value)

    def test_missing_preset(self, temp_workspace):
        with pytest.raises(ConfigError):
            parse_config(_write_yaml(temp_workspace / "c.yaml", {"batch_size": 2}))

    def test_invalid_combination(self, temp_workspace):
        path = _write_yaml(temp_workspace / "c.yaml", {"preset": "desk"})
        with pytest.raises(ConfigError):
            parse_config(path, ["patch_size=16,16,24"])

    def test_missing_file(self, temp_workspace):
        with pytest.raises(ConfigError):
            parse_config(temp_workspace / "absent.yaml")

    def test_oversized_file(self, temp_workspace):
        path = temp_workspace / "big.yaml"
        path.write_text("preset: desk\n" + "# padding\n" * 120000, encoding="utf-8")
        with pytest.raises(ConfigError):
            SchemaLoader.load_yaml(path)

    def test_json_config(self, temp_workspace):
        path = temp_workspace / "c.json"
        path.write_text(json.dumps({"preset": "desk", "tau": 7}), encoding="utf-8")
        assert parse_config(path).task.tau == 7


class TestPaths:
    """Manifest and checkpoint paths"""

    def test_relative_manifest_resolves_against_config(self, temp_workspace):
        nested = temp_workspace / "configs"
        nested.mkdir()
        path = _write_yaml(nested / "c.yaml", {"preset": "desk", "manifest": "../data/manifest.txt"})
        resolved = parse_config(path)
        assert resolved.manifest == (temp_workspace / "data" / "manifest.txt").resolve()

    def test_null_checkpoint(self, temp_workspace):
        path = _write_yaml(temp_workspace / "c.yaml", {"preset": "desk", "checkpoint": None})
        assert parse_config(path).checkpoint is None


class TestResolvedFile:
    """config.resolved"""

    def test_sorted_and_complete(self, temp_workspace):
        path = _write_yaml(temp_workspace / "c.yaml", {"preset": "desk"})
        resolved = parse_config(path, ["tau=4"])
        out = resolved.write(temp_workspace / "run" / "config.resolved")
        with open(out, "r", encoding="utf-8") as f:
            data = yaml.safe_load(f)
        assert list(data) == sorted(data)
        assert data["tau"] == 4
        assert data["preset"] == "desk"
        assert "gumbel_temperature" in data and "synth_grid_size" in data
