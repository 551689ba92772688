"""
Schema loader for run-configuration files.
Following Single Responsibility Principle - reads mappings and checks them against a schema only.
"""

import json
from pathlib import Path
from typing import Dict, Any, List, cast

import yaml
from jsonschema import Draft7Validator

from .enums import NormalizeMode, TaskKind
from .exceptions import ConfigError


def _triple(item_type: str, nullable: bool = False) -> Dict[str, Any]:
    schema: Dict[str, Any] = {"type": "array", "items": {"type": item_type},
                              "minItems": 3, "maxItems": 3}
    if nullable:
        return {"anyOf": [schema, {"type": "null"}]}
    return schema


def _index_list(nullable: bool = False) -> Dict[str, Any]:
    schema: Dict[str, Any] = {"type": "array", "items": {"type": "integer", "minimum": 0}}
    if nullable:
        return {"anyOf": [schema, {"type": "null"}]}
    return schema


def _nullable(type_name: str, **extra: Any) -> Dict[str, Any]:
    return {"anyOf": [{"type": type_name, **extra}, {"type": "null"}]}


RUN_CONFIG_SCHEMA: Dict[str, Any] = {
    "$schema": "http://json-schema.org/draft-07/schema#",
    "title": "aggregate-decouple run configuration",
    "type": "object",
    "additionalProperties": False,
    "required": ["preset"],
    "properties": {
        "preset": {"type": "string"},
        # training
        "task": {"enum": [t.value for t in TaskKind]},
        "patch_size": _triple("integer"),
        "base_lr": {"type": "number", "exclusiveMinimum": 0},
        "batch_size": {"type": "integer", "minimum": 1},
        "feature_size": {"type": "integer", "minimum": 1},
        "num_classes": {"type": "integer", "minimum": 2},
        "diffusion_steps": {"type": "integer", "minimum": 1},
        "n_aug": {"type": "integer", "minimum": 1, "maximum": 7},
        "tau": {"type": "integer", "minimum": 1},
        "alpha_diff": {"type": "number", "exclusiveMinimum": 0},
        "mu_unsup": {"type": "number", "exclusiveMinimum": 0},
        "w_ema": {"type": "number", "exclusiveMinimum": 0, "exclusiveMaximum": 1},
        "max_iterations": {"type": "integer", "minimum": 1},
        "seed": {"type": "integer", "minimum": 0},
        "ddim_steps": {"type": "integer", "minimum": 1},
        "ramp_fraction": {"type": "number", "minimum": 0, "maximum": 1},
        "momentum": {"type": "number", "minimum": 0, "maximum": 1},
        "weight_decay": {"type": "number", "minimum": 0},
        "validation_interval": {"type": "integer", "minimum": 1},
        "log_interval": {"type": "integer", "minimum": 1},
        "overlap": {"type": "number", "minimum": 0, "exclusiveMaximum": 1},
        "torch_threads": {"type": "integer", "minimum": 1},
        "use_svda": {"type": "boolean"},
        "use_drs": {"type": "boolean"},
        "use_rs": {"type": "boolean"},
        "couple_predictor": {"type": "boolean"},
        # preprocessing
        "clip_lower_pct": {"type": "number", "minimum": 0, "maximum": 100},
        "clip_upper_pct": {"type": "number", "minimum": 0, "maximum": 100},
        "normalize": {"enum": [m.value for m in NormalizeMode]},
        "crop_to_foreground": {"type": "boolean"},
        "stack_depth": _nullable("integer", minimum=1),
        # reparameterize & smooth
        "gumbel_temperature": {"type": "number", "exclusiveMinimum": 0},
        "blur_sigma": {"type": "number", "exclusiveMinimum": 0},
        "blur_kernel_radius": {"type": "integer", "minimum": 1},
        "reparameterize": {"type": "boolean"},
        # synthetic data
        "synth_num_domains": {"type": "integer", "minimum": 1},
        "synth_volumes_per_domain": {"type": "integer", "minimum": 1},
        "synth_labeled_fraction": {"type": "number", "exclusiveMinimum": 0, "maximum": 1},
        "synth_grid_size": _triple("integer"),
        "synth_class_frequency_skew": {"type": "number", "exclusiveMinimum": 0},
        "synth_labeled_domains": _index_list(nullable=True),
        "synth_held_out_domains": _index_list(),
        "synth_test_per_domain": {"type": "integer", "minimum": 0},
        "synth_foreground_fraction": {"type": "number", "exclusiveMinimum": 0,
                                      "exclusiveMaximum": 1},
        "synth_spacing": _triple("number"),
        # paths
        "manifest": _nullable("string"),
        "checkpoint": _nullable("string"),
        "eval_domain": _nullable("string"),
    },
}


class SchemaLoader:
    """Loads mappings from YAML/JSON files and validates them"""

    # Maximum file size (1MB)
    MAX_FILE_SIZE = 1024 * 1024

    @staticmethod
    def _check_file_size(file_path: Path) -> None:
        try:
            size = file_path.stat().st_size
        except OSError as e:
            raise ConfigError(f"Cannot access file '{file_path}': {e}", field="file",
                              value=str(file_path))
        if size > SchemaLoader.MAX_FILE_SIZE:
            raise ConfigError(
                f"File '{file_path}' exceeds maximum size limit ({SchemaLoader.MAX_FILE_SIZE} bytes)",
                field="file", value=str(file_path)
            )

    @staticmethod
    def load_yaml(file_path: Path) -> Dict[str, Any]:
        """Load a YAML mapping; an empty file is an empty mapping"""
        file_path = Path(file_path)
        SchemaLoader._check_file_size(file_path)
        try:
            with open(file_path, "r", encoding="utf-8") as f:
                data = yaml.safe_load(f) or {}
        except yaml.YAMLError as e:
            raise ConfigError(f"Invalid YAML syntax in {file_path}: {e}", field="yaml",
                              context={"file": str(file_path)})
        except (OSError, UnicodeDecodeError) as e:
            raise ConfigError(f"Failed to load YAML from {file_path}: {e}", field="file",
                              value=str(file_path))
        if not isinstance(data, dict):
            raise ConfigError(f"YAML root must be a mapping in {file_path}", field="yaml",
                              context={"file": str(file_path)})
        return cast(Dict[str, Any], data)

    @staticmethod
    def load_json(file_path: Path) -> Dict[str, Any]:
        file_path = Path(file_path)
        SchemaLoader._check_file_size(file_path)
        try:
            with open(file_path, "r", encoding="utf-8") as f:
                data = json.load(f)
        except json.JSONDecodeError as e:
            raise ConfigError(f"Invalid JSON syntax in {file_path}: {e}", field="json",
                              context={"file": str(file_path)})
        except (OSError, UnicodeDecodeError) as e:
            raise ConfigError(f"Failed to load JSON from {file_path}: {e}", field="file",
                              value=str(file_path))
        if not isinstance(data, dict):
            raise ConfigError(f"JSON root must be an object in {file_path}", field="json",
                              context={"file": str(file_path)})
        return cast(Dict[str, Any], data)

    @staticmethod
    def load_mapping(file_path: Path) -> Dict[str, Any]:
        """Load a config file: ``.json`` as JSON, anything else as YAML"""
        if Path(file_path).suffix == ".json":
            return SchemaLoader.load_json(file_path)
        return SchemaLoader.load_yaml(file_path)

    @staticmethod
    def validate(data: Dict[str, Any], schema: Dict[str, Any] = RUN_CONFIG_SCHEMA) -> None:
        """
        Validate a mapping against a Draft-7 schema.

        Raises:
            ConfigError: Listing every violation, first one as the field
        """
        validator = Draft7Validator(schema)
        errors = sorted(validator.iter_errors(data), key=lambda e: list(e.path))
        if not errors:
            return
        messages: List[str] = []
        for error in errors:
            where = ".".join(str(p) for p in error.path) or "<root>"
            messages.append(f"{where}: {error.message}")
        first = errors[0]
        field = ".".join(str(p) for p in first.path) or None
        if first.validator == "additionalProperties":
            field = "keys"
        elif first.validator == "required":
            field = "required"
        raise ConfigError("Invalid configuration: " + "; ".join(messages), field=field)
