"""
Configuration loader: dataset presets, config file, seed and key=value overrides.
Following Single Responsibility Principle - resolves run configuration only.

Precedence, lowest first:
    preset defaults < config file < --seed < --set key=value
"""

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Any, List, Optional, Sequence, Tuple

import yaml

from .enums import NormalizeMode, TaskKind
from .exceptions import ConfigError, ValidationError
from .models import PreprocessSpec, RSConfig, SyntheticSpec, TaskConfig
from .schema_loader import RUN_CONFIG_SCHEMA, SchemaLoader

logger = logging.getLogger(__name__)

PREPROCESS_KEYS = ("clip_lower_pct", "clip_upper_pct", "normalize", "crop_to_foreground",
                   "stack_depth")
RS_KEYS = ("gumbel_temperature", "blur_sigma", "blur_kernel_radius", "reparameterize")
SYNTH_PREFIX = "synth_"
PATH_KEYS = ("manifest", "checkpoint")
NULL_WORDS = ("none", "null", "~")
TRUE_WORDS = ("true", "yes", "on", "1")
FALSE_WORDS = ("false", "no", "off", "0")


def _benchmark(task: TaskKind, patch: Tuple[int, int, int], lr: float, batch: int,
               num_classes: int, dataset: str) -> Dict[str, Any]:
    values: Dict[str, Any] = {
        "task": task.value,
        "patch_size": list(patch),
        "base_lr": lr,
        "batch_size": batch,
        "feature_size": 32,
        "num_classes": num_classes,
        "diffusion_steps": 1000,
        "max_iterations": 20000,
        "validation_interval": 500,
        "log_interval": 50,
    }
    values.update(PreprocessSpec.for_dataset(dataset).to_dict())
    return values


DESK: Dict[str, Any] = {
    "task": TaskKind.SSL.value,
    "patch_size": [16, 16, 16],
    "base_lr": 1e-2,
    "batch_size": 2,
    "feature_size": 8,
    "num_classes": 2,
    "diffusion_steps": 100,
    "max_iterations": 200,
    "validation_interval": 100,
    "log_interval": 10,
    "normalize": NormalizeMode.NONE.value,
    "synth_num_domains": 1,
    "synth_volumes_per_domain": 4,
    "synth_labeled_fraction": 0.5,
    "synth_grid_size": [16, 16, 16],
}

PRESETS: Dict[str, Dict[str, Any]] = {
    "laseg": _benchmark(TaskKind.SSL, (112, 112, 80), 1e-2, 4, 2, "laseg"),
    "synapse": _benchmark(TaskKind.IBSSL, (64, 128, 128), 3e-2, 4, 14, "synapse"),
    "mmwhs": _benchmark(TaskKind.UDA, (128, 128, 128), 5e-3, 2, 5, "mmwhs"),
    "mnms": _benchmark(TaskKind.SEMIDG, (32, 128, 128), 1e-2, 4, 4, "mnms"),
    "desk": DESK,
    "desk_uda": {
        **DESK,
        "task": TaskKind.UDA.value,
        "synth_num_domains": 2,
        "synth_volumes_per_domain": 4,
        "synth_labeled_fraction": 1.0,
        "synth_labeled_domains": [0],
        "synth_test_per_domain": 2,
        "eval_domain": "domain1",
    },
}


def _default_values() -> Dict[str, Any]:
    values: Dict[str, Any] = {}
    values.update(TaskConfig().to_dict())
    values.update(PreprocessSpec().to_dict())
    values.update(RSConfig().to_dict())
    synth = SyntheticSpec().to_dict()
    for key in ("num_classes", "seed"):
        synth.pop(key)
    values.update({SYNTH_PREFIX + k: v for k, v in synth.items()})
    values.update({"manifest": None, "checkpoint": None, "eval_domain": None})
    return values


@dataclass
class ResolvedConfig:
    """Every effective value of one run, split into the typed configs"""
    preset: str
    task: TaskConfig
    preprocess: PreprocessSpec
    rs: RSConfig
    synthetic: SyntheticSpec
    manifest: Optional[Path] = None
    checkpoint: Optional[Path] = None
    eval_domain: Optional[str] = None
    values: Dict[str, Any] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, Any]:
        return {key: self.values[key] for key in sorted(self.values)}

    def write(self, path: Path) -> Path:
        """Write config.resolved (YAML, sorted keys)"""
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8") as f:
            yaml.safe_dump(self.to_dict(), f, default_flow_style=None, sort_keys=True)
        return path


class ConfigLoader:
    """Resolves a run configuration from presets, a file and overrides"""

    def __init__(self, presets: Optional[Dict[str, Dict[str, Any]]] = None):
        self.presets = presets if presets is not None else PRESETS
        self.schema = RUN_CONFIG_SCHEMA
        self.properties: Dict[str, Dict[str, Any]] = self.schema["properties"]

    # ------------------------------------------------------------------ coercion

    @staticmethod
    def _variants(prop: Dict[str, Any]) -> List[Dict[str, Any]]:
        return prop.get("anyOf", [prop])

    def _allows_null(self, prop: Dict[str, Any]) -> bool:
        return any(v.get("type") == "null" for v in self._variants(prop))

    def _base_type(self, prop: Dict[str, Any]) -> Optional[str]:
        for variant in self._variants(prop):
            if variant.get("type") not in (None, "null"):
                return variant["type"]
        return None

    @staticmethod
    def _scalar(key: str, value: Any, type_name: Optional[str]) -> Any:
        text = value.strip() if isinstance(value, str) else value
        if type_name == "integer" and isinstance(text, str):
            number = float(text)
            if not number.is_integer():
                raise ValueError(f"'{value}' is not an integer")
            return int(number)
        if type_name == "integer" and isinstance(text, float) and text.is_integer():
            return int(text)
        if type_name == "number" and isinstance(text, (str, int)) and not isinstance(text, bool):
            return float(text)
        if type_name == "boolean" and isinstance(text, str):
            lowered = text.lower()
            if lowered in TRUE_WORDS:
                return True
            if lowered in FALSE_WORDS:
                return False
            raise ValueError(f"'{value}' is not a boolean")
        if type_name == "string" and not isinstance(text, str):
            return str(text)
        return text

    def coerce(self, key: str, value: Any) -> Any:
        """Convert one raw value to the schema type of its key"""
        prop = self.properties.get(key)
        if prop is None:
            return value
        if isinstance(value, str) and value.strip().lower() in NULL_WORDS and self._allows_null(prop):
            return None
        if value is None:
            return None
        type_name = self._base_type(prop)
        try:
            if type_name == "array":
                items = value
                if isinstance(value, str):
                    text = value.strip().strip("[]()")
                    items = [part for part in text.replace("x", ",").split(",") if part.strip()]
                if not isinstance(items, (list, tuple)):
                    items = [items]
                item_type = next(v for v in self._variants(prop) if v.get("type") == "array")
                return [self._scalar(key, item, item_type["items"]["type"]) for item in items]
            return self._scalar(key, value, type_name)
        except ValueError as e:
            raise ConfigError(f"Type mismatch for '{key}': {e}", field=key, value=value,
                              context={"expected": type_name})

    def coerce_all(self, values: Dict[str, Any]) -> Dict[str, Any]:
        return {key: self.coerce(key, value) for key, value in values.items()}

    # ------------------------------------------------------------------ sources

    @staticmethod
    def parse_override(text: str) -> Tuple[str, str]:
        if "=" not in text:
            raise ConfigError("Override must look like key=value", field="--set", value=text)
        key, value = text.split("=", 1)
        key = key.strip()
        if not key:
            raise ConfigError("Override has an empty key", field="--set", value=text)
        return key, value

    def load_file(self, path: Path) -> Dict[str, Any]:
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"Configuration file not found: {path}", field="config",
                              value=str(path))
        raw = SchemaLoader.load_mapping(path)
        values = {str(k): v for k, v in raw.items()}
        for key in PATH_KEYS:
            if isinstance(values.get(key), str) and values[key].strip().lower() not in NULL_WORDS:
                candidate = Path(values[key])
                if not candidate.is_absolute():
                    values[key] = str((path.parent / candidate).resolve())
        return values

    def preset_values(self, name: str) -> Dict[str, Any]:
        if name not in self.presets:
            raise ConfigError(f"Unknown preset '{name}'", field="preset", value=name,
                              context={"known": ", ".join(sorted(self.presets))})
        return dict(self.presets[name])

    # ------------------------------------------------------------------ resolve

    def resolve(self, path: Optional[Path], overrides: Sequence[str] = (),
                seed: Optional[int] = None) -> ResolvedConfig:
        """
        Resolve every effective value of a run.

        Args:
            path: Config file (YAML or JSON), or None to rely on overrides
            overrides: ``key=value`` strings, applied last
            seed: Seed from the command line

        Returns:
            ResolvedConfig

        Raises:
            ConfigError: Unknown key, type mismatch, missing required field,
                unknown preset or an invalid combination of values
        """
        file_values = self.coerce_all(self.load_file(path)) if path is not None else {}
        override_values = self.coerce_all(dict(self.parse_override(o) for o in overrides))

        layered = {**file_values}
        if seed is not None:
            layered["seed"] = int(seed)
        layered.update(override_values)
        SchemaLoader.validate(layered, self.schema)

        preset = layered["preset"]
        values = _default_values()
        values.update(self.coerce_all(self.preset_values(preset)))
        values.update(layered)
        SchemaLoader.validate(values, self.schema)

        try:
            resolved = self._build(values)
        except ConfigError:
            raise
        except ValidationError as e:
            raise ConfigError(f"Invalid configuration: {e.message}", field=e.field,
                              value=e.value, context=e.context) from e
        logger.debug("Resolved preset %s with %d file keys and %d overrides", preset,
                     len(file_values), len(override_values))
        return resolved

    @staticmethod
    def _build(values: Dict[str, Any]) -> ResolvedConfig:
        task = TaskConfig(**{k: values[k] for k in TaskConfig.field_names()})
        preprocess = PreprocessSpec(**{k: values[k] for k in PREPROCESS_KEYS})
        rs = RSConfig(**{k: values[k] for k in RS_KEYS})
        synth_values = {k[len(SYNTH_PREFIX):]: v for k, v in values.items()
                        if k.startswith(SYNTH_PREFIX)}
        synthetic = SyntheticSpec(num_classes=task.num_classes, seed=task.seed, **synth_values)
        return ResolvedConfig(
            preset=values["preset"],
            task=task,
            preprocess=preprocess,
            rs=rs,
            synthetic=synthetic,
            manifest=Path(values["manifest"]) if values.get("manifest") else None,
            checkpoint=Path(values["checkpoint"]) if values.get("checkpoint") else None,
            eval_domain=values.get("eval_domain"),
            values=values,
        )


def parse_config(path: Optional[Path], overrides: Sequence[str] = (),
                 seed: Optional[int] = None) -> ResolvedConfig:
    """Module-level shortcut for ``ConfigLoader().resolve``"""
    return ConfigLoader().resolve(path, overrides, seed)
