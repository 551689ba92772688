"""
Data model classes for the segmentation framework.
Value objects shared by every module; grids are copied and frozen on construction.
"""

import math
from dataclasses import dataclass, field, fields, asdict
from pathlib import Path
from typing import Dict, List, Optional, Any, Tuple

import numpy as np

from .enums import TaskKind, ProbKind, NormalizeMode, Command
from .exceptions import (
    ValidationError, InvalidLabelError, ShapeMismatchError, ConfigError,
)

SIMPLEX_TOLERANCE = 1e-5
MAX_NORM_GROUPS = 8
PYRAMID_LEVELS = 5

Shape3 = Tuple[int, int, int]
Spacing = Tuple[float, float, float]


def _frozen_array(data: Any, dtype: Any) -> np.ndarray:
    arr = np.array(data, dtype=dtype, copy=True)
    arr.setflags(write=False)
    return arr


def _as_triple(value: Any, name: str, cast: Any = int) -> Tuple[Any, Any, Any]:
    if isinstance(value, (int, float)):
        value = (value, value, value)
    try:
        triple = tuple(cast(v) for v in value)
    except (TypeError, ValueError):
        raise ValidationError(f"{name} must be a 3-tuple", field=name, value=value)
    if len(triple) != 3:
        raise ValidationError(f"{name} must have exactly 3 entries", field=name, value=value)
    return triple  # type: ignore[return-value]


def norm_groups(channels: int) -> int:
    """GroupNorm group count used for a feature map of this width"""
    return max(1, min(MAX_NORM_GROUPS, channels // 4))


def check_feature_size(feature_size: int) -> None:
    """Base width F must be even and split into whole GroupNorm groups at every level"""
    if feature_size < 2 or feature_size % 2:
        raise ValidationError("feature_size must be a positive even number",
                              field="feature_size", value=feature_size)
    for level in range(PYRAMID_LEVELS):
        channels = feature_size * 2 ** level
        if channels % norm_groups(channels):
            raise ValidationError("feature_size does not split into GroupNorm groups",
                                  field="feature_size", value=feature_size,
                                  context={"channels": channels,
                                           "groups": norm_groups(channels)})


# ============================================================================
# Voxel grids
# ============================================================================

@dataclass(frozen=True, eq=False)
class Volume:
    """Rank-3 intensity grid (D, H, W) with millimeter spacing"""
    data: np.ndarray
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        arr = _frozen_array(self.data, np.float32)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeMismatchError("Volume must be a non-empty rank-3 grid",
                                     field="data", value=arr.shape)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("Volume contains NaN or Inf", field="data")
        spacing = _as_triple(self.spacing, "spacing", float)
        if any(not math.isfinite(s) or s <= 0 for s in spacing):
            raise ValidationError("Spacing components must be positive", field="spacing",
                                  value=spacing)
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "spacing", spacing)

    @property
    def shape(self) -> Shape3:
        return tuple(self.data.shape)  # type: ignore[return-value]

    @property
    def depth(self) -> int:
        return int(self.data.shape[0])

    def with_data(self, data: np.ndarray) -> "Volume":
        return Volume(data=data, spacing=self.spacing)


@dataclass(frozen=True, eq=False)
class LabelMap:
    """Rank-3 integer class grid with values in [0, K-1]"""
    data: np.ndarray
    num_classes: int

    def __post_init__(self):
        raw = np.asarray(self.data)
        if raw.dtype.kind == "f":
            if not np.all(np.isfinite(raw)) or not np.all(raw == np.round(raw)):
                raise InvalidLabelError("Label grid must hold integer class indices",
                                        field="data")
        arr = _frozen_array(raw, np.int64)
        if arr.ndim != 3 or min(arr.shape) < 1:
            raise ShapeMismatchError("LabelMap must be a non-empty rank-3 grid",
                                     field="data", value=arr.shape)
        k = int(self.num_classes)
        if k < 1:
            raise ValidationError("num_classes must be positive", field="num_classes", value=k)
        if arr.min() < 0 or arr.max() >= k:
            raise InvalidLabelError("Label value outside [0, K-1]", field="data",
                                    value=int(arr.max() if arr.max() >= k else arr.min()),
                                    context={"num_classes": k})
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "num_classes", k)

    @property
    def shape(self) -> Shape3:
        return tuple(self.data.shape)  # type: ignore[return-value]

    def with_data(self, data: np.ndarray) -> "LabelMap":
        return LabelMap(data=data, num_classes=self.num_classes)


@dataclass(frozen=True, eq=False)
class OneHot:
    """Channel-first one-hot grid (K, D, H, W)"""
    data: np.ndarray

    def __post_init__(self):
        arr = _frozen_array(self.data, np.float32)
        if arr.ndim != 4:
            raise ShapeMismatchError("OneHot must be rank-4 (K, D, H, W)", field="data",
                                     value=arr.shape)
        if not np.all((arr == 0) | (arr == 1)):
            raise ValidationError("OneHot entries must be 0 or 1", field="data")
        if not np.all(arr.sum(axis=0) == 1):
            raise ValidationError("OneHot channels must sum to exactly 1 per voxel", field="data")
        object.__setattr__(self, "data", arr)

    @property
    def num_classes(self) -> int:
        return int(self.data.shape[0])


@dataclass(frozen=True, eq=False)
class ProbMap:
    """Channel-first class map (K, D, H, W), either logits or a per-voxel simplex"""
    data: np.ndarray
    kind: ProbKind = ProbKind.LOGITS

    def __post_init__(self):
        raw = np.asarray(self.data)
        dtype = raw.dtype if raw.dtype.kind == "f" else np.float32
        arr = _frozen_array(raw, dtype)
        kind = ProbKind(self.kind)
        if arr.ndim != 4:
            raise ShapeMismatchError("ProbMap must be rank-4 (K, D, H, W)", field="data",
                                     value=arr.shape)
        if not np.all(np.isfinite(arr)):
            raise ValidationError("ProbMap contains NaN or Inf", field="data")
        if kind == ProbKind.SIMPLEX:
            if arr.min() < -SIMPLEX_TOLERANCE or arr.max() > 1 + SIMPLEX_TOLERANCE:
                raise ValidationError("Simplex entries must lie in [0, 1]", field="data")
            sums = arr.sum(axis=0, dtype=np.float64)
            if np.abs(sums - 1.0).max() > SIMPLEX_TOLERANCE:
                raise ValidationError("Simplex channels must sum to 1 per voxel", field="data",
                                      value=float(np.abs(sums - 1.0).max()))
        object.__setattr__(self, "data", arr)
        object.__setattr__(self, "kind", kind)

    @property
    def num_classes(self) -> int:
        return int(self.data.shape[0])


# ============================================================================
# Datasets
# ============================================================================

LabeledPair = Tuple[Volume, LabelMap]


@dataclass(frozen=True, eq=False)
class DatasetSplit:
    """
    Labeled, unlabeled and held-out samples of one experiment.

    Domain tag tuples are either empty or aligned with their sample tuple.
    """
    labeled: Tuple[LabeledPair, ...]
    unlabeled: Tuple[Volume, ...] = ()
    test: Tuple[LabeledPair, ...] = ()
    labeled_domains: Tuple[str, ...] = ()
    unlabeled_domains: Tuple[str, ...] = ()
    test_domains: Tuple[str, ...] = ()

    def __post_init__(self):
        for name in ("labeled", "unlabeled", "test", "labeled_domains",
                     "unlabeled_domains", "test_domains"):
            object.__setattr__(self, name, tuple(getattr(self, name)))
        if len(self.labeled) < 1:
            raise ValidationError("A split needs at least one labeled sample", field="labeled")
        classes = {label.num_classes for _, label in self.labeled + self.test}
        if len(classes) != 1:
            raise ValidationError("All samples must share num_classes", field="num_classes",
                                  value=sorted(classes))
        for index, (volume, label) in enumerate(self.labeled + self.test):
            if volume.shape != label.shape:
                raise ShapeMismatchError("Volume and label shapes differ", field="label",
                                         value=label.shape,
                                         context={"index": index, "volume": volume.shape})
        for tags, samples in ((self.labeled_domains, self.labeled),
                              (self.unlabeled_domains, self.unlabeled),
                              (self.test_domains, self.test)):
            if tags and len(tags) != len(samples):
                raise ValidationError("Domain tags must align with samples", field="domain_tags",
                                      context={"tags": len(tags), "samples": len(samples)})

    @property
    def num_classes(self) -> int:
        return self.labeled[0][1].num_classes

    def test_subset(self, domain: str) -> List[LabeledPair]:
        """Held-out pairs of one domain"""
        return [pair for pair, tag in zip(self.test, self.test_domains) if tag == domain]


# ============================================================================
# Configuration models
# ============================================================================

@dataclass(frozen=True)
class PreprocessSpec:
    """Clip-then-normalize recipe, optionally cropping and stacking depth"""
    clip_lower_pct: float = 0.0
    clip_upper_pct: float = 0.0
    normalize: NormalizeMode = NormalizeMode.UNIT_RANGE
    crop_to_foreground: bool = False
    stack_depth: Optional[int] = None

    def __post_init__(self):
        object.__setattr__(self, "normalize", NormalizeMode(self.normalize))
        for name in ("clip_lower_pct", "clip_upper_pct"):
            pct = float(getattr(self, name))
            if not 0.0 <= pct <= 100.0:
                raise ValidationError("Clip percentile must lie in [0, 100]", field=name, value=pct)
            object.__setattr__(self, name, pct)
        if self.clip_lower_pct + self.clip_upper_pct >= 100.0:
            raise ValidationError("clip_lower_pct + clip_upper_pct must stay below 100",
                                  field="clip_upper_pct",
                                  value=self.clip_lower_pct + self.clip_upper_pct)
        if self.stack_depth is not None and int(self.stack_depth) < 1:
            raise ValidationError("stack_depth must be positive", field="stack_depth",
                                  value=self.stack_depth)

    @classmethod
    def for_dataset(cls, name: str) -> "PreprocessSpec":
        """Recipes of the four benchmark datasets"""
        recipes = {
            "laseg": cls(normalize=NormalizeMode.ZERO_MEAN_UNIT_VAR),
            "synapse": cls(normalize=NormalizeMode.UNIT_RANGE),
            "mmwhs": cls(clip_upper_pct=2.0, normalize=NormalizeMode.UNIT_RANGE),
            "mnms": cls(clip_lower_pct=0.5, clip_upper_pct=0.5,
                        normalize=NormalizeMode.UNIT_RANGE, stack_depth=32),
        }
        if name not in recipes:
            raise ConfigError(f"No preprocessing recipe for dataset '{name}'", field="preset",
                              value=name, context={"known": ", ".join(sorted(recipes))})
        return recipes[name]

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["normalize"] = self.normalize.value
        return data


@dataclass(frozen=True)
class SyntheticSpec:
    """Seeded multi-domain ellipsoid dataset"""
    num_domains: int = 1
    volumes_per_domain: int = 4
    labeled_fraction: float = 0.5
    grid_size: Shape3 = (16, 16, 16)
    num_classes: int = 2
    class_frequency_skew: float = 1.0
    seed: int = 0
    labeled_domains: Optional[Tuple[int, ...]] = None  # None: every training domain
    held_out_domains: Tuple[int, ...] = ()
    test_per_domain: int = 1
    foreground_fraction: float = 0.2
    spacing: Spacing = (1.0, 1.0, 1.0)

    def __post_init__(self):
        object.__setattr__(self, "grid_size", _as_triple(self.grid_size, "grid_size", int))
        object.__setattr__(self, "spacing", _as_triple(self.spacing, "spacing", float))
        object.__setattr__(self, "held_out_domains", tuple(int(d) for d in self.held_out_domains))
        if self.labeled_domains is not None:
            object.__setattr__(self, "labeled_domains",
                               tuple(int(d) for d in self.labeled_domains))
        if not 0.0 < self.labeled_fraction <= 1.0:
            raise ValidationError("labeled_fraction must lie in (0, 1]", field="labeled_fraction",
                                  value=self.labeled_fraction)
        if self.num_classes < 2:
            raise ValidationError("Synthetic data needs K >= 2", field="num_classes",
                                  value=self.num_classes)
        if self.num_domains < 1 or self.volumes_per_domain < 1:
            raise ValidationError("Need at least one domain and one volume per domain",
                                  field="num_domains", value=self.num_domains)
        if self.class_frequency_skew <= 0:
            raise ValidationError("class_frequency_skew must be positive",
                                  field="class_frequency_skew", value=self.class_frequency_skew)
        if not 0.0 < self.foreground_fraction < 1.0:
            raise ValidationError("foreground_fraction must lie in (0, 1)",
                                  field="foreground_fraction", value=self.foreground_fraction)
        if self.test_per_domain < 0:
            raise ValidationError("test_per_domain must be nonnegative", field="test_per_domain",
                                  value=self.test_per_domain)
        bad = [d for d in self.held_out_domains + (self.labeled_domains or ())
               if not 0 <= d < self.num_domains]
        if bad:
            raise ValidationError("Domain index out of range", field="domains", value=bad)
        if not self.training_domains:
            raise ValidationError("Every domain is held out", field="held_out_domains",
                                  value=self.held_out_domains)

    @property
    def training_domains(self) -> Tuple[int, ...]:
        return tuple(d for d in range(self.num_domains) if d not in self.held_out_domains)

    @property
    def annotated_domains(self) -> Tuple[int, ...]:
        if self.labeled_domains is None:
            return self.training_domains
        return tuple(d for d in self.labeled_domains if d not in self.held_out_domains)

    @classmethod
    def for_task(cls, task: TaskKind, seed: int = 0, grid_size: Any = (32, 32, 32),
                 num_classes: int = 4) -> "SyntheticSpec":
        """Sampling scenarios of the four task settings"""
        task = TaskKind(task)
        # several non-overlapping objects need a sparser foreground
        common = dict(grid_size=grid_size, num_classes=num_classes, seed=seed,
                      foreground_fraction=0.2 if num_classes == 2 else 0.1)
        if task == TaskKind.SSL:
            return cls(num_domains=1, volumes_per_domain=8, labeled_fraction=0.25, **common)
        if task == TaskKind.IBSSL:
            return cls(num_domains=1, volumes_per_domain=8, labeled_fraction=0.25,
                       class_frequency_skew=2.0, **common)
        if task == TaskKind.UDA:
            return cls(num_domains=2, volumes_per_domain=4, labeled_fraction=1.0,
                       labeled_domains=(0,), test_per_domain=2, **common)
        return cls(num_domains=4, volumes_per_domain=4, labeled_fraction=0.25,
                   held_out_domains=(3,), test_per_domain=2, **common)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["grid_size"] = list(self.grid_size)
        data["spacing"] = list(self.spacing)
        data["held_out_domains"] = list(self.held_out_domains)
        data["labeled_domains"] = None if self.labeled_domains is None else list(self.labeled_domains)
        return data


@dataclass(frozen=True)
class TaskConfig:
    """
    Training hyper-parameters of one run.

    Defaults follow the desk-scale setup; dataset presets live in config_loader.
    """
    task: TaskKind = TaskKind.SSL
    patch_size: Shape3 = (16, 16, 16)
    base_lr: float = 1e-2
    batch_size: int = 2
    feature_size: int = 8
    num_classes: int = 2
    diffusion_steps: int = 1000       # T
    n_aug: int = 3
    tau: int = 50
    alpha_diff: float = 0.2
    mu_unsup: float = 10.0
    w_ema: float = 0.99
    max_iterations: int = 200
    seed: int = 0
    ddim_steps: int = 10
    ramp_fraction: float = 0.4
    momentum: float = 0.9
    weight_decay: float = 1e-4
    validation_interval: int = 100
    log_interval: int = 10
    overlap: float = 0.5
    torch_threads: int = 1
    # Ablation switches
    use_svda: bool = True
    use_drs: bool = True
    use_rs: bool = True
    couple_predictor: bool = False

    def __post_init__(self):
        object.__setattr__(self, "task", TaskKind(self.task))
        patch = _as_triple(self.patch_size, "patch_size", int)
        object.__setattr__(self, "patch_size", patch)
        if any(p < 16 or p % 16 for p in patch):
            raise ValidationError("Patch dims must be positive multiples of 16",
                                  field="patch_size", value=patch)
        positive = ("base_lr", "batch_size", "feature_size", "diffusion_steps", "tau",
                    "alpha_diff", "mu_unsup", "max_iterations", "ddim_steps",
                    "validation_interval", "log_interval", "torch_threads")
        for name in positive:
            if getattr(self, name) <= 0:
                raise ValidationError(f"{name} must be positive", field=name,
                                      value=getattr(self, name))
        check_feature_size(self.feature_size)
        if self.num_classes < 2:
            raise ValidationError("num_classes must be at least 2", field="num_classes",
                                  value=self.num_classes)
        if not 0.0 < self.w_ema < 1.0:
            raise ValidationError("w_ema must lie in (0, 1)", field="w_ema", value=self.w_ema)
        if not 1 <= self.n_aug <= 7:
            raise ValidationError("n_aug must lie in [1, 7]", field="n_aug", value=self.n_aug)
        if not 0.0 <= self.ramp_fraction <= 1.0:
            raise ValidationError("ramp_fraction must lie in [0, 1]", field="ramp_fraction",
                                  value=self.ramp_fraction)
        if not 0.0 <= self.overlap < 1.0:
            raise ValidationError("overlap must lie in [0, 1)", field="overlap",
                                  value=self.overlap)

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["task"] = self.task.value
        data["patch_size"] = list(self.patch_size)
        return data

    @classmethod
    def field_names(cls) -> List[str]:
        return [f.name for f in fields(cls)]


@dataclass(frozen=True)
class RSConfig:
    """Reparameterize & Smooth settings"""
    gumbel_temperature: float = 1.0
    blur_sigma: float = 1.0
    blur_kernel_radius: int = 2
    reparameterize: bool = True

    def __post_init__(self):
        if self.gumbel_temperature <= 0:
            raise ValidationError("gumbel_temperature must be positive",
                                  field="gumbel_temperature", value=self.gumbel_temperature)
        if self.blur_sigma <= 0:
            raise ValidationError("blur_sigma must be positive", field="blur_sigma",
                                  value=self.blur_sigma)
        if int(self.blur_kernel_radius) < 1:
            raise ValidationError("blur_kernel_radius must be at least 1",
                                  field="blur_kernel_radius", value=self.blur_kernel_radius)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


# ============================================================================
# Reports
# ============================================================================

@dataclass(frozen=True)
class LossReport:
    """Loss terms of one training step"""
    l_deno: float
    l_diff: float
    l_u: float
    ramp_weight: float
    total: float
    l_coupled: float = 0.0  # nonzero only for the coupled-predictor ablation

    def __post_init__(self):
        values = (self.l_deno, self.l_diff, self.l_u, self.total, self.l_coupled)
        if any(not math.isfinite(v) or v < 0 for v in values):
            raise ValidationError("Loss terms must be finite and nonnegative", field="loss",
                                  value=values)
        expected = self.l_deno + self.l_diff + self.ramp_weight * self.l_u + self.l_coupled
        if abs(self.total - expected) > 1e-6 * max(1.0, abs(expected)):
            raise ValidationError("Total loss does not match its terms", field="total",
                                  value=self.total, context={"expected": expected})

    @classmethod
    def assemble(cls, l_deno: float, l_diff: float, l_u: float, ramp_weight: float,
                 l_coupled: float = 0.0) -> "LossReport":
        total = l_deno + l_diff + ramp_weight * l_u + l_coupled
        return cls(l_deno=l_deno, l_diff=l_diff, l_u=l_u, ramp_weight=ramp_weight,
                   total=total, l_coupled=l_coupled)


@dataclass(frozen=True)
class ClassMetrics:
    """Overlap and surface metrics of one class; NaN marks an undefined surface metric"""
    dice: float
    jaccard: float
    asd: float
    hd95: float

    def __post_init__(self):
        if not (0.0 <= self.jaccard <= self.dice + 1e-12 <= 1.0 + 1e-12):
            raise ValidationError("Expected 0 <= jaccard <= dice <= 1", field="jaccard",
                                  value=(self.jaccard, self.dice))


@dataclass(frozen=True)
class MetricReport:
    """Per-class metrics of one prediction with NaN-excluding means"""
    per_class: Dict[int, ClassMetrics]
    case: str = ""

    def mean(self, metric: str) -> float:
        values = [getattr(m, metric) for m in self.per_class.values()]
        finite = [v for v in values if not math.isnan(v)]
        return float(np.mean(finite)) if finite else float("nan")

    @property
    def undefined_count(self) -> int:
        return sum(1 for m in self.per_class.values() if math.isnan(m.asd))

    def to_dict(self) -> Dict[str, Any]:
        data: Dict[str, Any] = {"case": self.case}
        for k, m in sorted(self.per_class.items()):
            for metric in ("dice", "jaccard", "asd", "hd95"):
                data[f"{metric}_{k}"] = getattr(m, metric)
        for metric in ("dice", "jaccard", "asd", "hd95"):
            data[f"mean_{metric}"] = self.mean(metric)
        return data


@dataclass
class RunConfig:
    """One CLI invocation"""
    command: Command
    config_path: Path
    output_dir: Path
    seed: Optional[int] = None
    overrides: List[str] = field(default_factory=list)

    def __post_init__(self):
        self.command = Command(self.command)
        self.config_path = Path(self.config_path)
        self.output_dir = Path(self.output_dir)
