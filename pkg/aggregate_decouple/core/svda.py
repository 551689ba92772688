"""
Sampling-based volumetric data augmentation.

N of the seven operations are drawn without replacement and applied in the
sampled order. Spatial operations move image (trilinear) and label (nearest)
with one sampled geometry; voxel operations touch the image only.
"""

import logging
import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Any, Tuple

import numpy as np
from scipy import ndimage

from .enums import AugName, OpKind
from .exceptions import ValidationError, ShapeMismatchError
from .models import Volume, LabelMap

logger = logging.getLogger(__name__)

Range = Tuple[float, float]
Shape3 = Tuple[int, int, int]


@dataclass(frozen=True)
class AugmentationOp:
    name: AugName
    kind: OpKind
    parameter_ranges: Dict[str, Range] = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "name", AugName(self.name))
        object.__setattr__(self, "kind", OpKind(self.kind))
        for key, (low, high) in self.parameter_ranges.items():
            if low > high:
                raise ValidationError("Parameter range must satisfy low <= high", field=key,
                                      value=(low, high), context={"op": self.name.value})

    @property
    def is_spatial(self) -> bool:
        return self.kind == OpKind.SPATIAL

    def with_ranges(self, **ranges: Range) -> "AugmentationOp":
        """Copy with some parameter ranges replaced, e.g. forcing a fixed angle"""
        unknown = set(ranges) - set(self.parameter_ranges)
        if unknown:
            raise ValidationError("Unknown parameter for op", field=", ".join(sorted(unknown)),
                                  context={"op": self.name.value})
        merged = {**self.parameter_ranges, **{k: tuple(v) for k, v in ranges.items()}}
        return replace(self, parameter_ranges=merged)

    def sample(self, rng: np.random.Generator) -> Dict[str, float]:
        return {key: float(rng.uniform(low, high))
                for key, (low, high) in sorted(self.parameter_ranges.items())}


OPERATIONS: Dict[AugName, AugmentationOp] = {
    AugName.RANDOM_CROP: AugmentationOp(AugName.RANDOM_CROP, OpKind.SPATIAL),
    AugName.RANDOM_ROTATION: AugmentationOp(
        AugName.RANDOM_ROTATION, OpKind.SPATIAL,
        {"about_d": (-30.0, 30.0), "about_h": (-30.0, 30.0), "about_w": (-30.0, 30.0)}),
    AugName.RANDOM_SCALING: AugmentationOp(AugName.RANDOM_SCALING, OpKind.SPATIAL,
                                           {"factor": (0.85, 1.25)}),
    AugName.GAUSSIAN_BLUR: AugmentationOp(AugName.GAUSSIAN_BLUR, OpKind.VOXEL,
                                          {"sigma": (0.5, 1.5)}),
    AugName.BRIGHTNESS: AugmentationOp(AugName.BRIGHTNESS, OpKind.VOXEL,
                                       {"fraction": (-0.1, 0.1)}),
    AugName.CONTRAST: AugmentationOp(AugName.CONTRAST, OpKind.VOXEL, {"factor": (0.75, 1.25)}),
    AugName.GAMMA: AugmentationOp(AugName.GAMMA, OpKind.VOXEL, {"gamma": (0.7, 1.5)}),
}


@dataclass(frozen=True, eq=False)
class AugmentedPair:
    volume: Volume
    label: Optional[LabelMap]
    applied: Tuple[Tuple[str, Dict[str, Any]], ...] = ()


def sample_ops(n_aug: int, rng: np.random.Generator) -> List[AugmentationOp]:
    """Draw n_aug distinct operations uniformly without replacement"""
    if not 1 <= n_aug <= len(OPERATIONS):
        raise ValidationError(f"n_aug must lie in [1, {len(OPERATIONS)}]", field="n_aug",
                              value=n_aug)
    names = list(OPERATIONS)
    picked = rng.choice(len(names), size=n_aug, replace=False)
    return [OPERATIONS[names[i]] for i in picked]


# ============================================================================
# Geometry
# ============================================================================

def rotation_matrix(about_d: float, about_h: float, about_w: float) -> np.ndarray:
    """Rotation in (d, h, w) index space; angles in degrees"""
    a, b, c = (math.radians(x) for x in (about_d, about_h, about_w))
    rot_d = np.array([[1, 0, 0],
                      [0, math.cos(a), -math.sin(a)],
                      [0, math.sin(a), math.cos(a)]])
    rot_h = np.array([[math.cos(b), 0, math.sin(b)],
                      [0, 1, 0],
                      [-math.sin(b), 0, math.cos(b)]])
    rot_w = np.array([[math.cos(c), -math.sin(c), 0],
                      [math.sin(c), math.cos(c), 0],
                      [0, 0, 1]])
    return rot_d @ rot_h @ rot_w


def _warp(data: np.ndarray, matrix: np.ndarray, order: int) -> np.ndarray:
    # output[o] = input[matrix @ (o - c) + c]
    center = (np.asarray(data.shape, dtype=np.float64) - 1.0) / 2.0
    offset = center - matrix @ center
    return ndimage.affine_transform(data, matrix, offset=offset, order=order, mode="nearest")


def _warp_pair(v: Volume, y: Optional[LabelMap],
               matrix: np.ndarray) -> Tuple[Volume, Optional[LabelMap]]:
    image = _warp(np.asarray(v.data, dtype=np.float64), matrix, order=1)
    label = None
    if y is not None:
        label = y.with_data(_warp(np.asarray(y.data), matrix, order=0))
    return v.with_data(image), label


def _pad_to(data: np.ndarray, shape: Shape3) -> np.ndarray:
    pads = []
    for size, target in zip(data.shape, shape):
        total = max(target - size, 0)
        pads.append((total // 2, total - total // 2))
    if not any(sum(p) for p in pads):
        return data
    mode = "reflect" if min(data.shape) > 1 else "symmetric"
    return np.pad(data, pads, mode=mode)


def random_crop(v: Volume, y: Optional[LabelMap], patch_size: Shape3,
                rng: np.random.Generator) -> Tuple[Volume, Optional[LabelMap], Dict[str, Any]]:
    """Reflect-pad up to patch_size where needed, then crop at a uniform offset"""
    image = _pad_to(np.asarray(v.data), patch_size)
    label = _pad_to(np.asarray(y.data), patch_size) if y is not None else None
    offset = tuple(int(rng.integers(0, s - p + 1)) for s, p in zip(image.shape, patch_size))
    window = tuple(slice(o, o + p) for o, p in zip(offset, patch_size))
    cropped_label = y.with_data(label[window]) if y is not None else None
    return v.with_data(image[window]), cropped_label, {"offset": offset}


# ============================================================================
# Application
# ============================================================================

def _dynamic_range(data: np.ndarray) -> float:
    return float(data.max() - data.min())


def _apply_one(op: AugmentationOp, v: Volume, y: Optional[LabelMap],
               rng: np.random.Generator,
               patch_size: Optional[Shape3]) -> Tuple[Volume, Optional[LabelMap], Dict[str, Any]]:
    params: Dict[str, Any] = op.sample(rng)
    data = np.asarray(v.data, dtype=np.float64)

    if op.name == AugName.RANDOM_CROP:
        v, y, crop = random_crop(v, y, tuple(patch_size or v.shape), rng)
        params.update(crop)
        return v, y, params
    if op.name == AugName.RANDOM_ROTATION:
        matrix = rotation_matrix(params["about_d"], params["about_h"], params["about_w"])
        v, y = _warp_pair(v, y, matrix)
        return v, y, params
    if op.name == AugName.RANDOM_SCALING:
        # factor > 1 zooms in
        v, y = _warp_pair(v, y, np.eye(3) / params["factor"])
        return v, y, params
    if op.name == AugName.GAUSSIAN_BLUR:
        return v.with_data(ndimage.gaussian_filter(data, params["sigma"], mode="reflect")), y, params
    if op.name == AugName.BRIGHTNESS:
        params["shift"] = params["fraction"] * _dynamic_range(data)
        return v.with_data(data + params["shift"]), y, params
    if op.name == AugName.CONTRAST:
        mean = data.mean()
        return v.with_data((data - mean) * params["factor"] + mean), y, params
    if op.name == AugName.GAMMA:
        low, span = data.min(), _dynamic_range(data)
        if span == 0:
            return v, y, params
        normalized = (data - low) / span
        return v.with_data(normalized ** params["gamma"] * span + low), y, params
    raise ValidationError("Unknown augmentation op", field="name", value=op.name)


def apply(v: Volume, y: Optional[LabelMap], ops: List[AugmentationOp],
          rng: np.random.Generator, patch_size: Optional[Shape3] = None) -> AugmentedPair:
    """Apply ops in order; the label is carried through spatial ops only"""
    if y is not None and y.shape != v.shape:
        raise ShapeMismatchError("Volume and label shapes differ", field="label",
                                 value=y.shape, context={"volume": v.shape})
    applied = []
    for op in ops:
        v, y, params = _apply_one(op, v, y, rng, patch_size)
        applied.append((op.name.value, params))
    return AugmentedPair(volume=v, label=y, applied=tuple(applied))


def augment(v: Volume, y: Optional[LabelMap], n_aug: int, rng: np.random.Generator,
            patch_size: Shape3, enabled: bool = True) -> AugmentedPair:
    """
    Sample and apply n_aug ops, then crop to patch_size if the shape still differs.

    With ``enabled`` false only the final crop runs.
    """
    pair = AugmentedPair(volume=v, label=y)
    if enabled:
        pair = apply(v, y, sample_ops(n_aug, rng), rng, patch_size)
    if pair.volume.shape != tuple(patch_size):
        volume, label, _ = random_crop(pair.volume, pair.label, tuple(patch_size), rng)
        pair = AugmentedPair(volume=volume, label=label, applied=pair.applied)
    return pair
