"""
Dataset ingestion, intensity preprocessing, depth stacking and the seeded
multi-domain synthetic generator.
"""

import logging
import math
import os
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import List, Optional, Tuple, TypeVar, Union

import numpy as np
from scipy import ndimage

from .enums import NormalizeMode, SampleRole
from .exceptions import ValidationError, DegenerateInputError, CapacityError, ConfigError
from .models import Volume, LabelMap, DatasetSplit, PreprocessSpec, SyntheticSpec, LabeledPair
from .raw_io import (
    ManifestRecord, read_manifest, read_volume, read_label, check_pair,
    write_volume, write_label, write_manifest,
)

logger = logging.getLogger(__name__)

WORKERS_ENV = "AD_NUM_WORKERS"
CROP_MARGIN = 4
PLACEMENT_ATTEMPTS = 200

Grid = TypeVar("Grid", Volume, LabelMap)


def num_workers() -> int:
    """Loader thread count from AD_NUM_WORKERS (default 1)"""
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise ConfigError(f"{WORKERS_ENV} must be an integer", field=WORKERS_ENV, value=raw)
    if value < 1:
        raise ConfigError(f"{WORKERS_ENV} must be at least 1", field=WORKERS_ENV, value=raw)
    return value


# ============================================================================
# Preprocessing
# ============================================================================

def _clip(data: np.ndarray, spec: PreprocessSpec) -> np.ndarray:
    lower = float(data.min())
    upper = float(data.max())
    if spec.clip_lower_pct > 0:
        lower = float(np.percentile(data, spec.clip_lower_pct, method="higher"))
    if spec.clip_upper_pct > 0:
        upper = float(np.percentile(data, 100.0 - spec.clip_upper_pct, method="lower"))
    return np.clip(data, lower, upper)


def _normalize(data: np.ndarray, mode: NormalizeMode) -> np.ndarray:
    if mode == NormalizeMode.NONE:
        return data
    data = data.astype(np.float64)
    if mode == NormalizeMode.UNIT_RANGE:
        low, high = data.min(), data.max()
        if high == low:
            return np.zeros_like(data)
        return (data - low) / (high - low)
    std = data.std()
    if not std > 1e-12:
        raise DegenerateInputError("Cannot standardize a constant volume", field="normalize",
                                   value=mode.value, context={"value": float(data.flat[0])})
    return (data - data.mean()) / std


def preprocess(v: Volume, spec: PreprocessSpec) -> Volume:
    """Clip then normalize; cropping and stacking need the label and live in preprocess_pair"""
    data = np.asarray(v.data, dtype=np.float64)
    data = _clip(data, spec)
    return v.with_data(_normalize(data, spec.normalize))


def stack_depth(v: Grid, target_depth: int) -> Grid:
    """Repeat slices cyclically (index i -> i mod D) up to target_depth"""
    depth = v.shape[0]
    if target_depth < 1 or depth > target_depth:
        raise ValidationError("Target depth must be at least the current depth",
                              field="target_depth", value=target_depth,
                              context={"depth": depth})
    index = np.arange(target_depth) % depth
    return v.with_data(np.asarray(v.data)[index])


def _bbox(mask: np.ndarray, margin: int) -> Optional[Tuple[slice, ...]]:
    if not mask.any():
        return None
    slices = []
    for axis in range(mask.ndim):
        other = tuple(a for a in range(mask.ndim) if a != axis)
        hits = np.flatnonzero(mask.any(axis=other))
        start = max(int(hits[0]) - margin, 0)
        stop = min(int(hits[-1]) + 1 + margin, mask.shape[axis])
        slices.append(slice(start, stop))
    return tuple(slices)


def crop_to_foreground(v: Volume, y: Optional[LabelMap] = None,
                       margin: int = CROP_MARGIN) -> Tuple[Volume, Optional[LabelMap]]:
    """
    Crop to the bounding box of the labeled foreground plus a margin.

    Without a label the box covers voxels brighter than the volume minimum.
    """
    data = np.asarray(v.data)
    mask = (np.asarray(y.data) > 0) if y is not None else data > data.min()
    box = _bbox(mask, margin)
    if box is None:
        warnings.warn("No foreground found; volume left uncropped")
        return v, y
    cropped = v.with_data(data[box])
    return cropped, (y.with_data(np.asarray(y.data)[box]) if y is not None else None)


def preprocess_pair(v: Volume, y: Optional[LabelMap],
                    spec: PreprocessSpec) -> Tuple[Volume, Optional[LabelMap]]:
    """Crop (optional), clip, normalize, then stack depth (optional)"""
    if spec.crop_to_foreground:
        v, y = crop_to_foreground(v, y)
    v = preprocess(v, spec)
    if spec.stack_depth is not None:
        v = stack_depth(v, spec.stack_depth)
        if y is not None:
            y = stack_depth(y, spec.stack_depth)
    return v, y


# ============================================================================
# Synthetic generator
# ============================================================================

def class_volumes(spec: SyntheticSpec) -> np.ndarray:
    """Target voxel counts of the K-1 foreground classes, geometric with ratio 1/skew"""
    total = spec.foreground_fraction * float(np.prod(spec.grid_size))
    ratios = (1.0 / spec.class_frequency_skew) ** np.arange(spec.num_classes - 1)
    return total * ratios / ratios.sum()


def _ellipsoid_mask(shape: Tuple[int, int, int], center: np.ndarray,
                    radii: np.ndarray) -> np.ndarray:
    zz, yy, xx = np.indices(shape, dtype=np.float64)
    dist = (((zz - center[0]) / radii[0]) ** 2
            + ((yy - center[1]) / radii[1]) ** 2
            + ((xx - center[2]) / radii[2]) ** 2)
    return dist <= 1.0


def _place_objects(spec: SyntheticSpec, rng: np.random.Generator) -> np.ndarray:
    shape = spec.grid_size
    label = np.zeros(shape, dtype=np.int64)
    size = np.asarray(shape, dtype=np.float64)
    for k, target in enumerate(class_volumes(spec), start=1):
        aspect = rng.uniform(0.8, 1.25, size=3)
        aspect /= np.prod(aspect) ** (1.0 / 3.0)
        radius = max((3.0 * target / (4.0 * math.pi)) ** (1.0 / 3.0), 0.75)
        half = (size - 1.0) / 2.0
        if radius > half.min():
            raise CapacityError(f"Grid too small for the object of class {k}",
                                field="grid_size", value=shape,
                                context={"class": k, "radius": round(radius, 2)})
        # elongated axes are clamped to the grid
        radii = np.minimum(radius * aspect, half)
        low, high = radii, size - 1.0 - radii
        for _ in range(PLACEMENT_ATTEMPTS):
            center = rng.uniform(low, high)
            mask = _ellipsoid_mask(shape, center, radii)
            if mask.any() and not (label[mask] > 0).any():
                label[mask] = k
                break
        else:
            raise CapacityError(f"Could not place class {k} without overlap",
                                field="grid_size", value=shape,
                                context={"class": k, "attempts": PLACEMENT_ATTEMPTS})
    return label


def _render(label: np.ndarray, transfer: dict, num_classes: int,
            rng: np.random.Generator) -> np.ndarray:
    levels = np.concatenate([[0.1], np.linspace(0.35, 1.0, num_classes - 1)])
    clean = levels[label] ** transfer["gamma"]
    texture = ndimage.gaussian_filter(rng.standard_normal(label.shape), sigma=1.0)
    texture /= max(float(texture.std()), 1e-12)
    noisy = clean + transfer["texture"] * texture + 0.01 * rng.standard_normal(label.shape)
    return transfer["gain"] * noisy + transfer["bias"]


def _domain_transfer(domain: int, rng: np.random.Generator) -> dict:
    return {
        "gain": rng.uniform(0.7, 1.3),
        "bias": 0.6 * domain + rng.uniform(-0.1, 0.1),
        "gamma": rng.uniform(0.8, 1.25),
        "texture": rng.uniform(0.03, 0.08),
    }


def make_synthetic(spec: SyntheticSpec) -> DatasetSplit:
    """
    Seeded multi-domain ellipsoid dataset.

    Each domain draws its own intensity transfer (gain, bias, gamma, texture
    scale). Training domains contribute labeled and unlabeled volumes; every
    domain contributes ``test_per_domain`` held-out pairs, and held-out domains
    contribute nothing else.
    """
    streams = np.random.SeedSequence(spec.seed).spawn(spec.num_domains)
    labeled: List[LabeledPair] = []
    unlabeled: List[Volume] = []
    test: List[LabeledPair] = []
    tags = {"labeled": [], "unlabeled": [], "test": []}

    for d, stream in enumerate(streams):
        rng = np.random.default_rng(stream)
        transfer = _domain_transfer(d, rng)
        domain = f"domain{d}"
        training = d in spec.training_domains
        n_train = spec.volumes_per_domain if training else 0
        n_labeled = 0
        if d in spec.annotated_domains:
            n_labeled = max(1, int(round(spec.labeled_fraction * n_train)))
        for i in range(n_train + spec.test_per_domain):
            y = _place_objects(spec, rng)
            v = Volume(_render(y, transfer, spec.num_classes, rng), spacing=spec.spacing)
            pair = (v, LabelMap(y, num_classes=spec.num_classes))
            if i >= n_train:
                test.append(pair)
                tags["test"].append(domain)
            elif i < n_labeled:
                labeled.append(pair)
                tags["labeled"].append(domain)
            else:
                unlabeled.append(v)
                tags["unlabeled"].append(domain)

    logger.info("Synthesized %d labeled, %d unlabeled, %d test volumes over %d domains",
                len(labeled), len(unlabeled), len(test), spec.num_domains)
    return DatasetSplit(labeled=tuple(labeled), unlabeled=tuple(unlabeled), test=tuple(test),
                        labeled_domains=tuple(tags["labeled"]),
                        unlabeled_domains=tuple(tags["unlabeled"]),
                        test_domains=tuple(tags["test"]))


# ============================================================================
# Manifests
# ============================================================================

def _load_record(record: ManifestRecord,
                 spec: PreprocessSpec) -> Tuple[ManifestRecord, Volume, Optional[LabelMap]]:
    volume = read_volume(record.volume_path)
    label = read_label(record.label_path) if record.label_path is not None else None
    if label is not None:
        check_pair(volume, label, record)
    volume, label = preprocess_pair(volume, label, spec)
    return record, volume, label


def load_split(manifest_path: Union[str, Path], workers: Optional[int] = None) -> DatasetSplit:
    """Load and preprocess every manifest record; files are read on a thread pool"""
    records, spec = read_manifest(Path(manifest_path))
    workers = workers or num_workers()
    with ThreadPoolExecutor(max_workers=workers) as pool:
        loaded = list(pool.map(lambda r: _load_record(r, spec), records))

    labeled, unlabeled, test = [], [], []
    tags = {role: [] for role in SampleRole}
    for record, volume, label in loaded:
        if record.role == SampleRole.LABELED:
            labeled.append((volume, label))
        elif record.role == SampleRole.TEST:
            test.append((volume, label))
        else:
            unlabeled.append(volume)
        tags[record.role].append(record.domain)

    logger.info("Loaded %d labeled, %d unlabeled, %d test volumes from %s",
                len(labeled), len(unlabeled), len(test), manifest_path)
    return DatasetSplit(labeled=tuple(labeled), unlabeled=tuple(unlabeled), test=tuple(test),
                        labeled_domains=tuple(tags[SampleRole.LABELED]),
                        unlabeled_domains=tuple(tags[SampleRole.UNLABELED]),
                        test_domains=tuple(tags[SampleRole.TEST]))


def write_split(split: DatasetSplit, out_dir: Union[str, Path],
                preprocess_spec: Optional[PreprocessSpec] = None) -> Path:
    """Write every sample as raw grids plus a manifest; returns the manifest path"""
    out_dir = Path(out_dir)
    if preprocess_spec is None:
        preprocess_spec = PreprocessSpec(normalize=NormalizeMode.NONE)
    records: List[ManifestRecord] = []

    def _domain(tags: Tuple[str, ...], i: int) -> str:
        return tags[i] if tags else "domain0"

    for i, (v, y) in enumerate(split.labeled):
        vol_path, lab_path = out_dir / "volumes" / f"labeled_{i:03d}.raw", out_dir / "labels" / f"labeled_{i:03d}.raw"
        write_volume(vol_path, v)
        write_label(lab_path, y, v.spacing)
        records.append(ManifestRecord(SampleRole.LABELED, _domain(split.labeled_domains, i),
                                      vol_path, lab_path))
    for i, v in enumerate(split.unlabeled):
        vol_path = out_dir / "volumes" / f"unlabeled_{i:03d}.raw"
        write_volume(vol_path, v)
        records.append(ManifestRecord(SampleRole.UNLABELED, _domain(split.unlabeled_domains, i),
                                      vol_path))
    for i, (v, y) in enumerate(split.test):
        vol_path, lab_path = out_dir / "volumes" / f"test_{i:03d}.raw", out_dir / "labels" / f"test_{i:03d}.raw"
        write_volume(vol_path, v)
        write_label(lab_path, y, v.spacing)
        records.append(ManifestRecord(SampleRole.TEST, _domain(split.test_domains, i),
                                      vol_path, lab_path))

    manifest = out_dir / "manifest.txt"
    write_manifest(manifest, records, preprocess_spec)
    logger.info("Wrote %d records to %s", len(records), manifest)
    return manifest
