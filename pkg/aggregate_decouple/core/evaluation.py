"""
Segmentation metrics and sliding-window inference through the predictor decoder.

Empty-mask convention: Dice and Jaccard are 1 when prediction and ground truth
are both empty and 0 when exactly one is. Surface metrics of an empty mask are
NaN, excluded from means and counted.
"""

import csv
import json
import logging
import math
import warnings
from concurrent.futures import ThreadPoolExecutor
from itertools import product
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import torch
from scipy import ndimage
from scipy.spatial.distance import cdist

from .data import num_workers
from .enums import ProbKind
from .exceptions import ValidationError, ShapeMismatchError
from .models import LabelMap, Volume, ProbMap, ClassMetrics, MetricReport
from .tensors import argmax_decode

logger = logging.getLogger(__name__)

Mask = Union[LabelMap, np.ndarray]
SURFACE_STRUCTURE = ndimage.generate_binary_structure(3, 1)
TILE_BATCH = 4


def _grid(x: Mask) -> np.ndarray:
    return np.asarray(x.data if isinstance(x, LabelMap) else x)


def _masks(pred: Mask, gt: Mask, k: int) -> Tuple[np.ndarray, np.ndarray]:
    p, g = _grid(pred), _grid(gt)
    if p.shape != g.shape:
        raise ShapeMismatchError("Prediction and ground truth shapes differ", field="pred",
                                 value=p.shape, context={"gt": g.shape})
    return p == k, g == k


def dice_score(pred: Mask, gt: Mask, k: int) -> float:
    p, g = _masks(pred, gt, k)
    total = int(p.sum()) + int(g.sum())
    if total == 0:
        return 1.0
    return 2.0 * int(np.logical_and(p, g).sum()) / total


def jaccard_score(pred: Mask, gt: Mask, k: int) -> float:
    p, g = _masks(pred, gt, k)
    union = int(np.logical_or(p, g).sum())
    if union == 0:
        return 1.0
    return int(np.logical_and(p, g).sum()) / union


def surface_voxels(mask: np.ndarray) -> np.ndarray:
    """Mask voxels with at least one 6-connected background neighbor; outside the grid counts as background"""
    eroded = ndimage.binary_erosion(mask, structure=SURFACE_STRUCTURE, border_value=0)
    return np.logical_and(mask, ~eroded)


def _directed_edt(src: np.ndarray, dst: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    distance = ndimage.distance_transform_edt(~dst, sampling=spacing)
    return distance[src]


def _directed_brute(src: np.ndarray, dst: np.ndarray, spacing: Sequence[float]) -> np.ndarray:
    scale = np.asarray(spacing, dtype=np.float64)
    a = np.argwhere(src) * scale
    b = np.argwhere(dst) * scale
    return cdist(a, b).min(axis=1)


def surface_distances(pred: Mask, gt: Mask, k: int,
                      spacing: Sequence[float] = (1.0, 1.0, 1.0),
                      method: str = "edt") -> Tuple[float, float]:
    """
    (ASD, HD95) between the class-k surfaces.

    ASD is the mean of the symmetric distance multiset, HD95 its 95th
    percentile with linear interpolation. ``method`` is ``edt`` (distance
    transform) or ``brute`` (exhaustive pairwise distances).
    """
    p, g = _masks(pred, gt, k)
    if not p.any() or not g.any():
        warnings.warn(f"Surface distance undefined for class {k}: empty mask")
        return float("nan"), float("nan")
    directed = {"edt": _directed_edt, "brute": _directed_brute}.get(method)
    if directed is None:
        raise ValidationError("Unknown surface distance method", field="method", value=method)
    sp, sg = surface_voxels(p), surface_voxels(g)
    distances = np.concatenate([directed(sp, sg, spacing), directed(sg, sp, spacing)])
    return float(distances.mean()), float(np.percentile(distances, 95))


def class_metrics(pred: Mask, gt: Mask, k: int, spacing: Sequence[float] = (1.0, 1.0, 1.0),
                  method: str = "edt") -> ClassMetrics:
    asd, hd95 = surface_distances(pred, gt, k, spacing, method)
    return ClassMetrics(dice=dice_score(pred, gt, k), jaccard=jaccard_score(pred, gt, k),
                        asd=asd, hd95=hd95)


def evaluate_case(pred: LabelMap, gt: LabelMap, spacing: Sequence[float] = (1.0, 1.0, 1.0),
                  case: str = "", method: str = "edt") -> MetricReport:
    """Metrics of every foreground class, computed in parallel across classes"""
    classes = range(1, gt.num_classes)
    with ThreadPoolExecutor(max_workers=num_workers()) as pool:
        results = list(pool.map(lambda k: class_metrics(pred, gt, k, spacing, method), classes))
    report = MetricReport(per_class=dict(zip(classes, results)), case=case)
    if report.undefined_count:
        logger.info("%s: %d classes with undefined surface metrics", case or "case",
                    report.undefined_count)
    return report


# ============================================================================
# Sliding-window inference
# ============================================================================

def gaussian_importance(patch: Sequence[int]) -> np.ndarray:
    """Separable Gaussian weights with sigma = patch / 8, peak 1, strictly positive"""
    axes = []
    for p in patch:
        x = np.arange(p, dtype=np.float64) - (p - 1) / 2.0
        axes.append(np.exp(-x ** 2 / (2.0 * (p / 8.0) ** 2)))
    weights = axes[0][:, None, None] * axes[1][None, :, None] * axes[2][None, None, :]
    weights /= weights.max()
    return np.maximum(weights, np.finfo(np.float64).tiny)


def window_starts(size: int, patch: int, stride: int) -> List[int]:
    starts = list(range(0, size - patch + 1, stride))
    if starts[-1] != size - patch:
        starts.append(size - patch)
    return starts


def _pad_for_patch(data: np.ndarray, patch: Sequence[int]) -> Tuple[np.ndarray, Tuple[slice, ...]]:
    pads = []
    for size, p in zip(data.shape, patch):
        total = max(p - size, 0)
        pads.append((total // 2, total - total // 2))
    crop = tuple(slice(before, before + size) for (before, _), size in zip(pads, data.shape))
    if any(sum(p) for p in pads):
        data = np.pad(data, pads, mode="reflect" if min(data.shape) > 1 else "symmetric")
    return data, crop


@torch.no_grad()
def sliding_window_infer(model: torch.nn.Module, v: Volume, patch: Sequence[int],
                         overlap: float = 0.5) -> ProbMap:
    """
    Whole-volume class probabilities from Gaussian-blended overlapping tiles.

    The model is called on (B, 1, *patch) tiles and must return logits; with
    a DiffVNet this is the plain encoder followed by dec_theta.
    """
    patch = tuple(int(p) for p in patch)
    strides = [int(p * (1.0 - overlap)) for p in patch]
    if any(s <= 0 for s in strides):
        raise ValidationError("Sliding-window stride must be positive", field="overlap",
                              value=overlap, context={"patch": patch})
    data, crop = _pad_for_patch(np.asarray(v.data), patch)
    param = next(model.parameters())
    weights = gaussian_importance(patch)
    weights_t = torch.as_tensor(weights, dtype=param.dtype, device=param.device)

    corners = list(product(*(window_starts(s, p, st) for s, p, st in zip(data.shape, patch, strides))))
    accumulated: Optional[np.ndarray] = None
    weight_sum = np.zeros(data.shape, dtype=np.float64)
    image = torch.as_tensor(data, dtype=param.dtype, device=param.device)

    was_training = model.training
    model.eval()
    try:
        for first in range(0, len(corners), TILE_BATCH):
            chunk = corners[first:first + TILE_BATCH]
            windows = [tuple(slice(c, c + p) for c, p in zip(corner, patch)) for corner in chunk]
            tiles = torch.stack([image[w] for w in windows])[:, None]
            probs = torch.softmax(model(tiles), dim=1) * weights_t
            probs = probs.double().cpu().numpy()
            if accumulated is None:
                accumulated = np.zeros((probs.shape[1],) + data.shape, dtype=np.float64)
            for window, tile_probs in zip(windows, probs):
                accumulated[(slice(None),) + window] += tile_probs
                weight_sum[window] += weights
    finally:
        model.train(was_training)

    blended = accumulated / weight_sum[None]
    return ProbMap(blended[(slice(None),) + crop], kind=ProbKind.SIMPLEX)


def predict_label(model: torch.nn.Module, v: Volume, patch: Sequence[int],
                  overlap: float = 0.5) -> LabelMap:
    return argmax_decode(sliding_window_infer(model, v, patch, overlap))


def mean_foreground_dice(model: torch.nn.Module, pairs: Iterable[Tuple[Volume, LabelMap]],
                         patch: Sequence[int], overlap: float = 0.5) -> float:
    """Model-selection score: foreground Dice averaged over classes, then volumes"""
    scores = []
    for volume, label in pairs:
        pred = predict_label(model, volume, patch, overlap)
        scores.append(np.mean([dice_score(pred, label, k) for k in range(1, label.num_classes)]))
    return float(np.mean(scores)) if scores else float("nan")


# ============================================================================
# Reports
# ============================================================================

def summarize(reports: Sequence[MetricReport]) -> Dict[str, float]:
    """Column-wise NaN-excluding mean over cases"""
    rows = [r.to_dict() for r in reports]
    keys = [k for k in rows[0] if k != "case"] if rows else []
    summary: Dict[str, float] = {}
    for key in keys:
        values = [row[key] for row in rows if not math.isnan(row[key])]
        summary[key] = float(np.mean(values)) if values else float("nan")
    return summary


def write_metric_reports(reports: Sequence[MetricReport], out_dir: Union[str, Path]) -> Tuple[Path, Path]:
    """metrics.csv (one row per case plus a 'mean' row) and metrics.jsonl"""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = [r.to_dict() for r in reports]
    if rows:
        rows.append({"case": "mean", **summarize(reports)})
    csv_path = out_dir / "metrics.csv"
    jsonl_path = out_dir / "metrics.jsonl"
    fieldnames = list(rows[0]) if rows else ["case"]
    with open(csv_path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    with open(jsonl_path, "w", encoding="utf-8") as f:
        for row in rows:
            clean = {k: (None if isinstance(v, float) and math.isnan(v) else v) for k, v in row.items()}
            f.write(json.dumps(clean) + "\n")
    logger.info("Wrote %d metric rows to %s", len(rows), csv_path)
    return csv_path, jsonl_path
