"""
Elementary conversions between label grids and channel-first class maps.
"""

from typing import Union

import numpy as np
import torch
import torch.nn.functional as F

from .enums import ProbKind
from .exceptions import InvalidLabelError, ShapeMismatchError
from .models import LabelMap, OneHot, ProbMap


def one_hot_encode(label: LabelMap) -> OneHot:
    """Channel k is 1 exactly where the label equals k"""
    data = np.asarray(label.data)
    k = label.num_classes
    if data.min() < 0 or data.max() >= k:
        raise InvalidLabelError("Label value outside [0, K-1]", field="label",
                                value=int(data.max()), context={"num_classes": k})
    encoded = (np.arange(k).reshape(k, 1, 1, 1) == data[None]).astype(np.float32)
    return OneHot(encoded)


def argmax_decode(p: Union[ProbMap, OneHot]) -> LabelMap:
    """Per-voxel index of the maximal channel; ties go to the lowest class index"""
    data = np.asarray(p.data)
    if data.ndim != 4:
        raise ShapeMismatchError("Expected a rank-4 (K, D, H, W) map", field="p",
                                 value=data.shape)
    # np.argmax returns the first maximal index
    return LabelMap(np.argmax(data, axis=0), num_classes=data.shape[0])


def one_hot_tensor(labels: torch.Tensor, num_classes: int) -> torch.Tensor:
    """(B, D, H, W) integer tensor -> (B, K, D, H, W) float one-hot"""
    if labels.numel() and (labels.min() < 0 or labels.max() >= num_classes):
        raise InvalidLabelError("Label value outside [0, K-1]", field="labels",
                                value=int(labels.max()), context={"num_classes": num_classes})
    encoded = F.one_hot(labels.long(), num_classes)
    return encoded.permute(0, 4, 1, 2, 3).to(torch.get_default_dtype())


def prob_map_from_tensor(t: torch.Tensor, kind: ProbKind = ProbKind.LOGITS) -> ProbMap:
    """Detach a single (K, D, H, W) tensor into an immutable ProbMap"""
    return ProbMap(t.detach().cpu().numpy(), kind=kind)
