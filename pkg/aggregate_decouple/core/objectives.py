"""
DiceCE loss, the three training losses and the Gaussian ramp-up of the
unsupervised weight.
"""

import logging
import math
from typing import Sequence, Union

import torch

from .exceptions import ValidationError, ShapeMismatchError
from .tensors import one_hot_tensor

logger = logging.getLogger(__name__)

EPS_DICE = 1e-5

Weights = Union[torch.Tensor, Sequence[float], None]


def _class_weights(weights: Weights, num_classes: int, like: torch.Tensor) -> torch.Tensor:
    if weights is None:
        return torch.ones(num_classes, dtype=like.dtype, device=like.device)
    w = torch.as_tensor(weights, dtype=like.dtype, device=like.device).reshape(-1)
    if w.shape[0] != num_classes:
        raise ShapeMismatchError("Need one weight per class", field="class_weights",
                                 value=w.shape[0], context={"num_classes": num_classes})
    if (w < 0).any() or not torch.isfinite(w).all():
        raise ValidationError("Class weights must be finite and nonnegative",
                              field="class_weights", value=w.tolist())
    return w


def _batched(t: torch.Tensor) -> torch.Tensor:
    return t[None] if t.ndim == 4 else t


def dice_ce_per_sample(logits: torch.Tensor, target: torch.Tensor,
                       class_weights: Weights = None) -> torch.Tensor:
    """(B,) losses 0.5 * (weighted voxel-mean CE + weighted mean soft-Dice loss)"""
    logits, target = _batched(logits), _batched(target)
    if logits.shape != target.shape:
        raise ShapeMismatchError("Logits and target shapes differ", field="target",
                                 value=tuple(target.shape), context={"logits": tuple(logits.shape)})
    b, k = logits.shape[:2]
    target = target.to(logits.dtype)
    w = _class_weights(class_weights, k, logits)

    log_p = torch.log_softmax(logits, dim=1).reshape(b, k, -1)
    p = log_p.exp()
    y = target.reshape(b, k, -1)

    ce = -(w[None] * (y * log_p).mean(dim=2)).sum(dim=1)
    intersection = (p * y).sum(dim=2)
    denominator = p.sum(dim=2) + y.sum(dim=2)
    dice = (2.0 * intersection + EPS_DICE) / (denominator + EPS_DICE)
    dice_loss = (w[None] * (1.0 - dice)).mean(dim=1)
    return 0.5 * (ce + dice_loss)


def dice_ce(logits: torch.Tensor, target: torch.Tensor, class_weights: Weights = None) -> torch.Tensor:
    """Mean DiceCE over the batch"""
    return dice_ce_per_sample(logits, target, class_weights).mean()


def _require_batch(logits: torch.Tensor, name: str) -> None:
    if logits.ndim != 5 or logits.shape[0] == 0:
        raise ValidationError(f"{name} needs a nonempty (B, K, D, H, W) batch", field=name,
                              value=tuple(logits.shape))


def l_deno(logits_xi: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """Denoising loss of the xi decoder against one-hot labels"""
    _require_batch(logits_xi, "l_deno")
    return dice_ce(logits_xi, target)


def l_diff(logits_psi: torch.Tensor, target: torch.Tensor, weights: Weights) -> torch.Tensor:
    """Class-weighted DiceCE of the psi decoder"""
    _require_batch(logits_psi, "l_diff")
    return dice_ce(logits_psi, target, weights)


def l_u(logits_theta: torch.Tensor, pseudo_labels: torch.Tensor) -> torch.Tensor:
    """DiceCE of the theta decoder against detached hard pseudo labels (B, D, H, W)"""
    _require_batch(logits_theta, "l_u")
    target = one_hot_tensor(pseudo_labels.detach(), logits_theta.shape[1]).to(logits_theta.dtype)
    return dice_ce(logits_theta, target)


def ramp_weight(iteration: int, max_iterations: int, mu: float = 10.0,
                ramp_fraction: float = 0.4) -> float:
    """mu * exp(-5 (1 - r)^2), r = min(iteration / (ramp_fraction * max_iterations), 1)"""
    if not 0 <= iteration <= max_iterations:
        raise ValidationError("Iteration outside [0, max_iterations]", field="iteration",
                              value=iteration, context={"max_iterations": max_iterations})
    ramp_len = ramp_fraction * max_iterations
    if ramp_len <= 0:
        return float(mu)
    r = min(iteration / ramp_len, 1.0)
    return float(mu * math.exp(-5.0 * (1.0 - r) ** 2))
