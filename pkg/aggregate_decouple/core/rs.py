"""
Reparameterize & Smooth pseudo-labeling.

The diffusion map is resampled with Gumbel-Softmax, smoothed with a separable
Gaussian kernel, added to the softmaxed difficulty-aware map, and reduced by
argmax. Maps are channel-first tensors (B, K, D, H, W).
"""

import logging
from typing import Optional, Union

import numpy as np
import torch
import torch.nn.functional as F

from .exceptions import ValidationError, ShapeMismatchError
from .models import ProbMap, RSConfig

logger = logging.getLogger(__name__)

LOG_FLOOR = 1e-12

MapLike = Union[ProbMap, torch.Tensor]


def _batched(p: MapLike) -> torch.Tensor:
    t = torch.as_tensor(np.asarray(p.data)) if isinstance(p, ProbMap) else p
    if t.ndim == 4:
        t = t[None]
    if t.ndim != 5:
        raise ShapeMismatchError("Expected a (B, K, D, H, W) or (K, D, H, W) map", field="p",
                                 value=tuple(t.shape))
    return t


def as_logits(p: torch.Tensor) -> torch.Tensor:
    """Simplex -> logits whose softmax returns p"""
    return torch.log(p.clamp_min(LOG_FLOOR))


def gumbel_softmax(logits: MapLike, temperature: float = 1.0,
                   generator: Optional[torch.Generator] = None,
                   gumbel_noise: Optional[torch.Tensor] = None) -> torch.Tensor:
    """softmax((logits + G) / temperature) with i.i.d. standard Gumbel G per voxel and class"""
    if temperature <= 0:
        raise ValidationError("Gumbel temperature must be positive", field="temperature",
                              value=temperature)
    logits = _batched(logits)
    if gumbel_noise is None:
        u = torch.rand(logits.shape, generator=generator, dtype=logits.dtype, device=logits.device)
        tiny = torch.finfo(logits.dtype).tiny
        u = u.clamp(min=tiny, max=1.0 - torch.finfo(logits.dtype).eps)
        gumbel_noise = -torch.log(-torch.log(u))
    elif tuple(gumbel_noise.shape) != tuple(logits.shape):
        raise ShapeMismatchError("Gumbel noise shape differs from logits", field="gumbel_noise",
                                 value=tuple(gumbel_noise.shape))
    return torch.softmax((logits + gumbel_noise) / temperature, dim=1)


def gaussian_kernel1d(sigma: float, radius: int, dtype: torch.dtype = torch.float64) -> torch.Tensor:
    if radius < 1:
        raise ValidationError("Blur kernel radius must be at least 1", field="blur_kernel_radius",
                              value=radius)
    if sigma <= 0:
        raise ValidationError("Blur sigma must be positive", field="blur_sigma", value=sigma)
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    kernel = torch.exp(-x ** 2 / (2.0 * sigma ** 2))
    return (kernel / kernel.sum()).to(dtype)


def gaussian_blur3d(p: MapLike, sigma: float = 1.0, radius: int = 2) -> torch.Tensor:
    """
    Separable per-channel Gaussian blur with reflect padding.

    Axes of extent <= radius fall back to replicate padding. The kernel sums
    to 1, so per-voxel channel sums of a simplex stay 1.
    """
    t = _batched(p)
    kernel = gaussian_kernel1d(sigma, radius, t.dtype).to(t.device)
    b, k = t.shape[:2]
    out = t.reshape(b * k, 1, *t.shape[2:])
    for axis in range(3):
        mode = "reflect" if out.shape[2 + axis] > radius else "replicate"
        pad = [0, 0, 0, 0, 0, 0]
        # F.pad lists the last axis first
        pad[2 * (2 - axis)] = pad[2 * (2 - axis) + 1] = radius
        shape = [1, 1, 1, 1, 1]
        shape[2 + axis] = 2 * radius + 1
        out = F.conv3d(F.pad(out, pad, mode=mode), kernel.reshape(shape))
    return out.reshape(t.shape)


def ensemble(p_xi: MapLike, p_psi: MapLike, config: Optional[RSConfig] = None,
             generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """
    Pseudo labels (B, D, H, W) = argmax[blur(gumbel_softmax(p_xi)) + softmax(p_psi)].

    Both inputs are logits. With ``reparameterize`` off the diffusion map is
    plainly softmaxed. Ties go to the lowest class index.
    """
    config = config or RSConfig()
    p_xi, p_psi = _batched(p_xi), _batched(p_psi)
    if p_xi.shape != p_psi.shape:
        raise ShapeMismatchError("Ensembled maps differ in shape", field="p_psi",
                                 value=tuple(p_psi.shape), context={"p_xi": tuple(p_xi.shape)})
    if config.reparameterize:
        smoothed = gaussian_blur3d(
            gumbel_softmax(p_xi, config.gumbel_temperature, generator),
            config.blur_sigma, config.blur_kernel_radius,
        )
    else:
        smoothed = torch.softmax(p_xi, dim=1)
    score = smoothed + torch.softmax(p_psi, dim=1)
    # torch.argmax returns the first maximal index
    return torch.argmax(score, dim=1)
