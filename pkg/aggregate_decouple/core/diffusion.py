"""
Label-space diffusion: linear noise schedule, forward noising of one-hot
labels and the deterministic DDIM sampler.

Timesteps are 1-based; alpha_bar at t = 0 is 1 by definition.
"""

import logging
import math
from dataclasses import dataclass
from typing import Callable, Optional, Union

import numpy as np
import torch

from .exceptions import ValidationError, ShapeMismatchError
from .models import OneHot, Volume

logger = logging.getLogger(__name__)

BETA_START = 1e-4
BETA_END = 2e-2

Array = Union[np.ndarray, torch.Tensor]
Denoiser = Callable[[torch.Tensor, torch.Tensor, int], torch.Tensor]


@dataclass(frozen=True, eq=False)
class NoiseSchedule:
    """betas[t-1] and alpha_bar[t-1] hold the values of step t"""
    T: int
    betas: np.ndarray
    alpha_bar: np.ndarray

    def alpha_bar_at(self, t: int) -> float:
        if not 0 <= t <= self.T:
            raise ValidationError("Timestep outside [0, T]", field="t", value=t,
                                  context={"T": self.T})
        return 1.0 if t == 0 else float(self.alpha_bar[t - 1])


@dataclass(frozen=True, eq=False)
class TimestepEmbedding:
    dim: int
    values: np.ndarray


def make_schedule(T: int, beta_start: float = BETA_START, beta_end: float = BETA_END) -> NoiseSchedule:
    """Linear beta schedule; alpha_bar is the exact cumulative product of (1 - beta)"""
    if T < 1:
        raise ValidationError("Number of diffusion steps must be positive", field="T", value=T)
    betas = np.linspace(beta_start, beta_end, T, dtype=np.float64)
    alpha_bar = np.cumprod(1.0 - betas)
    betas.setflags(write=False)
    alpha_bar.setflags(write=False)
    return NoiseSchedule(T=T, betas=betas, alpha_bar=alpha_bar)


def diffuse(y0: Array, alpha_bar: float, eps: Array) -> Array:
    return math.sqrt(alpha_bar) * y0 + math.sqrt(1.0 - alpha_bar) * eps


def forward_diffuse(y0: Union[OneHot, Array], t: int, eps: Array, sched: NoiseSchedule) -> Array:
    """y_t = sqrt(ab_t) * y0 + sqrt(1 - ab_t) * eps"""
    if not 1 <= t <= sched.T:
        raise ValidationError("Timestep outside [1, T]", field="t", value=t,
                              context={"T": sched.T})
    data = y0.data if isinstance(y0, OneHot) else y0
    if tuple(data.shape) != tuple(eps.shape):
        raise ShapeMismatchError("Noise shape differs from the label", field="eps",
                                 value=tuple(eps.shape), context={"label": tuple(data.shape)})
    if isinstance(data, np.ndarray):
        data = data.astype(np.float64)
    return diffuse(data, sched.alpha_bar_at(t), eps)


def ddim_update(y_t: Array, pred_y0: Array, alpha_bar_t: float, alpha_bar_prev: float) -> Array:
    """Deterministic (eta = 0) DDIM move from alpha_bar_t to alpha_bar_prev"""
    eps_hat = (y_t - math.sqrt(alpha_bar_t) * pred_y0) / math.sqrt(1.0 - alpha_bar_t)
    return math.sqrt(alpha_bar_prev) * pred_y0 + math.sqrt(1.0 - alpha_bar_prev) * eps_hat


def ddim_step(y_t: Array, pred_y0: Array, t: int, t_prev: int, sched: NoiseSchedule) -> Array:
    if not 0 <= t_prev < t <= sched.T:
        raise ValidationError("DDIM step needs 0 <= t_prev < t <= T", field="t_prev",
                              value=t_prev, context={"t": t, "T": sched.T})
    if t_prev == 0:
        return pred_y0
    return ddim_update(y_t, pred_y0, sched.alpha_bar_at(t), sched.alpha_bar_at(t_prev))


def timestep_grid(T: int, steps: int) -> np.ndarray:
    """Evenly spaced descending timesteps from T down to 1"""
    if steps < 1:
        raise ValidationError("DDIM needs at least one step", field="steps", value=steps)
    grid = np.round(np.linspace(T, 1, min(steps, T))).astype(np.int64)
    return np.unique(grid)[::-1]


def softmax_y0(logits: torch.Tensor) -> torch.Tensor:
    return torch.softmax(logits, dim=1)


@torch.no_grad()
def ddim_generate(denoiser: Denoiser, x: Union[Volume, torch.Tensor], steps: int,
                  sched: NoiseSchedule, generator: Optional[torch.Generator] = None,
                  num_classes: int = 2,
                  to_y0: Callable[[torch.Tensor], torch.Tensor] = softmax_y0) -> torch.Tensor:
    """
    Sample a class map by iterating DDIM from pure noise.

    Args:
        denoiser: callable (x, y_t, t) -> logits of shape (B, K, D, H, W)
        x: image batch (B, 1, D, H, W) or a single Volume
        steps: length of the timestep subsequence
        to_y0: maps denoiser logits into one-hot space for the update

    Returns:
        softmax of the final logits, shape (B, K, D, H, W)
    """
    if isinstance(x, Volume):
        x = torch.as_tensor(np.asarray(x.data)).to(torch.get_default_dtype())[None, None]
    shape = (x.shape[0], num_classes) + tuple(x.shape[2:])
    y = torch.randn(shape, generator=generator, dtype=x.dtype, device=x.device)
    grid = timestep_grid(sched.T, steps)

    logits = None
    for i, t in enumerate(grid):
        t_prev = int(grid[i + 1]) if i + 1 < len(grid) else 0
        logits = denoiser(x, y, int(t))
        if tuple(logits.shape) != shape:
            raise ShapeMismatchError("Denoiser output shape mismatch", field="logits",
                                     value=tuple(logits.shape), context={"expected": shape})
        y = ddim_step(y, to_y0(logits), int(t), t_prev, sched)
    return torch.softmax(logits, dim=1)


def timestep_embed(t: int, dim: int) -> TimestepEmbedding:
    """Sinusoidal features: sin half then cos half at geometrically spaced frequencies"""
    values = timestep_features(torch.tensor([float(t)], dtype=torch.float64), dim)[0]
    return TimestepEmbedding(dim=dim, values=values.numpy())


def timestep_features(t: torch.Tensor, dim: int) -> torch.Tensor:
    """(B,) timesteps -> (B, dim) embedding"""
    if dim < 2 or dim % 2:
        raise ValidationError("Embedding width must be a positive even number", field="dim",
                              value=dim)
    half = dim // 2
    freqs = torch.exp(-math.log(10000.0) * torch.arange(half, dtype=t.dtype, device=t.device) / half)
    args = t[:, None] * freqs[None]
    return torch.cat([torch.sin(args), torch.cos(args)], dim=1)
