"""
Diff-VNet: one shared four-stage volumetric encoder behind two input stems,
three structurally identical V-Net decoders, and EMA distillation of the
two supervised decoders into the predictor.

Decoder roles:
    dec_xi     denoising decoder, fed by the label-conditioned encoder path
    dec_psi    difficulty-aware decoder, fed by the plain path
    dec_theta  unlabeled-data predictor, the only decoder used at inference
"""

import logging
from dataclasses import dataclass
from typing import Dict, List, Tuple, Union

import torch
import torch.nn as nn

from .diffusion import timestep_features
from .exceptions import ValidationError, ShapeMismatchError, LayoutMismatchError
from .models import check_feature_size, norm_groups

logger = logging.getLogger(__name__)

NUM_STAGES = 4
DECODER_NAMES = ("dec_xi", "dec_psi", "dec_theta")


class ConvBlock(nn.Sequential):
    """Two 3x3x3 convolutions, each followed by GroupNorm and LeakyReLU"""

    def __init__(self, in_channels: int, out_channels: int):
        super().__init__(
            nn.Conv3d(in_channels, out_channels, 3, padding=1),
            nn.GroupNorm(norm_groups(out_channels), out_channels),
            nn.LeakyReLU(0.01),
            nn.Conv3d(out_channels, out_channels, 3, padding=1),
            nn.GroupNorm(norm_groups(out_channels), out_channels),
            nn.LeakyReLU(0.01),
        )


class DownStage(nn.Sequential):
    def __init__(self, in_channels: int, out_channels: int):
        super().__init__(
            nn.Conv3d(in_channels, out_channels, 2, stride=2),
            nn.GroupNorm(norm_groups(out_channels), out_channels),
            nn.LeakyReLU(0.01),
            ConvBlock(out_channels, out_channels),
        )


@dataclass(frozen=True, eq=False)
class FeaturePyramid:
    """Encoder outputs h_0..h_4; level i has F*2^i channels at 1/2^i resolution"""
    levels: Tuple[torch.Tensor, ...]

    def __post_init__(self):
        levels = tuple(self.levels)
        object.__setattr__(self, "levels", levels)
        if len(levels) != NUM_STAGES + 1:
            raise ShapeMismatchError("Pyramid must have five levels", field="levels",
                                     value=len(levels))
        base = levels[0].shape
        for i, h in enumerate(levels):
            expected = (base[0], base[1] * 2 ** i) + tuple(s // 2 ** i for s in base[2:])
            if tuple(h.shape) != expected:
                raise ShapeMismatchError("Pyramid level breaks the halving/doubling law",
                                         field=f"h{i}", value=tuple(h.shape),
                                         context={"expected": expected})
            if not torch.isfinite(h).all():
                raise ValidationError("Pyramid level holds non-finite values",
                                      field=f"h{i}")

    @property
    def widths(self) -> Tuple[int, ...]:
        return tuple(h.shape[1] for h in self.levels)

    def __getitem__(self, i: int) -> torch.Tensor:
        return self.levels[i]


class SharedTrunk(nn.Module):
    """Full-resolution block plus four down-sampling stages"""

    def __init__(self, feature_size: int):
        super().__init__()
        widths = [feature_size * 2 ** i for i in range(NUM_STAGES + 1)]
        self.stages = nn.ModuleList(
            [ConvBlock(widths[0], widths[0])]
            + [DownStage(widths[i - 1], widths[i]) for i in range(1, NUM_STAGES + 1)]
        )
        self.widths = widths

    def forward(self, h: torch.Tensor, time_shifts: Union[List[torch.Tensor], None] = None) -> FeaturePyramid:
        levels = []
        for i, stage in enumerate(self.stages):
            h = stage(h)
            if time_shifts is not None:
                h = h + time_shifts[i][:, :, None, None, None]
            levels.append(h)
        return FeaturePyramid(tuple(levels))


class Decoder(nn.Module):
    """V-Net style decoder with skip connections and a 1x1x1 classifier"""

    def __init__(self, feature_size: int, num_classes: int):
        super().__init__()
        widths = [feature_size * 2 ** i for i in range(NUM_STAGES + 1)]
        self.ups = nn.ModuleList(
            [nn.ConvTranspose3d(widths[i], widths[i - 1], 2, stride=2)
             for i in range(NUM_STAGES, 0, -1)]
        )
        self.blocks = nn.ModuleList(
            [ConvBlock(2 * widths[i - 1], widths[i - 1]) for i in range(NUM_STAGES, 0, -1)]
        )
        self.head = nn.Conv3d(widths[0], num_classes, 1)
        self.widths = tuple(widths)

    def forward(self, pyramid: FeaturePyramid) -> torch.Tensor:
        if pyramid.widths != self.widths:
            raise ShapeMismatchError("Pyramid widths do not match the decoder", field="pyramid",
                                     value=pyramid.widths, context={"decoder": self.widths})
        h = pyramid[NUM_STAGES]
        for step, (up, block) in enumerate(zip(self.ups, self.blocks)):
            skip = pyramid[NUM_STAGES - 1 - step]
            h = block(torch.cat([up(h), skip], dim=1))
        return self.head(h)


class DiffVNet(nn.Module):
    """
    Shared encoder with a denoising stem (K+1 input channels: noisy label plus
    image) and a plain stem (image only), followed by three decoders.
    """

    def __init__(self, num_classes: int, feature_size: int = 8):
        check_feature_size(feature_size)
        super().__init__()
        self.num_classes = num_classes
        self.feature_size = feature_size
        time_dim = 4 * feature_size
        self.stem_denoise = nn.Conv3d(num_classes + 1, feature_size, 3, padding=1)
        self.stem_plain = nn.Conv3d(1, feature_size, 3, padding=1)
        self.encoder_shared = SharedTrunk(feature_size)
        self.time_mlp = nn.Sequential(
            nn.Linear(feature_size, time_dim),
            nn.SiLU(),
            nn.Linear(time_dim, time_dim),
        )
        self.time_proj = nn.ModuleList([nn.Linear(time_dim, w) for w in self.encoder_shared.widths])
        self.dec_xi = Decoder(feature_size, num_classes)
        self.dec_psi = Decoder(feature_size, num_classes)
        self.dec_theta = Decoder(feature_size, num_classes)
        # all three decoders start from the same weights
        self.dec_psi.load_state_dict(self.dec_xi.state_dict())
        self.dec_theta.load_state_dict(self.dec_xi.state_dict())

    def _check_spatial(self, x: torch.Tensor) -> None:
        if x.ndim != 5 or any(s % 2 ** NUM_STAGES for s in x.shape[2:]):
            raise ShapeMismatchError("Input must be (B, C, D, H, W) with dims divisible by 16",
                                     field="x", value=tuple(x.shape))

    def encode_denoising(self, x: torch.Tensor, y_t: torch.Tensor,
                         t: Union[int, torch.Tensor]) -> FeaturePyramid:
        """Encode concat([y_t, x]) with the timestep embedding added at every stage"""
        self._check_spatial(x)
        if y_t.shape[1] != self.num_classes or y_t.shape[2:] != x.shape[2:] or x.shape[1] != 1:
            raise ShapeMismatchError("Denoising stem expects K noisy-label channels plus one image "
                                     "channel on a shared grid", field="y_t",
                                     value=tuple(y_t.shape), context={"x": tuple(x.shape)})
        if not torch.is_tensor(t):
            t = torch.full((x.shape[0],), float(t), dtype=x.dtype, device=x.device)
        t = t.to(dtype=x.dtype, device=x.device).reshape(-1).expand(x.shape[0])
        temb = self.time_mlp(timestep_features(t, self.feature_size))
        shifts = [proj(temb) for proj in self.time_proj]
        return self.encoder_shared(self.stem_denoise(torch.cat([y_t, x], dim=1)), shifts)

    def encode_plain(self, x: torch.Tensor) -> FeaturePyramid:
        self._check_spatial(x)
        if x.shape[1] != 1:
            raise ShapeMismatchError("Plain stem expects one image channel", field="x",
                                     value=tuple(x.shape))
        return self.encoder_shared(self.stem_plain(x))

    def decoder(self, name: str) -> Decoder:
        if name not in DECODER_NAMES:
            raise LayoutMismatchError("Unknown decoder", field="name", value=name)
        return getattr(self, name)

    def decode(self, name: str, pyramid: FeaturePyramid) -> torch.Tensor:
        return decode(self.decoder(name), pyramid)

    def denoise(self, x: torch.Tensor, y_t: torch.Tensor, t: Union[int, torch.Tensor]) -> torch.Tensor:
        """Denoiser callable for the DDIM sampler: logits of the clean label"""
        return self.dec_xi(self.encode_denoising(x, y_t, t))

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """Inference path: plain encoder and the predictor decoder"""
        return self.dec_theta(self.encode_plain(x))


def decode(decoder: Decoder, pyramid: FeaturePyramid) -> torch.Tensor:
    """Logits (B, K, D, H, W) of one decoder applied to a pyramid"""
    return decoder(pyramid)


def decoder_layout(decoder: nn.Module) -> Dict[str, Tuple[int, ...]]:
    return {name: tuple(p.shape) for name, p in decoder.named_parameters()}


@torch.no_grad()
def ema_distill(model: DiffVNet, w_ema: float) -> None:
    """theta <- w * theta + (1 - w) * (xi + psi) / 2, elementwise; xi and psi untouched"""
    layouts = [decoder_layout(model.decoder(name)) for name in DECODER_NAMES]
    if not layouts[0] == layouts[1] == layouts[2]:
        raise LayoutMismatchError("Decoder parameter layouts differ", field="decoders",
                                  context={n: len(l) for n, l in zip(DECODER_NAMES, layouts)})
    xi = dict(model.dec_xi.named_parameters())
    psi = dict(model.dec_psi.named_parameters())
    for name, theta in model.dec_theta.named_parameters():
        theta.copy_(w_ema * theta + (1.0 - w_ema) * (xi[name] + psi[name]) / 2)


def trunk_parameters(model: DiffVNet) -> List[nn.Parameter]:
    return list(model.encoder_shared.parameters())
