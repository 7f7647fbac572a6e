"""Encoder with two independent decoders predicting a per-pixel Gaussian over edge logits."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn

from .annotations import InvalidInputError

SQRT_EPS = 1e-12
VAR_INIT = 0.05


@dataclass
class EncoderConfig:
    n_stages: int = 4
    channels: tuple[int, ...] = (16, 32, 48, 64)
    stem_channels: int = 8
    decoder_channels: tuple[int, ...] | None = None
    groups: int = 4
    dense: bool = False
    seed: int = 0

    def __post_init__(self):
        self.channels = tuple(int(c) for c in self.channels)
        if len(self.channels) != self.n_stages:
            raise InvalidInputError(
                f"need one channel count per stage, got {len(self.channels)} for {self.n_stages} stages"
            )
        if self.decoder_channels is None:
            self.decoder_channels = self.channels
        self.decoder_channels = tuple(int(c) for c in self.decoder_channels)

    @property
    def stride(self) -> int:
        return 2**self.n_stages

    @property
    def scales(self) -> tuple[float, ...]:
        return tuple(0.5 ** (i + 1) for i in range(self.n_stages))

    def to_dict(self) -> dict:
        d = asdict(self)
        d["channels"] = list(self.channels)
        d["decoder_channels"] = list(self.decoder_channels)
        return d


@dataclass
class FeaturePyramid:
    """Encoder output: ``features[i]`` has stride ``2**(i+1)``; ``stem`` is full resolution."""

    stem: torch.Tensor
    features: list[torch.Tensor]
    scales: tuple[float, ...]
    input_shape: tuple[int, int]


@dataclass
class DistributionPrediction:
    mu: torch.Tensor  # pre-sigmoid mean logits
    var: torch.Tensor  # non-negative variance

    @property
    def sigma(self) -> torch.Tensor:
        return torch.sqrt(self.var + SQRT_EPS)


def _norm(channels: int, groups: int) -> nn.GroupNorm:
    return nn.GroupNorm(math.gcd(groups, channels), channels)


class ConvBlock(nn.Sequential):
    """conv3x3 - GroupNorm - SiLU, optionally strided."""

    def __init__(self, cin: int, cout: int, stride: int = 1, groups: int = 4):
        super().__init__(
            nn.Conv2d(cin, cout, 3, stride=stride, padding=1, bias=False),
            _norm(cout, groups),
            nn.SiLU(),
        )


class Encoder(nn.Module):
    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        self.stem = ConvBlock(3, cfg.stem_channels, groups=cfg.groups)
        stages = []
        cin = cfg.stem_channels
        for cout in cfg.channels:
            stages.append(
                nn.Sequential(
                    ConvBlock(cin, cout, stride=2, groups=cfg.groups),
                    ConvBlock(cout, cout, groups=cfg.groups),
                )
            )
            cin = cout
        self.stages = nn.ModuleList(stages)

    def forward(self, x: torch.Tensor) -> FeaturePyramid:
        H, W = x.shape[-2:]
        stride = self.cfg.stride
        if H < 32 or W < 32 or H % stride or W % stride:
            raise InvalidInputError(
                f"input {H}x{W} must be at least 32x32 and divisible by {stride}"
            )
        stem = self.stem(x)
        feats = []
        h = stem
        for stage in self.stages:
            h = stage(h)
            feats.append(h)
        return FeaturePyramid(stem=stem, features=feats, scales=self.cfg.scales, input_shape=(H, W))


class Decoder(nn.Module):
    """UNet-style decoder: upsample, concatenate the skip, conv block; ends at full resolution.

    With ``dense=True`` each level additionally receives every deeper encoder
    feature resized to its resolution (a light stand-in for nested skips).
    """

    def __init__(self, cfg: EncoderConfig):
        super().__init__()
        self.cfg = cfg
        enc = cfg.channels
        dec = cfg.decoder_channels
        blocks = []
        cin = enc[-1]
        # level i merges the running tensor with the skip at stride 2**(i+1) (or the stem for i = -1)
        for i in range(cfg.n_stages - 2, -2, -1):
            skip_c = enc[i] if i >= 0 else cfg.stem_channels
            extra = sum(enc[i + 2 :]) if cfg.dense and i >= 0 else 0
            cout = dec[i] if i >= 0 else dec[0]
            blocks.append(
                nn.Sequential(
                    ConvBlock(cin + skip_c + extra, cout, groups=cfg.groups),
                    ConvBlock(cout, cout, groups=cfg.groups),
                )
            )
            cin = cout
        self.blocks = nn.ModuleList(blocks)
        self.out_channels = cin

    def forward(self, pyramid: FeaturePyramid) -> torch.Tensor:
        feats = pyramid.features
        if len(feats) != self.cfg.n_stages:
            raise InvalidInputError(
                f"pyramid has {len(feats)} levels, decoder expects {self.cfg.n_stages}"
            )
        h = feats[-1]
        skips = list(reversed(feats[:-1])) + [pyramid.stem]
        for j, (block, skip) in enumerate(zip(self.blocks, skips)):
            h = F.interpolate(h, size=skip.shape[-2:], mode="nearest")
            parts = [h, skip]
            level = self.cfg.n_stages - 2 - j
            if self.cfg.dense and level >= 0:
                for deeper in feats[level + 2 :]:
                    parts.append(F.interpolate(deeper, size=skip.shape[-2:], mode="nearest"))
            h = block(torch.cat(parts, dim=1))
        return h


class UAEDNet(nn.Module):
    """Shared encoder, mean branch (decoder + 1x1 head) and variance branch (decoder + 1x1 head + softplus).

    ``with_variance=False`` builds the deterministic fused-label baseline.
    """

    def __init__(self, cfg: EncoderConfig | None = None, with_variance: bool = True):
        super().__init__()
        self.cfg = cfg or EncoderConfig()
        self.with_variance = with_variance
        self.encoder = Encoder(self.cfg)
        self.mean_decoder = Decoder(self.cfg)
        self.mean_head = nn.Conv2d(self.mean_decoder.out_channels, 1, 1)
        if with_variance:
            self.var_decoder = Decoder(self.cfg)
            self.var_head = nn.Conv2d(self.var_decoder.out_channels, 1, 1)
        self.reset_parameters(self.cfg.seed)

    @torch.no_grad()
    def reset_parameters(self, seed: int) -> None:
        gen = torch.Generator().manual_seed(int(seed))
        for name, p in self.named_parameters():
            if name.endswith("bias"):
                p.zero_()
            elif p.dim() > 1:
                fan_in = p[0].numel()
                p.copy_(torch.randn(p.shape, generator=gen) * math.sqrt(2.0 / fan_in))
            else:
                p.fill_(1.0)  # norm scales
        if self.with_variance:
            # softplus(b) = VAR_INIT; small weights keep the initial variance near-constant
            self.var_head.weight.mul_(1e-3)
            self.var_head.bias.fill_(math.log(math.expm1(VAR_INIT)))

    def encode(self, image: torch.Tensor) -> FeaturePyramid:
        return self.encoder(_as_batch(image))

    def decode_mean(self, pyramid: FeaturePyramid) -> torch.Tensor:
        return self.mean_head(self.mean_decoder(pyramid))[:, 0]

    def decode_variance(self, pyramid: FeaturePyramid) -> torch.Tensor:
        if not self.with_variance:
            raise InvalidInputError("this model has no variance branch")
        return F.softplus(self.var_head(self.var_decoder(pyramid)))[:, 0]

    def forward(self, image: torch.Tensor) -> DistributionPrediction:
        pyramid = self.encode(image)
        mu = self.decode_mean(pyramid)
        var = self.decode_variance(pyramid) if self.with_variance else torch.zeros_like(mu)
        return DistributionPrediction(mu=mu, var=var)

    def branch_parameters(self, branch: str) -> list[nn.Parameter]:
        prefixes = {
            "encoder": ("encoder.",),
            "mean": ("mean_decoder.", "mean_head."),
            "variance": ("var_decoder.", "var_head."),
        }[branch]
        return [p for n, p in self.named_parameters() if n.startswith(prefixes)]


def _as_batch(image) -> torch.Tensor:
    """Accept (H, W, 3) uint8/float arrays or (B, 3, H, W) tensors."""
    if isinstance(image, np.ndarray):
        arr = image.astype(np.float32)
        if image.dtype == np.uint8:
            arr /= 255.0
        if arr.ndim == 3:
            arr = arr.transpose(2, 0, 1)[None]
        elif arr.ndim == 4:
            arr = arr.transpose(0, 3, 1, 2)
        else:
            raise InvalidInputError(f"expected an H×W×3 image, got shape {image.shape}")
        image = torch.from_numpy(np.ascontiguousarray(arr))
    if image.dim() == 3:
        image = image[None]
    if image.dim() != 4 or image.shape[1] != 3:
        raise InvalidInputError(f"expected 3-channel input, got shape {tuple(image.shape)}")
    return image


def image_to_tensor(image: np.ndarray) -> torch.Tensor:
    """(H, W, 3) uint8 -> (3, H, W) float32 in [0, 1]."""
    return torch.from_numpy(np.ascontiguousarray(image.transpose(2, 0, 1), dtype=np.float32) / 255.0)


def safe_sqrt(var: torch.Tensor) -> torch.Tensor:
    """Exact sqrt with a zero (rather than infinite) gradient where ``var == 0``."""
    positive = var > 0
    return torch.where(positive, torch.sqrt(torch.where(positive, var, torch.ones_like(var))), torch.zeros_like(var))


def sample_prediction(mu: torch.Tensor, var: torch.Tensor, epsilon) -> torch.Tensor:
    """Reparameterized sample ``sigmoid(mu + epsilon * sqrt(var))``.

    ``epsilon`` may be a tensor broadcastable to ``mu`` or the scalar 0.
    """
    if torch.any(var < 0):
        raise InvalidInputError("variance must be non-negative")
    if isinstance(epsilon, (int, float)) and epsilon == 0:
        return torch.sigmoid(mu)
    epsilon = torch.as_tensor(epsilon, dtype=mu.dtype)
    return torch.sigmoid(mu + epsilon * safe_sqrt(var))
