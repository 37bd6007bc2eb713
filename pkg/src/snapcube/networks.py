"""Demosaicking generator and patch discriminator.

The generator is a U-shaped refinement network with multi-scale residual
blocks operating on the bilinearly interpolated cube. Its head is residual on
the input and ends in clamp-then-override, so raw sensor samples survive into
the output exactly regardless of what the backbone does: data fidelity is
structural, not learned.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
from torch.nn import functional as F

from .errors import ConfigurationError, ShapeError
from .mosaic import Hypercube, MsfaPattern, SnapshotMosaic, band_mask_cached


@dataclass(frozen=True)
class GeneratorConfig:
    """Demosaicking network topology."""

    bands: int
    base_channels: int = 32
    depth: int = 3
    blocks_per_level: int = 1
    block_scale: int = 4  # channel groups inside each multi-scale block

    def __post_init__(self):
        if self.depth < 1:
            raise ConfigurationError("generator depth must be at least 1")
        if self.bands < 1 or self.base_channels < 1 or self.blocks_per_level < 1:
            raise ConfigurationError("invalid generator topology")
        if self.base_channels % self.block_scale:
            raise ConfigurationError(
                f"base_channels {self.base_channels} must be divisible by the "
                f"block scale {self.block_scale}")


class MultiScaleResidualBlock(nn.Module):
    """Residual block whose channel groups see progressively larger context.

    The input is split into `scale` groups; each group past the first is
    convolved together with the previous group's output, giving a hierarchy of
    effective receptive fields inside one block.
    """

    def __init__(self, channels: int, scale: int = 4):
        super().__init__()
        if channels % scale:
            raise ConfigurationError(
                f"channels {channels} not divisible by scale {scale}")
        self.scale = scale
        width = channels // scale
        self.convs = nn.ModuleList(
            [nn.Conv2d(width, width, 3, padding=1) for _ in range(scale - 1)])
        self.fuse = nn.Conv2d(channels, channels, 1)

    def forward(self, x):
        groups = torch.chunk(x, self.scale, dim=1)
        outs = [groups[0]]
        prev = None
        for conv, group in zip(self.convs, groups[1:]):
            prev = conv(group if prev is None else group + prev)
            prev = F.silu(prev)
            outs.append(prev)
        return x + self.fuse(torch.cat(outs, dim=1))


def _level_blocks(channels: int, count: int, scale: int) -> nn.Sequential:
    return nn.Sequential(*[MultiScaleResidualBlock(channels, scale)
                           for _ in range(count)])


class DemosaicGenerator(nn.Module):
    """U-shaped refinement of the interpolated cube with structural data fidelity.

    forward(lin_cube, mosaic) = override(clamp(lin_cube + delta, 0, 1), mosaic)
    where delta is the network prediction. With all head weights zero the
    output therefore reduces to override(lin_cube, mosaic).
    """

    def __init__(self, config: GeneratorConfig, pattern: MsfaPattern):
        super().__init__()
        if config.bands != pattern.band_count:
            raise ConfigurationError(
                f"generator bands {config.bands} != pattern bands "
                f"{pattern.band_count}")
        self.config = config
        self.pattern = pattern
        c, depth, n, s = (config.base_channels, config.depth,
                          config.blocks_per_level, config.block_scale)

        self.stem = nn.Conv2d(config.bands, c, 3, padding=1)
        self.enc_blocks = nn.ModuleList()
        self.downs = nn.ModuleList()
        ch = c
        for _ in range(depth):
            self.enc_blocks.append(_level_blocks(ch, n, s))
            self.downs.append(nn.Conv2d(ch, ch * 2, 3, stride=2, padding=1))
            ch *= 2
        self.bottleneck = _level_blocks(ch, n, s)
        self.ups = nn.ModuleList()
        self.fuses = nn.ModuleList()
        self.dec_blocks = nn.ModuleList()
        for _ in range(depth):
            self.ups.append(nn.Conv2d(ch, ch // 2, 3, padding=1))
            ch //= 2
            self.fuses.append(nn.Conv2d(ch * 2, ch, 1))
            self.dec_blocks.append(_level_blocks(ch, n, s))
        self.head = nn.Conv2d(c, config.bands, 3, padding=1)

    def _mask_for(self, mosaic: torch.Tensor) -> torch.Tensor:
        h, w = mosaic.shape[-2], mosaic.shape[-1]
        mask = band_mask_cached(self.pattern, h, w)
        return torch.from_numpy(np.ascontiguousarray(mask)).to(mosaic.device)

    def forward(self, lin_cube: torch.Tensor, mosaic: torch.Tensor) -> torch.Tensor:
        squeeze = lin_cube.ndim == 3
        if squeeze:
            lin_cube = lin_cube[None]
            if mosaic.ndim == 2:
                mosaic = mosaic[None]
        if mosaic.ndim == 3:
            mosaic = mosaic[:, None]
        if lin_cube.shape[1] != self.config.bands:
            raise ShapeError(
                f"expected {self.config.bands} bands, got {lin_cube.shape[1]}")
        if lin_cube.shape[-2:] != mosaic.shape[-2:] or lin_cube.shape[0] != mosaic.shape[0]:
            raise ShapeError(
                f"cube shape {tuple(lin_cube.shape)} does not match mosaic "
                f"shape {tuple(mosaic.shape)}")
        h, w = lin_cube.shape[-2:]
        k = self.pattern.period
        stride = 2 ** self.config.depth
        if h % k or w % k or h % stride or w % stride:
            raise ShapeError(
                f"spatial size {h}x{w} must be divisible by the pattern period "
                f"{k} and by the downsampling factor {stride}")

        x = F.silu(self.stem(lin_cube))
        skips = []
        for blocks, down in zip(self.enc_blocks, self.downs):
            x = blocks(x)
            skips.append(x)
            x = F.silu(down(x))
        x = self.bottleneck(x)
        for up, fuse, blocks in zip(self.ups, self.fuses, self.dec_blocks):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = F.silu(up(x))
            x = fuse(torch.cat([x, skips.pop()], dim=1))
            x = blocks(x)
        delta = self.head(x)

        refined = (lin_cube + delta).clamp(0.0, 1.0)
        mask = self._mask_for(mosaic)[None]  # (1, B, H, W)
        out = torch.where(mask, mosaic.to(refined.dtype), refined)
        return out[0] if squeeze else out


# canonical patch discriminator: 4x4 kernels, strides fixed so one output unit
# sees exactly 70x70 input pixels
_DISC_STRIDES = (2, 2, 2, 1, 1)
_DISC_KERNEL = 4
PATCH_RECEPTIVE_FIELD = 70
PATCH_OUTPUT_STRIDE = 8


def patch_score_map_size(height: int, width: int) -> tuple[int, int]:
    """Spatial size of the discriminator score map, from stride arithmetic."""
    h, w = height, width
    for stride in _DISC_STRIDES:
        h = (h + 2 - _DISC_KERNEL) // stride + 1
        w = (w + 2 - _DISC_KERNEL) // stride + 1
    return h, w


@dataclass(frozen=True)
class DiscriminatorConfig:
    """Patch discriminator width; layer geometry is fixed by the 70x70 field."""

    base_channels: int = 64

    def __post_init__(self):
        if self.base_channels < 1:
            raise ConfigurationError("base_channels must be positive")


class PatchDiscriminator(nn.Module):
    """Convolutional discriminator scoring overlapping 70x70 patches.

    Produces a spatial map of real-valued scores; each score depends only on
    its own receptive field (no normalization layers, so the locality is
    exact and the map is shift-equivariant away from borders).
    """

    def __init__(self, config: DiscriminatorConfig = DiscriminatorConfig()):
        super().__init__()
        self.config = config
        c = config.base_channels
        widths = [3, c, c * 2, c * 4, c * 8]
        layers: list[nn.Module] = []
        for cin, cout, stride in zip(widths[:-1], widths[1:], _DISC_STRIDES[:-1]):
            layers += [nn.Conv2d(cin, cout, _DISC_KERNEL, stride=stride, padding=1),
                       nn.LeakyReLU(0.2)]
        layers.append(nn.Conv2d(widths[-1], 1, _DISC_KERNEL,
                                stride=_DISC_STRIDES[-1], padding=1))
        self.layers = nn.Sequential(*layers)

    def forward(self, rgb: torch.Tensor) -> torch.Tensor:
        squeeze = rgb.ndim == 3
        if squeeze:
            rgb = rgb[None]
        if rgb.shape[1] != 3:
            raise ShapeError(f"expected 3 input channels, got {rgb.shape[1]}")
        if rgb.shape[-2] < PATCH_RECEPTIVE_FIELD or rgb.shape[-1] < PATCH_RECEPTIVE_FIELD:
            raise ShapeError(
                f"input {rgb.shape[-2]}x{rgb.shape[-1]} is smaller than the "
                f"{PATCH_RECEPTIVE_FIELD}x{PATCH_RECEPTIVE_FIELD} receptive field")
        out = self.layers(rgb)
        return out[0] if squeeze else out


def xavier_init_(module: nn.Module, generator: torch.Generator | None = None) -> None:
    """Variance-scaled (Xavier) re-initialization of all conv weights."""
    for m in module.modules():
        if isinstance(m, nn.Conv2d):
            nn.init.xavier_normal_(m.weight, generator=generator)
            if m.bias is not None:
                nn.init.zeros_(m.bias)


def demosaic_with_model(generator: DemosaicGenerator,
                        mosaic: SnapshotMosaic,
                        lin_cube: Hypercube | None = None) -> Hypercube:
    """Inference convenience: bilinear init + learned refinement, as a Hypercube."""
    from .mosaic import linear_demosaic

    if lin_cube is None:
        lin_cube = linear_demosaic(mosaic)
    with torch.no_grad():
        out = generator(torch.from_numpy(np.array(lin_cube.values)),
                        torch.from_numpy(np.array(mosaic.values)))
    return Hypercube(out.numpy(), lin_cube.band_centers)
