"""Training objectives: gridding-artifact, smoothness, adversarial and cycle terms.

All losses accept a (B, H, W) cube or an (N, B, H, W) batch as torch tensors
(numpy arrays are converted) and return differentiable 0-d tensors.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch.nn import functional as F

from .errors import DivergenceError, ShapeError


@dataclass(frozen=True)
class LossWeights:
    """Weighting coefficients of the combined training objective."""

    lambda_tv: float = 1e-3
    lambda_ips: float = 1.0
    lambda_sgc: float = 1.0
    lambda_gan: float = 0.1
    lambda_cyc: float = 1.0

    def __post_init__(self):
        for name in ("lambda_tv", "lambda_ips", "lambda_sgc",
                     "lambda_gan", "lambda_cyc"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be non-negative")


@dataclass(frozen=True)
class LossComponents:
    """Individual scalars entering the weighted total."""

    sgc: object
    tv: object
    ips: object
    gan: object
    cyc: object


def _as_batched(cube, name: str = "cube") -> torch.Tensor:
    if isinstance(cube, np.ndarray):
        cube = torch.from_numpy(cube)
    if not isinstance(cube, torch.Tensor):
        cube = torch.as_tensor(np.asarray(getattr(cube, "values", cube)))
    if cube.ndim == 3:
        cube = cube[None]
    if cube.ndim != 4:
        raise ShapeError(f"{name} must be (B,H,W) or (N,B,H,W), got {tuple(cube.shape)}")
    return cube


def ips_loss(cube, k: int) -> torch.Tensor:
    """Variance of the phase sub-image means, averaged over bands.

    Each band image is rearranged into its k^2 phase sub-images; equal spatial
    means across the phases mean no periodic gridding artifact, so the
    population variance of those means is the penalty.
    """
    x = _as_batched(cube)
    n, b, h, w = x.shape
    if h % k or w % k:
        raise ShapeError(f"size {h}x{w} not divisible by shuffle period {k}")
    subs = F.pixel_unshuffle(x, k)                       # (N, B*k^2, H/k, W/k)
    means = subs.reshape(n, b, k * k, -1).mean(dim=-1)   # (N, B, k^2)
    return means.var(dim=-1, unbiased=False).mean()


def tv_loss(cube) -> torch.Tensor:
    """Anisotropic total variation: mean absolute forward difference per axis."""
    x = _as_batched(cube)
    if x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ShapeError("total variation needs at least 2 pixels per axis")
    dx = (x[..., :, 1:] - x[..., :, :-1]).abs().mean()
    dy = (x[..., 1:, :] - x[..., :-1, :]).abs().mean()
    return dx + dy


def sgc_loss(cube) -> torch.Tensor:
    """Cross-band gradient agreement with the band-mean image.

    Penalizes the L1 distance between each band's forward-difference gradient
    fields and those of the pseudo-panchromatic (band-mean) image; zero when
    all bands share the same spatial structure.
    """
    x = _as_batched(cube)
    if x.shape[-1] < 2 or x.shape[-2] < 2:
        raise ShapeError("gradient consistency needs at least 2 pixels per axis")
    pan = x.mean(dim=1, keepdim=True)
    loss_x = (x[..., :, 1:] - x[..., :, :-1]) - (pan[..., :, 1:] - pan[..., :, :-1])
    loss_y = (x[..., 1:, :] - x[..., :-1, :]) - (pan[..., 1:, :] - pan[..., :-1, :])
    return loss_x.abs().mean() + loss_y.abs().mean()


def gan_discriminator_loss(real_scores: torch.Tensor,
                           fake_scores: torch.Tensor) -> torch.Tensor:
    """Least-squares objective for the discriminator: real to 1, fake to 0."""
    return ((real_scores - 1.0) ** 2).mean() + (fake_scores ** 2).mean()


def gan_generator_loss(fake_scores: torch.Tensor) -> torch.Tensor:
    """Least-squares objective for the generator side: fake scores to 1."""
    return ((fake_scores - 1.0) ** 2).mean()


def gan_losses(real_scores, fake_scores) -> tuple[torch.Tensor, torch.Tensor]:
    """(generator loss, discriminator loss) from patch score maps."""
    real = torch.as_tensor(real_scores)
    fake = torch.as_tensor(fake_scores)
    return gan_generator_loss(fake), gan_discriminator_loss(real, fake)


def cycle_loss(recovered, demosaicked) -> torch.Tensor:
    """Mean absolute difference between the round-tripped and the direct cube."""
    a = _as_batched(recovered, "recovered")
    b = _as_batched(demosaicked, "demosaicked")
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}")
    return (a - b).abs().mean()


def _require_finite(name: str, value) -> None:
    if isinstance(value, torch.Tensor):
        finite = bool(torch.isfinite(value).all())
    else:
        finite = math.isfinite(float(value))
    if not finite:
        raise DivergenceError(f"loss component '{name}' is non-finite")


def total_loss(components: LossComponents, weights: LossWeights = LossWeights()):
    """Weighted combination of all training terms.

    There is no data-fidelity term: fidelity is enforced structurally by the
    overriding operator inside the generator.
    """
    for name in ("sgc", "tv", "ips", "gan", "cyc"):
        _require_finite(name, getattr(components, name))
    return (weights.lambda_sgc * components.sgc
            + weights.lambda_tv * components.tv
            + weights.lambda_ips * components.ips
            + weights.lambda_gan * components.gan
            + weights.lambda_cyc * components.cyc)
