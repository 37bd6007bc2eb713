"""Deterministic synthetic hyperspectral scenes for desk-scale experiments.

Clinical snapshot data cannot ship with the toolkit, so training, evaluation
and regression tests run on generated scenes with known ground truth. Bands
are spectrally correlated (shared spatial structure modulated by smooth
spectral signatures), which is the regime the self-supervised losses exploit.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
import numpy.typing as npt

from .errors import ConfigurationError
from .mosaic import Hypercube, default_band_centers

FAMILIES = ("smooth", "piecewise", "edges")


@dataclass(frozen=True)
class SyntheticSceneConfig:
    """Recipe for one generated scene; identical configs yield identical cubes."""

    seed: int = 0
    height: int = 64
    width: int = 64
    bands: int = 16
    family: str = "smooth"
    noise_level: float = 0.0
    regions: int = 8         # piecewise family: number of Voronoi cells
    min_bar_width: int = 3   # edges family: thinnest stripe in pixels

    def __post_init__(self):
        if self.height < 4 or self.width < 4:
            raise ConfigurationError(f"scene size {self.height}x{self.width} too small")
        if self.bands < 1:
            raise ConfigurationError("bands must be positive")
        if self.family not in FAMILIES:
            raise ConfigurationError(
                f"unknown scene family {self.family!r}; choose from {FAMILIES}")
        if self.noise_level < 0:
            raise ConfigurationError("noise_level must be non-negative")
        if self.regions < 2 or self.min_bar_width < 1:
            raise ConfigurationError("invalid scene geometry parameters")


def _smooth_signature(rng: np.random.Generator, bands: int,
                      low: float = 0.05, high: float = 0.95) -> npt.NDArray[np.float64]:
    """Random smooth spectrum: a few control points linearly interpolated."""
    n_ctrl = max(2, min(5, bands))
    ctrl_pos = np.linspace(0, bands - 1, n_ctrl)
    ctrl_val = rng.uniform(low, high, n_ctrl)
    return np.interp(np.arange(bands), ctrl_pos, ctrl_val)


def _smooth_scene(rng: np.random.Generator, cfg: SyntheticSceneConfig):
    h, w, b = cfg.height, cfg.width, cfg.bands
    ys, xs = np.meshgrid(np.linspace(0, 1, h), np.linspace(0, 1, w), indexing="ij")
    fields = []
    for _ in range(3):
        fy, fx = rng.uniform(0.5, 2.5, 2)
        phase = rng.uniform(0, 2 * np.pi, 2)
        fields.append(np.sin(2 * np.pi * fy * ys + phase[0])
                      * np.cos(2 * np.pi * fx * xs + phase[1]))
    cube = np.zeros((b, h, w))
    for field in fields:
        cube += _smooth_signature(rng, b, 0.0, 1.0)[:, None, None] * field[None]
    lo, hi = cube.min(), cube.max()
    span = hi - lo if hi > lo else 1.0
    return 0.02 + 0.96 * (cube - lo) / span


def _piecewise_scene(rng: np.random.Generator, cfg: SyntheticSceneConfig):
    h, w, b = cfg.height, cfg.width, cfg.bands
    sites = np.stack([rng.uniform(0, h, cfg.regions), rng.uniform(0, w, cfg.regions)],
                     axis=1)
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    d2 = ((ys[None] - sites[:, 0, None, None]) ** 2
          + (xs[None] - sites[:, 1, None, None]) ** 2)
    region_map = d2.argmin(axis=0)
    signatures = np.stack([_smooth_signature(rng, b) for _ in range(cfg.regions)])
    cube = signatures.T[:, region_map]  # (B, H, W), exactly constant per region
    return cube, region_map


def _edges_scene(rng: np.random.Generator, cfg: SyntheticSceneConfig):
    h, w, b = cfg.height, cfg.width, cfg.bands
    ys, xs = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    cube = np.zeros((b, h, w))
    weight = np.zeros((h, w))
    # layered stripe charts at mixed orientations and widths
    for _ in range(3):
        ay, ax = rng.choice([(0, 1), (1, 0), (1, 1), (1, -1)])
        width = int(rng.integers(cfg.min_bar_width, max(cfg.min_bar_width + 1, 14)))
        stripe = ((ay * ys + ax * xs) // width) % 2
        fg = _smooth_signature(rng, b)
        bg = _smooth_signature(rng, b)
        cube += np.where(stripe[None].astype(bool), fg[:, None, None],
                         bg[:, None, None])
        weight += 1.0
    cube /= weight[None]
    # a few solid rectangles on top for larger structures
    for _ in range(2):
        y0, x0 = rng.integers(0, h // 2), rng.integers(0, w // 2)
        y1 = int(y0 + rng.integers(h // 8, h // 2))
        x1 = int(x0 + rng.integers(w // 8, w // 2))
        sig = _smooth_signature(rng, b)
        cube[:, y0:y1, x0:x1] = sig[:, None, None]
    return cube


def generate_piecewise_scene(config: SyntheticSceneConfig):
    """Piecewise-constant scene plus its region map (the regression oracle)."""
    cfg = replace(config, family="piecewise")
    rng = np.random.default_rng(cfg.seed)
    cube, region_map = _piecewise_scene(rng, cfg)
    cube = _apply_noise(rng, cube, cfg.noise_level)
    return Hypercube(cube.astype(np.float32),
                     default_band_centers(cfg.bands)), region_map


def _apply_noise(rng: np.random.Generator, cube, noise_level: float):
    if noise_level > 0:
        cube = cube + rng.normal(0.0, noise_level, cube.shape)
    return np.clip(cube, 0.0, 1.0)


def generate_synthetic_scene(config: SyntheticSceneConfig) -> Hypercube:
    """Deterministic scene with known ground truth for the configured family."""
    rng = np.random.default_rng(config.seed)
    if config.family == "smooth":
        cube = _smooth_scene(rng, config)
    elif config.family == "piecewise":
        cube, _ = _piecewise_scene(rng, config)
    else:
        cube = _edges_scene(rng, config)
    cube = _apply_noise(rng, cube, config.noise_level)
    return Hypercube(cube.astype(np.float32), default_band_centers(config.bands))


def generate_dataset(config: SyntheticSceneConfig, count: int,
                     mixed_families: bool = False) -> list[Hypercube]:
    """A list of scenes with per-scene seeds derived from the base seed."""
    if count < 1:
        raise ConfigurationError("dataset needs at least one scene")
    scenes = []
    for i in range(count):
        cfg = replace(config, seed=(config.seed * 1_000_003 + i) & 0xFFFFFFFF)
        if mixed_families:
            cfg = replace(cfg, family=FAMILIES[i % len(FAMILIES)])
        scenes.append(generate_synthetic_scene(cfg))
    return scenes
