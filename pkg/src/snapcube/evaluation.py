"""Quantitative evaluation: distribution distance, quality plug-ins, pixel
difference statistics and latency benchmarking.

Feature extraction for the Fréchet metric and no-reference quality scoring
both depend on externally trained models in the published protocol; they are
kept behind plug-in registries with deterministic built-ins so the metric
arithmetic stays fully testable offline.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Iterable, Sequence

import numpy as np
import numpy.typing as npt

from .errors import ConfigurationError, ShapeError
from .mosaic import Hypercube, RgbImage, inverse_pixel_shuffle

FeatureFn = Callable[[RgbImage], npt.NDArray[np.float64]]
ScorerFn = Callable[[RgbImage], float]


def _identity_pool_features(rgb: RgbImage) -> npt.NDArray[np.float64]:
    """Channel-wise pooled statistics: mean, std and mean absolute gradients."""
    v = rgb.values.astype(np.float64)
    feats = []
    for channel in v:
        feats.extend([
            channel.mean(),
            channel.std(),
            np.abs(np.diff(channel, axis=1)).mean() if channel.shape[1] > 1 else 0.0,
            np.abs(np.diff(channel, axis=0)).mean() if channel.shape[0] > 1 else 0.0,
        ])
    return np.array(feats)


_FEATURE_EXTRACTORS: dict[str, FeatureFn] = {
    "identity-pool": _identity_pool_features,
}

_QUALITY_SCORERS: dict[str, ScorerFn] = {
    "null": lambda rgb: 0.0,
}


def register_feature_extractor(name: str, fn: FeatureFn) -> None:
    """Install a deterministic image-to-vector map (e.g. a pretrained deep net)."""
    _FEATURE_EXTRACTORS[name] = fn


def register_quality_scorer(name: str, fn: ScorerFn) -> None:
    """Install a no-reference quality model under the given name."""
    _QUALITY_SCORERS[name] = fn


def available_feature_extractors() -> tuple[str, ...]:
    return tuple(sorted(_FEATURE_EXTRACTORS))


def extract_features(images: Iterable[RgbImage],
                     extractor: str = "identity-pool") -> npt.NDArray[np.float64]:
    """Stack per-image feature vectors into an (N, D) matrix."""
    try:
        fn = _FEATURE_EXTRACTORS[extractor]
    except KeyError:
        raise ConfigurationError(
            f"unknown feature extractor {extractor!r}; registered: "
            f"{available_feature_extractors()}") from None
    rows = [np.asarray(fn(img), dtype=np.float64) for img in images]
    if not rows:
        raise ConfigurationError("feature extraction needs at least one image")
    dims = {r.shape for r in rows}
    if len(dims) != 1 or rows[0].ndim != 1:
        raise ShapeError(f"extractor produced inconsistent shapes {dims}")
    return np.stack(rows)


def quality_score(rgb: RgbImage, scorer: str = "null") -> float:
    """Forward an image to a registered no-reference quality plug-in."""
    try:
        fn = _QUALITY_SCORERS[scorer]
    except KeyError:
        raise ConfigurationError(
            f"unknown quality scorer {scorer!r}; registered: "
            f"{tuple(sorted(_QUALITY_SCORERS))}") from None
    return float(fn(rgb))


def _psd_sqrt_trace(cov_a: npt.NDArray[np.float64],
                    cov_b: npt.NDArray[np.float64]) -> float:
    """tr((cov_a cov_b)^(1/2)) via eigendecompositions of symmetric matrices.

    Round-off can push eigenvalues slightly negative; they are clamped to zero
    rather than raising, which also covers rank-deficient covariances.
    """
    vals_a, vecs_a = np.linalg.eigh((cov_a + cov_a.T) / 2.0)
    root_a = (vecs_a * np.sqrt(np.clip(vals_a, 0.0, None))) @ vecs_a.T
    inner = root_a @ ((cov_b + cov_b.T) / 2.0) @ root_a
    vals = np.linalg.eigvalsh((inner + inner.T) / 2.0)
    return float(np.sqrt(np.clip(vals, 0.0, None)).sum())


def frechet_distance(features_a: npt.NDArray[np.floating],
                     features_b: npt.NDArray[np.floating]) -> float:
    """Fréchet distance between Gaussian fits of two feature sets.

    ||mu_a - mu_b||^2 + tr(cov_a + cov_b - 2 (cov_a cov_b)^(1/2)), with the
    matrix square root taken in a symmetric, clamped form. The result is
    clamped at zero so round-off never produces a negative distance.
    """
    a = np.atleast_2d(np.asarray(features_a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(features_b, dtype=np.float64))
    if a.shape[1] != b.shape[1]:
        raise ShapeError(
            f"feature dimensions differ: {a.shape[1]} vs {b.shape[1]}")
    if a.shape[0] < 2 or b.shape[0] < 2:
        raise ShapeError("need at least 2 feature vectors per set")
    mu_a, mu_b = a.mean(axis=0), b.mean(axis=0)
    cov_a = np.atleast_2d(np.cov(a, rowvar=False))
    cov_b = np.atleast_2d(np.cov(b, rowvar=False))
    mean_term = float(np.sum((mu_a - mu_b) ** 2))
    trace_term = float(np.trace(cov_a) + np.trace(cov_b)
                       - 2.0 * _psd_sqrt_trace(cov_a, cov_b))
    return max(0.0, mean_term + trace_term)


@dataclass(frozen=True)
class BoxplotStats:
    """Tukey box-plot summary of one band's pixel differences."""

    band: int
    median: float
    q1: float
    q3: float
    lo_whisker: float
    hi_whisker: float
    outliers: npt.NDArray[np.float64] = field(repr=False, default=None)  # type: ignore[assignment]

    def __post_init__(self):
        outliers = np.asarray(
            self.outliers if self.outliers is not None else [], dtype=np.float64)
        if not (self.q1 <= self.median <= self.q3):
            raise ShapeError("quartiles out of order")
        outliers.setflags(write=False)
        object.__setattr__(self, "outliers", outliers)

    @property
    def n_outliers(self) -> int:
        return int(self.outliers.size)


def _band_boxplot(band: int, data: npt.NDArray[np.float64]) -> BoxplotStats:
    q1, med, q3 = np.percentile(data, [25.0, 50.0, 75.0])
    iqr = q3 - q1
    lo_fence, hi_fence = q1 - 1.5 * iqr, q3 + 1.5 * iqr
    inside = data[(data >= lo_fence) & (data <= hi_fence)]
    # whiskers sit on the most extreme observations inside the fences
    lo_w, hi_w = (float(inside.min()), float(inside.max())) if inside.size else (q1, q3)
    outliers = data[(data < lo_fence) | (data > hi_fence)]
    return BoxplotStats(band, float(med), float(q1), float(q3), lo_w, hi_w,
                        np.sort(outliers))


def pixel_diff_stats(cube_a: Hypercube, cube_b: Hypercube) -> list[BoxplotStats]:
    """Per-band box-plot summary of (a - b) pixel differences."""
    if cube_a.values.shape != cube_b.values.shape:
        raise ShapeError(
            f"cube shapes differ: {cube_a.values.shape} vs {cube_b.values.shape}")
    diff = cube_a.values.astype(np.float64) - cube_b.values.astype(np.float64)
    return [_band_boxplot(b, diff[b].ravel()) for b in range(diff.shape[0])]


def ips_artifact_metric(cube: Hypercube | npt.NDArray[np.floating], k: int) -> float:
    """Offline gridding-artifact score: variance of phase sub-image means.

    Same arithmetic as the differentiable training penalty, computed with
    plain numpy so the two routes can cross-check each other.
    """
    values = np.asarray(getattr(cube, "values", cube), dtype=np.float64)
    if values.ndim != 3:
        raise ShapeError(f"expected (B,H,W) cube, got shape {values.shape}")
    per_band = []
    for band in values:
        means = inverse_pixel_shuffle(band, k).mean(axis=(1, 2))
        per_band.append(means.var())  # population variance
    return float(np.mean(per_band))


def psnr(estimate: Hypercube | npt.NDArray[np.floating],
         reference: Hypercube | npt.NDArray[np.floating],
         peak: float = 1.0) -> float:
    """Peak signal-to-noise ratio in dB over all bands and pixels."""
    a = np.asarray(getattr(estimate, "values", estimate), dtype=np.float64)
    b = np.asarray(getattr(reference, "values", reference), dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"shape mismatch {a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return float("inf")
    return 10.0 * np.log10(peak * peak / mse)


@dataclass(frozen=True)
class LatencyStats:
    """Per-frame wall-time statistics of an inference benchmark."""

    frame_height: int
    frame_width: int
    n_frames: int
    times_s: npt.NDArray[np.float64]

    def __post_init__(self):
        t = np.asarray(self.times_s, dtype=np.float64)
        if t.size != self.n_frames or t.size < 1:
            raise ShapeError("need one timing per frame")
        t.setflags(write=False)
        object.__setattr__(self, "times_s", t)

    @property
    def mean_ms(self) -> float:
        return float(self.times_s.mean() * 1e3)

    def percentile_ms(self, q: float) -> float:
        return float(np.percentile(self.times_s, q) * 1e3)

    def summary(self) -> dict[str, float]:
        return {
            "mean_ms": self.mean_ms,
            "p50_ms": self.percentile_ms(50),
            "p90_ms": self.percentile_ms(90),
            "p99_ms": self.percentile_ms(99),
            "min_ms": float(self.times_s.min() * 1e3),
            "max_ms": float(self.times_s.max() * 1e3),
        }


def benchmark_inference(generator, rgb_converter, frame_hw: tuple[int, int],
                        n_frames: int = 100, warmup: int = 3,
                        seed: int = 0) -> LatencyStats:
    """Wall-time per frame for demosaicking + RGB rendering on random frames.

    Warm-up iterations are excluded. The published protocol uses 100 frames of
    1280x720; the absolute numbers are hardware specific and only reported.
    """
    import torch

    from .mosaic import SnapshotMosaic, linear_demosaic

    h, w = frame_hw
    pattern = generator.pattern
    rng = np.random.default_rng(seed)
    frames = [SnapshotMosaic(rng.random((h, w), dtype=np.float32), pattern)
              for _ in range(min(4, max(1, n_frames)))]
    times = []
    generator.eval()
    rgb_converter.eval()
    with torch.no_grad():
        for i in range(warmup + n_frames):
            mosaic = frames[i % len(frames)]
            start = time.perf_counter()
            lin = linear_demosaic(mosaic)
            cube = generator(torch.from_numpy(np.array(lin.values)),
                             torch.from_numpy(np.array(mosaic.values)))
            rgb_converter(cube)
            elapsed = time.perf_counter() - start
            if i >= warmup:
                times.append(elapsed)
    return LatencyStats(h, w, n_frames, np.array(times))


def write_metrics_csv(rows: Sequence[tuple[str, str, float]], path,
                      metadata: dict[str, str] | None = None) -> None:
    """Machine-readable report: method, metric, value rows with '#' metadata."""
    import csv

    with open(path, "w", newline="") as fh:
        for key, value in (metadata or {}).items():
            fh.write(f"# {key}: {value}\n")
        writer = csv.writer(fh)
        writer.writerow(["method", "metric", "value"])
        for method, metric, value in rows:
            writer.writerow([method, metric, f"{value:.10g}"])


def write_boxplot_csv(stats: Sequence[BoxplotStats], path) -> None:
    import csv

    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["band", "median", "q1", "q3",
                         "lo_whisker", "hi_whisker", "n_outliers"])
        for s in stats:
            writer.writerow([s.band, f"{s.median:.10g}", f"{s.q1:.10g}",
                             f"{s.q3:.10g}", f"{s.lo_whisker:.10g}",
                             f"{s.hi_whisker:.10g}", s.n_outliers])
