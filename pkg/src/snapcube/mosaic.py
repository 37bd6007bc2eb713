"""Core data types and sampling operations for snapshot mosaic sensors.

A multispectral filter array (MSFA) sensor records one spectral band per
pixel according to a periodic pattern. This module holds the pattern and
image containers plus the sampling-model operations: mosaic simulation,
per-band bilinear demosaicking, the data-fidelity overriding operator and
the inverse pixel shuffle rearrangement.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import numpy.typing as npt
from scipy.ndimage import correlate1d

from .errors import ShapeError

NDArrayF = npt.NDArray[np.floating]
NDArrayI = npt.NDArray[np.integer]

DEFAULT_BAND_RANGE_NM = (460.0, 630.0)


def default_band_centers(bands: int, low: float = DEFAULT_BAND_RANGE_NM[0],
                         high: float = DEFAULT_BAND_RANGE_NM[1]) -> NDArrayF:
    """Evenly spaced band-center wavelengths (nm) for a visible-range sensor."""
    if bands < 1:
        raise ShapeError(f"need at least one band, got {bands}")
    if bands == 1:
        return np.array([(low + high) / 2.0])
    return np.linspace(low, high, bands)


@dataclass(frozen=True)
class MsfaPattern:
    """Periodic band-to-pixel layout of a snapshot mosaic sensor.

    ``band_map`` is a ``period x period`` grid of band indices; the band
    recorded at pixel ``(y, x)`` is ``band_map[y % period, x % period]``.
    """

    band_map: NDArrayI

    def __post_init__(self):
        bm = np.asarray(self.band_map, dtype=np.int64)
        if bm.ndim != 2 or bm.shape[0] != bm.shape[1] or bm.shape[0] < 1:
            raise ShapeError(f"band_map must be square 2-D, got shape {bm.shape}")
        values = np.unique(bm)
        bands = int(bm.max()) + 1
        if values.min() < 0 or len(values) != bands:
            raise ShapeError("band indices must cover 0..B-1 with no gaps")
        if bands == bm.size and len(np.unique(bm)) != bm.size:
            raise ShapeError("each band must appear exactly once when B == k^2")
        bm.setflags(write=False)
        object.__setattr__(self, "band_map", bm)

    @classmethod
    def identity(cls, period: int = 4) -> "MsfaPattern":
        """Row-major 0..k^2-1 layout; stand-in when the sensor layout is unknown."""
        return cls(np.arange(period * period).reshape(period, period))

    @property
    def period(self) -> int:
        return self.band_map.shape[0]

    @property
    def band_count(self) -> int:
        return int(self.band_map.max()) + 1

    def band_at(self, y: int, x: int) -> int:
        return int(self.band_map[y % self.period, x % self.period])

    def band_grid(self, height: int, width: int) -> NDArrayI:
        """(H, W) grid of the band index recorded at each pixel."""
        ys = np.arange(height) % self.period
        xs = np.arange(width) % self.period
        return self.band_map[np.ix_(ys, xs)]

    def band_mask(self, height: int, width: int) -> npt.NDArray[np.bool_]:
        """(B, H, W) boolean mask; mask[b] marks pixels that sample band b."""
        grid = self.band_grid(height, width)
        return grid[None, :, :] == np.arange(self.band_count)[:, None, None]

    def offsets_for_band(self, band: int) -> list[tuple[int, int]]:
        """In-tile (dy, dx) sites where ``band`` is sampled."""
        ys, xs = np.nonzero(self.band_map == band)
        return list(zip(ys.tolist(), xs.tolist()))


def _check_divisible(height: int, width: int, period: int) -> None:
    if height % period or width % period:
        raise ShapeError(
            f"image size {height}x{width} not divisible by pattern period {period}")


@dataclass(frozen=True)
class SnapshotMosaic:
    """Single-channel raw sensor frame; one spectral band per pixel."""

    values: NDArrayF
    pattern: MsfaPattern

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 2:
            raise ShapeError(f"mosaic must be 2-D, got shape {v.shape}")
        _check_divisible(v.shape[0], v.shape[1], self.pattern.period)
        if not np.all(np.isfinite(v)):
            raise ShapeError("mosaic values must be finite")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ShapeError("mosaic values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[0]

    @property
    def width(self) -> int:
        return self.values.shape[1]


@dataclass(frozen=True)
class Hypercube:
    """B x H x W spectral image with strictly increasing band-center wavelengths."""

    values: NDArrayF
    band_centers: NDArrayF = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        v = np.asarray(self.values)
        if v.dtype not in (np.float32, np.float64):
            v = v.astype(np.float32)
        if v.ndim != 3:
            raise ShapeError(f"hypercube must be 3-D (B,H,W), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("hypercube values must be finite")
        centers = self.band_centers
        if centers is None:
            centers = default_band_centers(v.shape[0])
        centers = np.asarray(centers, dtype=np.float64)
        if centers.shape != (v.shape[0],):
            raise ShapeError(
                f"band_centers length {centers.shape} does not match {v.shape[0]} bands")
        if np.any(np.diff(centers) <= 0):
            raise ShapeError("band_centers must be strictly increasing")
        v.setflags(write=False)
        centers.setflags(write=False)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "band_centers", centers)

    @property
    def bands(self) -> int:
        return self.values.shape[0]

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


@dataclass(frozen=True)
class RgbImage:
    """3 x H x W display rendering with values in [0, 1]."""

    values: NDArrayF

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float32)
        if v.ndim != 3 or v.shape[0] != 3:
            raise ShapeError(f"rgb image must be (3,H,W), got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ShapeError("rgb values must be finite")
        if v.min() < 0.0 or v.max() > 1.0:
            raise ShapeError("rgb values must lie in [0, 1]")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self) -> int:
        return self.values.shape[1]

    @property
    def width(self) -> int:
        return self.values.shape[2]


def simulate_mosaic(cube: Hypercube, pattern: MsfaPattern) -> SnapshotMosaic:
    """Sample a full cube through the MSFA: out[y,x] = cube[band(y,x), y, x]."""
    if cube.bands != pattern.band_count:
        raise ShapeError(
            f"cube has {cube.bands} bands but pattern expects {pattern.band_count}")
    _check_divisible(cube.height, cube.width, pattern.period)
    grid = pattern.band_grid(cube.height, cube.width)
    taken = np.take_along_axis(cube.values, grid[None, :, :], axis=0)[0]
    return SnapshotMosaic(taken, pattern)


def _interp_weights(targets: NDArrayF, offset: int, step: int, n_samples: int):
    """Clamped linear-interpolation indices/weights on a regular sample axis."""
    t = (targets - offset) / float(step)
    t = np.clip(t, 0.0, n_samples - 1.0)
    i0 = np.floor(t).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_samples - 1)
    w = (t - i0).astype(np.float32)
    return i0, i1, w


def _bilinear_single_offset(values: NDArrayF, dy: int, dx: int, k: int) -> NDArrayF:
    """Exact separable bilinear interpolation of one regular subgrid.

    Samples live at rows dy::k and cols dx::k; outside the sampled extent the
    nearest sample is replicated (the clamp in `_interp_weights`).
    """
    h, w = values.shape
    samples = values[dy::k, dx::k]
    n_rows, n_cols = samples.shape

    j0, j1, wx = _interp_weights(np.arange(w, dtype=np.float64), dx, k, n_cols)
    rows = samples[:, j0] * (1.0 - wx) + samples[:, j1] * wx

    i0, i1, wy = _interp_weights(np.arange(h, dtype=np.float64), dy, k, n_rows)
    out = rows[i0, :] * (1.0 - wy)[:, None] + rows[i1, :] * wy[:, None]
    return out.astype(np.float32)


def _tent_fill(plane: NDArrayF, mask: NDArrayF, k: int) -> NDArrayF:
    """Normalized tent-kernel interpolation for bands sampled at several sites."""
    kernel = 1.0 - np.abs(np.arange(-(k - 1), k)) / float(k)
    num = correlate1d(plane, kernel, axis=0, mode="constant")
    num = correlate1d(num, kernel, axis=1, mode="constant")
    den = correlate1d(mask, kernel, axis=0, mode="constant")
    den = correlate1d(den, kernel, axis=1, mode="constant")
    return (num / den).astype(np.float32)


def linear_demosaic(mosaic: SnapshotMosaic,
                    band_centers: NDArrayF | None = None) -> Hypercube:
    """Per-band bilinear interpolation of the sparse mosaic samples.

    Pixels that sample a band keep their raw value exactly; the rest of that
    band is filled by bilinear interpolation over its regular sample grid,
    with edge replication beyond the outermost samples.
    """
    pattern = mosaic.pattern
    k = pattern.period
    v = mosaic.values.astype(np.float64)
    out = np.empty((pattern.band_count, mosaic.height, mosaic.width), dtype=np.float32)
    for band in range(pattern.band_count):
        offsets = pattern.offsets_for_band(band)
        if len(offsets) == 1:
            dy, dx = offsets[0]
            out[band] = _bilinear_single_offset(v, dy, dx, k)
        else:
            # bands sampled at several in-tile sites (B < k^2 layouts): tent
            # interpolation over the union grid, then reimpose raw samples
            sel = pattern.band_mask(mosaic.height, mosaic.width)[band]
            filled = _tent_fill(np.where(sel, v, 0.0), sel.astype(np.float64), k)
            filled[sel] = mosaic.values[sel]
            out[band] = filled
    return Hypercube(out, band_centers)


def override(cube: Hypercube, mosaic: SnapshotMosaic) -> Hypercube:
    """Replace cube entries at sampled positions by the raw mosaic values.

    out[b,y,x] = mosaic[y,x] where band(y,x) == b, else cube[b,y,x]. Idempotent,
    and the only mechanism through which data fidelity is guaranteed.
    """
    if (cube.height, cube.width) != (mosaic.height, mosaic.width):
        raise ShapeError(
            f"cube {cube.height}x{cube.width} does not match "
            f"mosaic {mosaic.height}x{mosaic.width}")
    if cube.bands != mosaic.pattern.band_count:
        raise ShapeError(
            f"cube has {cube.bands} bands but pattern expects "
            f"{mosaic.pattern.band_count}")
    mask = mosaic.pattern.band_mask(cube.height, cube.width)
    merged = np.where(mask, mosaic.values[None, :, :], cube.values)
    return Hypercube(merged.astype(cube.values.dtype), cube.band_centers)


def inverse_pixel_shuffle(band_image: NDArrayF, k: int) -> NDArrayF:
    """Rearrange an H x W image into k^2 phase sub-images of size (H/k, W/k).

    Sub-image (i, j) (flattened index i*k + j) holds pixels at positions
    congruent to (i, j) mod k; the rearrangement is a bijection on pixels.
    """
    img = np.asarray(band_image)
    if img.ndim != 2:
        raise ShapeError(f"band image must be 2-D, got shape {img.shape}")
    h, w = img.shape
    _check_divisible(h, w, k)
    subs = img.reshape(h // k, k, w // k, k)
    return np.ascontiguousarray(subs.transpose(1, 3, 0, 2).reshape(k * k, h // k, w // k))


def pixel_shuffle_reassemble(sub_images: NDArrayF, k: int) -> NDArrayF:
    """Invert `inverse_pixel_shuffle`, pixel for pixel."""
    subs = np.asarray(sub_images)
    if subs.ndim != 3 or subs.shape[0] != k * k:
        raise ShapeError(f"expected (k^2, H/k, W/k) sub-images, got {subs.shape}")
    hk, wk = subs.shape[1], subs.shape[2]
    stacked = subs.reshape(k, k, hk, wk).transpose(2, 0, 3, 1)
    return np.ascontiguousarray(stacked.reshape(hk * k, wk * k))


@lru_cache(maxsize=8)
def _cached_mask(band_map_bytes: bytes, period: int, bands: int,
                 height: int, width: int) -> npt.NDArray[np.bool_]:
    bm = np.frombuffer(band_map_bytes, dtype=np.int64).reshape(period, period)
    return MsfaPattern(bm).band_mask(height, width)


def band_mask_cached(pattern: MsfaPattern, height: int, width: int):
    """Memoized (B, H, W) sampling mask; hot path for training loops."""
    return _cached_mask(pattern.band_map.tobytes(), pattern.period,
                        pattern.band_count, height, width)
