"""Dataset manifests and training-time sampling.

Splits are declared file-by-file with a case identifier; validation rejects
any layout in which two splits share a file or a source case, mirroring the
per-case partitioning discipline used for clinical acquisitions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import ConfigurationError
from .fileio import load_mosaic
from .mosaic import SnapshotMosaic

SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class ManifestEntry:
    path: str
    case_id: str
    note: str = ""


@dataclass(frozen=True)
class DatasetManifest:
    """File lists per split, with provenance and case-level split enforcement."""

    splits: dict[str, tuple[ManifestEntry, ...]] = field(default_factory=dict)

    def __post_init__(self):
        splits = {name: tuple(entries) for name, entries in self.splits.items()}
        seen_paths: dict[str, str] = {}
        case_split: dict[str, str] = {}
        for split, entries in splits.items():
            for entry in entries:
                if entry.path in seen_paths:
                    raise ConfigurationError(
                        f"file {entry.path} appears in both "
                        f"{seen_paths[entry.path]!r} and {split!r}")
                seen_paths[entry.path] = split
                owner = case_split.setdefault(entry.case_id, split)
                if owner != split:
                    raise ConfigurationError(
                        f"case {entry.case_id!r} appears in both {owner!r} and "
                        f"{split!r}; splits must be case-disjoint")
        object.__setattr__(self, "splits", splits)

    def validate_files(self) -> None:
        """Check every referenced file exists and has a readable header."""
        for split, entries in self.splits.items():
            for entry in entries:
                path = Path(entry.path)
                if not path.is_file():
                    raise ConfigurationError(
                        f"{split}: missing file {entry.path}")
                load_mosaic(path)  # full parse; raises ParseError on damage

    def save(self, path) -> None:
        doc = {split: [{"path": e.path, "case_id": e.case_id, "note": e.note}
                       for e in entries]
               for split, entries in self.splits.items()}
        Path(path).write_text(json.dumps(doc, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "DatasetManifest":
        doc = json.loads(Path(path).read_text())
        return cls({split: tuple(ManifestEntry(d["path"], d["case_id"],
                                               d.get("note", ""))
                                 for d in entries)
                    for split, entries in doc.items()})

    def load_mosaics(self, split: str) -> list[SnapshotMosaic]:
        if split not in self.splits:
            raise ConfigurationError(
                f"unknown split {split!r}; have {sorted(self.splits)}")
        return [load_mosaic(entry.path) for entry in self.splits[split]]


class CropSampler:
    """Random same-size crops aligned to the mosaic tile grid.

    Offsets are always multiples of the pattern period so the band-to-pixel
    phase of a crop matches the full frame; misaligned crops would silently
    corrupt the band map.
    """

    def __init__(self, images: list, crop: int, period: int, seed: int,
                 channels_first: bool = True):
        if not images:
            raise ConfigurationError("sampler needs a non-empty image list")
        if crop % period:
            raise ConfigurationError(
                f"crop size {crop} must be a multiple of the period {period}")
        self.images = images
        self.crop = crop
        self.period = period
        self.channels_first = channels_first
        self.rng = np.random.default_rng(seed)

    def _crop_one(self, array: np.ndarray) -> np.ndarray:
        h, w = array.shape[-2], array.shape[-1]
        if h < self.crop or w < self.crop:
            raise ConfigurationError(
                f"image {h}x{w} smaller than crop {self.crop}")
        ky = (h - self.crop) // self.period
        kx = (w - self.crop) // self.period
        y0 = int(self.rng.integers(0, ky + 1)) * self.period
        x0 = int(self.rng.integers(0, kx + 1)) * self.period
        return array[..., y0:y0 + self.crop, x0:x0 + self.crop]

    def batch(self, size: int) -> np.ndarray:
        picks = self.rng.integers(0, len(self.images), size)
        crops = []
        for idx in picks:
            image = self.images[int(idx)]
            crops.append(self._crop_one(np.asarray(getattr(image, "values", image))))
        return np.stack(crops)
