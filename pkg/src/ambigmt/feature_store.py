"""On-disk store for per-image visual features.

Each image gets one binary file of raw little-endian float32 values: the
spatial grid (1024 channels x 14 x 14, row-major channel/row/column order)
followed by the 2048-dim pooled vector. A JSON manifest maps image ids to
file names and expected byte counts so loads can verify integrity. The real
CNN extractor is an out-of-process adapter that produces this same format;
nothing in here links a vision library.
"""

from __future__ import annotations

import hashlib
import json
import logging
import os
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

logger = logging.getLogger(__name__)

GRID_SHAPE = (1024, 14, 14)
POOLED_DIM = 2048
_GRID_SIZE = int(np.prod(GRID_SHAPE))
_RECORD_BYTES = (_GRID_SIZE + POOLED_DIM) * 4


class FeatureStoreError(Exception):
    pass


class FeatureNotFoundError(FeatureStoreError):
    pass


class FeatureIntegrityError(FeatureStoreError):
    pass


@dataclass
class VisualFeatures:
    """Spatial grid features (1024x14x14) plus a pooled 2048-dim vector."""

    grid: np.ndarray
    pooled: np.ndarray

    def __post_init__(self):
        self.grid = np.ascontiguousarray(self.grid, dtype=np.float32)
        self.pooled = np.ascontiguousarray(self.pooled, dtype=np.float32)
        if self.grid.shape != GRID_SHAPE:
            raise ValueError(
                f"grid shape must be {GRID_SHAPE}, got {self.grid.shape}")
        if self.pooled.shape != (POOLED_DIM,):
            raise ValueError(
                f"pooled shape must be ({POOLED_DIM},), got {self.pooled.shape}")
        if not (np.isfinite(self.grid).all() and np.isfinite(self.pooled).all()):
            raise ValueError("visual features must be finite")


def synth_features(gender_label: str, noise_sigma: float,
                   rng: np.random.Generator) -> VisualFeatures:
    """Synthesize features that encode a gender label.

    pooled[0] carries +1 for "male" and -1 for "female"; the grid carries the
    same signal on channel 0. Gaussian noise with the given sigma is added to
    every coordinate, so sigma=0 gives a deterministic two-point function of
    the label.
    """
    if gender_label not in ("male", "female"):
        raise ValueError(f"gender_label must be 'male' or 'female', got {gender_label!r}")
    if noise_sigma < 0:
        raise ValueError("noise_sigma must be >= 0")
    signal = 1.0 if gender_label == "male" else -1.0
    if noise_sigma == 0:
        grid = np.zeros(GRID_SHAPE, dtype=np.float32)
        pooled = np.zeros(POOLED_DIM, dtype=np.float32)
    else:
        grid = rng.normal(0.0, noise_sigma, GRID_SHAPE).astype(np.float32)
        pooled = rng.normal(0.0, noise_sigma, POOLED_DIM).astype(np.float32)
    grid[0, :, :] += signal
    pooled[0] += signal
    return VisualFeatures(grid=grid, pooled=pooled)


class FeatureStore:
    """Directory-backed store; loads are concurrent, stores go one at a time."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.mkdir(parents=True, exist_ok=True)
        self._manifest_path = self.path / "manifest.json"
        if self._manifest_path.exists():
            manifest = json.loads(self._manifest_path.read_text(encoding="utf-8"))
            self._entries: dict[str, dict] = manifest["entries"]
        else:
            self._entries = {}
            self._write_manifest()

    def _write_manifest(self) -> None:
        tmp = self._manifest_path.with_suffix(".json.tmp")
        payload = {"version": 1, "entries": self._entries}
        tmp.write_text(json.dumps(payload, sort_keys=True), encoding="utf-8")
        os.replace(tmp, self._manifest_path)

    @staticmethod
    def _file_name(image_id: str) -> str:
        return hashlib.sha1(image_id.encode("utf-8")).hexdigest() + ".bin"

    def store(self, image_id: str, features: VisualFeatures) -> None:
        if image_id in self._entries:
            logger.warning("overwriting features for image %s", image_id)
        name = self._file_name(image_id)
        blob = features.grid.tobytes() + features.pooled.tobytes()
        assert len(blob) == _RECORD_BYTES
        tmp = self.path / (name + ".tmp")
        tmp.write_bytes(blob)
        os.replace(tmp, self.path / name)
        self._entries[image_id] = {"file": name, "n_bytes": _RECORD_BYTES}
        self._write_manifest()

    def _entry(self, image_id: str) -> tuple[Path, dict]:
        entry = self._entries.get(image_id)
        if entry is None:
            raise FeatureNotFoundError(f"no features stored for image {image_id!r}")
        file_path = self.path / entry["file"]
        if not file_path.exists():
            raise FeatureIntegrityError(
                f"manifest lists {image_id!r} but {entry['file']} is missing")
        size = file_path.stat().st_size
        if size != entry["n_bytes"] or size != _RECORD_BYTES:
            raise FeatureIntegrityError(
                f"record for {image_id!r} has {size} bytes, expected {_RECORD_BYTES}")
        return file_path, entry

    def load(self, image_id: str) -> VisualFeatures:
        file_path, _ = self._entry(image_id)
        flat = np.fromfile(file_path, dtype="<f4")
        grid = flat[:_GRID_SIZE].reshape(GRID_SHAPE)
        pooled = flat[_GRID_SIZE:]
        return VisualFeatures(grid=grid, pooled=pooled)

    def load_pooled(self, image_id: str) -> np.ndarray:
        """Read only the pooled vector (the tail of the record)."""
        file_path, _ = self._entry(image_id)
        with open(file_path, "rb") as fh:
            fh.seek(_GRID_SIZE * 4)
            pooled = np.frombuffer(fh.read(POOLED_DIM * 4), dtype="<f4")
        return pooled.copy()

    def __contains__(self, image_id: str) -> bool:
        return image_id in self._entries

    def __len__(self) -> int:
        return len(self._entries)

    def ids(self) -> list[str]:
        return sorted(self._entries)

    def missing(self, image_ids: Iterable[str]) -> list[str]:
        """Ids from a corpus that this store cannot resolve."""
        return sorted({i for i in image_ids if i is not None and i not in self._entries})

    def verify(self) -> list[str]:
        """Integrity-check every entry; returns ids with problems."""
        bad = []
        for image_id in self._entries:
            try:
                self._entry(image_id)
            except FeatureStoreError:
                bad.append(image_id)
        return sorted(bad)
