"""Per-subject data types, loaders and preprocessing."""

from __future__ import annotations

import os
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError, DimensionError
from . import bpmv

LABELS = ("HC", "BD")  # index == integer class; BD is the positive class


@dataclass
class VolumeT1:
    """Structural volume, ``voxels`` shaped ``(D, H, W)``."""

    voxels: np.ndarray

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 3:
            raise DimensionError(f"volume must be 3-D, got shape {self.voxels.shape}")
        if not np.all(np.isfinite(self.voxels)):
            raise DataError("volume contains non-finite intensities")

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.voxels.shape


@dataclass
class Fmri4D:
    """Functional run, ``voxels`` shaped ``(M, D, H, W)``."""

    voxels: np.ndarray

    def __post_init__(self):
        self.voxels = np.asarray(self.voxels, dtype=np.float32)
        if self.voxels.ndim != 4:
            raise DimensionError(f"fMRI must be 4-D (M, D, H, W), got shape {self.voxels.shape}")

    @property
    def frames(self) -> int:
        return self.voxels.shape[0]

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.voxels.shape[1:]


@dataclass
class AtlasLabelMap:
    """Integer parcellation; 0 is background and regions are labelled 1..N."""

    labels: np.ndarray
    n_regions: int | None = None

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int32)
        if self.labels.ndim != 3:
            raise DimensionError(f"atlas must be 3-D, got shape {self.labels.shape}")
        if self.labels.min() < 0:
            raise DataError("atlas labels must be non-negative")
        if self.n_regions is None:
            self.n_regions = int(self.labels.max())
        if self.labels.max() > self.n_regions:
            raise DataError(f"atlas label {self.labels.max()} exceeds N={self.n_regions}")
        present = np.bincount(self.labels.ravel(), minlength=self.n_regions + 1)[1:]
        missing = np.flatnonzero(present == 0) + 1
        if missing.size:
            raise DataError(f"atlas regions without voxels: {missing.tolist()}")

    @property
    def extents(self) -> tuple[int, int, int]:
        return self.labels.shape


@dataclass
class FmriRoiSeries:
    """Frame-by-region signal matrix ``values[i, j]`` (M frames x N regions)."""

    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.ndim != 2:
            raise DimensionError(f"ROI series must be M x N, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise DataError("ROI series contains non-finite values")

    @property
    def frames(self) -> int:
        return self.values.shape[0]

    @property
    def regions(self) -> int:
        return self.values.shape[1]


@dataclass
class SubjectRecord:
    subject_id: str
    label: str
    volume: VolumeT1
    roi_series: FmriRoiSeries

    def __post_init__(self):
        if self.label not in LABELS:
            raise DataError(f"{self.subject_id}: label must be one of {LABELS}, got {self.label!r}")

    @property
    def target(self) -> int:
        return LABELS.index(self.label)


@dataclass
class DatasetManifest:
    subjects: list[SubjectRecord] = field(default_factory=list)

    def __post_init__(self):
        dupes = [sid for sid, n in Counter(self.ids).items() if n > 1]
        if dupes:
            raise DataError(f"duplicate subject ids: {dupes}")

    def __len__(self) -> int:
        return len(self.subjects)

    def __iter__(self):
        return iter(self.subjects)

    @property
    def ids(self) -> list[str]:
        return [s.subject_id for s in self.subjects]

    @property
    def labels(self) -> np.ndarray:
        return np.array([s.target for s in self.subjects], dtype=np.int64)

    def class_counts(self) -> dict[str, int]:
        counts = Counter(s.label for s in self.subjects)
        return {label: counts.get(label, 0) for label in LABELS}

    def subset(self, ids) -> "DatasetManifest":
        index = {s.subject_id: s for s in self.subjects}
        return DatasetManifest([index[i] for i in ids])


# ---------------------------------------------------------------------------
# file IO


def save_volume(path, volume: VolumeT1) -> None:
    bpmv.write_array(path, volume.voxels)


def load_volume(path) -> VolumeT1:
    return VolumeT1(bpmv.read_array(path, rank=3))


def save_fmri(path, fmri: Fmri4D) -> None:
    bpmv.write_array(path, fmri.voxels)


def load_fmri(path) -> Fmri4D:
    return Fmri4D(bpmv.read_array(path, rank=4))


def save_atlas(path, atlas: AtlasLabelMap) -> None:
    bpmv.write_array(path, atlas.labels, magic=bpmv.MAGIC_ATLAS)


def load_atlas(path) -> AtlasLabelMap:
    return AtlasLabelMap(bpmv.read_array(path, magic=bpmv.MAGIC_ATLAS, rank=3))


def save_roi_series(path, series: FmriRoiSeries) -> None:
    bpmv.write_array(path, series.values)


def load_roi_series(path) -> FmriRoiSeries:
    return FmriRoiSeries(bpmv.read_array(path, rank=2))


def load_functional(path, atlas: AtlasLabelMap | None = None) -> FmriRoiSeries:
    """Load either a precomputed ROI series (rank 2) or a 4-D run reduced through ``atlas``."""
    rank = bpmv.peek_rank(path)
    if rank == 2:
        return load_roi_series(path)
    if rank == 4:
        if atlas is None:
            raise DataError(f"{os.fspath(path)}: 4-D fMRI needs an atlas to extract ROI series")
        return extract_roi_timeseries(load_fmri(path), atlas)
    raise DataError(f"{os.fspath(path)}: expected rank 2 or 4, found rank {rank}")


# ---------------------------------------------------------------------------
# preprocessing


def extract_roi_timeseries(fmri: Fmri4D, atlas: AtlasLabelMap) -> FmriRoiSeries:
    """Mean signal of every labelled region in every frame.

    Sums accumulate in float64 in row-major voxel order.
    """
    if fmri.extents != atlas.extents:
        raise DimensionError(f"fMRI grid {fmri.extents} does not match atlas grid {atlas.extents}")
    n = atlas.n_regions
    labels = atlas.labels.ravel()
    counts = np.bincount(labels, minlength=n + 1)[1:].astype(np.float64)
    frames = fmri.voxels.reshape(fmri.frames, -1).astype(np.float64)
    out = np.empty((fmri.frames, n))
    for i, frame in enumerate(frames):
        out[i] = np.bincount(labels, weights=frame, minlength=n + 1)[1:] / counts
    return FmriRoiSeries(out)


def _zscore(x: np.ndarray, axis=None) -> np.ndarray:
    mu = x.mean(axis=axis, keepdims=True)
    sigma = x.std(axis=axis, keepdims=True)
    safe = np.where(sigma < 1e-8, 1.0, sigma)
    return np.where(sigma < 1e-8, 0.0, (x - mu) / safe)


def zscore_volume(volume: VolumeT1) -> VolumeT1:
    """Whole-volume z-score (population standard deviation)."""
    return VolumeT1(_zscore(volume.voxels.astype(np.float64)))


def zscore_series(series: FmriRoiSeries) -> FmriRoiSeries:
    """Per-region z-score over time; constant regions become zeros."""
    return FmriRoiSeries(_zscore(series.values, axis=0))


def downscale_volume(volume: VolumeT1, factor) -> VolumeT1:
    """Non-overlapping block means; trailing partial blocks average their actual voxels."""
    factors = (factor,) * 3 if np.isscalar(factor) else tuple(factor)
    if len(factors) != 3 or any(int(f) < 1 for f in factors):
        raise ValueError(f"factor must be a positive int or three positive ints, got {factor!r}")
    out = volume.voxels.astype(np.float64)
    for axis, f in enumerate(factors):
        f = int(f)
        if f == 1:
            continue
        n = out.shape[axis]
        starts = np.arange(0, n, f)
        sums = np.add.reduceat(out, starts, axis=axis)
        sizes = np.diff(np.append(starts, n)).astype(np.float64)
        shape = [1, 1, 1]
        shape[axis] = len(sizes)
        out = sums / sizes.reshape(shape)
    return VolumeT1(out)
