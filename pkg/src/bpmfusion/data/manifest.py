"""Tab-separated cohort manifests and on-disk cohort layout.

One subject per line::

    id<TAB>label(BD|HC)<TAB>volume_path<TAB>fmri_or_roi_path

Relative paths resolve against the manifest's directory.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..errors import DataError
from .subjects import (
    LABELS,
    AtlasLabelMap,
    DatasetManifest,
    SubjectRecord,
    load_functional,
    load_volume,
    save_roi_series,
    save_volume,
    zscore_series,
    zscore_volume,
)

MANIFEST_NAME = "manifest.tsv"


@dataclass(frozen=True)
class ManifestEntry:
    subject_id: str
    label: str
    volume_path: str
    functional_path: str


def format_manifest(entries) -> str:
    return "".join(f"{e.subject_id}\t{e.label}\t{e.volume_path}\t{e.functional_path}\n" for e in entries)


def parse_manifest(text: str) -> list[ManifestEntry]:
    entries, seen = [], set()
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.strip():
            continue
        fields = line.split("\t")
        if len(fields) != 4:
            raise DataError(f"manifest line {lineno}: expected 4 tab-separated fields, got {len(fields)}")
        entry = ManifestEntry(*fields)
        if entry.label not in LABELS:
            raise DataError(f"manifest line {lineno}: label must be BD or HC, got {entry.label!r}")
        if entry.subject_id in seen:
            raise DataError(f"manifest line {lineno}: duplicate id {entry.subject_id!r}")
        seen.add(entry.subject_id)
        entries.append(entry)
    return entries


def read_manifest(path) -> list[ManifestEntry]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def load_manifest(path, atlas: AtlasLabelMap | None = None) -> DatasetManifest:
    """Read a manifest and load every subject it lists."""
    root = Path(path).parent
    subjects = []
    for e in read_manifest(path):
        subjects.append(SubjectRecord(
            e.subject_id, e.label,
            load_volume(root / e.volume_path),
            load_functional(root / e.functional_path, atlas),
        ))
    return DatasetManifest(subjects)


def write_cohort(manifest: DatasetManifest, out_dir) -> Path:
    """Write every subject as BPMV files plus ``manifest.tsv``; returns the manifest path."""
    out = Path(out_dir)
    (out / "subjects").mkdir(parents=True, exist_ok=True)
    entries = []
    for s in manifest:
        vol_rel = f"subjects/{s.subject_id}_T1w.bpmv"
        roi_rel = f"subjects/{s.subject_id}_roi.bpmv"
        save_volume(out / vol_rel, s.volume)
        save_roi_series(out / roi_rel, s.roi_series)
        entries.append(ManifestEntry(s.subject_id, s.label, vol_rel, roi_rel))
    target = out / MANIFEST_NAME
    target.write_text(format_manifest(entries), encoding="utf-8")
    return target


@dataclass
class CohortArrays:
    """Model-ready stacked inputs: volumes ``[S,1,D,H,W]``, series ``[S,M,N]``, targets ``[S]``."""

    ids: list[str]
    volumes: np.ndarray
    series: np.ndarray
    targets: np.ndarray

    def __len__(self) -> int:
        return len(self.ids)

    def take(self, index) -> "CohortArrays":
        index = np.asarray(index)
        return CohortArrays([self.ids[i] for i in index], self.volumes[index], self.series[index],
                            self.targets[index])


def to_arrays(manifest: DatasetManifest, dtype=np.float32) -> CohortArrays:
    """Stack subjects after per-subject z-scoring.

    Normalization uses only each subject's own statistics, so no information
    flows between subjects (and hence none from test into train folds).
    """
    if not len(manifest):
        raise DataError("empty cohort")
    shapes = {s.volume.extents for s in manifest}
    series_shapes = {s.roi_series.values.shape for s in manifest}
    if len(shapes) != 1:
        raise DataError(f"volume extents differ across subjects: {sorted(shapes)}")
    if len(series_shapes) != 1:
        raise DataError(f"ROI series shapes differ across subjects: {sorted(series_shapes)}")
    vols = np.stack([zscore_volume(s.volume).voxels for s in manifest])[:, None].astype(dtype)
    series = np.stack([zscore_series(s.roi_series).values for s in manifest]).astype(dtype)
    return CohortArrays(manifest.ids, vols, series, manifest.labels)
