"""Subject ingestion, ROI extraction, normalization and synthetic cohorts."""

from .manifest import (
    CohortArrays,
    ManifestEntry,
    format_manifest,
    load_manifest,
    parse_manifest,
    read_manifest,
    to_arrays,
    write_cohort,
)
from .subjects import (
    LABELS,
    AtlasLabelMap,
    DatasetManifest,
    Fmri4D,
    FmriRoiSeries,
    SubjectRecord,
    VolumeT1,
    downscale_volume,
    extract_roi_timeseries,
    load_atlas,
    load_fmri,
    load_functional,
    load_roi_series,
    load_volume,
    save_atlas,
    save_fmri,
    save_roi_series,
    save_volume,
    zscore_series,
    zscore_volume,
)
from .synthetic import blob_profile, blob_window, generate_synthetic_cohort
