"""Deterministic synthetic cohort with planted class effects in both modalities.

BD subjects carry a Gaussian intensity blob at a fixed location of the
structural volume and an elevated correlation between ROI 0 and ROI 1 of the
functional series. HC subjects carry neither. Everything else (anatomical
texture, measurement noise, ROI dynamics) is shared between classes.
"""

from __future__ import annotations

import numpy as np
from scipy.ndimage import gaussian_filter
from scipy.signal import lfilter

from ..seeding import rng_for
from .subjects import LABELS, DatasetManifest, FmriRoiSeries, SubjectRecord, VolumeT1

NOISE_SD = 0.5
TEXTURE_SD = 0.5
TEXTURE_SMOOTHING = 2.0
AR_COEF = 0.5
BURN_IN = 20
EFFECT_PAIR = (0, 1)


def _grid(extents):
    return np.meshgrid(*[np.arange(n, dtype=np.float64) for n in extents], indexing="ij")


def blob_center(extents) -> tuple[float, float, float]:
    d, h, w = extents
    return 0.3 * (d - 1), 0.6 * (h - 1), 0.6 * (w - 1)


def blob_profile(extents) -> np.ndarray:
    """Unit-peak Gaussian bump at the fixed BD effect location."""
    sigma = max(1.0, min(extents) / 10.0)
    center = blob_center(extents)
    sq = sum((g - c) ** 2 for g, c in zip(_grid(extents), center))
    return np.exp(-sq / (2 * sigma**2))


def blob_window(extents) -> np.ndarray:
    """Boolean mask of voxels at or above half the blob's peak."""
    return blob_profile(extents) >= 0.5


def brain_template(extents) -> np.ndarray:
    center = [(n - 1) / 2 for n in extents]
    radii = [0.42 * n for n in extents]
    r2 = sum(((g - c) / r) ** 2 for g, c, r in zip(_grid(extents), center, radii))
    return (r2 <= 1.0).astype(np.float64)


def _volume(rng, extents, effect, is_bd):
    texture = gaussian_filter(rng.standard_normal(extents), TEXTURE_SMOOTHING)
    texture *= TEXTURE_SD / max(texture.std(), 1e-12)
    vol = brain_template(extents) + texture + NOISE_SD * rng.standard_normal(extents)
    if is_bd and effect:
        vol = vol + effect * blob_profile(extents)
    return VolumeT1(vol)


def _roi_series(rng, frames, regions, effect, is_bd):
    shocks = rng.standard_normal((frames + BURN_IN, regions)) * np.sqrt(1 - AR_COEF**2)
    x = lfilter([1.0], [1.0, -AR_COEF], shocks, axis=0)[BURN_IN:]
    if is_bd and effect:
        a, b = EFFECT_PAIR
        r = np.tanh(effect)
        x[:, b] = r * x[:, a] + np.sqrt(1 - r * r) * x[:, b]
    return FmriRoiSeries(x)


def generate_synthetic_cohort(n_subjects: int, class_ratio: float = 0.5, vol_extents=(32, 32, 24),
                              frames: int = 64, regions: int = 116, effect_strength: float = 1.0,
                              seed: int = 0, fmri_effect_strength: float | None = None) -> DatasetManifest:
    """Build a labelled cohort; a pure function of its arguments.

    ``class_ratio`` is the BD fraction. ``effect_strength`` is the peak of the
    structural blob; the ROI-pair correlation is ``tanh(fmri_effect_strength)``
    with ``fmri_effect_strength`` defaulting to ``effect_strength``. Set either
    to 0 to switch off that modality's effect.
    """
    if n_subjects < 1:
        raise ValueError("n_subjects must be >= 1")
    if not 0.0 <= class_ratio <= 1.0:
        raise ValueError("class_ratio must lie in [0, 1]")
    if regions < 2:
        raise ValueError("need at least two regions for the correlation effect")
    extents = tuple(int(n) for n in vol_extents)
    fmri_effect = effect_strength if fmri_effect_strength is None else fmri_effect_strength

    n_bd = int(round(n_subjects * class_ratio))
    targets = np.array([1] * n_bd + [0] * (n_subjects - n_bd))
    targets = rng_for(seed, "labels").permutation(targets)

    subjects = []
    for i, target in enumerate(targets):
        is_bd = bool(target)
        vol_rng = rng_for(seed, "volume", i)
        roi_rng = rng_for(seed, "roi", i)
        subjects.append(SubjectRecord(
            subject_id=f"sub-{i + 1:04d}",
            label=LABELS[target],
            volume=_volume(vol_rng, extents, effect_strength, is_bd),
            roi_series=_roi_series(roi_rng, frames, regions, fmri_effect, is_bd),
        ))
    return DatasetManifest(subjects)
