import numpy as np
import pytest

from bpmfusion.data import (
    AtlasLabelMap,
    DatasetManifest,
    Fmri4D,
    FmriRoiSeries,
    ManifestEntry,
    VolumeT1,
    blob_window,
    downscale_volume,
    extract_roi_timeseries,
    format_manifest,
    generate_synthetic_cohort,
    load_atlas,
    load_fmri,
    load_functional,
    load_manifest,
    load_volume,
    parse_manifest,
    save_atlas,
    save_fmri,
    save_volume,
    to_arrays,
    write_cohort,
    zscore_series,
    zscore_volume,
)
from bpmfusion.data import bpmv
from bpmfusion.errors import (
    BadMagicError,
    DataError,
    ExtentOverflowError,
    ParseError,
    RankMismatchError,
    TrailingDataError,
    TruncatedPayloadError,
)


class TestBpmv:
    def test_volume_round_trip(self, tmp_path):
        vol = VolumeT1(np.random.default_rng(0).standard_normal((4, 4, 4)))
        save_volume(tmp_path / "v.bpmv", vol)
        np.testing.assert_array_equal(load_volume(tmp_path / "v.bpmv").voxels, vol.voxels)

    def test_single_voxel(self, tmp_path):
        save_volume(tmp_path / "v.bpmv", VolumeT1(np.full((1, 1, 1), 3.5)))
        assert load_volume(tmp_path / "v.bpmv").voxels.ravel().tolist() == [3.5]

    def test_layout(self):
        blob = bpmv.encode(np.array([[1.0, 2.0]], dtype=np.float32))
        assert blob[:4] == b"BPMV" and blob[4] == 2
        assert blob[5:13] == (1).to_bytes(4, "little") + (2).to_bytes(4, "little")
        assert np.frombuffer(blob[13:], "<f4").tolist() == [1.0, 2.0]

    def test_fmri_and_atlas_round_trip(self, tmp_path):
        rng = np.random.default_rng(1)
        fmri = Fmri4D(rng.standard_normal((3, 2, 2, 2)))
        atlas = AtlasLabelMap(np.array([1, 2, 0, 1, 2, 2, 1, 0]).reshape(2, 2, 2))
        save_fmri(tmp_path / "f.bpmv", fmri)
        save_atlas(tmp_path / "a.bpma", atlas)
        np.testing.assert_array_equal(load_fmri(tmp_path / "f.bpmv").voxels, fmri.voxels)
        np.testing.assert_array_equal(load_atlas(tmp_path / "a.bpma").labels, atlas.labels)
        with open(tmp_path / "a.bpma", "rb") as fh:
            assert fh.read(4) == b"BPMA"

    def test_bad_magic(self):
        blob = bytearray(bpmv.encode(np.ones((2, 2, 2))))
        blob[0:4] = b"XXXX"
        with pytest.raises(BadMagicError):
            bpmv.decode(bytes(blob))

    def test_truncated(self):
        blob = bpmv.encode(np.ones((2, 2, 2)))
        with pytest.raises(TruncatedPayloadError):
            bpmv.decode(blob[:-1])
        with pytest.raises(TruncatedPayloadError):
            bpmv.decode(blob[:7])

    def test_trailing(self):
        with pytest.raises(TrailingDataError):
            bpmv.decode(bpmv.encode(np.ones(3)) + b"\0")

    def test_extent_overflow(self):
        header = b"BPMV" + bytes([3]) + (2**20).to_bytes(4, "little") * 3
        with pytest.raises(ExtentOverflowError):
            bpmv.decode(header)
        with pytest.raises(ExtentOverflowError):
            bpmv.decode(b"BPMV" + bytes([1]) + (0).to_bytes(4, "little"))

    def test_rank_mismatch(self, tmp_path):
        bpmv.write_array(tmp_path / "x.bpmv", np.ones((2, 2)))
        with pytest.raises(RankMismatchError):
            load_volume(tmp_path / "x.bpmv")

    def test_fuzz_random_bytes(self):
        rng = np.random.default_rng(2024)
        for i in range(1000):
            n = int(rng.integers(0, 64))
            blob = rng.bytes(n)
            if i % 2:
                blob = b"BPMV" + blob  # exercise header paths past the magic
            try:
                bpmv.decode(blob)
            except ParseError:
                pass

    def test_fuzz_mutated_valid_file(self):
        rng = np.random.default_rng(7)
        good = bpmv.encode(np.arange(24, dtype=np.float32).reshape(2, 3, 4))
        for _ in range(1000):
            blob = bytearray(good)
            for pos in rng.integers(0, len(blob), size=int(rng.integers(1, 4))):
                blob[pos] = int(rng.integers(0, 256))
            blob = bytes(blob[: int(rng.integers(0, len(blob) + 1))])
            try:
                bpmv.decode(blob)
            except ParseError:
                pass


def brute_force_roi(fmri, labels, n):
    out = np.zeros((fmri.shape[0], n))
    flat_labels = labels.ravel().tolist()
    for i in range(fmri.shape[0]):
        frame = fmri[i].ravel().tolist()
        sums, counts = [0.0] * (n + 1), [0] * (n + 1)
        for value, label in zip(frame, flat_labels):
            sums[label] += float(value)
            counts[label] += 1
        for j in range(1, n + 1):
            out[i, j - 1] = sums[j] / counts[j]
    return out


class TestRoiExtraction:
    def test_constant(self):
        fmri = Fmri4D(np.full((3, 2, 3, 2), 4.25))
        atlas = AtlasLabelMap(np.arange(12).reshape(2, 3, 2) % 3)
        np.testing.assert_array_equal(extract_roi_timeseries(fmri, atlas).values, 4.25)

    def test_two_regions(self):
        labels = np.array([1, 1, 2, 2, 1, 2, 1, 2]).reshape(2, 2, 2)
        frame = np.where(labels == 1, 1.0, 2.0)
        fmri = Fmri4D(np.stack([frame, frame, frame]))
        np.testing.assert_array_equal(extract_roi_timeseries(fmri, AtlasLabelMap(labels)).values,
                                      np.tile([1.0, 2.0], (3, 1)))

    @pytest.mark.parametrize("seed", range(5))
    def test_matches_voxel_loop_exactly(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 4, size=(3, 4, 2))
        labels.ravel()[:3] = [1, 2, 3]
        fmri = rng.standard_normal((2, 3, 4, 2)).astype(np.float32)
        got = extract_roi_timeseries(Fmri4D(fmri), AtlasLabelMap(labels, 3)).values
        np.testing.assert_array_equal(got, brute_force_roi(fmri, labels, 3))

    def test_extent_mismatch(self):
        with pytest.raises(ValueError):
            extract_roi_timeseries(Fmri4D(np.zeros((2, 2, 2, 2))), AtlasLabelMap(np.ones((2, 2, 3), int)))

    def test_atlas_requires_every_region(self):
        with pytest.raises(DataError):
            AtlasLabelMap(np.array([0, 1, 3, 3]).reshape(1, 2, 2))

    def test_load_functional_through_atlas(self, tmp_path):
        rng = np.random.default_rng(3)
        fmri = Fmri4D(rng.standard_normal((4, 2, 2, 2)))
        atlas = AtlasLabelMap(np.array([1, 2] * 4).reshape(2, 2, 2))
        save_fmri(tmp_path / "f.bpmv", fmri)
        series = load_functional(tmp_path / "f.bpmv", atlas)
        assert series.values.shape == (4, 2)
        with pytest.raises(DataError):
            load_functional(tmp_path / "f.bpmv")


class TestZscore:
    def test_constant_maps_to_zero(self):
        np.testing.assert_array_equal(zscore_volume(VolumeT1(np.full((2, 2, 2), 7.0))).voxels, 0)
        np.testing.assert_array_equal(zscore_series(FmriRoiSeries(np.full((5, 3), -1.0))).values, 0)

    def test_two_point_column(self):
        out = zscore_series(FmriRoiSeries(np.array([[0.0, 5.0], [2.0, 5.0]]))).values
        np.testing.assert_allclose(out, [[-1.0, 0.0], [1.0, 0.0]])

    def test_series_columns_standardized(self):
        s = FmriRoiSeries(np.random.default_rng(0).normal(3, 4, (50, 6)))
        out = zscore_series(s).values
        np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-10)
        np.testing.assert_allclose(out.std(axis=0), 1, atol=1e-5)

    def test_idempotent(self):
        v = VolumeT1(np.random.default_rng(1).normal(5, 2, (4, 5, 6)))
        once = zscore_volume(v)
        np.testing.assert_allclose(zscore_volume(once).voxels, once.voxels, atol=1e-6)
        s = FmriRoiSeries(np.random.default_rng(2).normal(1, 3, (20, 4)))
        np.testing.assert_allclose(zscore_series(zscore_series(s)).values, zscore_series(s).values, atol=1e-6)


def brute_force_downscale(vol, f):
    D, H, W = vol.shape
    out = np.zeros(tuple(-(-n // k) for n, k in zip(vol.shape, f)))
    for i in range(out.shape[0]):
        for j in range(out.shape[1]):
            for k in range(out.shape[2]):
                total, count = 0.0, 0
                for a in range(i * f[0], min((i + 1) * f[0], D)):
                    for b in range(j * f[1], min((j + 1) * f[1], H)):
                        for c in range(k * f[2], min((k + 1) * f[2], W)):
                            total += vol[a, b, c]
                            count += 1
                out[i, j, k] = total / count
    return out


class TestDownscale:
    def test_factor_one_identity(self):
        v = VolumeT1(np.random.default_rng(0).standard_normal((3, 4, 5)))
        np.testing.assert_array_equal(downscale_volume(v, 1).voxels, v.voxels)

    def test_constant_blocks(self):
        np.testing.assert_allclose(downscale_volume(VolumeT1(np.full((4, 4, 4), 1.5)), 2).voxels, 1.5)

    @pytest.mark.parametrize("shape,factor", [((4, 4, 4), (2, 2, 2)), ((5, 7, 3), (2, 3, 2))])
    def test_matches_block_loop(self, shape, factor):
        vol = np.random.default_rng(1).standard_normal(shape).astype(np.float32)
        got = downscale_volume(VolumeT1(vol), factor).voxels
        np.testing.assert_allclose(got, brute_force_downscale(vol.astype(np.float64), factor), rtol=1e-6)


def _threshold_sweep_bacc(scores, targets):
    """Best balanced accuracy over every threshold (either direction)."""
    best = 0.0
    pos, neg = targets == 1, targets == 0
    for t in np.concatenate([scores, [np.inf]]):
        pred = scores >= t
        sen = np.mean(pred[pos])
        spec = np.mean(~pred[neg])
        best = max(best, (sen + spec) / 2, (2 - sen - spec) / 2)
    return best


class TestSynthetic:
    def test_deterministic(self):
        kw = dict(n_subjects=6, vol_extents=(6, 6, 4), frames=10, regions=4, effect_strength=1.0, seed=11)
        a, b = generate_synthetic_cohort(**kw), generate_synthetic_cohort(**kw)
        assert a.ids == b.ids and a.labels.tolist() == b.labels.tolist()
        for sa, sb in zip(a, b):
            np.testing.assert_array_equal(sa.volume.voxels, sb.volume.voxels)
            np.testing.assert_array_equal(sa.roi_series.values, sb.roi_series.values)

    def test_seed_changes_data(self):
        kw = dict(n_subjects=4, vol_extents=(4, 4, 4), frames=8, regions=3)
        a = generate_synthetic_cohort(seed=1, **kw)
        b = generate_synthetic_cohort(seed=2, **kw)
        assert not np.array_equal(a.subjects[0].volume.voxels, b.subjects[0].volume.voxels)

    def test_class_ratio(self):
        m = generate_synthetic_cohort(10, class_ratio=0.3, vol_extents=(4, 4, 4), frames=6, regions=3)
        assert m.class_counts() == {"HC": 7, "BD": 3}

    def test_no_effect_means_no_class_difference(self):
        m = generate_synthetic_cohort(200, vol_extents=(12, 12, 8), frames=8, regions=3, effect_strength=0.0,
                                      seed=5)
        window = blob_window((12, 12, 8))
        stat = np.array([s.volume.voxels[window].mean() for s in m])
        y = m.labels
        a, b = stat[y == 1], stat[y == 0]
        se = np.sqrt(a.var(ddof=1) / len(a) + b.var(ddof=1) / len(b))
        assert abs(a.mean() - b.mean()) < 3 * se

    def test_strong_effect_is_separable_by_threshold(self):
        m = generate_synthetic_cohort(100, vol_extents=(12, 12, 8), frames=8, regions=3, effect_strength=2.0,
                                      seed=6)
        window = blob_window((12, 12, 8))
        scores = np.array([s.volume.voxels[window].mean() for s in m])
        assert _threshold_sweep_bacc(scores, m.labels) >= 0.9

    def test_fmri_effect_raises_pair_correlation(self):
        m = generate_synthetic_cohort(40, vol_extents=(4, 4, 4), frames=128, regions=4, effect_strength=1.0, seed=2)
        corr = np.array([np.corrcoef(s.roi_series.values[:, :2].T)[0, 1] for s in m])
        assert corr[m.labels == 1].mean() > 0.6 > 0.2 > abs(corr[m.labels == 0].mean())


class TestManifest:
    def test_format_parse_round_trip(self):
        entries = [ManifestEntry("s1", "BD", "a.bpmv", "b.bpmv"), ManifestEntry("s2", "HC", "c.bpmv", "d.bpmv")]
        assert parse_manifest(format_manifest(entries)) == entries

    @pytest.mark.parametrize("text", ["s1\tBD\ta\n", "s1\tXX\ta\tb\n", "s1\tBD\ta\tb\ns1\tHC\tc\td\n"])
    def test_malformed(self, text):
        with pytest.raises(DataError):
            parse_manifest(text)

    def test_write_and_load_cohort(self, tmp_path):
        m = generate_synthetic_cohort(4, vol_extents=(4, 4, 3), frames=6, regions=3, seed=0)
        path = write_cohort(m, tmp_path)
        loaded = load_manifest(path)
        assert loaded.ids == m.ids and loaded.labels.tolist() == m.labels.tolist()
        for a, b in zip(loaded, m):
            np.testing.assert_array_equal(a.volume.voxels, b.volume.voxels)
            np.testing.assert_array_equal(a.roi_series.values, b.roi_series.values.astype(np.float32))

    def test_duplicate_ids_rejected(self):
        m = generate_synthetic_cohort(2, vol_extents=(2, 2, 2), frames=4, regions=2)
        with pytest.raises(DataError):
            DatasetManifest([m.subjects[0], m.subjects[0]])

    def test_to_arrays_shapes(self):
        m = generate_synthetic_cohort(5, vol_extents=(4, 5, 3), frames=7, regions=3)
        arr = to_arrays(m)
        assert arr.volumes.shape == (5, 1, 4, 5, 3) and arr.series.shape == (5, 7, 3)
        assert arr.volumes.dtype == np.float32
        np.testing.assert_allclose(arr.series.mean(axis=1), 0, atol=1e-5)
