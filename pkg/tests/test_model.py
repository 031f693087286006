import math
from dataclasses import replace

import numpy as np
import pytest

from bpmfusion.errors import ConfigError
from bpmfusion.model import (
    ConvLayer,
    FusionConfig,
    ModelConfig,
    P2femConfig,
    SfamConfig,
    classify,
    forward,
    fuse,
    init_params,
    load_checkpoint,
    p2fem_extents,
    p2fem_forward,
    parameter_shapes,
    predict_logits,
    save_checkpoint,
    sfam_forward,
    sfam_frame_counts,
    sfam_spatial_unit,
    sfam_temporal_unit,
    smri_feature_width,
)
from bpmfusion.tensor_core import Tape, Tensor, conv3d, grad_check, ops, sigmoid
from bpmfusion.verify import MODEL_TOLERANCE, TINY_MODEL, model_case

SMALL = ModelConfig(
    p2fem=P2femConfig((ConvLayer(4, 3, 2, 1), ConvLayer(4, 3, 2, 2), ConvLayer(4, 3, 2, 2), ConvLayer(4, 3, 1, 2))),
    sfam=SfamConfig(num_units=2, kernel=3, stride=2, padding=1, regions=5),
    fusion=FusionConfig(target_size=3),
)


def _zero_params(params):
    for name, t in params.weights.items():
        if not name.endswith("gamma"):
            t.data[...] = 0
    return params


class TestP2fem:
    def test_default_extent_chain(self):
        sizes = p2fem_extents(ModelConfig(), (64, 64, 48))
        assert sizes == [(32, 32, 24), (16, 16, 12), (8, 8, 6), (4, 4, 3)]
        assert smri_feature_width(ModelConfig(), (64, 64, 48)) == 32 * 4 * 4 * 3 == 1536

    def test_default_forward_width(self):
        cfg = ModelConfig()
        params = init_params(cfg, "smri_only", (64, 64, 48), seed=0)
        out = p2fem_forward(params, Tensor(np.zeros((1, 1, 64, 64, 48), np.float32)), cfg, training=False)
        assert out.shape == (1, 1536)

    def test_zero_weights_give_zero_features(self):
        params = _zero_params(init_params(SMALL, "smri_only", (8, 8, 8), seed=1, dtype=np.float64))
        vols = Tensor(np.random.default_rng(0).standard_normal((2, 1, 8, 8, 8)))
        np.testing.assert_array_equal(p2fem_forward(params, vols, SMALL).data, 0)

    def test_groups_halve_weight_count(self):
        grouped = parameter_shapes(ModelConfig(), "smri_only", (32, 32, 24))["p2fem.1.conv.weight"]
        layers = list(ModelConfig().p2fem.layers)
        layers[1] = replace(layers[1], groups=1)
        ungrouped_cfg = ModelConfig(p2fem=P2femConfig(tuple(layers)))
        ungrouped = parameter_shapes(ungrouped_cfg, "smri_only", (32, 32, 24))["p2fem.1.conv.weight"]
        assert math.prod(grouped) * 2 == math.prod(ungrouped)

    def test_too_small_input_names_first_failing_layer(self):
        layers = tuple(ConvLayer(2, 3, 2, 1, padding=0) for _ in range(4))
        cfg = ModelConfig(p2fem=P2femConfig(layers))
        with pytest.raises(ConfigError, match="layer 2"):
            p2fem_extents(cfg, (8, 8, 8))  # 8 -> 3 -> 1, layer 2 cannot fit k=3

    def test_requires_exactly_four_layers(self):
        with pytest.raises(ConfigError):
            P2femConfig(DEFAULT := tuple(ConvLayer(2, 3, 2) for _ in range(3)))  # noqa: F841

    def test_requires_strided_downsampling(self):
        with pytest.raises(ConfigError):
            P2femConfig(tuple(ConvLayer(2, 3, 1) for _ in range(3)) + (ConvLayer(2, 3, 2),))

    def test_group_divisibility(self):
        with pytest.raises(ConfigError):
            P2femConfig((ConvLayer(3, 3, 2, 1), ConvLayer(4, 3, 2, 2), ConvLayer(4, 3, 2), ConvLayer(4, 3, 2)))


class TestSfam:
    def _params(self, n=7, units=1, **kw):
        cfg = ModelConfig(sfam=SfamConfig(num_units=units, regions=n, **kw))
        return cfg, init_params(cfg, "fmri_only", frames=30, seed=3, dtype=np.float64)

    def test_spatial_zero_weights_add_beta(self):
        cfg, params = self._params()
        params["sfam.0.spatial.weight"].data[...] = 0
        params["sfam.0.spatial.bias"].data[...] = 0
        beta = np.linspace(-1, 1, 7)
        params["sfam.0.spatial.bn.beta"].data[...] = beta
        x = np.random.default_rng(0).standard_normal((2, 5, 7))
        np.testing.assert_allclose(sfam_spatial_unit(params, Tensor(x), 0, cfg).data, x + beta)

    def test_spatial_residual(self):
        cfg, params = self._params()
        x = Tensor(np.random.default_rng(1).standard_normal((2, 5, 7)))
        y = sfam_spatial_unit(params, x, 0, cfg, training=False)
        h = ops.linear(x, params["sfam.0.spatial.weight"], params["sfam.0.spatial.bias"])
        h = ops.batch_norm(ops.relu(h), params["sfam.0.spatial.bn.gamma"], params["sfam.0.spatial.bn.beta"],
                           params["sfam.0.spatial.bn.running_mean"], params["sfam.0.spatial.bn.running_var"],
                           training=False, axis=-1)
        assert y.shape == x.shape
        np.testing.assert_allclose(y.data - h.data, x.data, atol=1e-6)

    def test_temporal_shape_example(self):
        cfg, params = self._params(n=4)
        out = sfam_temporal_unit(params, Tensor(np.zeros((1, 210, 4))), 0, cfg)
        assert out.shape == (1, 105, 4)

    def test_temporal_identity(self):
        cfg, params = self._params(n=3, kernel=1, stride=1, padding=0)
        params["sfam.0.temporal.weight"].data[...] = np.eye(3)[:, :, None]
        params["sfam.0.temporal.bias"].data[...] = 0
        x = np.random.default_rng(2).standard_normal((2, 9, 3))
        np.testing.assert_array_equal(sfam_temporal_unit(params, Tensor(x), 0, cfg).data, x)

    def test_default_frame_chain(self):
        cfg = ModelConfig(sfam=SfamConfig(regions=6))
        assert sfam_frame_counts(cfg, 210) == [105, 53, 27]
        params = init_params(cfg, "fmri_only", frames=210, seed=0)
        trace = []
        out = sfam_forward(params, Tensor(np.zeros((2, 210, 6), np.float32)), cfg, trace=trace)
        assert [s[1] for s in trace[1::2]] == [105, 53, 27]
        assert all(s[2] == 6 for s in trace) and out.shape == (2, 6)

    def test_constant_input_constant_pre_bn(self):
        cfg, params = self._params(n=4)
        x = Tensor(np.full((2, 8, 4), 0.7))
        h = ops.linear(x, params["sfam.0.spatial.weight"], params["sfam.0.spatial.bias"]).data
        np.testing.assert_allclose(h, np.broadcast_to(h[0, 0], h.shape))

    def test_region_count_checked(self):
        cfg, params = self._params(n=4)
        with pytest.raises(ConfigError):
            sfam_forward(params, Tensor(np.zeros((1, 10, 5))), cfg)


class TestFusionAndHead:
    def test_fused_width(self):
        cfg = ModelConfig(sfam=SfamConfig(regions=116), fusion=FusionConfig(target_size=8))
        params = init_params(cfg, "multimodal", (16, 16, 16), seed=0)
        f_s = smri_feature_width(cfg, (16, 16, 16))
        out = fuse(params, Tensor(np.zeros((3, f_s), np.float32)), Tensor(np.zeros((3, 116), np.float32)))
        assert out.shape == (3, 124)

    def test_zero_projection_yields_bias_first(self):
        cfg = replace(SMALL, fusion=FusionConfig(target_size=3))
        params = init_params(cfg, "multimodal", (8, 8, 8), seed=0, dtype=np.float64)
        params["fusion.proj.weight"].data[...] = 0
        bias = params["fusion.proj.bias"].data.copy()
        f_s = smri_feature_width(cfg, (8, 8, 8))
        fmri = np.random.default_rng(0).standard_normal((2, 5))
        out = fuse(params, Tensor(np.random.default_rng(1).standard_normal((2, f_s))), Tensor(fmri)).data
        np.testing.assert_array_equal(out[:, :3], np.tile(bias, (2, 1)))
        np.testing.assert_array_equal(out[:, 3:], fmri)

    def test_linear_head_zero_weights(self):
        params = init_params(SMALL, "fmri_only", frames=12, seed=0, dtype=np.float64)
        params["head.0.weight"].data[...] = 0
        logits = classify(params, Tensor(np.ones((4, 5))), SMALL)
        np.testing.assert_array_equal(logits.data, params["head.0.bias"].data[0])
        assert logits.shape == (4,)

    def test_dense_head_by_hand(self):
        cfg = replace(SMALL, sfam=replace(SMALL.sfam, regions=2),
                      fusion=FusionConfig(target_size=3, classifier="dense", dense_hidden=(2,)))
        params = init_params(cfg, "fmri_only", frames=12, seed=0, dtype=np.float64)
        params["head.0.weight"].data[...] = np.eye(2)
        params["head.0.bias"].data[...] = [0.0, -1.0]
        params["head.1.weight"].data[...] = [[2.0, 3.0]]
        params["head.1.bias"].data[...] = [0.5]
        x = np.array([[1.0, 2.0], [-1.0, 0.5]])
        # hidden = relu([1, 1]) and relu([-1, -0.5]) -> [1, 1] and [0, 0]
        np.testing.assert_allclose(classify(params, Tensor(x), cfg).data, [2 + 3 + 0.5, 0.5])

    def test_logistic_midpoint(self):
        assert sigmoid(np.array([0.0]))[0] == 0.5

    def test_head_width_mismatch(self):
        params = init_params(SMALL, "fmri_only", frames=12, seed=0)
        with pytest.raises(ConfigError):
            classify(params, Tensor(np.ones((2, 9))), SMALL)


class TestRouting:
    @pytest.fixture
    def batch(self):
        rng = np.random.default_rng(4)
        return rng.standard_normal((3, 1, 8, 8, 8)), rng.standard_normal((3, 12, 5))

    @pytest.mark.parametrize("mode", ["multimodal", "smri_only", "fmri_only"])
    def test_logit_shape(self, mode, batch):
        params = init_params(SMALL, mode, (8, 8, 8), 12, seed=0, dtype=np.float64)
        assert forward(params, Tensor(batch[0]), Tensor(batch[1]), SMALL, mode).shape == (3,)

    def test_smri_only_ignores_fmri(self, batch):
        params = init_params(SMALL, "smri_only", (8, 8, 8), 12, seed=0, dtype=np.float64)
        a = predict_logits(params, batch[0], batch[1], SMALL, "smri_only")
        b = predict_logits(params, batch[0], batch[1] * 0 + 123.0, SMALL, "smri_only")
        assert a.tobytes() == b.tobytes()

    def test_fmri_only_ignores_smri(self, batch):
        params = init_params(SMALL, "fmri_only", (8, 8, 8), 12, seed=0, dtype=np.float64)
        a = predict_logits(params, batch[0], batch[1], SMALL, "fmri_only")
        b = predict_logits(params, -batch[0], batch[1], SMALL, "fmri_only")
        assert a.tobytes() == b.tobytes()

    def test_multimodal_sees_both(self, batch):
        params = init_params(SMALL, "multimodal", (8, 8, 8), 12, seed=0, dtype=np.float64)
        rng = np.random.default_rng(5)

        def run(v, s):
            return forward(params, Tensor(v), Tensor(s), SMALL, "multimodal", training=True).data

        base = run(*batch)
        assert not np.allclose(run(rng.standard_normal(batch[0].shape), batch[1]), base)
        assert not np.allclose(run(batch[0], rng.standard_normal(batch[1].shape)), base)

    def test_unknown_mode(self, batch):
        params = init_params(SMALL, "multimodal", (8, 8, 8), 12, seed=0)
        with pytest.raises(ConfigError):
            forward(params, Tensor(batch[0]), Tensor(batch[1]), SMALL, "late_fusion")


class TestStructure:
    @pytest.mark.parametrize("mode", ["multimodal", "smri_only", "fmri_only"])
    def test_no_pooling_in_tape(self, mode):
        params = init_params(ModelConfig(sfam=SfamConfig(regions=4)), mode, (16, 16, 12), 32, seed=0)
        rng = np.random.default_rng(0)
        with Tape() as tape:
            forward(params, Tensor(rng.standard_normal((2, 1, 16, 16, 12)).astype(np.float32)),
                    Tensor(rng.standard_normal((2, 32, 4)).astype(np.float32)),
                    ModelConfig(sfam=SfamConfig(regions=4)), mode)
        names = tape.op_names()
        assert not any("pool" in n for n in names)
        assert names.count("conv3d") == (0 if mode == "fmri_only" else 4)

    def test_param_determinism(self):
        a = init_params(ModelConfig(), "multimodal", (32, 32, 24), 64, seed=9)
        b = init_params(ModelConfig(), "multimodal", (32, 32, 24), 64, seed=9)
        c = init_params(ModelConfig(), "multimodal", (32, 32, 24), 64, seed=10)
        assert all(a[n].data.tobytes() == b[n].data.tobytes() for n in a.names())
        assert any(a[n].data.tobytes() != c[n].data.tobytes() for n in a.weights)

    def test_grouped_block_independence(self):
        rng = np.random.default_rng(0)
        x = rng.standard_normal((1, 4, 5, 5, 5))
        w = Tensor(rng.standard_normal((6, 2, 3, 3, 3)))
        base = conv3d(Tensor(x), w, None, padding=1, groups=2).data
        x2 = x.copy()
        x2[:, 2:] += rng.standard_normal(x2[:, 2:].shape)  # perturb input block 1 only
        moved = conv3d(Tensor(x2), w, None, padding=1, groups=2).data
        np.testing.assert_array_equal(moved[:, :3], base[:, :3])
        assert not np.allclose(moved[:, 3:], base[:, 3:])


def test_end_to_end_gradient():
    fn, weights, _ = model_case(seed=0)
    assert grad_check(fn, weights, epsilon=1e-5) < MODEL_TOLERANCE


@pytest.mark.parametrize("mode", ["smri_only", "fmri_only"])
def test_end_to_end_gradient_single_modality(mode):
    fn, weights, _ = model_case(seed=1, mode=mode, config=replace(TINY_MODEL, fusion=FusionConfig(3)))
    assert grad_check(fn, weights, epsilon=1e-5) < MODEL_TOLERANCE


def test_checkpoint_round_trip(tmp_path):
    cfg = replace(SMALL, fusion=FusionConfig(4, "dense", (6,)))
    params = init_params(cfg, "multimodal", (8, 8, 8), 12, seed=2)
    save_checkpoint(tmp_path / "ckpt", params, cfg, "multimodal")
    loaded, cfg2, mode = load_checkpoint(tmp_path / "ckpt")
    assert cfg2.to_flat() == cfg.to_flat() and mode == "multimodal"
    assert sorted(loaded.names()) == sorted(params.names())
    for n in params.names():
        np.testing.assert_array_equal(loaded[n].data, params[n].data)
    index = (tmp_path / "ckpt" / "index.tsv").read_text().splitlines()
    assert all(len(line.split("\t")) == 2 for line in index)
