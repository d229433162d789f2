import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import directional_check, grad_check, leaf
from dualx import tensor as T
from dualx.degradation import bicubic_up
from dualx.errors import InvalidConfigError, InvalidShapeError
from dualx.io import load_checkpoint, save_checkpoint
from dualx.model import (DualXModel, ModelConfig, forward, init_params, param_shapes, parameter_count, patchify,
                         preset, unpatchify)
from dualx.tensor import Tensor


def random_params(cfg, seed, scale=0.2):
    """Every array random (including zero-initialised ones) so all gradient paths are live."""
    r = np.random.default_rng(seed)
    params = {}
    for name, shape in param_shapes(cfg).items():
        data = r.normal(size=shape) * scale
        if name.endswith("_g"):
            data += 1.0
        params[name] = leaf(data)
    return params


def model_grad_check(cfg, seed, clip_shape=(1, 3, 2, 4, 4), directional=False):
    r = np.random.default_rng(seed)
    params = random_params(cfg, seed)
    clip = r.uniform(size=clip_shape)
    b, _, n, h, w = clip_shape
    probe = Tensor(r.normal(size=(b, 3, n, h * cfg.upscale, w * cfg.upscale)))
    names = list(params)

    def build(*ws):
        out = forward(Tensor(clip), cfg, dict(zip(names, ws)))
        return T.tsum(T.mul(out, probe))

    inputs = [params[k] for k in names]
    if directional:
        return directional_check(build, inputs, r)
    return grad_check(build, inputs, max_entries=12, rng=r)


class TestShapes:
    @pytest.mark.parametrize("shape", [(1, 3, 1, 4, 4), (2, 3, 2, 4, 6), (1, 3, 3, 6, 2), (1, 3, 1, 2, 8)])
    def test_output_shape(self, shape):
        cfg = preset("tiny")
        out = forward(Tensor(np.random.default_rng(0).uniform(size=shape)), cfg, init_params(cfg, 0))
        b, c, n, h, w = shape
        assert out.shape == (b, c, n, 4 * h, 4 * w)

    def test_desk_non_square(self):
        model = DualXModel(preset("desk"))
        assert model(np.full((1, 3, 2, 8, 12), 0.5)).shape == (1, 3, 2, 32, 48)

    @pytest.mark.parametrize("shape", [(1, 3, 1, 65, 64), (1, 3, 1, 64, 65), (1, 4, 1, 4, 4), (3, 1, 4, 4)])
    def test_rejects_bad_shapes(self, shape):
        cfg = preset("tiny")
        with pytest.raises(InvalidShapeError):
            forward(Tensor(np.zeros(shape)), cfg, init_params(cfg, 0))

    def test_temporal_patch_divides_frames(self):
        cfg = preset("tiny", patch_t=2)
        with pytest.raises(InvalidShapeError):
            forward(Tensor(np.zeros((1, 3, 3, 4, 4))), cfg, init_params(cfg, 0))

    @pytest.mark.parametrize("name", ["tiny", "desk"])
    @pytest.mark.parametrize("shape", [(1, 3, 1, 4, 4), (1, 3, 2, 6, 4), (2, 3, 3, 4, 8)])
    def test_zero_weights_equal_bicubic(self, name, shape):
        cfg = preset(name)
        clip = np.random.default_rng(1).uniform(size=shape).astype(np.float32)
        out = forward(Tensor(clip), cfg, init_params(cfg, 0, zero=True)).data
        assert np.array_equal(out, bicubic_up(clip, 4).astype(np.float32))

    def test_fresh_init_equals_bicubic(self):
        # residual branches and the output conv start at zero
        cfg = preset("desk")
        clip = np.random.default_rng(2).uniform(size=(1, 3, 2, 4, 4)).astype(np.float32)
        out = forward(Tensor(clip), cfg, init_params(cfg, 3)).data
        assert np.array_equal(out, bicubic_up(clip, 4).astype(np.float32))


class TestPatchify:
    @settings(max_examples=20, deadline=None)
    @given(st.integers(1, 2), st.integers(1, 3), st.sampled_from([(1, 1, 1), (1, 2, 2), (2, 2, 1), (2, 1, 2)]),
           st.integers(1, 3), st.integers(1, 3), st.integers(1, 3))
    def test_round_trip(self, b, d, patch, a, c, e):
        pt, ph, pw = patch
        x = np.random.default_rng(a * 9 + c * 3 + e).normal(size=(b, d, a * pt, c * ph, e * pw))
        p = patchify(Tensor(x), patch)
        assert p.shape == (b, a, c, e, pt * ph * pw * d)
        assert unpatchify(p, patch, d).data.tobytes() == Tensor(x).data.tobytes()

    def test_patch_contents(self, f64):
        x = np.arange(2 * 1 * 4 * 4, dtype=float).reshape(1, 2, 1, 4, 4)
        p = patchify(Tensor(x), (1, 2, 2)).data
        # patch (0, 1, 0): rows 2-3, cols 0-1, features ordered (dy, dx, channel)
        expected = [x[0, ch, 0, 2 + dy, dx] for dy in range(2) for dx in range(2) for ch in range(2)]
        assert np.array_equal(p[0, 0, 1, 0], expected)


class TestConfig:
    def test_full_preset_heads_divide(self):
        cfg = preset("paper")
        assert cfg.embed_dim % cfg.heads == 0 and cfg.upscale_stages == 2

    @pytest.mark.parametrize("kw", [
        {"heads": 12}, {"upscale": 3}, {"arrangement": "omni"}, {"pre_extraction": "conv1d"},
        {"embed_dim": 8, "heads": 4}, {"patch_h": 0},
    ])
    def test_invalid(self, kw):
        with pytest.raises(InvalidConfigError):
            preset("tiny", **kw)

    def test_unknown_preset(self):
        with pytest.raises(InvalidConfigError):
            preset("huge")

    def test_dict_round_trip(self):
        cfg = preset("desk", arrangement="dual_interleaved")
        assert ModelConfig.from_dict(cfg.to_dict()) == cfg
        with pytest.raises(InvalidConfigError):
            ModelConfig.from_dict({"bogus": 1})

    def test_count_matches_init(self):
        for name in ("tiny", "desk"):
            cfg = preset(name)
            assert parameter_count(cfg) == DualXModel(cfg).num_params()

    def test_desk_size(self):
        assert parameter_count(preset("desk")) == 130_403

    def test_wrong_weights(self):
        params = init_params(preset("tiny"), 0)
        with pytest.raises(InvalidConfigError):
            DualXModel(preset("desk"), params)


class TestBehaviour:
    def test_deterministic(self):
        cfg = preset("desk")
        clip = np.random.default_rng(0).uniform(size=(1, 3, 2, 4, 4))
        a = forward(Tensor(clip), cfg, random_params(cfg, 5)).data
        b = forward(Tensor(clip), cfg, random_params(cfg, 5)).data
        assert a.tobytes() == b.tobytes()

    def test_init_seeded(self):
        cfg = preset("tiny")
        a, b, c = init_params(cfg, 1), init_params(cfg, 1), init_params(cfg, 2)
        assert all(np.array_equal(a[k].data, b[k].data) for k in a)
        assert not all(np.array_equal(a[k].data, c[k].data) for k in a)

    def test_arrangements_differ(self, f64):
        clip = np.random.default_rng(0).uniform(size=(1, 3, 2, 4, 6))
        cfg_s = preset("tiny", vtab_depth=2, htab_depth=2)
        cfg_i = preset("tiny", vtab_depth=2, htab_depth=2, arrangement="dual_interleaved")
        params = random_params(cfg_s, 4, scale=0.5)
        a = forward(Tensor(clip), cfg_s, params).data
        b = forward(Tensor(clip), cfg_i, params).data
        assert np.max(np.abs(a - b)) > 1e-6

    def test_conv3d_option(self):
        cfg = preset("tiny", pre_extraction="conv3d")
        assert param_shapes(cfg)["pre.w"] == (4, 3, 3, 3, 3)
        assert DualXModel(cfg)(np.zeros((1, 3, 2, 4, 4))).shape == (1, 3, 2, 16, 16)


class TestGradients:
    @pytest.mark.parametrize("arrangement", ["dual_serial_vh", "spatial_temporal"])
    def test_tiny_per_tensor(self, f64, arrangement):
        cfg = preset("tiny", arrangement=arrangement)
        assert model_grad_check(cfg, 0, (1, 3, 2, 2, 4)) < 1e-4

    def test_tiny_conv3d(self, f64):
        assert model_grad_check(preset("tiny", pre_extraction="conv3d"), 1, (1, 3, 2, 2, 2)) < 1e-4

    @pytest.mark.parametrize("arrangement", ["dual_serial_vh", "dual_interleaved", "spatial_temporal"])
    def test_desk_directional(self, f64, arrangement):
        cfg = preset("desk", arrangement=arrangement)
        worst = max(model_grad_check(cfg, seed, directional=True) for seed in range(20))
        assert worst < 1e-4


class TestCheckpoint:
    def test_round_trip(self, tmp_path):
        cfg = preset("desk", arrangement="dual_serial_hv")
        params = init_params(cfg, 7)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, cfg, params, {"note": "x"})
        cfg2, params2, meta = load_checkpoint(path)
        assert cfg2 == cfg and meta["note"] == "x"
        assert list(params2) == list(params)
        for k in params:
            assert params2[k].data.dtype == params[k].data.dtype
            assert params2[k].data.tobytes() == params[k].data.tobytes()
