import math

import numpy as np
import pytest

from simdiff.engine import Tensor, ops, precision
from simdiff.uvit import (FOURIER_FEATURES, Patching, Scope, UViT, UViTConfig, _Ctx, fourier_features,
                          logsnr_embedding, mlp_block, normalized_logsnr, param_count, resnet_block,
                          self_attention, transformer_block)
from simdiff.verify import uvit_gradient_check

TINY = dict(image_size=8, in_channels=1, base_channels=8, emb_channels=16, channel_multiplier=(1, 2),
            num_res_blocks=(1,), num_transformer_blocks=2, num_heads=2, expansion_factor=2, num_classes=2)


def tiny(**kw):
    cfg = UViTConfig(**{**TINY, **kw})
    return UViT(cfg, (-15.0, 15.0))


def randomize(params, rng, scale=0.2):
    return {k: (v + scale * rng.standard_normal(v.shape)).astype(v.dtype) for k, v in params.items()}


class TestConfig:
    def test_parse_patching(self):
        assert Patching.parse("dwt:2") == Patching("dwt", 2)
        assert Patching.parse("s2d:4").kind == "space_to_depth"
        assert Patching.parse("none").factor == 1
        assert Patching.parse("dwt:2").channels(3) == 48

    @pytest.mark.parametrize("kw", [dict(channel_multiplier=(1, 2, 4)), dict(num_heads=3),
                                    dict(image_size=9), dict(transformer_dropout=1.0)])
    def test_invalid(self, kw):
        with pytest.raises(ValueError):
            UViTConfig(**{**TINY, **kw})

    def test_transformer_dropout_default(self):
        assert UViTConfig().transformer_dropout == 0.2


class TestEmbedding:
    def test_endpoint_maps_to_zero(self):
        assert normalized_logsnr(-15.0, (-15.0, 15.0)) == 0.0
        assert normalized_logsnr(15.0, (-15.0, 15.0)) == 1.0

    def test_outside_range_rejected(self):
        with pytest.raises(ValueError):
            normalized_logsnr(16.0, (-15.0, 15.0))

    def test_shifted_range_used(self):
        lo, hi = -15 + 2 * math.log(0.5), 15 + 2 * math.log(0.5)
        assert normalized_logsnr(lo, (lo, hi)) == 0.0

    def test_features_bounded(self):
        f = fourier_features(np.linspace(0, 1, 7))
        assert f.shape == (7, FOURIER_FEATURES)
        np.testing.assert_allclose(f[:, 0::2] ** 2 + f[:, 1::2] ** 2, 1.0, atol=1e-12)

    def test_output_shape(self):
        params = {}
        out = logsnr_embedding(Scope(params, np.random.default_rng(0)), np.array([0.0, 3.0, -2.0]),
                               (-15.0, 15.0), 24)
        assert out.shape == (3, 24)


def _ctx(cfg, train=False, rng=None):
    return _Ctx(cfg, train, rng, [])


class TestBlocks:
    def test_resnet_identity_at_init(self):
        cfg = UViTConfig(**TINY)
        rng = np.random.default_rng(0)
        x = Tensor(rng.standard_normal((2, 4, 4, 8)))
        emb = Tensor(rng.standard_normal((2, 16)))
        out = resnet_block(Scope({}, rng), _ctx(cfg), x, emb)
        np.testing.assert_array_equal(out.data, x.data)

    def test_film_reduces_to_norm_when_emb_zero(self):
        cfg = UViTConfig(**TINY)
        rng = np.random.default_rng(1)
        params = {}
        x = Tensor(rng.standard_normal((1, 4, 4, 8)))
        resnet_block(Scope(params, rng), _ctx(cfg), x, Tensor(np.zeros((1, 16))))
        params["film/bias"] = Tensor(np.zeros(16, np.float32))
        # with zero emb and zero film bias, scale = shift = 0 -> (1 + 0) * norm(h) + 0
        film = ops.dense(Tensor(np.zeros((1, 16))), params["film/kernel"], params["film/bias"])
        np.testing.assert_array_equal(film.data, 0.0)

    def test_film_gradient_reaches_emb(self):
        cfg = UViTConfig(**TINY)
        rng = np.random.default_rng(2)
        with precision(np.float64):
            params = {}
            x = rng.standard_normal((2, 4, 4, 8))
            resnet_block(Scope(params, rng), _ctx(cfg), Tensor(x), Tensor(np.zeros((2, 16))))
            params = {k: Tensor(v.data + 0.3 * rng.standard_normal(v.shape)) for k, v in params.items()}
            from simdiff.engine.gradcheck import check_gradients
            res = check_gradients(lambda p: resnet_block(Scope(params), _ctx(cfg), Tensor(x), p["emb"]),
                                  {"emb": rng.standard_normal((2, 16))})
        assert res[0].passed, res

    def test_attention_zero_at_init(self):
        cfg = UViTConfig(**TINY)
        rng = np.random.default_rng(3)
        out = self_attention(Scope({}, rng), _ctx(cfg), Tensor(rng.standard_normal((1, 4, 16))))
        np.testing.assert_array_equal(out.data, 0.0)

    def test_attention_matches_naive_loop(self):
        cfg = UViTConfig(**{**TINY, "num_heads": 2})
        rng = np.random.default_rng(4)
        with precision(np.float64):
            params = {}
            x = rng.standard_normal((1, 4, 8))
            self_attention(Scope(params, rng), _ctx(cfg), Tensor(x))
            p = {k: v.data + 0.5 * rng.standard_normal(v.shape) for k, v in params.items()}
            got = self_attention(Scope({k: Tensor(v) for k, v in p.items()}), _ctx(cfg), Tensor(x)).data

        def norm(a, scale, bias=None):
            mu = a.mean(-1, keepdims=True)
            var = a.var(-1, keepdims=True)
            out = (a - mu) / np.sqrt(var + 1e-5) * scale
            return out if bias is None else out + bias

        xn = norm(x[0], p["norm/scale"])
        ref = np.zeros((4, 8))
        for h in range(2):
            q = xn @ p["query/kernel"][:, h] + p["query/bias"][h]
            k = xn @ p["key/kernel"][:, h] + p["key/bias"][h]
            v = xn @ p["value/kernel"][:, h] + p["value/bias"][h]
            q = norm(q, p["norm_q/scale"], p["norm_q/bias"]) / math.sqrt(4)
            k = norm(k, p["norm_k/scale"], p["norm_k/bias"])
            logits = q @ k.T
            w = np.exp(logits - logits.max(-1, keepdims=True))
            w /= w.sum(-1, keepdims=True)
            ref += (w @ v) @ p["out/kernel"][h]
        ref += p["out/bias"]
        np.testing.assert_allclose(got[0], ref, atol=1e-5)

    def test_single_token_attention_is_projected_value(self):
        cfg = UViTConfig(**TINY)
        rng = np.random.default_rng(5)
        with precision(np.float64):
            params = {}
            x = Tensor(rng.standard_normal((1, 1, 16)))
            self_attention(Scope(params, rng), _ctx(cfg), x)
            params = {k: Tensor(v.data + rng.standard_normal(v.shape)) for k, v in params.items()}
            got = self_attention(Scope(params), _ctx(cfg), x).data
            xn = ops.normalize(x, params["norm/scale"]).data[0, 0]
            v = np.einsum("c,chd->hd", xn, params["value/kernel"].data) + params["value/bias"].data
            ref = np.einsum("hd,hdc->c", v, params["out/kernel"].data) + params["out/bias"].data
        np.testing.assert_allclose(got[0, 0], ref, atol=1e-10)

    def test_mlp_zero_at_init_and_deterministic(self):
        cfg = UViTConfig(**TINY)
        rng = np.random.default_rng(6)
        params = {}
        x = Tensor(rng.standard_normal((2, 4, 16)))
        emb = Tensor(np.zeros((2, 16)))
        out = mlp_block(Scope(params, rng), _ctx(cfg), x, emb, 2)
        np.testing.assert_array_equal(out.data, 0.0)
        params = {k: Tensor(v.data + rng.standard_normal(v.shape).astype(np.float32)) for k, v in params.items()}
        a = mlp_block(Scope(params), _ctx(cfg), x, emb, 2).data
        b = mlp_block(Scope(params), _ctx(cfg), x, emb, 2).data
        np.testing.assert_array_equal(a, b)

    def test_transformer_block_identity_and_composition(self):
        cfg = UViTConfig(**{**TINY, "transformer_dropout": 0.0})
        rng = np.random.default_rng(7)
        with precision(np.float64):
            params = {}
            x = Tensor(rng.standard_normal((2, 4, 16)))
            emb = Tensor(rng.standard_normal((2, 16)))
            out = transformer_block(Scope(params, rng), _ctx(cfg), x, emb, 2)
            np.testing.assert_array_equal(out.data, x.data)
            params = {k: Tensor(v.data + 0.3 * rng.standard_normal(v.shape)) for k, v in params.items()}
            got = transformer_block(Scope(params), _ctx(cfg), x, emb, 2).data
            s = Scope(params)
            h = ops.add(x, mlp_block(s.child("mlp"), _ctx(cfg), x, emb, 2))
            ref = ops.add(h, self_attention(s.child("attn"), _ctx(cfg), h)).data
        assert got.shape == (2, 4, 16)
        np.testing.assert_allclose(got, ref, atol=1e-6)


class TestNetwork:
    @pytest.mark.parametrize("patching", ["none", "dwt:1", "s2d:2"])
    def test_zero_output_and_shape(self, patching):
        cfg = UViTConfig(image_size=32, in_channels=3, base_channels=8, emb_channels=16, channel_multiplier=(1, 2, 2),
                         num_res_blocks=(1, 1), num_transformer_blocks=1, num_heads=2, expansion_factor=2,
                         patching=Patching.parse(patching), num_classes=3)
        model = UViT(cfg, (-15.0, 15.0))
        params = model.init(np.random.default_rng(0))
        x = np.random.default_rng(1).standard_normal((2, 32, 32, 3)).astype(np.float32)
        out = model.apply(params, x, np.array([-5.0, 5.0]), np.array([0, 2]))
        assert out.shape == x.shape
        np.testing.assert_array_equal(out.data, 0.0)

    def test_skips_balanced(self):
        model = tiny(num_res_blocks=(2,))
        model.apply(model.init(np.random.default_rng(0)), np.zeros((1, 8, 8, 1)), 0.0)
        assert model.skips_produced == model.skips_consumed == 2

    def test_param_count_frozen(self):
        # fourier 64 -> 16 -> 16 (1040 + 272), class table 3x16, stem 80, two resnet blocks (1472, 1488 with
        # skip norm), down 528, up 520, 4x4x16 positions, 2 x 3312 transformer, head 73
        expected = 1040 + 272 + 48 + 80 + 1472 + 528 + 256 + 2 * 3312 + 520 + 1488 + 73
        model = tiny()
        assert param_count(model.init(np.random.default_rng(0))) == expected == 12401

    def test_param_count_is_function_of_config(self):
        a = param_count(tiny().init(np.random.default_rng(0)))
        b = param_count(tiny().init(np.random.default_rng(99)))
        assert a == b

    def test_null_class_and_minus_one_agree(self):
        model = tiny()
        p = randomize(model.init(np.random.default_rng(0)), np.random.default_rng(1))
        x = np.random.default_rng(2).standard_normal((2, 8, 8, 1))
        a = model.apply(p, x, 0.5, np.array([-1, -1])).data
        b = model.apply(p, x, 0.5, np.array([2, 2])).data
        c = model.apply(p, x, 0.5, None).data
        np.testing.assert_array_equal(a, b)
        np.testing.assert_array_equal(a, c)

    def test_bad_class_rejected(self):
        model = tiny()
        with pytest.raises(ValueError):
            model.apply(model.init(np.random.default_rng(0)), np.zeros((1, 8, 8, 1)), 0.0, np.array([5]))

    def test_bad_input_shape(self):
        model = tiny()
        with pytest.raises(ValueError):
            model.apply(model.init(np.random.default_rng(0)), np.zeros((1, 4, 4, 1)), 0.0)

    def test_dropout_sites_follow_resolution(self):
        model = tiny(dropout=0.1, transformer_dropout=0.2, dropout_from_resolution=4)
        model.apply(model.init(np.random.default_rng(0)), np.zeros((1, 8, 8, 1)), 0.0)
        sites = {s.name: s for s in model.sites}
        res_site = sites["down0/block0/dropout"]
        assert res_site.resolution == 8 and not res_site.active
        tf_site = sites["transformer0/mlp/dropout"]
        assert tf_site.resolution == 4 and tf_site.active

    def test_train_mode_dropout_changes_output(self):
        model = tiny(transformer_dropout=0.5)
        p = randomize(model.init(np.random.default_rng(0)), np.random.default_rng(1))
        x = np.random.default_rng(2).standard_normal((1, 8, 8, 1))
        a = model.apply(p, x, 0.0, train=True, rng=np.random.default_rng(3)).data
        b = model.apply(p, x, 0.0, train=True, rng=np.random.default_rng(4)).data
        c = model.apply(p, x, 0.0).data
        assert not np.array_equal(a, b)
        np.testing.assert_array_equal(c, model.apply(p, x, 0.0).data)

    def test_end_to_end_gradient(self):
        for check in uvit_gradient_check(seed=3):
            assert check.passed, check.line()
