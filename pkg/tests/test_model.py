import hashlib

import numpy as np
import pytest
from conftest import hand_macs, small_model_config

from vidground.model import (
    PRESETS,
    ConfigError,
    GroundingModel,
    ModelConfig,
    Pyramid,
    load_checkpoint,
    preset,
    read_checkpoint,
    save_checkpoint,
)
from vidground.model.checkpoint import CheckpointError
from vidground.numerics import Tensor, check_sampled, no_grad, ops, trace_macs


def inputs(cfg, T=16, K=5, seed=0):
    r = np.random.default_rng(seed)
    return r.standard_normal((T, cfg.D_v)), r.standard_normal((K, cfg.D_t))


def zero_(*tensors):
    for t in tensors:
        t.data[...] = 0.0


def randomize(model, seed=0):
    """Unit-scale weights so finite differences are not swamped by roundoff."""
    r = np.random.default_rng(seed)
    for p in model.parameters():
        if p.ndim > 1:
            p.data[...] = r.standard_normal(p.shape) / np.sqrt(p.shape[-2])
    return model


def scalar(outputs, seed=1):
    """Fixed random projection of every head output to a scalar."""
    r = np.random.default_rng(seed)
    total = None
    for s, o in zip(outputs.scores, outputs.offsets):
        term = (s * r.standard_normal(s.shape)).sum() + (o * r.standard_normal(o.shape)).sum()
        total = term if total is None else total + term
    return total


class TestConfig:
    def test_window_must_be_odd(self):
        with pytest.raises(ConfigError):
            ModelConfig(window=4)

    def test_unknown_fusion(self):
        with pytest.raises(ConfigError):
            ModelConfig(fusion="concat")

    def test_heads_divide(self):
        with pytest.raises(ConfigError):
            ModelConfig(embed_dim=30, heads=4)

    def test_presets(self):
        tacos = preset("tacos")
        assert (tacos.embed_dim, tacos.window, tacos.levels + 2, tacos.text_layers) == (128, 19, 8, 5)
        mad = preset("mad")
        assert (mad.embed_dim, mad.window, mad.levels + 2) == (512, 17, 9)
        charades = preset("charades")
        assert (charades.embed_dim, charades.window, charades.levels + 2) == (256, 5, 7)
        assert preset("tacos-small").embed_dim == 32
        tiny = preset("tiny")
        assert (tiny.embed_dim, tiny.levels) == (32, 3)
        assert "ego4d-small" in PRESETS

    def test_unknown_preset(self):
        with pytest.raises(ConfigError):
            preset("kinetics")


class TestVideoEncoder:
    def test_level_lengths(self, small_cfg):
        model = GroundingModel(small_cfg)
        feats, _ = inputs(small_cfg, T=16)
        with no_grad():
            pyr = model.encode_video(feats)
        assert pyr.lengths == [16, 8, 4]
        assert all(z.shape[1] == small_cfg.embed_dim for z in pyr.levels)

    @pytest.mark.parametrize("T", [5, 9, 13])
    def test_odd_lengths_halve_upward(self, small_cfg, T):
        model = GroundingModel(small_cfg)
        with no_grad():
            pyr = model.encode_video(inputs(small_cfg, T=T)[0])
        assert pyr.lengths == small_cfg.level_lengths(T)
        assert pyr.lengths[1] == -(-T // 2)

    def test_too_short(self, small_cfg):
        model = GroundingModel(small_cfg)
        with pytest.raises(ConfigError):
            model.encode_video(inputs(small_cfg, T=3)[0])

    def test_zero_residuals_give_strided_projection(self, small_cfg):
        model = GroundingModel(small_cfg)
        for block in model.video.stem + model.video.blocks:
            zero_(block.attn.out.weight, block.attn.out.bias, block.mlp.fc2.weight, block.mlp.fc2.bias)
        feats, _ = inputs(small_cfg, T=16)
        with no_grad():
            proj = model.video.project(Tensor(feats)).data
            pyr = model.encode_video(feats)
        for l, z in enumerate(pyr.levels):
            np.testing.assert_allclose(z.data, proj[::2 ** l], atol=1e-14)

    def test_query_independent(self, small_cfg):
        model = GroundingModel(small_cfg)
        feats, _ = inputs(small_cfg)
        with no_grad():
            a = model.encode_video(feats)
            model.heads(model.fuse(a, model.encode_text(inputs(small_cfg, seed=3)[1])))
            b = model.encode_video(feats)
        assert all(x.data.tobytes() == y.data.tobytes() for x, y in zip(a.levels, b.levels))


class TestTextEncoder:
    def test_single_token(self, small_cfg):
        model = GroundingModel(small_cfg)
        with no_grad():
            assert model.encode_text(np.ones((1, small_cfg.D_t))).shape == (1, small_cfg.embed_dim)

    def test_permutation_with_zeroed_attention(self, small_cfg):
        model = GroundingModel(small_cfg)
        zero_(model.text.pos)
        for layer in model.text.layers:
            zero_(layer.attn.out.weight, layer.attn.out.bias)
        _, tokens = inputs(small_cfg, K=6)
        perm = np.random.default_rng(0).permutation(6)
        with no_grad():
            a = model.encode_text(tokens).data
            b = model.encode_text(tokens[perm]).data
        np.testing.assert_allclose(b, a[perm], atol=1e-14)

    def test_too_many_tokens(self, small_cfg):
        model = GroundingModel(small_cfg)
        with pytest.raises(ConfigError):
            model.encode_text(np.ones((small_cfg.max_tokens + 1, small_cfg.D_t)))


class TestFusion:
    def test_identity_affine(self, small_cfg):
        model = GroundingModel(small_cfg)
        D = small_cfg.embed_dim
        for block in model.fusion:
            zero_(block.mca.out.weight, block.mlp.fc2.weight, block.mlp.fc2.bias)
            block.mca.out.bias.data[:D] = 1.0
            block.mca.out.bias.data[D:] = 0.0
        feats, tokens = inputs(small_cfg)
        with no_grad():
            pyr = model.encode_video(feats)
            fused = model.fuse(pyr, model.encode_text(tokens))
        for z, x in zip(pyr.levels, fused.levels):
            np.testing.assert_array_equal(x.data, z.data)

    def test_affine_mca_width(self, small_cfg):
        model = GroundingModel(small_cfg)
        assert model.fusion[0].mca.out.weight.shape == (small_cfg.embed_dim, 2 * small_cfg.embed_dim)

    @pytest.mark.parametrize("fusion", ["xattn_affine", "xattn", "add"])
    def test_shapes_preserved(self, fusion):
        cfg = small_model_config(fusion=fusion)
        model = GroundingModel(cfg)
        feats, tokens = inputs(cfg)
        with no_grad():
            pyr = model.encode_video(feats)
            fused = model.fuse(pyr, model.encode_text(tokens))
        assert fused.lengths == pyr.lengths
        assert all(x.shape == z.shape for x, z in zip(fused.levels, pyr.levels))

    def test_query_dependent(self, small_cfg):
        model = GroundingModel(small_cfg)
        feats, t1 = inputs(small_cfg)
        _, t2 = inputs(small_cfg, seed=9)
        with no_grad():
            pyr = model.encode_video(feats)
            a = model.fuse(pyr, model.encode_text(t1)).levels[0].data
            b = model.fuse(pyr, model.encode_text(t2)).levels[0].data
        assert not np.allclose(a, b)

    def test_level_count_mismatch(self, small_cfg):
        model = GroundingModel(small_cfg)
        feats, tokens = inputs(small_cfg)
        with no_grad():
            pyr = model.encode_video(feats)
            short = Pyramid(pyr.levels[:2], pyr.masks[:2])
            with pytest.raises(ConfigError):
                model.fuse(short, model.encode_text(tokens))


class TestHeads:
    def test_zero_weights(self, small_cfg):
        model = GroundingModel(small_cfg)
        zero_(*model.cls_head.parameters(), *model.reg_head.parameters())
        feats, tokens = inputs(small_cfg)
        with no_grad():
            out = model.forward(feats, tokens)
        for s, o in zip(out.scores, out.offsets):
            np.testing.assert_array_equal(s.data, 0.5)
            np.testing.assert_allclose(o.data, np.log(2.0), rtol=1e-15)

    def test_ranges_and_lengths(self, small_cfg):
        model = GroundingModel(small_cfg)
        feats, tokens = inputs(small_cfg, T=20)
        with no_grad():
            out = model.forward(feats, tokens)
        assert out.lengths == [20, 10, 5]
        for s, o in zip(out.scores, out.offsets):
            assert np.all((s.data > 0) & (s.data < 1))
            assert np.all(o.data >= 0) and o.shape == (s.shape[0], 2)

    def test_prior_bias(self, small_cfg):
        model = GroundingModel(small_cfg)
        assert model.cls_head.conv3.bias.data[0] == pytest.approx(-np.log(99.0))


class TestEarlyFusion:
    def test_shape_contract(self, small_cfg):
        late = GroundingModel(small_cfg)
        early = GroundingModel(small_cfg.replace(placement="early"))
        feats, tokens = inputs(small_cfg)
        with no_grad():
            a, b = late.forward(feats, tokens), early.forward_early(feats, tokens)
        assert a.lengths == b.lengths
        assert [o.shape for o in a.offsets] == [o.shape for o in b.offsets]

    def test_early_costs_more_per_query(self, small_cfg):
        late = GroundingModel(small_cfg)
        early = GroundingModel(small_cfg.replace(placement="early"))
        feats, tokens = inputs(small_cfg, T=32)
        with no_grad():
            pyr = late.encode_video(feats)
            with trace_macs() as tl:
                late.heads(late.fuse(pyr, late.encode_text(tokens)))
            with trace_macs() as te:
                early.forward_early(feats, tokens)
        assert te.total > tl.total

    def test_encode_video_refused(self, small_cfg):
        early = GroundingModel(small_cfg.replace(placement="early"))
        with pytest.raises(ConfigError):
            early.encode_video(inputs(small_cfg)[0])


class TestGradients:
    @pytest.mark.parametrize("fusion", ["xattn_affine", "xattn", "add"])
    def test_full_forward(self, fusion):
        cfg = small_model_config(fusion=fusion)
        model = randomize(GroundingModel(cfg))
        feats, tokens = inputs(cfg, T=12, K=4)
        params = model.parameters()
        err = check_sampled(lambda: scalar(model.forward(feats, tokens)), params,
                            np.random.default_rng(0), per_tensor=2)
        assert err < 1e-4

    def test_early_forward(self, small_cfg):
        model = randomize(GroundingModel(small_cfg.replace(placement="early")))
        feats, tokens = inputs(small_cfg, T=12, K=4)
        err = check_sampled(lambda: scalar(model.forward_early(feats, tokens)), model.parameters(),
                            np.random.default_rng(1), per_tensor=2)
        assert err < 1e-4

    def test_input_gradients(self, small_cfg):
        model = randomize(GroundingModel(small_cfg))
        feats, tokens = inputs(small_cfg, T=8, K=3)
        x, y = Tensor(feats, requires_grad=True), Tensor(tokens, requires_grad=True)
        err = check_sampled(lambda: scalar(model.forward(x, y)), [x, y], np.random.default_rng(2), per_tensor=8)
        assert err < 1e-4


class TestMacs:
    @pytest.mark.parametrize("fusion", ["xattn_affine", "xattn", "add"])
    @pytest.mark.parametrize("T,K", [(16, 5), (33, 3)])
    def test_matches_hand_count(self, fusion, T, K):
        cfg = small_model_config(fusion=fusion)
        model = GroundingModel(cfg)
        feats, tokens = inputs(cfg, T=T, K=K)
        with no_grad(), trace_macs() as tr:
            model.forward(feats, tokens)
        video, text, fusion_macs, heads = hand_macs(cfg, T, K)
        assert tr.scope_total("video") == video
        assert tr.scope_total("text") == text
        assert tr.scope_total("fusion") == fusion_macs
        assert tr.scope_total("heads") == heads
        assert tr.total == video + text + fusion_macs + heads

    def test_parameter_breakdown_sums(self, small_cfg):
        model = GroundingModel(small_cfg)
        assert sum(model.parameter_breakdown().values()) == model.num_parameters()


class TestCheckpoint:
    def test_round_trip(self, tmp_path, small_cfg):
        model = GroundingModel(small_cfg)
        for p in model.parameters():
            p.data += np.random.default_rng(0).standard_normal(p.shape)
        path = save_checkpoint(tmp_path / "m.vgck", model, metadata={"note": "x"})
        back, meta = load_checkpoint(path)
        assert meta == {"note": "x"}
        assert back.config == model.config
        for (n, a), (m, b) in zip(sorted(model.state_dict().items()), sorted(back.state_dict().items())):
            assert n == m and a.tobytes() == b.tobytes()

    def test_header(self, tmp_path, small_cfg):
        model = GroundingModel(small_cfg)
        path = save_checkpoint(tmp_path / "m.vgck", model)
        header, tensors = read_checkpoint(path)
        assert header["version"] == 1
        names = {e["name"] for e in header["tensors"]}
        assert names == set(model.state_dict())
        assert all(e["dtype"] == "float64" for e in header["tensors"])

    def test_bad_magic(self, tmp_path):
        p = tmp_path / "bad.vgck"
        p.write_bytes(b"NOPE" + bytes(20))
        with pytest.raises(CheckpointError):
            read_checkpoint(p)

    def test_deterministic_bytes(self, tmp_path, small_cfg):
        a = save_checkpoint(tmp_path / "a.vgck", GroundingModel(small_cfg)).read_bytes()
        b = save_checkpoint(tmp_path / "b.vgck", GroundingModel(small_cfg)).read_bytes()
        assert hashlib.sha256(a).digest() == hashlib.sha256(b).digest()

    def test_state_shape_mismatch(self, small_cfg):
        model = GroundingModel(small_cfg)
        state = model.state_dict()
        name = next(iter(state))
        state[name] = np.zeros(state[name].shape + (1,))
        with pytest.raises(ValueError):
            model.load_state_dict(state)


def test_ops_are_used_by_model():
    # sanity: the encoder really uses the windowed path
    cfg = small_model_config(window=3)
    model = GroundingModel(cfg)
    x = Tensor(np.ones((10, cfg.embed_dim)))
    with no_grad(), trace_macs() as tr:
        model.video.stem[0].attn(x, window=3)
    assert tr.total == 4 * 10 * cfg.embed_dim ** 2 + 2 * 10 * 3 * cfg.embed_dim
    assert ops is not None
