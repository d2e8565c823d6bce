"""Late-fusion grounding network.

``encode_video`` (query independent) builds the multi-scale pyramid,
``encode_text`` embeds one query token-wise, ``fuse`` conditions every level on
the query and ``heads`` scores each time step and regresses its distances to
the moment boundaries. ``forward_early`` is the fuse-before-pyramid ablation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from ..numerics import ops
from ..numerics.tensor import as_tensor, parameter
from ..numerics.trace import scope
from .config import ConfigError, ModelConfig
from .layers import (
    MLP,
    Conv1d,
    DepthwiseDownsample,
    LayerNorm,
    Linear,
    Module,
    MultiHeadAttention,
    TransformerBlock,
    trunc_normal,
)


@dataclass
class Pyramid:
    levels: list
    masks: list

    @property
    def lengths(self):
        return [z.shape[0] for z in self.levels]

    def __len__(self):
        return len(self.levels)


@dataclass
class HeadOutputs:
    logits: list
    scores: list
    offsets: list

    @property
    def lengths(self):
        return [s.shape[0] for s in self.scores]

    def numpy(self):
        return ([s.data for s in self.scores], [o.data for o in self.offsets])


class VideoEncoder(Module):
    def __init__(self, rng, cfg):
        D = cfg.embed_dim
        self.proj = Linear(rng, cfg.D_v, D)
        self.conv1 = Conv1d(rng, D, D, 3)
        self.conv2 = Conv1d(rng, D, D, 3)
        self.stem = [TransformerBlock(rng, D, cfg.heads, cfg.mlp_ratio, cfg.window)
                     for _ in range(cfg.stem_blocks)]
        self.blocks = [TransformerBlock(rng, D, cfg.heads, cfg.mlp_ratio, cfg.window)
                       for _ in range(cfg.levels)]
        self.down = [DepthwiseDownsample(D) for _ in range(cfg.levels - 1)]

    def project(self, x):
        x = self.proj(x)
        x = ops.relu(self.conv1(x))
        return ops.relu(self.conv2(x))

    def build_pyramid(self, x):
        for block in self.stem:
            x = block(x)
        levels, masks = [], []
        for l, block in enumerate(self.blocks):
            if l > 0:
                x = self.down[l - 1](x)
            x = block(x)
            levels.append(x)
            masks.append(np.ones(x.shape[0], dtype=bool))
        return Pyramid(levels, masks)


class TextEncoder(Module):
    def __init__(self, rng, cfg):
        D = cfg.embed_dim
        self.proj = Linear(rng, cfg.D_t, D)
        self.pos = parameter(trunc_normal(rng, (cfg.max_tokens, D)))
        self.layers = [TransformerBlock(rng, D, cfg.heads, cfg.mlp_ratio, None)
                       for _ in range(cfg.text_layers)]
        self.norm = LayerNorm(D)

    def __call__(self, tokens):
        K = tokens.shape[0]
        x = self.proj(tokens) + ops.getitem(self.pos, slice(0, K))
        for layer in self.layers:
            x = layer(x)
        return self.norm(x)


class AffineFusion(Module):
    """Cross-attention predicting a per-position affine map of the video features."""

    def __init__(self, rng, dim, heads, mlp_ratio, scale_init):
        self.ln_z = LayerNorm(dim)
        self.ln_e = LayerNorm(dim)
        self.mca = MultiHeadAttention(rng, dim, heads, d_out=2 * dim)
        self.mca.out.bias.data[:dim] = 1.0
        self.ln_x = LayerNorm(dim)
        self.mlp = MLP(rng, dim, mlp_ratio * dim)
        self.scale = parameter(np.full(dim, scale_init))
        self.dim = dim

    def __call__(self, z, e, token_mask=None):
        wb = self.mca(self.ln_z(z), context=self.ln_e(e), mask=token_mask)
        w, b = ops.split_last(wb, (self.dim, self.dim))
        zt = w * z + b
        return self.scale * self.mlp(self.ln_x(zt)) + zt


class CrossAttentionFusion(Module):
    """Plain residual cross-attention followed by an MLP residual."""

    def __init__(self, rng, dim, heads, mlp_ratio, scale_init):
        self.ln_z = LayerNorm(dim)
        self.ln_e = LayerNorm(dim)
        self.mca = MultiHeadAttention(rng, dim, heads)
        self.ln_x = LayerNorm(dim)
        self.mlp = MLP(rng, dim, mlp_ratio * dim)
        self.scale = parameter(np.full(dim, scale_init))

    def __call__(self, z, e, token_mask=None):
        z = z + self.mca(self.ln_z(z), context=self.ln_e(e), mask=token_mask)
        return z + self.scale * self.mlp(self.ln_x(z))


class AddFusion(Module):
    """Add the projected mean token embedding to every time step."""

    def __init__(self, rng, dim, heads, mlp_ratio, scale_init):
        self.ln_e = LayerNorm(dim)
        self.proj = Linear(rng, dim, dim)
        self.ln_x = LayerNorm(dim)
        self.mlp = MLP(rng, dim, mlp_ratio * dim)
        self.scale = parameter(np.full(dim, scale_init))

    def __call__(self, z, e, token_mask=None):
        pooled = ops.mean(self.ln_e(e), axis=0, keepdims=True)
        z = z + self.proj(pooled)
        return z + self.scale * self.mlp(self.ln_x(z))


_FUSION = {"xattn_affine": AffineFusion, "xattn": CrossAttentionFusion, "add": AddFusion}


class ConvHead(Module):
    def __init__(self, rng, dim, d_out, final_bias=0.0):
        self.conv1 = Conv1d(rng, dim, dim, 3)
        self.conv2 = Conv1d(rng, dim, dim, 3)
        self.conv3 = Conv1d(rng, dim, d_out, 3)
        self.conv3.bias.data[:] = final_bias

    def __call__(self, x):
        x = ops.relu(self.conv1(x))
        x = ops.relu(self.conv2(x))
        return self.conv3(x)


class GroundingModel(Module):
    def __init__(self, config=None, **overrides):
        cfg = config or ModelConfig()
        if overrides:
            cfg = cfg.replace(**overrides)
        cfg.validate()
        self.config = cfg
        rng = np.random.default_rng(cfg.seed)
        D = cfg.embed_dim
        self.video = VideoEncoder(rng, cfg)
        self.text = TextEncoder(rng, cfg)
        fusion_cls = _FUSION[cfg.fusion]
        n_fusion = cfg.levels if cfg.placement == "late" else 1
        self.fusion = [fusion_cls(rng, D, cfg.heads, cfg.mlp_ratio, cfg.layer_scale_init)
                       for _ in range(n_fusion)]
        self.head_norm = LayerNorm(D)
        prior = -math.log((1.0 - cfg.prior_prob) / cfg.prior_prob)
        self.cls_head = ConvHead(rng, D, 1, final_bias=prior)
        self.reg_head = ConvHead(rng, D, 2)

    # -- input checks ---------------------------------------------------------
    def _video_input(self, features):
        x = as_tensor(features)
        cfg = self.config
        if x.ndim != 2 or x.shape[1] != cfg.D_v:
            raise ConfigError(f"video features must be T x {cfg.D_v}, got {x.shape}")
        if x.shape[0] < cfg.min_length:
            raise ConfigError(
                f"snippet of length {x.shape[0]} is too short for {cfg.levels} levels "
                f"(need >= {cfg.min_length})")
        return x

    def _text_input(self, tokens):
        x = as_tensor(tokens)
        cfg = self.config
        if x.ndim != 2 or x.shape[1] != cfg.D_t or x.shape[0] < 1:
            raise ConfigError(f"query tokens must be K x {cfg.D_t} with K >= 1, got {x.shape}")
        if x.shape[0] > cfg.max_tokens:
            raise ConfigError(f"query has {x.shape[0]} tokens, max_tokens is {cfg.max_tokens}")
        return x

    # -- components -----------------------------------------------------------
    def encode_video(self, features):
        if self.config.placement != "late":
            raise ConfigError("encode_video is query independent only under late fusion")
        x = self._video_input(features)
        with scope("video"):
            return self.video.build_pyramid(self.video.project(x))

    def encode_text(self, tokens):
        x = self._text_input(tokens)
        with scope("text"):
            return self.text(x)

    def fuse(self, pyramid, embedding):
        if self.config.placement != "late" or len(self.fusion) != len(pyramid):
            raise ConfigError(
                f"fuse: model has {len(self.fusion)} fusion blocks ({self.config.placement} "
                f"placement) for a {len(pyramid)}-level pyramid")
        with scope("fusion"):
            levels = [block(z, embedding) for block, z in zip(self.fusion, pyramid.levels)]
        return Pyramid(levels, list(pyramid.masks))

    def heads(self, pyramid):
        logits, scores, offsets = [], [], []
        with scope("heads"):
            for z in pyramid.levels:
                x = self.head_norm(z)
                lg = ops.reshape(self.cls_head(x), (z.shape[0],))
                logits.append(lg)
                scores.append(ops.sigmoid(lg))
                offsets.append(ops.softplus(self.reg_head(x)))
        return HeadOutputs(logits, scores, offsets)

    def forward(self, features, tokens):
        if self.config.placement == "early":
            return self.forward_early(features, tokens)
        return self.heads(self.fuse(self.encode_video(features), self.encode_text(tokens)))

    __call__ = forward

    def forward_early(self, features, tokens):
        if self.config.placement != "early":
            raise ConfigError("forward_early needs a model built with placement='early'")
        x = self._video_input(features)
        e = self.encode_text(tokens)
        with scope("video"):
            x = self.video.project(x)
        with scope("fusion"):
            x = self.fusion[0](x, e)
        with scope("video"):
            pyramid = self.video.build_pyramid(x)
        return self.heads(pyramid)

    def parameter_breakdown(self):
        """Parameter counts for the video encoder, text encoder and fusion + heads."""
        def count(mods):
            return int(sum(m.num_parameters() for m in mods))
        return {
            "video": count([self.video]),
            "text": count([self.text]),
            "fusion_heads": count(self.fusion + [self.head_norm, self.cls_head, self.reg_head]),
        }


def clone_model(model):
    other = GroundingModel(model.config)
    other.load_state_dict(model.state_dict())
    return other


