"""Model configuration and named presets."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass

FUSION_VARIANTS = ("xattn_affine", "xattn", "add")
PLACEMENTS = ("late", "early")


class ConfigError(ValueError):
    pass


@dataclass
class ModelConfig:
    D_v: int = 16
    D_t: int = 16
    embed_dim: int = 32
    levels: int = 3
    window: int = 9
    heads: int = 4
    stem_blocks: int = 2
    text_layers: int = 1
    max_tokens: int = 64
    mlp_ratio: int = 2
    fusion: str = "xattn_affine"
    placement: str = "late"
    layer_scale_init: float = 0.1
    prior_prob: float = 0.01
    downsample_stride: int = 2
    seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.window < 1 or self.window % 2 != 1:
            raise ConfigError(f"window must be odd and >= 1, got {self.window}")
        if self.embed_dim % self.heads:
            raise ConfigError(f"{self.heads} heads do not divide embed_dim {self.embed_dim}")
        if self.fusion not in FUSION_VARIANTS:
            raise ConfigError(f"unknown fusion variant {self.fusion!r}; choose from {FUSION_VARIANTS}")
        if self.placement not in PLACEMENTS:
            raise ConfigError(f"unknown placement {self.placement!r}; choose from {PLACEMENTS}")
        if self.placement == "early" and self.fusion != "xattn_affine":
            raise ConfigError("early placement uses the xattn_affine fusion block")
        if self.downsample_stride != 2:
            raise ConfigError("downsample_stride is fixed at 2")
        return self

    @property
    def min_length(self):
        """Shortest input that still gives every level at least one step."""
        return 2 ** (self.levels - 1)

    def level_lengths(self, T):
        lengths = [int(T)]
        for _ in range(1, self.levels):
            lengths.append(-(-lengths[-1] // 2))
        return lengths

    def replace(self, **changes):
        return dataclasses.replace(self, **changes)

    def to_dict(self):
        return dataclasses.asdict(self)


# Video dim / window / video layers / text layers per dataset; the video
# layers are split into stem blocks (2) and one block per pyramid level.
_TABLE = {
    "mad": dict(embed_dim=512, window=17, video_layers=9, text_layers=1),
    "ego4d": dict(embed_dim=384, window=19, video_layers=8, text_layers=1),
    "tacos": dict(embed_dim=128, window=19, video_layers=8, text_layers=5),
    "charades": dict(embed_dim=256, window=5, video_layers=7, text_layers=5),
    "anet": dict(embed_dim=128, window=5, video_layers=7, text_layers=5),
}

PRESETS = tuple(_TABLE) + tuple(f"{k}-small" for k in _TABLE) + ("tiny",)


def preset(name, D_v=16, D_t=16, divisor=None, **overrides):
    """Build a :class:`ModelConfig` from a named preset.

    ``<name>-small`` divides the embedding width by 4 (or ``divisor``);
    ``tiny`` is a 3-level, 32-channel model for quick experiments.
    """
    if name == "tiny":
        base = dict(embed_dim=32, levels=3, window=9, heads=4, text_layers=1)
    else:
        key, small = (name[:-6], True) if name.endswith("-small") else (name, False)
        if key not in _TABLE:
            raise ConfigError(f"unknown preset {name!r}; choose from {PRESETS}")
        row = _TABLE[key]
        div = divisor if divisor is not None else (4 if small else 1)
        base = dict(embed_dim=row["embed_dim"] // div, window=row["window"], heads=4,
                    levels=row["video_layers"] - 2, text_layers=row["text_layers"])
    base.update(D_v=D_v, D_t=D_t)
    base.update(overrides)
    return ModelConfig(**base)
