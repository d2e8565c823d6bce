from .checkpoint import load_checkpoint, read_checkpoint, save_checkpoint
from .config import FUSION_VARIANTS, PRESETS, ConfigError, ModelConfig, preset
from .network import GroundingModel, HeadOutputs, Pyramid, clone_model

__all__ = [
    "FUSION_VARIANTS",
    "PRESETS",
    "ConfigError",
    "GroundingModel",
    "HeadOutputs",
    "ModelConfig",
    "Pyramid",
    "clone_model",
    "load_checkpoint",
    "preset",
    "read_checkpoint",
    "save_checkpoint",
]
