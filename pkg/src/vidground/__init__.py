"""Late-fusion temporal video grounding with video-centric training."""

from .datamodel import (
    Corpus,
    CorpusError,
    FeatureSequence,
    MomentInterval,
    QueryTokens,
    Snippet,
    generate_synthetic_corpus,
    load_corpus,
    save_corpus,
)
from .estimator import MomentGrounder
from .inference import EvalReport, InferenceConfig, evaluate, soft_nms, tiou
from .model import GroundingModel, ModelConfig, preset
from .training import TrainConfig, train

__version__ = "0.1.0"

__all__ = [
    "Corpus",
    "CorpusError",
    "EvalReport",
    "FeatureSequence",
    "GroundingModel",
    "InferenceConfig",
    "ModelConfig",
    "MomentGrounder",
    "MomentInterval",
    "QueryTokens",
    "Snippet",
    "TrainConfig",
    "evaluate",
    "generate_synthetic_corpus",
    "load_corpus",
    "preset",
    "save_corpus",
    "soft_nms",
    "tiou",
    "train",
]
