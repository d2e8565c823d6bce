"""scikit-learn style wrapper around training and inference."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.exceptions import NotFittedError

from .inference import InferenceConfig, build_cache, evaluate, ground_query
from .model import FUSION_VARIANTS, preset
from .training import TrainConfig, train
from .validation import (
    check_choice,
    check_corpus,
    check_ks,
    check_positive_float,
    check_positive_int,
    check_thresholds,
)


class MomentGrounder(BaseEstimator):
    """Temporal grounding model with a ``fit`` / ``predict`` / ``score`` interface.

    ``fit`` takes a training :class:`~vidground.datamodel.Corpus`; ``predict``
    returns ranked moments per query id; ``score`` is R@1 at ``score_tiou``.
    Inference uses the EMA weights unless ``use_ema=False``.
    """

    def __init__(self, preset="tiny", fusion="xattn_affine", placement="late", sampler="video",
                 bq=4, batch_size=8, epochs=10, lr=1e-3, weight_decay=0.05, T_w=128,
                 ema_momentum=0.999, use_ema=True, ks=(1, 5), tious=(0.3, 0.5, 0.7),
                 score_tiou=0.5, seed=0):
        self.preset = preset
        self.fusion = fusion
        self.placement = placement
        self.sampler = sampler
        self.bq = bq
        self.batch_size = batch_size
        self.epochs = epochs
        self.lr = lr
        self.weight_decay = weight_decay
        self.T_w = T_w
        self.ema_momentum = ema_momentum
        self.use_ema = use_ema
        self.ks = ks
        self.tious = tious
        self.score_tiou = score_tiou
        self.seed = seed

    def _configs(self, corpus):
        check_choice("fusion", self.fusion, FUSION_VARIANTS)
        check_choice("placement", self.placement, ("late", "early"))
        check_choice("sampler", self.sampler, ("video", "query"))
        model_cfg = preset(self.preset, D_v=corpus.D_v, D_t=corpus.D_t,
                           fusion=self.fusion, placement=self.placement, seed=self.seed)
        train_cfg = TrainConfig(
            lr=check_positive_float("lr", self.lr), weight_decay=self.weight_decay,
            ema_momentum=self.ema_momentum,
            epochs=check_positive_int("epochs", self.epochs),
            batch_size=check_positive_int("batch_size", self.batch_size),
            queries_per_snippet=check_positive_int("bq", self.bq),
            sampler=self.sampler, T_w=check_positive_int("T_w", self.T_w), seed=self.seed)
        return model_cfg, train_cfg

    def _inference_config(self):
        return InferenceConfig(T_w=self.T_w, ks=check_ks(self.ks), tious=check_thresholds(self.tious))

    def fit(self, X, y=None):
        """Train on corpus ``X``; ``y`` is ignored because targets live in the corpus."""
        corpus = check_corpus(X)
        model_cfg, train_cfg = self._configs(corpus)
        result = train(corpus, model_cfg, train_cfg, rng=np.random.default_rng(self.seed))
        self.model_ = result.ema_model() if self.use_ema else result.model
        self.history_ = result.history
        self.model_config_ = model_cfg
        self.train_config_ = train_cfg
        return self

    def _check_fitted(self):
        if not hasattr(self, "model_"):
            raise NotFittedError("MomentGrounder is not fitted; call fit first")

    def _check_input(self, X):
        cfg = self.model_.config
        return check_corpus(X, D_v=cfg.D_v, D_t=cfg.D_t)

    def predict(self, X):
        """``{query_id: [ScoredMoment, ...]}`` ranked best first."""
        self._check_fitted()
        corpus = self._check_input(X)
        cfg = self._inference_config()
        cache = build_cache(self.model_, corpus, cfg)
        return {q.query_id: ground_query(self.model_, cache, q, cfg) for q in corpus.queries}

    def evaluate(self, X, cached=True):
        self._check_fitted()
        return evaluate(self.model_, self._check_input(X), self._inference_config(), cached=cached)

    def score(self, X, y=None):
        """R@1 at tIoU ``score_tiou``."""
        self._check_fitted()
        cfg = self._inference_config()
        cfg.ks = (1,)
        cfg.tious = (float(self.score_tiou),)
        return evaluate(self.model_, self._check_input(X), cfg).value(1, float(self.score_tiou))
