"""scikit-learn style wrappers around the phase pipeline and the trainer.

These give the toolkit a familiar fit/transform/predict surface for scripted
experiments; the underlying modules remain the primary API.
"""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from .clip import MotionClip
from .features import ClipFeatures
from .model import ModelConfig
from .phases import extract_clip_phases
from .training import StyleDataset, TrainConfig, build_dataset, train


class PhaseExtractor(TransformerMixin, BaseEstimator):
    """Transform MotionClips into per-frame (N, 8) local phase features."""

    def __init__(self, stride: int = 10):
        self.stride = stride

    def fit(self, X, y=None):
        if self.stride < 1:
            raise ValueError("stride must be >= 1")
        self.n_features_in_ = 1
        return self

    def transform(self, X) -> list[np.ndarray]:
        check_is_fitted(self)
        out = []
        for clip in X:
            if not isinstance(clip, MotionClip):
                raise TypeError(f"expected MotionClip, got {type(clip).__name__}")
            out.append(extract_clip_phases(ClipFeatures(clip), stride=self.stride))
        return out


class StyleSynthesizer(BaseEstimator):
    """Full pipeline estimator: clips in, next-frame predictions out."""

    def __init__(
        self,
        mode: str = "film",
        epochs: int = 10,
        batch_size: int = 32,
        learning_rate: float = 1e-4,
        dropout: float = 0.3,
        seed: int = 0,
    ):
        self.mode = mode
        self.epochs = epochs
        self.batch_size = batch_size
        self.learning_rate = learning_rate
        self.dropout = dropout
        self.seed = seed

    def fit(self, X, y=None):
        clips = list(X)
        if not clips:
            raise ValueError("need at least one clip")
        for clip in clips:
            if not isinstance(clip, MotionClip):
                raise TypeError(f"expected MotionClip, got {type(clip).__name__}")
        self.dataset_ = build_dataset(clips)
        cfg = TrainConfig(
            epochs=self.epochs,
            batch_size=self.batch_size,
            learning_rate=self.learning_rate,
            dropout=self.dropout,
            mode=self.mode,
            seed=self.seed,
        )
        self.model_, self.telemetry_ = train(self.dataset_, cfg)
        return self

    def predict(self, X, style: str | None = None) -> np.ndarray:
        """X: (B, 356) raw input+phase rows; returns (B, 342) predictions."""
        check_is_fitted(self)
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        cfg = self.model_.config
        if X.shape[1] != cfg.x_dim + cfg.phase_dim:
            raise ValueError(f"expected {cfg.x_dim + cfg.phase_dim} columns, got {X.shape[1]}")
        x, phase = X[:, : cfg.x_dim], X[:, cfg.x_dim :]
        style = style or self.dataset_.styles[0]
        if cfg.mode == "film":
            clip = self.dataset_.sample_clip_window(style, np.random.default_rng(self.seed))
            emb = self.model_.film_generate(clip)
            out = self.model_.predict(x, phase, embedding=emb)
        else:
            out = self.model_.predict(x, phase, style=style)
        return out.data

    def score(self, X, y) -> float:
        """Negative MSE so larger is better, as sklearn expects."""
        pred = self.predict(X)
        y = np.atleast_2d(np.asarray(y, dtype=np.float64))
        return -float(np.mean((pred - y) ** 2))
