"""Gated-experts synthesis network with feature-wise style modulation.

The synthesis network is three dense layers (348 -> 512 -> 512 -> 342) whose
weights are a convex blend of 8 expert weight sets, gated by a small softmax
network reading the 8 phase channels. Hidden layers are layer-normalized and
then scaled/shifted by style parameters: generated from a style clip (film),
looked up per style as expert-blended shifts (onehot), or applied as a
residual adapter (resad).
"""
from __future__ import annotations

from dataclasses import dataclass, field, asdict

import numpy as np

from . import nn
from .features import (
    NormalizationStats,
    P_DIM,
    X_DIM,
    Z_DIM,
    CLIP_DIM,
    CLIP_LEN,
    Z_JOINT_POS,
)
from .nn import Tensor
from .skeleton import Skeleton

MODES = ("film", "onehot", "resad")


@dataclass
class ModelConfig:
    x_dim: int = X_DIM
    z_dim: int = Z_DIM
    phase_dim: int = P_DIM
    hidden: int = 512
    experts: int = 8
    gating_hidden: int = 32
    clip_len: int = CLIP_LEN
    clip_channels: int = CLIP_DIM
    conv_filters: int = 256
    conv_kernel: int = 25
    generator_hidden: int = 2048
    dropout: float = 0.3
    mode: str = "film"
    styles: list[str] = field(default_factory=list)

    @property
    def embedding_dim(self) -> int:
        return 4 * self.hidden

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**d)


class GatingNet:
    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        h = cfg.gating_hidden
        self.l1 = nn.Dense(cfg.phase_dim, h, rng, "elu", "gating.l1", dtype)
        self.l2 = nn.Dense(h, h, rng, "elu", "gating.l2", dtype)
        self.l3 = nn.Dense(h, cfg.experts, rng, "softmax", "gating.l3", dtype)
        self.dropout = cfg.dropout

    def __call__(self, phase: Tensor, training=False, rng=None) -> Tensor:
        h = self.l1(phase)
        if training:
            h = nn.dropout(h, self.dropout, training, rng)
        h = self.l2(h)
        if training:
            h = nn.dropout(h, self.dropout, training, rng)
        return self.l3(h)

    @property
    def parameters(self):
        return self.l1.parameters + self.l2.parameters + self.l3.parameters


class ExpertBank:
    """K complete weight sets for the three synthesis layers."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        k, x, h, z = cfg.experts, cfg.x_dim, cfg.hidden, cfg.z_dim
        def init(i, o, name):
            scale = np.sqrt(2.0 / (i + o))
            return nn.Parameter(
                rng.normal(0.0, scale, size=(k, i, o)).astype(dtype), name
            )
        self.w1 = init(x, h, "experts.w1")
        self.b1 = nn.Parameter(np.zeros((k, h), dtype=dtype), "experts.b1")
        self.w2 = init(h, h, "experts.w2")
        self.b2 = nn.Parameter(np.zeros((k, h), dtype=dtype), "experts.b2")
        self.w3 = init(h, z, "experts.w3")
        self.b3 = nn.Parameter(np.zeros((k, z), dtype=dtype), "experts.b3")

    def blend(self, alpha: Tensor):
        """Per-sample convex combination of expert tensors. alpha: (B, K)."""
        out = []
        for p in (self.w1, self.b1, self.w2, self.b2, self.w3, self.b3):
            k = p.data.shape[0]
            flat = p.tensor.reshape(k, -1)
            mixed = alpha @ flat  # (B, numel)
            out.append(mixed.reshape((alpha.shape[0],) + p.data.shape[1:]))
        return out

    @property
    def parameters(self):
        return [self.w1, self.b1, self.w2, self.b2, self.w3, self.b3]


class FiLMGenerator:
    """Style clip (240 x 300) -> 2048 modulation values {g1, b1, g2, b2}."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        c, k = cfg.conv_filters, cfg.conv_kernel
        def conv_init(c_out, c_in, name):
            scale = np.sqrt(2.0 / (c_in * k + c_out))
            return nn.Parameter(
                rng.normal(0.0, scale, size=(c_out, c_in, k)).astype(dtype), name
            )
        self.f1 = conv_init(c, cfg.clip_channels, "gen.conv1.w")
        self.g1 = nn.Parameter(np.zeros(c, dtype=dtype), "gen.conv1.b")
        self.f2 = conv_init(c, c, "gen.conv2.w")
        self.g2 = nn.Parameter(np.zeros(c, dtype=dtype), "gen.conv2.b")
        flat = c * (cfg.clip_len // 4)
        self.d1 = nn.Dense(flat, cfg.generator_hidden, rng, "elu", "gen.d1", dtype)
        self.d2 = nn.Dense(
            cfg.generator_hidden, cfg.embedding_dim, rng, "none", "gen.d2", dtype
        )
        # Identity modulation at init: scale halves start at one.
        bias = self.d2.bias.data
        h = cfg.hidden
        bias[0:h] = 1.0
        bias[2 * h : 3 * h] = 1.0
        self.dropout = cfg.dropout

    def __call__(self, clip_std: np.ndarray, training=False, rng=None) -> Tensor:
        """clip_std: (T, C) standardized; returns the (4H,) modulation vector."""
        xt = Tensor(np.ascontiguousarray(clip_std.T))  # channels x time
        h = nn.conv1d_same(xt, self.f1.tensor, self.g1.tensor).elu()
        h = nn.maxpool1d(h, 2)
        h = nn.conv1d_same(h, self.f2.tensor, self.g2.tensor).elu()
        h = nn.maxpool1d(h, 2)
        h = h.reshape(1, -1)
        h = self.d1(h)
        if training:
            h = nn.dropout(h, self.dropout, training, rng)
        return self.d2(h).reshape(-1)

    @property
    def parameters(self):
        return [self.f1, self.g1, self.f2, self.g2] + self.d1.parameters + self.d2.parameters


class StyleModulator:
    """One-hot shift table or residual adapters (the non-FiLM baselines)."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator, dtype=np.float32):
        self.mode = cfg.mode
        s, k, h = len(cfg.styles), cfg.experts, cfg.hidden
        self.params: list[nn.Parameter] = []
        if self.mode == "onehot":
            # Per style, per expert, one shift vector on hidden layer 1.
            self.shift = nn.Parameter(
                np.zeros((s, k, h), dtype=dtype), "modulator.shift"
            )
            self.params = [self.shift]
        elif self.mode == "resad":
            self.adapter_w = nn.Parameter(
                rng.normal(0.0, 0.01, size=(s, h, h)).astype(dtype), "modulator.adapter_w"
            )
            self.adapter_b = nn.Parameter(
                np.zeros((s, h), dtype=dtype), "modulator.adapter_b"
            )
            self.params = [self.adapter_w, self.adapter_b]

    @property
    def parameters(self):
        return self.params


class StyleModel:
    """The full model plus normalization statistics and style metadata."""

    def __init__(
        self,
        config: ModelConfig,
        norm: NormalizationStats,
        seed: int = 0,
        dtype=np.float32,
    ):
        if config.mode not in MODES:
            raise ValueError(f"unknown modulator mode {config.mode!r}")
        self.config = config
        self.norm = norm
        self.dtype = dtype
        rng = np.random.default_rng(seed)
        self.gating = GatingNet(config, rng, dtype)
        self.experts = ExpertBank(config, rng, dtype)
        self.generator = FiLMGenerator(config, rng, dtype) if config.mode == "film" else None
        self.modulator = StyleModulator(config, rng, dtype)
        self.embeddings: dict[str, np.ndarray] = {}  # precomputed per-style vectors

    # -- parameter sets -------------------------------------------------

    def parameters(self) -> list[nn.Parameter]:
        params = self.gating.parameters + self.experts.parameters
        if self.generator is not None:
            params = params + self.generator.parameters
        params = params + self.modulator.parameters
        return params

    def backbone_parameters(self) -> list[nn.Parameter]:
        return self.gating.parameters + self.experts.parameters

    def generator_parameters(self) -> list[nn.Parameter]:
        if self.generator is None:
            raise ValueError("generator parameters only exist in film mode")
        return self.generator.parameters

    # -- standardization -------------------------------------------------

    def _std_x(self, x: np.ndarray) -> np.ndarray:
        m, s = self.norm.input_mean[: self.config.x_dim], self.norm.input_std[: self.config.x_dim]
        return ((x - m) / s).astype(self.dtype)

    def _std_phase(self, p: np.ndarray) -> np.ndarray:
        m = self.norm.input_mean[self.config.x_dim :]
        s = self.norm.input_std[self.config.x_dim :]
        return ((p - m) / s).astype(self.dtype)

    def standardize_clip(self, y: np.ndarray) -> np.ndarray:
        return ((y - self.norm.clip_mean) / self.norm.clip_std).astype(self.dtype)

    # -- forward ----------------------------------------------------------

    def gating_forward(self, phase_std: np.ndarray, training=False, rng=None) -> Tensor:
        return self.gating(Tensor(np.atleast_2d(phase_std)), training, rng)

    def film_generate(self, clip_raw: np.ndarray, training=False, rng=None) -> Tensor:
        if self.generator is None:
            raise ValueError("film_generate requires mode='film'")
        if clip_raw.shape != (self.config.clip_len, self.config.clip_channels):
            raise nn.ShapeError(
                f"style clip must be {(self.config.clip_len, self.config.clip_channels)}, "
                f"got {clip_raw.shape}"
            )
        return self.generator(self.standardize_clip(clip_raw), training, rng)

    def style_index(self, style: str) -> int:
        try:
            return self.config.styles.index(style)
        except ValueError:
            raise KeyError(f"unknown style {style!r}") from None

    def predict(
        self,
        x_raw: np.ndarray,
        phase_raw: np.ndarray,
        embedding: Tensor | np.ndarray | None = None,
        style: str | None = None,
        training: bool = False,
        rng: np.random.Generator | None = None,
    ) -> Tensor:
        """De-standardized output frame prediction. x_raw: (B, 348), phase: (B, 8)."""
        cfg = self.config
        x_raw = np.atleast_2d(x_raw)
        phase_raw = np.atleast_2d(phase_raw)
        xb = Tensor(self._std_x(x_raw))
        alpha = self.gating_forward(self._std_phase(phase_raw), training, rng)
        w1, b1, w2, b2, w3, b3 = self.experts.blend(alpha)

        def affine(h, w, b):
            return (h.reshape(h.shape[0], 1, h.shape[1]) @ w).reshape(
                h.shape[0], w.shape[2]
            ) + b

        drop = cfg.dropout if training else 0.0
        mode = cfg.mode
        if mode == "film":
            if embedding is None:
                raise ValueError("film mode needs a style embedding")
            emb = embedding if isinstance(embedding, Tensor) else Tensor(np.asarray(embedding, dtype=self.dtype))
            h = cfg.hidden
            g1v, b1v = emb[0:h], emb[h : 2 * h]
            g2v, b2v = emb[2 * h : 3 * h], emb[3 * h : 4 * h]
        elif mode == "onehot":
            if style is None:
                raise ValueError("onehot mode needs a style id")
            srow = self.modulator.shift.tensor[self.style_index(style)]  # (K, H)
            beta1 = alpha @ srow
        else:  # resad
            if style is None:
                raise ValueError("resad mode needs a style id")
            sidx = self.style_index(style)
            a_w = self.modulator.adapter_w.tensor[sidx]
            a_b = self.modulator.adapter_b.tensor[sidx]

        f1 = affine(xb, w1, b1)
        if mode == "film":
            h1 = (g1v * nn.layer_norm(f1) + b1v).elu()
        elif mode == "onehot":
            h1 = (nn.layer_norm(f1) + beta1).elu()
        else:
            a = f1.elu()
            h1 = a + a @ a_w + a_b
        if drop:
            h1 = nn.dropout(h1, drop, training, rng)

        f2 = affine(h1, w2, b2)
        if mode == "film":
            h2 = (g2v * nn.layer_norm(f2) + b2v).elu()
        elif mode == "onehot":
            h2 = nn.layer_norm(f2).elu()
        else:
            h2 = f2.elu()
        if drop:
            h2 = nn.dropout(h2, drop, training, rng)

        z_std = affine(h2, w3, b3)
        mean = Tensor(self.norm.output_mean.astype(self.dtype))
        std = Tensor(self.norm.output_std.astype(self.dtype))
        return z_std * std + mean


def fold_film_layer(
    w: np.ndarray, b: np.ndarray, gamma: np.ndarray, beta: np.ndarray
) -> tuple[np.ndarray, np.ndarray]:
    """Fold a feature-wise scale/shift into the layer parameters.

    For h -> act(gamma * (h @ w + b) + beta) (no normalization), the same map
    is act(h @ w' + b') with w' = w * gamma (output columns scaled) and
    b' = gamma * b + beta.
    """
    return w * gamma[None, :], gamma * b + beta


def compute_loss(
    z_true: np.ndarray, z_pred: Tensor, skeleton: Skeleton
) -> tuple[Tensor, Tensor]:
    """(mean squared error, bone length loss), both in de-standardized units."""
    z_true = np.atleast_2d(z_true).astype(z_pred.dtype)
    diff = z_pred - Tensor(z_true)
    mse = (diff * diff).mean()

    bones = skeleton.bones
    n_b = len(bones)
    batch = z_true.shape[0]
    pred_pos = z_pred[:, Z_JOINT_POS].reshape(batch, -1, 3)
    true_pos = z_true[:, Z_JOINT_POS].reshape(batch, -1, 3)
    children = np.array([c for c, _ in bones])
    parents = np.array([p for _, p in bones])
    d_pred = pred_pos[:, children] - pred_pos[:, parents]
    len_pred = ((d_pred * d_pred).sum(axis=2) + 1e-8).sqrt()
    len_true = np.sqrt(((true_pos[:, children] - true_pos[:, parents]) ** 2).sum(axis=2) + 1e-8)
    bll = (len_pred - Tensor(len_true.astype(z_pred.dtype))).abs().sum() * (
        1.0 / (n_b * batch)
    )
    return mse, bll


def count_parameters(cfg: ModelConfig, mode: str, num_styles: int) -> dict[str, int]:
    """Parameter accounting: synthesis network, style modulation, per-style runtime."""
    g = cfg.gating_hidden
    gating = (cfg.phase_dim * g + g) + (g * g + g) + (g * cfg.experts + cfg.experts)
    per_expert = (
        (cfg.x_dim * cfg.hidden + cfg.hidden)
        + (cfg.hidden * cfg.hidden + cfg.hidden)
        + (cfg.hidden * cfg.z_dim + cfg.z_dim)
    )
    asn = gating + cfg.experts * per_expert

    if mode == "film":
        k, c, ch = cfg.conv_kernel, cfg.conv_filters, cfg.clip_channels
        flat = c * (cfg.clip_len // 4)
        smn = (
            (ch * c * k + c)
            + (c * c * k + c)
            + (flat * cfg.generator_hidden + cfg.generator_hidden)
            + (cfg.generator_hidden * cfg.embedding_dim + cfg.embedding_dim)
        )
        psr = cfg.embedding_dim
    elif mode == "onehot":
        per_style = cfg.experts * cfg.hidden
        smn = num_styles * per_style
        psr = per_style
    elif mode == "resad":
        per_style = cfg.hidden * cfg.hidden + cfg.hidden
        smn = num_styles * per_style
        psr = per_style
    else:
        raise ValueError(f"unknown mode {mode!r}")
    return {"asn": asn, "smn": smn, "psr": psr}
