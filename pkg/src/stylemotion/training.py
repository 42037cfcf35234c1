"""Dataset assembly and training loops for the style model."""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field

import numpy as np

from . import nn
from .clip import MotionClip
from .features import (
    CLIP_LEN,
    ClipFeatures,
    NormalizationStats,
    TrainingExample,
    WindowError,
    _Welford,
    P_DIM,
    X_DIM,
    Z_DIM,
    CLIP_DIM,
    STD_FLOOR,
    assemble_example,
)
from .model import ModelConfig, StyleModel, compute_loss
from .phases import clip_contacts, extract_clip_phases
from .skeleton import Skeleton

log = logging.getLogger(__name__)


@dataclass
class StyleDataset:
    """Per-style training arrays plus pose rows for style-clip sampling."""

    skeleton: Skeleton
    styles: list[str] = field(default_factory=list)
    x: dict[str, np.ndarray] = field(default_factory=dict)  # (N, 348)
    phase: dict[str, np.ndarray] = field(default_factory=dict)  # (N, 8)
    z: dict[str, np.ndarray] = field(default_factory=dict)  # (N, 342)
    pose_rows: dict[str, list[np.ndarray]] = field(default_factory=dict)  # (M, 300) per clip

    def num_examples(self, style: str) -> int:
        return self.x[style].shape[0]

    def sample_clip_window(self, style: str, rng: np.random.Generator) -> np.ndarray:
        rows_list = self.pose_rows[style]
        rows = rows_list[int(rng.integers(len(rows_list)))]
        start = int(rng.integers(rows.shape[0] - CLIP_LEN + 1))
        return rows[start : start + CLIP_LEN]


def build_dataset(clips: list[MotionClip], phase_stride: int = 10) -> StyleDataset:
    """Extract phases, contacts and training frames from a set of clips."""
    ds = StyleDataset(skeleton=clips[0].skeleton)
    buckets: dict[str, list[tuple[np.ndarray, np.ndarray, np.ndarray]]] = {}
    for clip in clips:
        feats = ClipFeatures(clip)
        pf = extract_clip_phases(feats, stride=phase_stride)
        contacts = clip_contacts(clip)
        xs, ps, zs = [], [], []
        skipped = 0
        for i in range(clip.num_frames):
            try:
                ex = assemble_example(feats, i, pf, contacts)
            except WindowError:
                skipped += 1
                continue
            xs.append(ex.x)
            ps.append(ex.phase)
            zs.append(ex.z)
        if skipped:
            log.debug("clip %s: skipped %d out-of-window frames", clip.style_label, skipped)
        style = clip.style_label
        buckets.setdefault(style, []).append(
            (np.array(xs), np.array(ps), np.array(zs))
        )
        ds.pose_rows.setdefault(style, []).append(feats.pose_rows.astype(np.float32))
        if style not in ds.styles:
            ds.styles.append(style)
    for style, parts in buckets.items():
        ds.x[style] = np.concatenate([p[0] for p in parts])
        ds.phase[style] = np.concatenate([p[1] for p in parts])
        ds.z[style] = np.concatenate([p[2] for p in parts])
    return ds


def dataset_normalization(ds: StyleDataset) -> NormalizationStats:
    w_in = _Welford(X_DIM + P_DIM)
    w_out = _Welford(Z_DIM)
    w_clip = _Welford(CLIP_DIM)
    for style in ds.styles:
        w_in.add_batch(np.concatenate([ds.x[style], ds.phase[style]], axis=1))
        w_out.add_batch(ds.z[style])
        for rows in ds.pose_rows[style]:
            w_clip.add_batch(rows)
    return NormalizationStats(
        w_in.mean, w_in.std(), w_out.mean, w_out.std(), w_clip.mean, w_clip.std()
    )


@dataclass
class TrainConfig:
    epochs: int = 10
    batch_size: int = 32
    learning_rate: float = 1e-4
    dropout: float = 0.3
    mode: str = "film"
    seed: int = 0
    log_every: int = 20
    # Autoregressive stability: perturb inputs so the network learns to pull
    # drifted states back onto the motion manifold. input_noise is a std in
    # standardized units; the phase amplitude is scaled uniformly per example
    # within phase_jitter while the target stays at the true next phase.
    input_noise: float = 0.05
    phase_jitter: tuple = (0.2, 1.3)


class TrainingDiverged(RuntimeError):
    pass


def train(
    ds: StyleDataset,
    config: TrainConfig | None = None,
    model_config: ModelConfig | None = None,
    progress=None,
) -> tuple[StyleModel, list[dict]]:
    """Train end to end; returns the model and per-epoch loss telemetry.

    Minibatches contain a single style; styles cycle in a fixed order so any
    window of S consecutive minibatches covers every style once. One epoch is
    one pass through the shortest style's examples.
    """
    config = config or TrainConfig()
    styles = list(ds.styles)
    min_n = min(ds.num_examples(s) for s in styles)
    if min_n < config.batch_size:
        raise ValueError(
            f"smallest style has {min_n} examples, need at least {config.batch_size}"
        )
    if model_config is None:
        model_config = ModelConfig(mode=config.mode, dropout=config.dropout, styles=styles)
    else:
        model_config.styles = styles
        model_config.mode = config.mode
        model_config.dropout = config.dropout
    norm = dataset_normalization(ds)
    model = StyleModel(model_config, norm, seed=config.seed)
    telemetry = _run_loop(model, model.parameters(), ds, styles, config, progress)
    return model, telemetry


def finetune(
    model: StyleModel,
    new_style_ds: StyleDataset,
    config: TrainConfig | None = None,
    progress=None,
) -> list[dict]:
    """Adapt to a new style by updating the generator only (film mode).

    Gating and expert parameters are frozen; saved base-style embeddings are
    untouched by construction.
    """
    if model.config.mode != "film":
        raise ValueError("fine-tuning the style generator requires mode='film'")
    config = config or TrainConfig()
    if config.epochs <= 0:
        return []
    styles = list(new_style_ds.styles)
    return _run_loop(model, model.generator_parameters(), new_style_ds, styles, config, progress)


def _run_loop(model, params, ds, styles, config, progress) -> list[dict]:
    rng = np.random.default_rng(config.seed + 1)
    batch = config.batch_size
    min_n = min(ds.num_examples(s) for s in styles)
    steps_per_epoch = max(1, min_n // batch)
    telemetry = []
    step = 0
    for epoch in range(config.epochs):
        t0 = time.monotonic()
        epoch_mse = 0.0
        epoch_bll = 0.0
        count = 0
        for _ in range(steps_per_epoch):
            for style in styles:
                n = ds.num_examples(style)
                idx = rng.choice(n, size=batch, replace=False)
                xb = ds.x[style][idx]
                pb = ds.phase[style][idx]
                zb = ds.z[style][idx]
                if config.input_noise > 0.0:
                    xb = xb + (config.input_noise * model.norm.input_std[:xb.shape[1]]
                               * rng.standard_normal(xb.shape)).astype(xb.dtype)
                if config.phase_jitter is not None:
                    lo, hi = config.phase_jitter
                    scale = rng.uniform(lo, hi, size=(batch, 1)).astype(pb.dtype)
                    pb = pb * scale
                if model.config.mode == "film":
                    clip_raw = ds.sample_clip_window(style, rng)
                    emb = model.film_generate(clip_raw, training=True, rng=rng)
                    zp = model.predict(xb, pb, embedding=emb, training=True, rng=rng)
                else:
                    zp = model.predict(xb, pb, style=style, training=True, rng=rng)
                mse, bll = compute_loss(zb, zp, ds.skeleton)
                loss = mse + bll
                value = float(loss.data)
                if not np.isfinite(value):
                    raise TrainingDiverged(
                        f"non-finite loss at epoch {epoch} step {step} style {style!r}"
                    )
                loss.backward()
                nn.adam_step(params, lr=config.learning_rate)
                epoch_mse += float(mse.data)
                epoch_bll += float(bll.data)
                count += 1
                step += 1
        entry = {
            "epoch": epoch,
            "mse": epoch_mse / count,
            "bll": epoch_bll / count,
            "loss": (epoch_mse + epoch_bll) / count,
            "seconds": time.monotonic() - t0,
        }
        telemetry.append(entry)
        if progress is not None:
            progress(entry)
        log.info(
            "epoch %d: loss=%.6f (mse=%.6f bll=%.6f) in %.1fs",
            epoch, entry["loss"], entry["mse"], entry["bll"], entry["seconds"],
        )
    return telemetry
