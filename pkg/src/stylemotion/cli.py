"""Command-line entry point for the whole pipeline.

Exit codes: 0 success, 1 usage error, 2 data error, 3 numeric failure.
Flags can be set through `SM_<COMMAND>_<FLAG>` environment variables or a
YAML config overlay (--config).
"""
from __future__ import annotations

import asyncio
import json
import logging
import os
import sys
from concurrent.futures import ThreadPoolExecutor

import click
import numpy as np
import yaml

from . import nn
from .bvh import BVHParseError, parse_bvh
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .clip import ClipFormatError, load_clip, parse_manifest, save_clip
from .features import (
    ClipFeatures,
    FeatureError,
    WindowError,
    X_JOINT_POS,
    X_JOINT_ROT,
    X_JOINT_VEL,
    X_DIM,
)
from .model import ModelConfig, StyleModel, count_parameters
from .phases import (
    PhaseError,
    condition_source,
    contact_source,
    detect_contacts,
    extract_clip_phases,
    fit_sinusoid,
    pca_source,
    phase_features,
    clip_contacts,
)
from .runtime import ControlInput, ControlError, make_state, model_skeleton, step
from .skeleton import FEATURE_JOINTS
from .training import (
    StyleDataset,
    TrainConfig,
    TrainingDiverged,
    build_dataset,
    dataset_normalization,
    finetune as run_finetune,
    train as run_train,
)
from .util import atomic_write_bytes, atomic_write_text

log = logging.getLogger(__name__)

DATA_ERRORS = (
    ClipFormatError,
    BVHParseError,
    CheckpointError,
    WindowError,
    FileNotFoundError,
    IsADirectoryError,
    PermissionError,
    yaml.YAMLError,
    ControlError,
)
NUMERIC_ERRORS = (TrainingDiverged, FeatureError, PhaseError, nn.ShapeError)


def progress(event: str, **fields) -> None:
    """One machine-readable line per event on stdout."""
    parts = [f"{k}={v}" for k, v in fields.items()]
    click.echo(" ".join([event] + parts))


def _load_config_overlay(ctx, param, value):
    if value:
        with open(value) as f:
            overlay = yaml.safe_load(f) or {}
        if not isinstance(overlay, dict):
            raise click.UsageError("config file must contain a mapping")
        ctx.default_map = {**overlay, **(ctx.default_map or {})}
        log.info("config overlay: %s", overlay)
    return value


def config_option(f):
    return click.option(
        "--config",
        type=click.Path(exists=True, dir_okay=False),
        callback=_load_config_overlay,
        expose_value=False,
        is_eager=True,
        help="YAML file providing default flag values.",
    )(f)


@click.group()
@click.option("--threads", type=int, default=os.cpu_count(), show_default="logical cores",
              help="worker cap for per-clip parallel work")
@click.option("-v", "--verbose", is_flag=True)
@click.pass_context
def cli(ctx, threads, verbose):
    """Stylised locomotion modelling toolkit."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    ctx.obj = {"threads": max(1, threads or 1)}


def _load_any_clip(path: str, style: str = "", gait: str = "Idle"):
    if path.endswith(".bvh"):
        with open(path) as f:
            return parse_bvh(f.read(), style_label=style, gait_label=gait)
    return load_clip(path)


def _load_manifest_clips(manifest_path: str, threads: int = 1):
    with open(manifest_path) as f:
        entries = parse_manifest(f.read())
    base = os.path.dirname(os.path.abspath(manifest_path))

    def load(entry):
        path = entry.path if os.path.isabs(entry.path) else os.path.join(base, entry.path)
        clip = _load_any_clip(path, entry.style, entry.gait)
        clip.style_label = entry.style
        clip.gait_label = entry.gait
        stop = entry.stop if entry.stop >= 0 else clip.num_frames
        if (entry.start, stop) != (0, clip.num_frames):
            clip = clip.sliced(entry.start, stop)
        return clip

    if threads > 1 and len(entries) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            return list(pool.map(load, entries))
    return [load(e) for e in entries]


@cli.command()
@config_option
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_dir", type=click.Path(file_okay=False), required=True)
@click.pass_context
def ingest(ctx, manifest, out_dir):
    """Convert BVH files listed in a manifest into native clips."""
    os.makedirs(out_dir, exist_ok=True)
    clips = _load_manifest_clips(manifest, ctx.obj["threads"])
    for i, clip in enumerate(clips):
        clip.validate()
        path = os.path.join(out_dir, f"{clip.style_label}_{clip.gait_label}_{i:03d}.smc")
        save_clip(clip, path)
        progress("ingested", clip=i, frames=clip.num_frames, out=path)


@cli.command()
@config_option
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def mirror(in_path, out_path):
    """Write the sagittal mirror of a clip."""
    from .features import mirror_clip

    clip = _load_any_clip(in_path)
    save_clip(mirror_clip(clip), out_path)
    progress("mirrored", frames=clip.num_frames, out=out_path)


@cli.command()
@config_option
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def contacts(in_path, out_path):
    """Detect foot contacts; writes a CSV with one row per frame."""
    clip = _load_any_clip(in_path)
    labels = clip_contacts(clip)
    lines = ["left,right"] + [f"{int(l)},{int(r)}" for l, r in labels]
    atomic_write_text(out_path, "\n".join(lines) + "\n")
    progress("contacts", frames=len(labels),
             left_ratio=round(float(labels[:, 0].mean()), 4),
             right_ratio=round(float(labels[:, 1].mean()), 4), out=out_path)


_BONE_CHOICES = {"l_hand": 0, "r_hand": 1, "l_foot": 2, "r_foot": 3}


@cli.command()
@config_option
@click.option("--in", "in_path", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--bone", type=click.Choice(sorted(_BONE_CHOICES)), required=True)
@click.option("--mode", type=click.Choice(["contact", "pca"]), default="pca")
@click.option("--out-prefix", default="phase", show_default=True)
@click.option("--stride", type=int, default=10, show_default=True)
def phases(in_path, bone, mode, out_prefix, stride):
    """Extract one bone's local phase; writes channels CSV and an SVG plot."""
    from .plots import plot_phase_fit

    clip = _load_any_clip(in_path)
    feats = ClipFeatures(clip)
    ee = clip.skeleton.end_effectors[_BONE_CHOICES[bone]]
    fps = clip.fps
    if mode == "contact":
        world = clip.positions[:, ee].astype(np.float64)
        vel = np.gradient(world, axis=0) * fps
        track = detect_contacts(world, vel)
        source = contact_source(track, bone=ee)
    else:
        source = pca_source(feats.local_pos[:, ee], np.array([0.0, 0.0, 1.0]), bone=ee)
    conditioned = condition_source(source, fps)
    fit = fit_sinusoid(conditioned, fps, stride=stride)
    speeds = np.linalg.norm(feats.local_vel[:, ee], axis=1)
    fit = phase_features(fit, speeds, fps)
    rows = ["amplitude,frequency,phi,feature_sin,feature_cos"]
    for i in range(clip.num_frames):
        rows.append(
            f"{fit.amplitude[i]:.6f},{fit.frequency[i]:.6f},{fit.phi[i]:.6f},"
            f"{fit.feature[i, 0]:.6f},{fit.feature[i, 1]:.6f}"
        )
    atomic_write_text(out_prefix + ".csv", "\n".join(rows) + "\n")
    plot_phase_fit(conditioned, fit, out_prefix + ".svg", fps=fps,
                   title=f"{bone} ({mode})")
    progress("phases", bone=bone, mode=mode,
             mean_freq=round(float(fit.frequency.mean()), 3),
             out=out_prefix + ".csv", plot=out_prefix + ".svg")


@cli.command()
@config_option
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@click.pass_context
def dataset(ctx, manifest, out_path):
    """Assemble training examples plus normalization stats into an .npz."""
    clips = _load_manifest_clips(manifest, ctx.obj["threads"])
    ds = build_dataset(clips)
    norm = dataset_normalization(ds)
    arrays = {}
    for s in ds.styles:
        arrays[f"x::{s}"] = ds.x[s]
        arrays[f"phase::{s}"] = ds.phase[s]
        arrays[f"z::{s}"] = ds.z[s]
        for i, rows in enumerate(ds.pose_rows[s]):
            arrays[f"rows::{s}::{i}"] = rows
    for k, v in norm.as_dict().items():
        arrays[f"norm::{k}"] = v
    import io

    buf = io.BytesIO()
    np.savez_compressed(buf, styles=np.array(ds.styles), **arrays)
    atomic_write_bytes(out_path, buf.getvalue())
    for s in ds.styles:
        progress("dataset", style=s, examples=ds.num_examples(s))
    progress("dataset_written", styles=len(ds.styles), out=out_path)


def _train_options(f):
    for opt in reversed([
        click.option("--epochs", type=int, default=10, show_default=True),
        click.option("--batch-size", type=int, default=32, show_default=True),
        click.option("--lr", type=float, default=1e-4, show_default=True),
        click.option("--dropout", type=float, default=0.3, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
    ]):
        f = opt(f)
    return f


def _precompute_embeddings(model: StyleModel, ds: StyleDataset) -> None:
    from .runtime import precompute_style
    from .features import CLIP_LEN

    if model.config.mode != "film":
        return
    for s in ds.styles:
        windows = []
        for rows in ds.pose_rows[s]:
            for start in range(0, rows.shape[0] - CLIP_LEN + 1, CLIP_LEN):
                windows.append(rows[start : start + CLIP_LEN])
        model.embeddings[s] = precompute_style(model, windows)


@cli.command()
@config_option
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--mode", type=click.Choice(["film", "onehot", "resad"]), default="film")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@_train_options
@click.pass_context
def train(ctx, manifest, mode, out_path, epochs, batch_size, lr, dropout, seed):
    """Train the synthesis network end to end and write a checkpoint."""
    clips = _load_manifest_clips(manifest, ctx.obj["threads"])
    ds = build_dataset(clips)
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=lr,
                      dropout=dropout, mode=mode, seed=seed)
    progress("train_start", styles=len(ds.styles), mode=mode, epochs=epochs, seed=seed)
    model, telemetry = run_train(
        ds, cfg,
        progress=lambda e: progress("epoch", **{k: round(v, 6) if isinstance(v, float) else v
                                                for k, v in e.items()}),
    )
    _precompute_embeddings(model, ds)
    save_checkpoint(model, out_path)
    progress("train_done", final_loss=round(telemetry[-1]["loss"], 6), out=out_path)


@cli.command()
@config_option
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--manifest", type=click.Path(exists=True, dir_okay=False), required=True,
              help="manifest of the new style's clips")
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
@_train_options
@click.pass_context
def finetune(ctx, ckpt, manifest, out_path, epochs, batch_size, lr, dropout, seed):
    """Adapt the style generator to a new style; backbone stays frozen."""
    model = load_checkpoint(ckpt)
    clips = _load_manifest_clips(manifest, ctx.obj["threads"])
    ds = build_dataset(clips)
    cfg = TrainConfig(epochs=epochs, batch_size=batch_size, learning_rate=lr,
                      dropout=dropout, mode=model.config.mode, seed=seed)
    telemetry = run_finetune(
        model, ds, cfg,
        progress=lambda e: progress("epoch", **{k: round(v, 6) if isinstance(v, float) else v
                                                for k, v in e.items()}),
    )
    _precompute_embeddings(model, ds)
    save_checkpoint(model, out_path)
    final = round(telemetry[-1]["loss"], 6) if telemetry else float("nan")
    progress("finetune_done", final_loss=final, out=out_path)


@cli.command("export-style")
@config_option
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def export_style(ckpt, out_path):
    """Dump the precomputed style embeddings as CSV (name, 2048 values)."""
    model = load_checkpoint(ckpt)
    if not model.embeddings:
        raise CheckpointError("checkpoint has no precomputed style embeddings")
    lines = []
    for name in sorted(model.embeddings):
        emb = model.embeddings[name]
        lines.append(name + "," + ",".join(f"{v:.7g}" for v in emb))
    atomic_write_text(out_path, "\n".join(lines) + "\n")
    progress("exported", styles=len(lines), out=out_path)


def _initial_state(model: StyleModel):
    mean = model.norm.input_mean
    return make_state(
        local_pos=mean[X_JOINT_POS],
        local_vel=mean[X_JOINT_VEL],
        local_rot=mean[X_JOINT_ROT],
        phase=mean[X_DIM:],
    )


def _rollout(model, control, ticks):
    from .clip import MotionClip

    state = _initial_state(model)
    positions, rotations = [], []
    for _ in range(ticks):
        result = step(state, control, model)
        positions.append(result.positions)
        rotations.append(result.rotations)
    return MotionClip(
        skeleton=model_skeleton(model),
        fps=60.0,
        positions=np.array(positions, dtype=np.float32),
        rotations=np.array(rotations, dtype=np.float32),
        style_label=control.style_id or "",
        gait_label="Transition",
    )


@cli.command()
@config_option
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--styles", "style_ids", required=True, help="three comma-separated style ids")
@click.option("--weights", required=True, help="three comma-separated barycentric weights")
@click.option("--gait", type=click.Choice(["idle", "walk", "run"]), default="walk")
@click.option("--speed", type=float, default=1.0, show_default=True)
@click.option("--ticks", type=int, default=300, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def interp(ckpt, style_ids, weights, gait, speed, ticks, out_path):
    """Offline rollout under barycentric style interpolation."""
    model = load_checkpoint(ckpt)
    ids = tuple(s.strip() for s in style_ids.split(","))
    lam = np.array([float(v) for v in weights.split(",")])
    if len(ids) != 3 or lam.shape != (3,):
        raise click.UsageError("--styles and --weights each need 3 entries")
    control = ControlInput(
        target_direction_xz=np.array([0.0, 1.0]), target_speed=speed, gait=gait,
        triangle_ids=ids, triangle_lambda=lam,
    )
    clip = _rollout(model, control, ticks)
    save_clip(clip, out_path)
    progress("interp", ticks=ticks, out=out_path)


@cli.command()
@config_option
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--style", "style_id", default=None)
@click.option("--gait", type=click.Choice(["idle", "walk", "run"]), default="walk")
@click.option("--dir", "direction", default="0,1", show_default=True)
@click.option("--speed", type=float, default=1.0, show_default=True)
@click.option("--ticks", type=int, default=600, show_default=True)
@click.option("--out", "out_path", type=click.Path(dir_okay=False), required=True)
def rollout(ckpt, style_id, gait, direction, speed, ticks, out_path):
    """Scripted-control rollout to a clip file."""
    model = load_checkpoint(ckpt)
    d = np.array([float(v) for v in direction.split(",")])
    if d.shape != (2,):
        raise click.UsageError("--dir must be x,z")
    control = ControlInput(target_direction_xz=d, target_speed=speed, gait=gait,
                           style_id=style_id)
    clip = _rollout(model, control, ticks)
    if not np.all(np.isfinite(clip.positions)):
        raise TrainingDiverged("rollout produced non-finite positions")
    save_clip(clip, out_path)
    progress("rollout", ticks=ticks, out=out_path)


@cli.command("count-params")
@config_option
@click.option("--mode", type=click.Choice(["film", "onehot", "resad"]), default="film")
@click.option("--styles", "num_styles", type=int, default=95, show_default=True)
def count_params(mode, num_styles):
    """Print parameter counts for the configured architecture."""
    counts = count_parameters(ModelConfig(mode=mode), mode, num_styles)
    progress("count_params", mode=mode, asn=counts["asn"], smn=counts["smn"],
             psr=counts["psr"])


@cli.command()
@config_option
@click.option("--mode", type=click.Choice(["film", "onehot", "resad"]), default="film")
@click.option("--tolerance", type=float, default=1e-4, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
def gradcheck(mode, tolerance, seed):
    """Finite-difference check of the whole model at tiny dimensions."""
    from .features import NormalizationStats

    cfg = ModelConfig(x_dim=8, z_dim=12, phase_dim=4, hidden=16, experts=2,
                      gating_hidden=6, clip_len=8, clip_channels=6,
                      conv_filters=4, conv_kernel=3, generator_hidden=10,
                      dropout=0.0, mode=mode, styles=["a", "b"])
    rng = np.random.default_rng(seed)

    def ms(d):
        return rng.normal(size=d), np.abs(rng.normal(size=d)) + 0.5

    norm = NormalizationStats(*ms(cfg.x_dim + cfg.phase_dim), *ms(cfg.z_dim),
                              *ms(cfg.clip_channels))
    model = StyleModel(cfg, norm, seed=seed, dtype=np.float64)
    x = rng.normal(size=(3, cfg.x_dim))
    ph = rng.normal(size=(3, cfg.phase_dim))
    z = rng.normal(size=(3, cfg.z_dim))
    clip = rng.normal(size=(cfg.clip_len, cfg.clip_channels))

    def forward():
        if mode == "film":
            out = model.predict(x, ph, embedding=model.film_generate(clip))
        else:
            out = model.predict(x, ph, style="a")
        d = out - nn.Tensor(z)
        return (d * d).mean()

    err, (name, idx) = nn.gradient_check(forward, model.parameters(),
                                         eps=2e-3, max_per_tensor=20, seed=seed)
    progress("gradcheck", mode=mode, max_rel_error=f"{err:.3e}",
             worst=f"{name}[{idx}]")
    if not err < tolerance:
        raise TrainingDiverged(f"gradient check failed: {err:.3e} >= {tolerance:g}")


@cli.command()
@config_option
@click.option("--ckpt", type=click.Path(exists=True, dir_okay=False), required=True)
@click.option("--port", type=int, default=7360, show_default=True)
@click.option("--ws-port", type=int, default=None, help="optional WebSocket listener")
@click.option("--max-ticks", type=int, default=None, help="stop after N ticks (testing)")
def serve(ckpt, port, ws_port, max_ticks):
    """Run the live 60 Hz session server."""
    from .server import serve_session

    model = load_checkpoint(ckpt)
    state = _initial_state(model)
    progress("serving", port=port, ws_port=ws_port if ws_port else "-")
    asyncio.run(serve_session(model, state, port, ws_port=ws_port, max_ticks=max_ticks))


def main(argv=None) -> int:
    try:
        cli.main(args=argv, standalone_mode=False, auto_envvar_prefix="SM")
        return 0
    except click.UsageError as exc:
        exc.show()
        return 1
    except click.Abort:
        click.echo("aborted", err=True)
        return 1
    except click.ClickException as exc:
        exc.show()
        return 1
    except DATA_ERRORS as exc:
        click.echo(f"data error: {exc}", err=True)
        return 2
    except NUMERIC_ERRORS as exc:
        click.echo(f"numeric failure: {exc}", err=True)
        return 3


if __name__ == "__main__":
    sys.exit(main())
