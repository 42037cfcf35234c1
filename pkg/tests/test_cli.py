import os

import numpy as np
import pytest

from stylemotion.cli import main
from stylemotion.clip import load_clip
from stylemotion.synth import StyleRecipe, synth_gait

BVH = """HIERARCHY
ROOT Hips
{
  OFFSET 0 0 0
  CHANNELS 6 Xposition Yposition Zposition Zrotation Xrotation Yrotation
  End Site
  {
    OFFSET 0 1 0
  }
}
MOTION
Frames: 3
Frame Time: 0.016667
0.00 0.9 0.00 0 0 0
0.01 0.9 0.02 0 0 0
0.02 0.9 0.04 0 0 0
"""

SUBCOMMANDS = [
    "ingest", "mirror", "contacts", "phases", "dataset", "train", "finetune",
    "export-style", "interp", "rollout", "count-params", "gradcheck", "serve",
]


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    """Two synthetic clips on disk plus a manifest that slices one of them."""
    root = tmp_path_factory.mktemp("cli")
    recipes = {
        "march": StyleRecipe(name="march", forward_speed=1.2, foot_frequency=1.0),
        "strut": StyleRecipe(name="strut", forward_speed=1.0, foot_frequency=1.4,
                             step_height=0.08),
    }
    from stylemotion.clip import save_clip

    for name, recipe in recipes.items():
        clip, _ = synth_gait(recipe, 420)
        save_clip(clip, str(root / f"{name}.smc"))
    (root / "walk.bvh").write_text(BVH)
    (root / "clips.manifest").write_text(
        "# comment line\n"
        "march.smc\tmarch\tFW\n"
        "strut.smc\tstrut\tFW\t10:410\n"
    )
    return root


def run(capsys, *argv):
    code = main(list(argv))
    return code, capsys.readouterr()


def test_help_exits_zero_for_every_command(capsys):
    assert main(["--help"]) == 0
    for cmd in SUBCOMMANDS:
        code, out = run(capsys, cmd, "--help")
        assert code == 0, cmd
        assert "Usage:" in out.out


def test_usage_errors_exit_one(capsys):
    assert main(["no-such-command"]) == 1
    assert main(["ingest"]) == 1  # missing required options
    assert main(["mirror", "--in", "/nonexistent.smc", "--out", "x.smc"]) == 1


def test_count_params_prints_pinned_totals(capsys):
    code, out = run(capsys, "count-params", "--mode", "film")
    assert code == 0
    assert "asn=4935928" in out.out
    assert "psr=2048" in out.out
    code, out = run(capsys, "count-params", "--mode", "onehot", "--styles", "95")
    assert code == 0
    assert "smn=389120" in out.out
    assert "psr=4096" in out.out


def test_ingest_writes_sliced_clips(workspace, tmp_path, capsys):
    out_dir = tmp_path / "clips"
    code, out = run(capsys, "ingest", "--manifest", str(workspace / "clips.manifest"),
                    "--out", str(out_dir))
    assert code == 0
    march = load_clip(str(out_dir / "march_FW_000.smc"))
    strut = load_clip(str(out_dir / "strut_FW_001.smc"))
    assert march.num_frames == 420
    assert strut.num_frames == 400  # manifest slice 10:410
    assert strut.style_label == "strut"
    # Rerunning is idempotent.
    assert main(["ingest", "--manifest", str(workspace / "clips.manifest"),
                 "--out", str(out_dir)]) == 0


def test_ingest_accepts_bvh_entries(workspace, tmp_path, capsys):
    manifest = tmp_path / "bvh.manifest"
    manifest.write_text("walk.bvh\tplain\tFW\n")
    # manifest paths resolve against the manifest's own directory
    manifest = tmp_path / "m2.manifest"
    manifest.write_text(f"{workspace / 'walk.bvh'}\tplain\tFW\n")
    code, out = run(capsys, "ingest", "--manifest", str(manifest),
                    "--out", str(tmp_path / "o"))
    assert code == 0
    clip = load_clip(str(tmp_path / "o" / "plain_FW_000.smc"))
    assert clip.style_label == "plain"
    assert clip.num_frames == 3


def test_data_errors_exit_two(workspace, tmp_path, capsys):
    missing = tmp_path / "missing.manifest"
    missing.write_text("nowhere.smc\tx\tFW\n")
    code, out = run(capsys, "ingest", "--manifest", str(missing),
                    "--out", str(tmp_path / "o"))
    assert code == 2
    assert "data error" in out.err

    short = tmp_path / "short.manifest"
    short.write_text("march.smc\tonly-two-fields\n")
    assert main(["ingest", "--manifest", str(short), "--out", str(tmp_path / "o")]) == 2

    bad_gait = tmp_path / "gait.manifest"
    bad_gait.write_text("march.smc\tmarch\tSPRINT\n")
    assert main(["ingest", "--manifest", str(bad_gait), "--out", str(tmp_path / "o")]) == 2

    garbage = tmp_path / "bad.ckpt"
    garbage.write_bytes(b"not a checkpoint at all")
    assert main(["export-style", "--ckpt", str(garbage),
                 "--out", str(tmp_path / "emb.csv")]) == 2


def test_mirror_is_an_involution(workspace, tmp_path, capsys):
    src = str(workspace / "march.smc")
    once = str(tmp_path / "m1.smc")
    twice = str(tmp_path / "m2.smc")
    assert main(["mirror", "--in", src, "--out", once]) == 0
    assert main(["mirror", "--in", once, "--out", twice]) == 0
    orig, back = load_clip(src), load_clip(twice)
    assert np.allclose(orig.positions, back.positions, atol=1e-5)


def test_contacts_csv(workspace, tmp_path, capsys):
    out_path = tmp_path / "contacts.csv"
    code, out = run(capsys, "contacts", "--in", str(workspace / "march.smc"),
                    "--out", str(out_path))
    assert code == 0
    lines = out_path.read_text().strip().splitlines()
    assert lines[0] == "left,right"
    assert len(lines) == 1 + 420
    table = np.array([[int(v) for v in l.split(",")] for l in lines[1:]])
    assert set(np.unique(table)) <= {0, 1}
    # duty cycle 0.6 per foot
    assert abs(table[:, 0].mean() - 0.6) < 0.1
    assert abs(table[:, 1].mean() - 0.6) < 0.1


def test_phases_outputs_csv_and_plot(workspace, tmp_path, capsys):
    prefix = str(tmp_path / "rfoot")
    code, out = run(capsys, "phases", "--in", str(workspace / "march.smc"),
                    "--bone", "r_foot", "--out-prefix", prefix)
    assert code == 0
    assert os.path.exists(prefix + ".svg")
    lines = (tmp_path / "rfoot.csv").read_text().strip().splitlines()
    assert lines[0] == "amplitude,frequency,phi,feature_sin,feature_cos"
    freq = np.array([float(l.split(",")[1]) for l in lines[1:]])
    # interior frames recover the 1 Hz step cycle
    assert np.all(np.abs(freq[120:-120] - 1.0) < 0.05)


def test_dataset_npz_layout(workspace, tmp_path, capsys):
    out_path = tmp_path / "ds.npz"
    code, out = run(capsys, "dataset", "--manifest", str(workspace / "clips.manifest"),
                    "--out", str(out_path))
    assert code == 0
    with np.load(out_path) as z:
        assert sorted(z["styles"].tolist()) == ["march", "strut"]
        assert z["x::march"].shape[0] == 420 - 60 - 61
        assert z["x::march"].shape == (299, 348)
        assert z["phase::march"].shape == (299, 8)
        assert z["z::march"].shape == (299, 342)
        assert z["rows::march::0"].shape[1] == 300
        assert z["norm::input_std"].min() > 0


def test_gradcheck_passes_and_numeric_failures_exit_three(capsys):
    code, out = run(capsys, "gradcheck", "--mode", "onehot")
    assert code == 0
    assert "max_rel_error" in out.out
    code, out = run(capsys, "gradcheck", "--mode", "onehot", "--tolerance", "1e-18")
    assert code == 3
    assert "numeric failure" in out.err


def test_config_overlay_sets_defaults(tmp_path, capsys):
    cfg = tmp_path / "cfg.yaml"
    cfg.write_text("mode: onehot\n")
    code, out = run(capsys, "count-params", "--config", str(cfg))
    assert code == 0
    assert "mode=onehot" in out.out
    # explicit flags still win over the overlay
    code, out = run(capsys, "count-params", "--config", str(cfg), "--mode", "resad")
    assert "mode=resad" in out.out
