import filecmp
import json

import numpy as np
import pytest

from compass3d import formats, geometry
from compass3d.cli import main
from compass3d.runconfig import ConfigError, load_config


TINY_TOML = """
seed = 9

[synth]
train_scenes = 3
test_scenes = 2
n_points_per_object = 256
component_radius = 0.3

[model]
feature_dim = 16
n_groups = 4
group_size = 8
k_prop = 2
heads = 2
encoder_k = 8
head_hidden = 8

[train]
epochs = 1
batch_size = 4
"""


@pytest.fixture(scope="module")
def tiny_cfg(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "tiny.toml"
    path.write_text(TINY_TOML)
    return path


@pytest.fixture(scope="module")
def tiny_run(tiny_cfg, tmp_path_factory):
    """Dataset + 1-epoch checkpoint built through the CLI."""
    root = tmp_path_factory.mktemp("run")
    data = root / "data"
    out = root / "train"
    assert main(["synth", "-c", str(tiny_cfg), "-o", str(data)]) == 0
    assert main(["train", "-c", str(tiny_cfg), "--data", str(data),
                 "--out", str(out), "--quiet"]) == 0
    return tiny_cfg, data, out / "checkpoint.cmpk"


def test_synth_deterministic(tiny_cfg, tmp_path, capsys):
    assert main(["synth", "-c", str(tiny_cfg), "-o", str(tmp_path / "a")]) == 0
    assert main(["synth", "-c", str(tiny_cfg), "-o", str(tmp_path / "b")]) == 0
    capsys.readouterr()
    cmp = filecmp.dircmp(tmp_path / "a", tmp_path / "b")

    def check(dc):
        assert not dc.diff_files and not dc.left_only and not dc.right_only
        for sub in dc.subdirs.values():
            check(sub)

    check(cmp)
    for rel in ("manifest.json", "queries/train.jsonl"):
        assert (tmp_path / "a" / rel).read_bytes() == \
            (tmp_path / "b" / rel).read_bytes()


def test_synth_scene_count_override(tiny_cfg, tmp_path, capsys):
    assert main(["synth", "-c", str(tiny_cfg), "-o", str(tmp_path / "d"),
                 "--scenes", "4"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["counts"]["train_scenes"] == 4


def test_synth_dry_run(tiny_cfg, capsys):
    assert main(["synth", "-c", str(tiny_cfg), "-o", "/nonexistent/dir",
                 "--dry-run"]) == 0
    echo = json.loads(capsys.readouterr().out)
    assert echo["train_scenes"] == 3


def test_config_unknown_key_rejected(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[synth]\nbananas = 3\n")
    assert main(["synth", "-c", str(bad), "-o", str(tmp_path / "x")]) == 2
    assert "bananas" in capsys.readouterr().err


def test_config_bad_toml_exit_2(tmp_path):
    bad = tmp_path / "bad.toml"
    bad.write_text("[synth\n")
    assert main(["synth", "-c", str(bad), "-o", str(tmp_path / "x")]) == 2


def test_missing_data_dir_exit_3(tiny_cfg, tmp_path):
    assert main(["train", "-c", str(tiny_cfg), "--data",
                 str(tmp_path / "nope"), "--out", str(tmp_path / "o"),
                 "--quiet"]) == 3


def test_bad_checkpoint_exit_4(tiny_run, tmp_path):
    cfg, data, _ = tiny_run
    junk = tmp_path / "junk.cmpk"
    junk.write_bytes(b"JUNKJUNKJUNK")
    assert main(["eval", "-c", str(cfg), "--data", str(data),
                 "--ckpt", str(junk)]) == 4


def test_eval_oracle_report(tiny_cfg, tmp_path, capsys):
    hard = tmp_path / "hardcfg.toml"
    hard.write_text(TINY_TOML.replace("component_radius = 0.3",
                                      "component_radius = 0.3\nhard_masks = true"))
    data = tmp_path / "data"
    assert main(["synth", "-c", str(hard), "-o", str(data)]) == 0
    capsys.readouterr()
    report_path = tmp_path / "report.json"
    assert main(["eval", "-c", str(hard), "--data", str(data), "--oracle",
                 "--split", "seen", "--report", str(report_path)]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["metrics"]["aiou"]["mean"] == pytest.approx(100.0)
    loaded = formats.load_json(report_path)
    assert loaded["config"]["seed"] == 9
    assert loaded["split"] == "test_seen"


def test_eval_negatives_split(tiny_run, capsys):
    cfg, data, ckpt = tiny_run
    assert main(["eval", "-c", str(cfg), "--data", str(data),
                 "--ckpt", str(ckpt), "--split", "negatives"]) == 0
    out = json.loads(capsys.readouterr().out)
    assert out["counts"]["negatives"] == out["counts"]["total"] > 0


def test_predict_scene_path(tiny_run, tmp_path, capsys):
    cfg, data, ckpt = tiny_run
    manifest = formats.load_json(data / "manifest.json")
    scene_file = data / manifest["scenes"][0]["file"]
    out_file = tmp_path / "pred.cmpm"
    assert main(["predict", "-c", str(cfg), "--scene", str(scene_file),
                 "--query", "slice these vegetables for dinner",
                 "--ckpt", str(ckpt), "--out", str(out_file)]) == 0
    summary = json.loads(capsys.readouterr().out)
    heatmap = formats.read_mask(out_file)
    assert heatmap.shape[0] == summary["n_points"] == \
        manifest["scenes"][0]["n_points"]
    assert 0.0 <= heatmap.min() and heatmap.max() <= 1.0


def test_predict_depth_path_equivalence(tiny_run, tmp_path, capsys):
    """Back-projected depth input must match the same cloud fed as a scene
    file (the file stores f32, the depth path rounds to f32 to match)."""
    cfg, data, ckpt = tiny_run
    rng = np.random.default_rng(0)
    h, w = 24, 32
    intr = geometry.CameraIntrinsics(fx=20.0, fy=20.0, cx=16.0, cy=12.0)
    depth = np.zeros((h, w))
    mask = np.zeros((h, w), dtype=bool)
    # two pixel blobs far apart -> two objects after back-projection
    # (depths keep within-blob point spacing below the component radius)
    for u0, z0 in ((4, 1.0), (24, 2.5)):
        for dv in range(10):
            for du in range(6):
                depth[6 + dv, u0 + du] = z0 + 0.003 * dv + 0.002 * du
                mask[6 + dv, u0 + du] = True
    np.save(tmp_path / "depth.npy", depth)
    np.save(tmp_path / "mask.npy", mask)

    points = geometry.backproject_depth(depth, mask, intr)
    points32 = points.astype(np.float32)
    labels = geometry.radius_connected_components(
        points32.astype(np.float64), 0.3)
    scene_file = tmp_path / "scene.cmps"
    formats.write_scene(scene_file, points32, labels, int(labels.max()) + 1)

    out_a = tmp_path / "a.cmpm"
    out_b = tmp_path / "b.cmpm"
    query = "slice these vegetables for dinner"
    assert main(["predict", "-c", str(cfg), "--scene", str(scene_file),
                 "--query", query, "--ckpt", str(ckpt), "--out", str(out_a)]) == 0
    assert main(["predict", "-c", str(cfg), "--depth", str(tmp_path / "depth.npy"),
                 "--mask", str(tmp_path / "mask.npy"),
                 "--intrinsics", "20,20,16,12",
                 "--query", query, "--ckpt", str(ckpt), "--out", str(out_b)]) == 0
    capsys.readouterr()
    a = formats.read_mask(out_a)
    b = formats.read_mask(out_b)
    assert np.abs(a - b).max() < 1e-6


def test_predict_requires_input(tiny_run, tmp_path):
    cfg, _data, ckpt = tiny_run
    assert main(["predict", "-c", str(cfg), "--query", "x", "--ckpt",
                 str(ckpt), "--out", str(tmp_path / "o.cmpm")]) == 2


def test_train_ablation_flags_accepted(tiny_run, tmp_path):
    cfg, data, _ = tiny_run
    assert main(["train", "-c", str(cfg), "--data", str(data),
                 "--out", str(tmp_path / "abl"), "--quiet",
                 "--no-ici", "--no-bcr"]) == 0
    _model_cfg = formats.read_train_checkpoint(
        tmp_path / "abl" / "checkpoint.cmpk")[2]["model_config"]
    assert _model_cfg["use_ici"] is False and _model_cfg["use_bcr"] is False


def test_gradcheck_fast(capsys):
    assert main(["gradcheck", "--repeats", "1", "--objective-repeats", "0"]) == 0
    out = capsys.readouterr().out
    assert "PASS" in out and "FAIL" not in out.replace("PASS", "")


def test_bench_runs(tmp_path, capsys):
    out_json = tmp_path / "bench.json"
    assert main(["bench", "--sizes", "64,128", "--repeats", "1",
                 "--json", str(out_json)]) == 0
    rows = formats.load_json(out_json)["results"]
    assert {r["kernel"] for r in rows} == {
        "farthest_point_sampling", "knn", "radius_connected_components"}


def test_help_lists_flags(capsys):
    with pytest.raises(SystemExit) as exc:
        main(["train", "--help"])
    assert exc.value.code == 0
    out = capsys.readouterr().out
    for flag in ("--no-ici", "--no-bcr", "--no-bg-token", "--no-grp-loss",
                 "--no-gated-prop", "--no-tg", "--no-tp", "--resume"):
        assert flag in out


def test_paper_scale_config_accepted():
    cfg = load_config("configs/paper.toml")
    assert cfg.synth.train_scenes + cfg.synth.test_scenes == 6422
    assert cfg.synth.n_points_per_object == 2048
    assert cfg.train.epochs == 15


def test_micro_config_accepted():
    cfg = load_config("configs/micro.toml")
    assert cfg.synth.train_scenes == 64
    assert cfg.seed == 7


def test_config_overrides_precedence(tiny_cfg):
    cfg = load_config(tiny_cfg, {"train.epochs": 5, "seed": 11})
    assert cfg.train.epochs == 5
    assert cfg.seed == 11 and cfg.synth.seed == 11


def test_config_defaults_without_file():
    cfg = load_config(None)
    assert cfg.synth.train_scenes == 64
    assert cfg.train.epochs == 30


def test_unknown_override_key():
    with pytest.raises(ConfigError):
        load_config(None, {"train.bananas": 1})
