"""CLI-parity suite: every bound operation matches its CLI counterpart."""

import filecmp
import json

import numpy as np
import pytest

import compass3d
import compass3d_bindings as cb
from compass3d import formats, metrics
from compass3d.cli import main
from compass3d.model import ModelConfig
from compass3d.synth.dataset import DatasetView
from compass3d.train import TrainConfig, train_loop

CFG = dict(train_scenes=4, test_scenes=3, seed=21, n_points_per_object=256,
           component_radius=0.3)

SMALL_MODEL = dict(feature_dim=16, n_groups=4, group_size=8, k_prop=2,
                   heads=2, encoder_k=8, head_hidden=8)

TOML = """
seed = 21

[synth]
train_scenes = 4
test_scenes = 3
n_points_per_object = 256
component_radius = 0.3
"""


@pytest.fixture(scope="module")
def workspace(tmp_path_factory):
    root = tmp_path_factory.mktemp("bind")
    cfg_path = root / "cfg.toml"
    cfg_path.write_text(TOML)
    data = root / "data_py"
    cb.build_dataset(CFG, data)
    ds = DatasetView.open(data)
    mcfg = ModelConfig(**SMALL_MODEL, vocab=ds.vocabulary())
    tcfg = TrainConfig(epochs=2, batch_size=4, seed=0, checkpoint_every=1)
    result = train_loop(data, tcfg, root / "run", model_cfg=mcfg, quiet=True)
    return root, cfg_path, data, result.checkpoint


def test_version_matches_core():
    assert cb.__version__ == compass3d.__version__


def test_build_dataset_byte_identical_to_cli(workspace, capsys):
    root, cfg_path, data_py, _ = workspace
    data_cli = root / "data_cli"
    assert main(["synth", "-c", str(cfg_path), "-o", str(data_cli)]) == 0
    capsys.readouterr()
    cmp = filecmp.dircmp(data_py, data_cli)

    def check(dc):
        assert not dc.diff_files and not dc.left_only and not dc.right_only
        for sub in dc.subdirs.values():
            check(sub)

    check(cmp)
    for rel in ("manifest.json", "queries/train.jsonl", "queries/test_seen.jsonl"):
        assert (data_py / rel).read_bytes() == (data_cli / rel).read_bytes()


def test_build_dataset_rejects_unknown_key(tmp_path):
    with pytest.raises(ValueError, match="bananas"):
        cb.build_dataset({"bananas": 1}, tmp_path / "x")


def test_manifest_matches_disk(workspace, tmp_path):
    manifest = cb.build_dataset(CFG, tmp_path / "again")
    on_disk = formats.load_json(tmp_path / "again" / "manifest.json")
    assert manifest == on_disk


def test_predict_matches_cli_on_50_pairs(workspace, tmp_path, capsys):
    root, cfg_path, data, ckpt = workspace
    session = cb.load_session(ckpt, component_radius=0.3)
    ds = DatasetView.open(data)
    records = [q for s in ("train", "test_seen", "test_unseen")
               for q in ds.queries(s)]
    rng = np.random.default_rng(0)
    picks = rng.integers(len(records), size=50)
    worst = 0.0
    for i, pick in enumerate(picks):
        rec = records[int(pick)]
        points, labels, _k = ds.scene(rec["scene_id"])
        got = cb.predict(session, points, rec["text"])
        out_file = tmp_path / f"p{i}.cmpm"
        code = main(["predict", "-c", str(cfg_path),
                     "--scene", str(data / "scenes" / f"{rec['scene_id']}.cmps"),
                     "--query", rec["text"], "--ckpt", str(ckpt),
                     "--out", str(out_file)])
        capsys.readouterr()
        assert code == 0
        expect = formats.read_mask(out_file)
        worst = max(worst, float(np.abs(got - expect).max()))
    assert worst < 1e-6, worst


def test_predict_shape_and_range(workspace):
    _root, _cfg, data, ckpt = workspace
    session = cb.load_session(ckpt, component_radius=0.3)
    ds = DatasetView.open(data)
    rec = ds.queries("test_seen")[0]
    points, _labels, _k = ds.scene(rec["scene_id"])
    out = cb.predict(session, points, rec["text"])
    assert out.shape == (points.shape[0],)
    assert out.min() >= 0.0 and out.max() <= 1.0


def test_predict_accepts_noncontiguous_and_does_not_mutate(workspace):
    _root, _cfg, data, ckpt = workspace
    session = cb.load_session(ckpt, component_radius=0.3)
    ds = DatasetView.open(data)
    rec = ds.queries("test_seen")[0]
    points, _labels, _k = ds.scene(rec["scene_id"])
    base = cb.predict(session, points, rec["text"])
    padded = np.zeros((points.shape[0], 6))
    padded[:, ::2] = points
    view = padded[:, ::2]
    assert not view.flags["C_CONTIGUOUS"]
    snapshot = view.copy()
    got = cb.predict(session, view, rec["text"])
    np.testing.assert_array_equal(view, snapshot)
    np.testing.assert_array_equal(got, base)


def test_score_matches_metrics_module(workspace):
    rng = np.random.default_rng(5)
    pred = rng.uniform(size=64)
    gt = (rng.uniform(size=64) < 0.3).astype(float)
    got = cb.score(pred, gt)
    assert got["aiou"] == metrics.aiou(pred, gt) * 100.0
    assert got["auc"] == metrics.auc(pred, gt) * 100.0
    assert got["sim"] == metrics.sim(pred, gt)
    assert got["mae"] == metrics.mae(pred, gt)


def test_score_perfect_prediction():
    gt = np.array([1.0, 0, 1, 0, 0])
    got = cb.score(gt, gt)
    assert got["aiou"] == pytest.approx(100.0)
    assert got["sim"] == pytest.approx(1.0)
    assert got["mae"] == 0.0


def test_score_brute_force_oracle():
    rng = np.random.default_rng(6)
    for _ in range(25):
        n = int(rng.integers(4, 40))
        pred = rng.uniform(size=n)
        gt = (rng.uniform(size=n) < 0.5).astype(float)
        got = cb.score(pred, gt)
        gt_bin = gt >= 0.5
        vals = []
        for t in [i / 100 for i in range(1, 100)]:
            pb = pred >= t
            u = (pb | gt_bin).sum()
            vals.append(1.0 if u == 0 else (pb & gt_bin).sum() / u)
        assert got["aiou"] == pytest.approx(np.mean(vals) * 100, abs=1e-9)


def test_session_exposes_config(workspace):
    _root, _cfg, _data, ckpt = workspace
    session = cb.load_session(ckpt)
    assert session.model_config["feature_dim"] == SMALL_MODEL["feature_dim"]
    assert "train_config" in session.metadata
