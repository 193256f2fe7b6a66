"""Acceptance suite: one test (and one printed pass/fail line) per criterion.

Run with `pytest tests/test_acceptance.py -v -s`. The micro-benchmark
criterion trains ten models (five seeds, full and ablated) and dominates
the runtime.
"""

import filecmp
import time

import numpy as np
import pytest

from compass3d import autodiff as ad
from compass3d import formats, geometry, losses, metrics, synth
from compass3d.gradcheck import TOLERANCE, run_suite
from compass3d.model import GeometryCache, Model, ModelConfig, build_scene_geometry
from compass3d.runconfig import load_config
from compass3d.synth.dataset import DatasetView
from compass3d.train import load_model_for_inference, train_loop


def _report(name: str, ok: bool, detail: str = ""):
    status = "PASS" if ok else "FAIL"
    print(f"ACCEPTANCE[{name}]: {status} {detail}".rstrip())
    assert ok, f"{name}: {detail}"


# ---------------------------------------------------------------------------
# 1. gradient suite


def test_gradient_suite():
    t0 = time.time()
    results = run_suite(base_seed=0, repeats=20, objective_repeats=20)
    elapsed = time.time() - t0
    worst = max(r.max_rel_err for r in results)
    failed = [r.name for r in results if not r.passed]
    _report("gradient-suite",
            not failed and elapsed < 120.0,
            f"worst rel err {worst:.2e} (tol {TOLERANCE:g}), "
            f"{len(results)} checks x 20 seeds, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 2. oracle equivalence


def _fps_oracle(points, n):
    centroid = np.sort(points, axis=0).mean(axis=0)
    start = int(np.argmin(((points - centroid) ** 2).sum(axis=1)))
    selected = [start]
    for _ in range(n - 1):
        best_idx, best_d = -1, -1.0
        for i in range(points.shape[0]):
            d = min(((points[i] - points[j]) ** 2).sum() for j in selected)
            if d > best_d:
                best_d, best_idx = d, i
        selected.append(best_idx)
    return np.array(selected)


def _cc_oracle(points, r):
    n = points.shape[0]
    parent = list(range(n))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for i in range(n):
        for j in range(i + 1, n):
            if ((points[i] - points[j]) ** 2).sum() <= r * r:
                parent[find(i)] = find(j)
    roots, labels = {}, np.empty(n, dtype=np.int64)
    for i in range(n):
        root = find(i)
        labels[i] = roots.setdefault(root, len(roots))
    return labels


def test_oracle_equivalence_suite():
    t0 = time.time()
    rng = np.random.default_rng(0)
    checks = 0
    for case in range(1000):
        n = int(rng.integers(4, 65))
        pts = rng.normal(size=(n, 3)) * rng.uniform(0.3, 3.0)

        if case % 10 == 0:  # expensive O(N^2 n) oracle, sampled
            k = int(rng.integers(1, min(9, n + 1)))
            np.testing.assert_array_equal(
                geometry.farthest_point_sampling(pts, k), _fps_oracle(pts, k))
        if case % 10 == 5:
            r = float(rng.uniform(0.2, 1.0))
            np.testing.assert_array_equal(
                geometry.radius_connected_components(pts, r), _cc_oracle(pts, r))

        k = int(rng.integers(1, min(8, n + 1)))
        q = rng.normal(size=(3, 3))
        idx, dist = geometry.knn(pts, q, k)
        for row in range(3):
            d2 = ((pts - q[row]) ** 2).sum(axis=1)
            order = np.lexsort((np.arange(n), d2))[:k]
            np.testing.assert_array_equal(idx[row], order)
            np.testing.assert_allclose(dist[row], np.sqrt(d2[order]),
                                       rtol=0, atol=1e-9)

        d = rng.uniform(0, 3, size=int(rng.integers(1, 9)))
        w = geometry.idw_weights(d)
        inv = 1.0 / (d * d + 1e-8)
        np.testing.assert_allclose(w, inv / inv.sum(), atol=1e-9)

        pred = np.round(rng.uniform(size=n), 2)
        gt = rng.uniform(size=n)
        if rng.uniform() < 0.3:
            gt = (gt < 0.4).astype(float)
        gt_bin = gt >= 0.5
        vals = []
        for t in [i / 100 for i in range(1, 100)]:
            pb = pred >= t
            u = (pb | gt_bin).sum()
            vals.append(1.0 if u == 0 else (pb & gt_bin).sum() / u)
        assert abs(metrics.aiou(pred, gt) - np.mean(vals)) < 1e-9
        n_pos = int(gt_bin.sum())
        if 0 < n_pos < n:
            wins = sum(1.0 if p > q2 else (0.5 if p == q2 else 0.0)
                       for p in pred[gt_bin] for q2 in pred[~gt_bin])
            assert abs(metrics.auc(pred, gt) - wins / (n_pos * (n - n_pos))) < 1e-9
        if gt.sum() > 0 and pred.sum() > 0:
            expect = np.minimum(pred / pred.sum(), gt / gt.sum()).sum()
            assert abs(metrics.sim(pred, gt) - expect) < 1e-9
        assert abs(metrics.mae(pred, gt) - np.abs(pred - gt).mean()) < 1e-9
        checks += 1
    elapsed = time.time() - t0
    _report("oracle-equivalence", checks == 1000 and elapsed < 60.0,
            f"1000 instances, {elapsed:.0f}s")


# ---------------------------------------------------------------------------
# 3. equation identities


def test_equation_identity_suite():
    details = []

    # gated propagation at alpha = 0 is the identity, bitwise
    pair = synth.CONFUSING_PAIRS[0]
    scene = synth.compose_scene(pair, 1, "slots", seed=2, scene_id="acc_id")
    cfg = ModelConfig(feature_dim=16, n_groups=4, group_size=8, k_prop=2,
                      heads=2, encoder_k=8)
    geom = build_scene_geometry(scene.points, scene.labels, cfg)
    model = Model(cfg, seed=0)
    model.alpha.value = np.asarray(0.0)
    out = model.forward(geom, "slice these vegetables for dinner", mode="infer")
    assert np.array_equal(out.features_prop.value, out.features.value)
    details.append("alpha0 bitwise")

    # coverage soft labels: identity at gamma=1, one-hot limit at gamma=50
    rng = np.random.default_rng(3)
    w = rng.uniform(0.05, 1.0, size=8)
    np.testing.assert_allclose(losses.tg_soft_labels(w, 1.0), w / w.sum(),
                               atol=1e-12)
    w[3] = w.max() * 2.0
    p50 = losses.tg_soft_labels(w, 50.0)
    assert p50[3] > 1.0 - 1e-6 and abs(p50.sum() - 1.0) < 1e-12
    details.append("soft-labels")

    # smooth-max bounds: max <= s_neg <= max + tau_h log N
    for seed in range(50):
        rng = np.random.default_rng(seed)
        t = rng.normal(size=(1, 6))
        neg = rng.normal(size=(int(rng.integers(2, 40)), 6))
        tau_h = float(rng.uniform(0.02, 0.3))
        s_neg = float(losses.smooth_max_similarity(
            ad.constant(t), ad.constant(neg), tau_h).value)
        cos = (neg @ t[0]) / (np.maximum(np.linalg.norm(neg, axis=1), 1e-8)
                              * max(np.linalg.norm(t), 1e-8))
        assert cos.max() - 1e-10 <= s_neg <= cos.max() + tau_h * np.log(len(neg)) + 1e-10
    details.append("lse-bounds")

    # softmax rows and attention weights normalize to 1 within 1e-12
    rng = np.random.default_rng(4)
    sm = ad.softmax(ad.constant(rng.normal(size=(31, 7)) * 20)).value
    assert np.abs(sm.sum(axis=1) - 1.0).max() < 1e-12
    logits = rng.normal(size=(9, 5)) * 10
    attn = ad.softmax(ad.constant(logits), axis=-1).value
    assert np.abs(attn.sum(axis=1) - 1.0).max() < 1e-12
    details.append("normalization")

    # inference evaluates zero parameters of the bcr group
    touched = set()
    ad._PARAM_TOUCH_LOG = touched
    try:
        full_model = Model(cfg, seed=1)
        full_model.forward(geom, "slice these vegetables for dinner",
                           mode="infer")
    finally:
        ad._PARAM_TOUCH_LOG = None
    assert not {n for n in touched if n.startswith("bcr/")}
    details.append("infer-purity")

    _report("equation-identities", True, ", ".join(details))


# ---------------------------------------------------------------------------
# 4. dataset invariants (default micro corpus)


def test_dataset_invariants(default_dataset, tmp_path):
    out, manifest = default_dataset
    ds = DatasetView.open(out)
    assert manifest["counts"]["train_scenes"] == 64
    assert manifest["counts"]["test_scenes"] == 16
    assert manifest["seed"] == 7

    for entry in manifest["scenes"]:
        points, labels, _k = ds.scene(entry["scene_id"])
        got = geometry.radius_connected_components(points, 0.2)
        np.testing.assert_array_equal(got, labels)

    import collections

    for split in ("train", "test_seen", "test_unseen"):
        by_scene = collections.defaultdict(list)
        for q in ds.queries(split):
            by_scene[q["scene_id"]].append(q)
        for scene_id, qs in by_scene.items():
            pos = [q for q in qs if q["polarity"] == "positive"]
            neg = [q for q in qs if q["polarity"] == "negative"]
            assert len(pos) == 2 and len(neg) >= 1, scene_id
            m0, m1 = ds.mask(pos[0]), ds.mask(pos[1])
            assert not ((m0 > 0) & (m1 > 0)).any(), scene_id
            assert all(ds.mask(q).max() == 0.0 for q in neg)

    train_texts = {q["text"] for q in ds.queries("train")}
    unseen_texts = {q["text"] for q in ds.queries("test_unseen")}
    assert not (train_texts & unseen_texts)

    rebuild = tmp_path / "rebuild"
    synth.build_dataset(synth.SynthConfig(), rebuild)
    cmp = filecmp.dircmp(out, rebuild)

    def check(dc):
        assert not dc.diff_files and not dc.left_only and not dc.right_only
        for sub in dc.subdirs.values():
            check(sub)

    check(cmp)
    for rel in ("manifest.json", "queries/train.jsonl", "queries/test_seen.jsonl",
                "queries/test_unseen.jsonl"):
        assert (out / rel).read_bytes() == (rebuild / rel).read_bytes()
    _report("dataset-invariants", True,
            "labels==components, disjoint supports, negatives, "
            "split disjointness, byte-deterministic rebuild")


# ---------------------------------------------------------------------------
# 5. micro-benchmark learning + directional ablation


def test_micro_benchmark_learning(default_dataset, tmp_path):
    out, _manifest = default_dataset
    run_cfg = load_config("configs/micro.toml")
    ds = DatasetView.open(out)

    medians = {}
    times = []
    for variant, flags in (("full", {}),
                           ("baseline", {"use_ici": False, "use_bcr": False})):
        mcfg = ModelConfig(**{**run_cfg.model.to_dict(),
                              "vocab": ds.vocabulary(), **flags})
        cache = GeometryCache(mcfg)
        rows = []
        for seed in range(5):
            tcfg = run_cfg.train
            tcfg.seed = seed
            tcfg.checkpoint_every = 0
            t0 = time.time()
            train_loop(out, tcfg, tmp_path / f"{variant}_{seed}",
                       model_cfg=mcfg, loss_cfg=run_cfg.loss,
                       geometry_cache=cache, quiet=True)
            elapsed = time.time() - t0
            times.append(elapsed)
            model, _ = load_model_for_inference(
                tmp_path / f"{variant}_{seed}" / "checkpoint.cmpk")
            seen = metrics.evaluate_split(ds, "test_seen", model=model,
                                          geometry_cache=cache)
            unseen = metrics.evaluate_split(ds, "test_unseen", model=model,
                                            geometry_cache=cache)
            rows.append({
                "seen": seen["metrics"]["aiou"]["mean"],
                "unseen": unseen["metrics"]["aiou"]["mean"],
                "abst": seen["abstention"]["mean_activation"],
            })
            print(f"  {variant} seed {seed}: seen {rows[-1]['seen']:.1f} "
                  f"unseen {rows[-1]['unseen']:.1f} "
                  f"abst {rows[-1]['abst']:.3f} ({elapsed:.0f}s)")
        medians[variant] = {k: float(np.median([r[k] for r in rows]))
                            for k in rows[0]}

    full = medians["full"]
    base = medians["baseline"]
    ok = (full["seen"] >= 50.0
          and full["abst"] < 0.1
          and full["seen"] - full["unseen"] <= 15.0
          and base["seen"] < full["seen"]
          and max(times) <= 300.0)
    _report("micro-benchmark", ok,
            f"full seen {full['seen']:.1f} unseen {full['unseen']:.1f} "
            f"abst {full['abst']:.3f}; baseline seen {base['seen']:.1f}; "
            f"max train {max(times):.0f}s")


# ---------------------------------------------------------------------------
# 6. back-projection / grasp-fusion glue


def test_backprojection_and_grasp_glue(tmp_path):
    # synthetic plane depth -> coplanar points
    intr = geometry.CameraIntrinsics(fx=90.0, fy=110.0, cx=40.0, cy=30.0)
    h, w = 60, 80
    us, vs = np.meshgrid(np.arange(w), np.arange(h))
    a, b, c = 0.004, -0.002, 1.8
    depth = c / (1.0 - a * (us - intr.cx) / intr.fx - b * (vs - intr.cy) / intr.fy)
    pts = geometry.backproject_depth(depth, np.ones_like(depth, dtype=bool), intr)
    resid = np.abs(pts[:, 2] - (a * pts[:, 0] + b * pts[:, 1] + c)).max()
    assert resid < 1e-9

    # depth-path prediction equals the stored-cloud path
    ds_dir = tmp_path / "glue_ds"
    synth.build_dataset(synth.SynthConfig(train_scenes=3, test_scenes=2, seed=13,
                                          n_points_per_object=256,
                                          component_radius=0.3), ds_dir)
    ds = DatasetView.open(ds_dir)
    mcfg = ModelConfig(feature_dim=16, n_groups=4, group_size=8, k_prop=2,
                       heads=2, encoder_k=8, head_hidden=8,
                       vocab=ds.vocabulary())
    from compass3d.train import TrainConfig

    res = train_loop(ds_dir, TrainConfig(epochs=1, batch_size=4, seed=0),
                     tmp_path / "glue_run", model_cfg=mcfg, quiet=True)
    model, _ = load_model_for_inference(res.checkpoint)

    rng = np.random.default_rng(1)
    intr2 = geometry.CameraIntrinsics(fx=25.0, fy=25.0, cx=20.0, cy=15.0)
    depth2 = np.zeros((30, 40))
    mask2 = np.zeros((30, 40), dtype=bool)
    for u0, z0 in ((6, 1.2), (26, 2.8)):
        for dv in range(12):
            for du in range(8):
                depth2[8 + dv, u0 + du] = z0 + 0.004 * dv + 0.003 * du
                mask2[8 + dv, u0 + du] = True
    lifted = geometry.backproject_depth(depth2, mask2, intr2)
    pts32 = lifted.astype(np.float32)
    labels = geometry.radius_connected_components(pts32.astype(np.float64), 0.3)

    # path A: the cloud stored as a scene file and read back
    scene_file = tmp_path / "glue_scene.cmps"
    formats.write_scene(scene_file, pts32, labels, int(labels.max()) + 1)
    pts_a, labels_a, _k = formats.read_scene(scene_file)
    cache = GeometryCache(mcfg)
    geom_a = cache.get("a", pts_a.astype(np.float64), labels_a)
    pred_a = model.forward(geom_a, "slice these vegetables for dinner",
                           mode="infer").heatmap_values
    # path B: the depth input as the CLI consumes it (backproject, round to
    # the scene file's f32 precision, re-derive components)
    pts_b = lifted.astype(np.float32).astype(np.float64)
    labels_b = geometry.radius_connected_components(pts_b, 0.3)
    geom_b = cache.get("b", pts_b, labels_b)
    pred_b = model.forward(geom_b, "slice these vegetables for dinner",
                           mode="infer").heatmap_values
    depth_diff = float(np.abs(pred_a - pred_b).max())
    assert depth_diff < 1e-6

    # fuse_grasp_scores equals exhaustive argmax on 1000 cases
    for _ in range(1000):
        n = int(rng.integers(1, 16))
        conf = rng.uniform(size=n)
        aff = rng.uniform(size=n)
        prod = conf * aff
        best = 0
        for i in range(1, n):
            if prod[i] > prod[best]:
                best = i
        assert geometry.fuse_grasp_scores(conf, aff) == best

    _report("backprojection-grasp-glue", True,
            f"plane residual {resid:.1e}, path diff {depth_diff:.1e}, "
            "1000 fusion cases")
