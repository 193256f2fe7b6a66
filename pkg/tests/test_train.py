import json
import math

import numpy as np
import pytest

from compass3d import autodiff as ad
from compass3d import synth
from compass3d.losses import LossConfig
from compass3d.model import GeometryCache, ModelConfig
from compass3d.train import (
    AdamWState,
    TrainConfig,
    adamw_step,
    clip_gradients,
    cosine_lr,
    load_checkpoint,
    load_model_for_inference,
    save_checkpoint,
    train_loop,
)


def _param_group(values, name="head", lr=0.1, clip=1.0):
    params = [ad.parameter(np.asarray(v, dtype=np.float64), name=f"{name}/p{i}")
              for i, v in enumerate(values)]
    return ad.ParamGroup(name, params, lr=lr, clip_norm=clip), params


SMALL_MODEL = dict(feature_dim=16, n_groups=4, group_size=8, k_prop=2,
                   heads=2, encoder_k=8, head_hidden=8)


@pytest.fixture(scope="module")
def tiny_data(tmp_path_factory):
    out = tmp_path_factory.mktemp("t") / "ds"
    # fewer points per object need a larger component radius to stay a
    # single component per object
    synth.build_dataset(
        synth.SynthConfig(train_scenes=3, test_scenes=2, seed=9,
                          n_points_per_object=256, component_radius=0.3), out)
    return out


def _tiny_model_cfg(data_dir):
    ds = synth.DatasetView.open(data_dir)
    return ModelConfig(**SMALL_MODEL, vocab=ds.vocabulary())


# ---------------------------------------------------------------------------
# AdamW


def test_adamw_zero_grad_no_decay_keeps_params():
    group, params = _param_group([np.ones(3)])
    params[0].grad = np.zeros(3)
    cfg = TrainConfig(weight_decay=0.0, lr_head=0.1)
    state = AdamWState()
    adamw_step([group], state, cfg)
    np.testing.assert_array_equal(params[0].value, np.ones(3))


def test_adamw_first_step_moves_by_lr():
    group, params = _param_group([np.array(1.0)], lr=0.1)
    params[0].grad = np.array(1.0)
    cfg = TrainConfig(weight_decay=0.0, lr_head=0.1)
    state = AdamWState()
    adamw_step([group], state, cfg)
    # bias-corrected first step: update = lr * g / (|g| + eps) ~ lr
    assert float(params[0].value) == pytest.approx(0.9, abs=1e-6)


def test_adamw_matches_reference_recurrence():
    rng = np.random.default_rng(0)
    w0 = rng.normal(size=5)
    grads = [rng.normal(size=5) for _ in range(10)]
    lr, wd, b1, b2, eps = 3e-4, 1e-3, 0.9, 0.999, 1e-8

    # independent reference implementation of the AdamW recurrence
    w = w0.copy()
    m = np.zeros(5)
    v = np.zeros(5)
    for t, g in enumerate(grads, start=1):
        w = w - lr * wd * w
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        mhat = m / (1 - b1 ** t)
        vhat = v / (1 - b2 ** t)
        w = w - lr * mhat / (np.sqrt(vhat) + eps)

    group, params = _param_group([w0.copy()], name="ici", lr=3e-4, clip=5.0)
    cfg = TrainConfig(weight_decay=1e-3, lr_ici=3e-4)
    state = AdamWState()
    for g in grads:
        params[0].grad = g.copy()
        adamw_step([group], state, cfg)
    np.testing.assert_allclose(params[0].value, w, atol=1e-12, rtol=0)


def test_adamw_nan_gradient_aborts_with_name():
    group, params = _param_group([np.ones(2)])
    params[0].grad = np.array([np.nan, 0.0])
    with pytest.raises(FloatingPointError, match="head/p0"):
        adamw_step([group], AdamWState(), TrainConfig())


def test_weight_decay_geometric_decay_exact():
    group, params = _param_group([np.full(4, 2.0)], lr=0.1)
    cfg = TrainConfig(weight_decay=0.01, lr_head=0.1)
    state = AdamWState()
    for step in range(5):
        params[0].grad = np.zeros(4)
        adamw_step([group], state, cfg)
        expect = 2.0 * (1 - 0.1 * 0.01) ** (step + 1)
        np.testing.assert_allclose(params[0].value, np.full(4, expect),
                                   rtol=0, atol=0)


# ---------------------------------------------------------------------------
# schedule


def test_cosine_endpoints():
    assert cosine_lr(0, 100, 3e-4) == pytest.approx(3e-4)
    assert cosine_lr(100, 100, 3e-4) == pytest.approx(0.0, abs=1e-20)
    assert cosine_lr(50, 100, 3e-4) == pytest.approx(1.5e-4)


def test_cosine_range_check():
    with pytest.raises(ValueError):
        cosine_lr(11, 10, 1e-3)


# ---------------------------------------------------------------------------
# clipping


def test_clip_under_threshold_unchanged():
    group, params = _param_group([np.array([0.3, 0.4])], clip=1.0)
    params[0].grad = np.array([0.3, 0.4])  # norm 0.5
    factors = clip_gradients([group], TrainConfig())
    assert factors["head"] == 1.0
    np.testing.assert_array_equal(params[0].grad, [0.3, 0.4])


def test_clip_scales_to_limit():
    group, params = _param_group([np.zeros(2)], name="bcr", clip=5.0)
    params[0].grad = np.array([6.0, 8.0])  # norm 10
    factors = clip_gradients([group], TrainConfig())
    assert factors["bcr"] == pytest.approx(0.5)
    assert np.linalg.norm(params[0].grad) == pytest.approx(5.0, abs=1e-12)


def test_clip_groups_independent():
    rng = np.random.default_rng(1)
    g1, p1 = _param_group([rng.normal(size=4) * 10], name="ici", clip=5.0)
    g2, p2 = _param_group([rng.normal(size=4) * 0.01], name="head", clip=1.0)
    for p in p1 + p2:
        p.grad = p.value.copy()
    norms_before = {g.name: math.sqrt(sum(float(np.sum(p.grad ** 2))
                                          for p in g.params))
                    for g in (g1, g2)}
    factors = clip_gradients([g1, g2], TrainConfig())
    for g in (g1, g2):
        norm = math.sqrt(sum(float(np.sum(p.grad ** 2)) for p in g.params))
        limit = TrainConfig().group_clip(g.name)
        expect = min(norms_before[g.name], limit)
        assert norm == pytest.approx(expect, rel=1e-12)
        assert factors[g.name] <= 1.0


def test_clip_never_increases_norm():
    rng = np.random.default_rng(2)
    for _ in range(20):
        group, params = _param_group([rng.normal(size=6)], name="ici", clip=5.0)
        params[0].grad = rng.normal(size=6) * rng.uniform(0, 3)
        before = np.linalg.norm(params[0].grad)
        clip_gradients([group], TrainConfig())
        assert np.linalg.norm(params[0].grad) <= before + 1e-12


# ---------------------------------------------------------------------------
# loop determinism / resume


def test_two_step_determinism(tiny_data, tmp_path):
    cfg = TrainConfig(epochs=1, batch_size=4, seed=3, checkpoint_every=1)
    mcfg = _tiny_model_cfg(tiny_data)
    train_loop(tiny_data, cfg, tmp_path / "a", model_cfg=mcfg, quiet=True)
    train_loop(tiny_data, cfg, tmp_path / "b", model_cfg=mcfg, quiet=True)
    a = (tmp_path / "a" / "checkpoint.cmpk").read_bytes()
    b = (tmp_path / "b" / "checkpoint.cmpk").read_bytes()
    assert a == b


def test_resume_identical_trajectory(tiny_data, tmp_path):
    mcfg = _tiny_model_cfg(tiny_data)
    full = TrainConfig(epochs=2, batch_size=4, seed=5, checkpoint_every=1)
    train_loop(tiny_data, full, tmp_path / "full", model_cfg=mcfg, quiet=True)

    # interrupt the same 2-epoch plan after its first epoch, then resume;
    # the cosine horizon must match for trajectories to coincide
    train_loop(tiny_data, full, tmp_path / "half", model_cfg=mcfg, quiet=True,
               stop_after_epoch=0)
    train_loop(tiny_data, full, tmp_path / "resumed",
               resume=tmp_path / "half" / "checkpoint.cmpk", quiet=True)

    a = (tmp_path / "full" / "checkpoint.cmpk").read_bytes()
    b = (tmp_path / "resumed" / "checkpoint.cmpk").read_bytes()
    assert a == b


def test_loss_decreases_on_fixed_batch(tiny_data, tmp_path):
    # sanity band: first 20 steps on the tiny dataset mostly non-increasing
    cfg = TrainConfig(epochs=7, batch_size=9, seed=1, checkpoint_every=0)
    mcfg = _tiny_model_cfg(tiny_data)
    res = train_loop(tiny_data, cfg, tmp_path / "run", model_cfg=mcfg, quiet=True)
    losses = [json.loads(l)["loss"] for l in open(res.log_path)
              if "loss" in json.loads(l)]
    drops = sum(1 for a, b in zip(losses, losses[1:]) if b <= a + 1e-9)
    assert losses[-1] < losses[0]
    assert drops >= len(losses) // 2


def test_checkpoint_roundtrip_with_optimizer(tiny_data, tmp_path):
    from compass3d.model import Model

    mcfg = _tiny_model_cfg(tiny_data)
    model = Model(mcfg, seed=0)
    state = AdamWState()
    state.ensure(model.params.values())
    state.step = 17
    meta = {"epoch": 3, "model_config": mcfg.to_dict(),
            "rng": {"shuffle": {"s": 1}, "sample": {"s": 2}}}
    path = tmp_path / "ck.cmpk"
    save_checkpoint(path, model, state, meta)
    model2, state2, meta2 = load_checkpoint(path)
    assert state2.step == 17
    assert meta2["epoch"] == 3
    for name in model.params:
        assert np.array_equal(model.params[name].value,
                              model2.params[name].value)
    model3, meta3 = load_model_for_inference(path)
    assert meta3["epoch"] == 3


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(epochs=0).validate()
    with pytest.raises(ValueError):
        TrainConfig(lr_ici=0.0).validate()
