"""Finite-difference verification suite for every differentiable op and
loss, plus the full training objective on a two-object micro-scene.

Shared by the `gradcheck` CLI command and the acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import losses as lmod
from .model import Model, ModelConfig, build_scene_geometry
from .synth import compose_scene, ground_truth_mask, CONFUSING_PAIRS

TOLERANCE = 1e-4


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    seeds: int
    passed: bool


def _params(rng, *shapes):
    return [ad.parameter(rng.normal(size=s), name=f"p{i}")
            for i, s in enumerate(shapes)]


def _attention_params(rng, d):
    mk = lambda: ad.parameter(ad.xavier_uniform(rng, d, d), "w")
    vec = lambda: ad.parameter(rng.normal(size=d) * 0.1, "b")
    return ad.AttentionParams(mk(), mk(), mk(), mk(), vec(), vec(), vec())


def _op_cases():
    """name -> (n_params, builder(params) -> scalar DiffValue)."""
    w_fixed = np.random.default_rng(1234).normal(size=(3, 4))

    def mha_case(rng):
        d = 4
        p = _attention_params(rng, d)
        q = ad.parameter(rng.normal(size=(3, d)), name="q")
        kv = ad.parameter(rng.normal(size=(2, d)), name="kv")
        params = [q, kv] + p.all_params()
        return params, lambda: ad.mean_all(
            ad.multi_head_attention(q, kv, kv, 2, p))

    def layer_norm_case(rng):
        x = ad.parameter(rng.normal(size=(4, 6)), name="x")
        g = ad.parameter(rng.normal(size=6), name="g")
        b = ad.parameter(rng.normal(size=6), name="b")
        return [x, g, b], lambda: ad.mean_all(ad.layer_norm(x, g, b))

    simple = {
        "add": lambda a, b: ad.add(a, b),
        "sub": lambda a, b: ad.sub(a, b),
        "mul": lambda a, b: ad.mul(a, b),
        "div": lambda a, b: ad.div(a, ad.add(ad.mul(b, b), 1.0)),
        "matmul": lambda a, b: ad.matmul(a, ad.transpose(b)),
        "exp": lambda a, _b: ad.exp(a),
        "log": lambda a, _b: ad.log(ad.add(ad.mul(a, a), 0.5)),
        "sqrt": lambda a, _b: ad.sqrt(ad.add(ad.mul(a, a), 0.5)),
        "tanh": lambda a, _b: ad.tanh(a),
        "sigmoid": lambda a, _b: ad.sigmoid(a),
        "softplus": lambda a, _b: ad.softplus(a),
        "softmax": lambda a, _b: ad.mul(ad.softmax(a), ad.constant(w_fixed)),
        "abs_pow": lambda a, _b: ad.pow_const(ad.add(ad.abs_(a), 0.1), 1.7),
        "row_sum": lambda a, _b: ad.row_sum(a),
        "take_rows": lambda a, _b: ad.take_rows(a, np.array([2, 0, 2, 1])),
        "group_mean": lambda a, _b: ad.group_mean(a, np.array([[0, 1], [2, 2]])),
        "concat_rows": lambda a, b: ad.concat_rows([a, b]),
        "concat_cols": lambda a, b: ad.concat_cols([a, b]),
        "col_slice": lambda a, _b: ad.col_slice(a, 1, 3),
        "scale_rows": lambda a, _b: ad.scale_rows(
            a, ad.constant(np.arange(1.0, 4.0).reshape(3, 1))),
        "add_bias": None,  # dedicated shapes below
    }

    cases = {}
    for name, fn in simple.items():
        if fn is None:
            continue
        def make(fn=fn):
            def build(rng):
                params = _params(rng, (3, 4), (3, 4))
                return params, lambda: ad.mean_all(fn(params[0], params[1]))
            return build
        cases[name] = make()

    def add_bias_case(rng):
        x = ad.parameter(rng.normal(size=(3, 4)), name="x")
        b = ad.parameter(rng.normal(size=4), name="b")
        return [x, b], lambda: ad.mean_all(ad.add_bias(x, b))

    cases["add_bias"] = add_bias_case
    cases["layer_norm"] = layer_norm_case
    cases["multi_head_attention"] = mha_case
    return cases


def _loss_cases():
    def focal(rng):
        logits = ad.parameter(rng.normal(size=(12, 1)), name="logits")
        target = rng.uniform(size=12)
        return [logits], lambda: lmod.focal_heatmap_loss(
            ad.sigmoid(logits), target, focal_gamma=2.0)

    def grp(rng):
        logits = ad.parameter(rng.normal(size=(6, 1)), name="logits")
        coverage = rng.uniform(size=6)
        return [logits], lambda: lmod.group_relevance_loss(
            ad.sigmoid(logits), coverage)

    def tg(rng):
        t = ad.parameter(rng.normal(size=(1, 5)), name="t")
        z = ad.parameter(rng.normal(size=(7, 5)), name="z")
        p = lmod.tg_soft_labels(rng.uniform(size=7), 2.0)
        return [t, z], lambda: lmod.tg_softmax_loss(t, z, p, tau=0.1)

    def tp(rng):
        # tau_h=0.2 keeps every coordinate clear of the f64 noise floor and
        # of truncation; the differentiated code path matches the 0.05 default
        t = ad.parameter(rng.normal(size=(1, 5)), name="t")
        pos = ad.parameter(rng.normal(size=(3, 5)), name="pos")
        neg = ad.parameter(rng.normal(size=(6, 5)), name="neg")
        return [t, pos, neg], lambda: lmod.tp_hardneg_loss(
            t, pos, neg, margin=0.2, tau_hard=0.2)

    return {"focal_heatmap": focal, "group_relevance": grp,
            "tg_softmax": tg, "tp_hardneg": tp}


def micro_model(seed: int):
    """Tiny two-object scene + matching model for whole-objective checks."""
    cfg = ModelConfig(
        feature_dim=4, n_groups=2, group_size=4, k_prop=1, heads=2,
        encoder_k=4, head_hidden=3, max_tokens=4,
        vocab=["cut", "the", "paper", "vegetables", "slice", "music"],
    )
    pair = CONFUSING_PAIRS[0]
    scene = compose_scene(pair, 0, "slots", seed=seed,
                          scene_id=f"grad{seed}", n_points_per_object=64)
    geom = build_scene_geometry(scene.points, scene.labels, cfg)
    target = ground_truth_mask(
        scene, {"object_index": 0, "affordance": pair.shared_affordance})
    model = Model(cfg, seed=seed)
    return model, geom, target


def full_objective_check(seed: int, eps: float = 1e-5) -> float:
    model, geom, target = micro_model(seed)
    loss_cfg = lmod.LossConfig(n_pos=4, n_neg=8, tau_hard=0.2)
    params = list(model.params.values())

    def f():
        out = model.forward(geom, "slice the vegetables", mode="train")
        rng = np.random.default_rng(seed)
        return lmod.total_loss(out, target, loss_cfg, rng).total

    return ad.finite_diff_check(f, params, eps=eps)


CASE_EPS = {"tg_softmax": 1e-4}


def run_suite(base_seed: int = 0, repeats: int = 20,
              objective_repeats: int = 20, eps: float = 1e-5) -> list:
    """Run every check; returns CheckResult rows."""
    results = []
    for name, build in {**_op_cases(), **_loss_cases()}.items():
        case_eps = CASE_EPS.get(name, eps)
        worst = 0.0
        for s in range(repeats):
            rng = np.random.default_rng(base_seed + s)
            params, f = build(rng)
            worst = max(worst, ad.finite_diff_check(f, params, eps=case_eps))
        results.append(CheckResult(name, worst, repeats, worst < TOLERANCE))
    worst = 0.0
    for s in range(objective_repeats):
        worst = max(worst, full_objective_check(base_seed + s, eps=eps))
    results.append(CheckResult("full_objective_micro_scene", worst,
                               objective_repeats, worst < TOLERANCE))
    return results
