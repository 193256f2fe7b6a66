"""Training: AdamW with decoupled weight decay, cosine schedule, per-group
learning rates and gradient clipping, JSONL logging, bit-exact resumable
checkpoints.

Batches are loops over samples with gradient accumulation (scenes vary in
point count); that is mathematically identical to batched means for every
loss used here.
"""

from __future__ import annotations

import json
import math
import time
from collections import OrderedDict
from dataclasses import dataclass, field, asdict
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import formats
from .losses import LossConfig, total_loss
from .model import GeometryCache, Model, ModelConfig
from .synth.dataset import DatasetView

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass
class TrainConfig:
    epochs: int = 30                  # micro-scale default; paper protocol is 15
    batch_size: int = 8
    weight_decay: float = 1e-3
    lr_ici: float = 3e-4
    lr_bcr: float = 1e-4
    lr_text: float = 1e-6
    lr_head: float = 3e-4             # head/point encoder follow the ici rate
    clip_backbone: float = 1.0
    clip_auxiliary: float = 5.0
    seed: int = 0
    eval_every: int = 0               # epochs between test_seen evals; 0 = end only
    checkpoint_every: int = 1         # epochs between checkpoints
    token_dropout: float = 0.0        # train-time word dropout probability

    def validate(self):
        if self.epochs < 1 or self.batch_size < 1:
            raise ValueError("epochs and batch_size must be positive")
        for name in ("lr_ici", "lr_bcr", "lr_text", "lr_head"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be > 0")
        if not 0.0 <= self.token_dropout < 1.0:
            raise ValueError("token_dropout must be in [0, 1)")
        return self

    def group_lr(self, group: str) -> float:
        return {"ici": self.lr_ici, "bcr": self.lr_bcr,
                "text_encoder": self.lr_text, "backbone": self.lr_head,
                "head": self.lr_head}[group]

    def group_clip(self, group: str) -> float:
        return self.clip_backbone if group in ("backbone", "text_encoder", "head") \
            else self.clip_auxiliary


def cosine_lr(step: int, total_steps: int, base_lr: float) -> float:
    """base_lr * 0.5 (1 + cos(pi step/total)); no warmup."""
    if not 0 <= step <= total_steps:
        raise ValueError("step out of range")
    if total_steps == 0:
        return base_lr
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * step / total_steps))


class AdamWState:
    """First/second moments per parameter, keyed by parameter name."""

    def __init__(self):
        self.m: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.v: "OrderedDict[str, np.ndarray]" = OrderedDict()
        self.step = 0

    def ensure(self, params):
        for p in params:
            if p.name not in self.m:
                self.m[p.name] = np.zeros_like(p.value)
                self.v[p.name] = np.zeros_like(p.value)

    def tensors(self) -> "OrderedDict[str, np.ndarray]":
        out = OrderedDict()
        for name, arr in self.m.items():
            out[f"m/{name}"] = arr
        for name, arr in self.v.items():
            out[f"v/{name}"] = arr
        out["step"] = np.array(float(self.step))
        return out

    @classmethod
    def from_tensors(cls, tensors) -> "AdamWState":
        state = cls()
        for name, arr in tensors.items():
            if name.startswith("m/"):
                state.m[name[2:]] = np.array(arr)
            elif name.startswith("v/"):
                state.v[name[2:]] = np.array(arr)
            elif name == "step":
                state.step = int(arr)
        return state


def clip_gradients(groups, cfg: TrainConfig) -> dict:
    """Per-group global-L2 clipping; returns the applied factors."""
    factors = {}
    for group in groups:
        total = 0.0
        for p in group.params:
            if p.grad is None:
                continue
            norm = float(np.linalg.norm(p.grad))
            if not math.isfinite(norm):
                raise FloatingPointError(f"non-finite gradient in {p.name}")
            total += norm * norm
        norm = math.sqrt(total)
        limit = cfg.group_clip(group.name)
        factor = 1.0 if norm <= limit else limit / norm
        if factor < 1.0:
            for p in group.params:
                if p.grad is not None:
                    p.grad *= factor
        factors[group.name] = factor
    return factors


def adamw_step(groups, state: AdamWState, cfg: TrainConfig,
               schedule_mult: float = 1.0):
    """Decoupled weight decay first, then bias-corrected moment update."""
    state.step += 1
    t = state.step
    bc1 = 1.0 - ADAM_BETA1 ** t
    bc2 = 1.0 - ADAM_BETA2 ** t
    for group in groups:
        state.ensure(group.params)
        lr = cfg.group_lr(group.name) * schedule_mult
        for p in group.params:
            g = p.grad
            if g is None:
                g = np.zeros_like(p.value)
            if not np.isfinite(g).all():
                raise FloatingPointError(f"NaN gradient for parameter {p.name}")
            if cfg.weight_decay:
                p.value = p.value - lr * cfg.weight_decay * p.value
            m = state.m[p.name]
            v = state.v[p.name]
            m *= ADAM_BETA1
            m += (1.0 - ADAM_BETA1) * g
            v *= ADAM_BETA2
            v += (1.0 - ADAM_BETA2) * (g * g)
            update = (m / bc1) / (np.sqrt(v / bc2) + ADAM_EPS)
            p.value = p.value - lr * update


# ---------------------------------------------------------------------------
# checkpoints


def save_checkpoint(path, model: Model, state: AdamWState, meta: dict):
    formats.write_train_checkpoint(path, model.state_tensors(),
                                   state.tensors(), meta)


def load_checkpoint(path, expect_model_cfg: ModelConfig | None = None):
    tensors, opt_tensors, meta = formats.read_train_checkpoint(path)
    model_cfg = ModelConfig.from_dict(meta["model_config"])
    if expect_model_cfg is not None and expect_model_cfg.to_dict() != model_cfg.to_dict():
        raise ValueError("checkpoint model config differs from requested config")
    model = Model(model_cfg, seed=0)
    model.load_state_tensors(tensors)
    state = AdamWState.from_tensors(opt_tensors)
    return model, state, meta


def load_model_for_inference(path) -> tuple:
    """Accepts a CMPK training checkpoint or a bare CMPT parameter file."""
    tensors, meta = formats.read_any_checkpoint(path)
    if meta is None or "model_config" not in meta:
        raise formats.FormatError(
            "checkpoint carries no model config; pass a CMPK training checkpoint")
    cfg = ModelConfig.from_dict(meta["model_config"])
    model = Model(cfg, seed=0)
    model.load_state_tensors(tensors)
    return model, meta


# ---------------------------------------------------------------------------
# loop


@dataclass
class TrainResult:
    checkpoint: Path
    log_path: Path
    steps: int
    final_loss: float


def _rng_state(rng: np.random.Generator) -> dict:
    return json.loads(json.dumps(rng.bit_generator.state))


def _restore_rng(state: dict) -> np.random.Generator:
    gen = np.random.Generator(np.random.PCG64())
    gen.bit_generator.state = state
    return gen


def train_loop(data_dir, train_cfg: TrainConfig, out_dir,
               model_cfg: ModelConfig | None = None,
               loss_cfg: LossConfig | None = None,
               resume: Path | None = None,
               geometry_cache: GeometryCache | None = None,
               quiet: bool = False,
               stop_after_epoch: int | None = None) -> TrainResult:
    train_cfg.validate()
    ds = DatasetView.open(data_dir)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    loss_cfg = (loss_cfg or LossConfig()).validate()

    if resume is not None:
        model, state, meta = load_checkpoint(resume)
        model_cfg = model.cfg
        shuffle_rng = _restore_rng(meta["rng"]["shuffle"])
        sample_rng = _restore_rng(meta["rng"]["sample"])
        start_epoch = meta["epoch"] + 1
    else:
        if model_cfg is None:
            model_cfg = ModelConfig(vocab=ds.vocabulary())
        model = Model(model_cfg, seed=train_cfg.seed)
        state = AdamWState()
        shuffle_rng = np.random.default_rng(
            np.random.PCG64(hash_seed(train_cfg.seed, "shuffle")))
        sample_rng = np.random.default_rng(
            np.random.PCG64(hash_seed(train_cfg.seed, "sample")))
        start_epoch = 0

    for group in model.all_groups():
        group.lr = train_cfg.group_lr(group.name)
        group.clip_norm = train_cfg.group_clip(group.name)

    records = ds.queries("train")
    if not records:
        raise ValueError("train split is empty")
    cache = geometry_cache or GeometryCache(model_cfg)
    steps_per_epoch = math.ceil(len(records) / train_cfg.batch_size)
    total_steps = steps_per_epoch * train_cfg.epochs
    groups = model.all_groups()

    log_path = out / "train_log.jsonl"
    log_fh = open(log_path, "a" if resume is not None else "w",
                  encoding="utf-8")
    ckpt_path = out / "checkpoint.cmpk"
    final_loss = float("nan")
    t_start = time.time()

    # per-op NaN scans cost ~10% of a step; clip_gradients/adamw_step still
    # abort on any non-finite gradient, naming the parameter
    finite_checks_before = ad.FINITE_CHECKS
    ad.FINITE_CHECKS = False
    try:
        for epoch in range(start_epoch, train_cfg.epochs):
            order = shuffle_rng.permutation(len(records))
            for bstart in range(0, len(records), train_cfg.batch_size):
                batch = order[bstart:bstart + train_cfg.batch_size]
                ad.zero_grads(groups)
                accum = {n: None for n in model.params}
                terms = {"hm": 0.0, "grp": 0.0, "tg": 0.0, "tp": 0.0}
                skipped = []
                batch_loss = 0.0
                for sample_i in batch:
                    rec = records[int(sample_i)]
                    points, labels, _ = ds.scene(rec["scene_id"])
                    geom = cache.get(rec["scene_id"], points, labels)
                    target = ds.mask(rec)
                    text = rec["text"]
                    if train_cfg.token_dropout > 0.0:
                        text = _drop_tokens(text, train_cfg.token_dropout,
                                            sample_rng)
                    out_fwd = model.forward(geom, text, mode="train")
                    bundle = total_loss(out_fwd, target, loss_cfg, sample_rng)
                    ad.zero_grads(groups)
                    ad.backward(bundle.total, groups)
                    scale = 1.0 / len(batch)
                    for name, p in model.params.items():
                        contrib = p.grad * scale
                        accum[name] = contrib if accum[name] is None \
                            else accum[name] + contrib
                    batch_loss += float(bundle.total.value) * scale
                    for key in terms:
                        terms[key] += getattr(bundle, key) * scale
                    skipped.extend(sorted(bundle.skipped))
                for name, p in model.params.items():
                    p.grad = accum[name]
                factors = clip_gradients(groups, train_cfg)
                mult = cosine_lr(state.step, total_steps, 1.0)
                adamw_step(groups, state, train_cfg, schedule_mult=mult)
                final_loss = batch_loss
                log_fh.write(json.dumps({
                    "step": state.step,
                    "epoch": epoch,
                    "loss": batch_loss,
                    **{f"loss_{k}": v for k, v in terms.items()},
                    "lr_mult": mult,
                    "clip": factors,
                    "skipped": sorted(set(skipped)),
                }, sort_keys=True) + "\n")
            log_fh.flush()
            if (train_cfg.checkpoint_every
                    and (epoch + 1) % train_cfg.checkpoint_every == 0) \
                    or epoch == train_cfg.epochs - 1:
                save_checkpoint(ckpt_path, model, state, {
                    "epoch": epoch,
                    "model_config": model_cfg.to_dict(),
                    "train_config": asdict(train_cfg),
                    "loss_config": asdict(loss_cfg),
                    "rng": {"shuffle": _rng_state(shuffle_rng),
                            "sample": _rng_state(sample_rng)},
                })
            if train_cfg.eval_every and (epoch + 1) % train_cfg.eval_every == 0:
                from .metrics import evaluate_split

                report = evaluate_split(ds, "test_seen", model=model,
                                        geometry_cache=cache)
                log_fh.write(json.dumps(
                    {"epoch": epoch, "eval": report["metrics"],
                     "abstention": report["abstention"]},
                    sort_keys=True) + "\n")
                log_fh.flush()
            if not quiet:
                print(f"epoch {epoch + 1}/{train_cfg.epochs} "
                      f"loss {batch_loss:.4f} "
                      f"({time.time() - t_start:.0f}s)")
            if stop_after_epoch is not None and epoch >= stop_after_epoch:
                break
    finally:
        ad.FINITE_CHECKS = finite_checks_before
        log_fh.close()
    return TrainResult(checkpoint=ckpt_path, log_path=log_path,
                       steps=state.step, final_loss=final_loss)


def _drop_tokens(text: str, p: float, rng: np.random.Generator) -> str:
    """Word dropout: keeps each token with probability 1-p, at least one."""
    from .synth.queries import tokenize

    words = tokenize(text)
    keep = rng.uniform(size=len(words)) >= p
    if not keep.any():
        keep[int(rng.integers(len(words)))] = True
    return " ".join(w for w, k in zip(words, keep) if k)


def hash_seed(seed: int, purpose: str) -> int:
    from .synth.templates import derive_seed

    return derive_seed(seed, "train", purpose)
