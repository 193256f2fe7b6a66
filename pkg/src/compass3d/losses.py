"""Training objectives: focal heatmap loss, region relevance, soft-label
text-group contrastive loss, hard-negative text-point contrastive loss,
and the weighted total.

Negative queries have no positive anchor, so the two contrastive terms
emit a skip signal instead of an ill-defined value; skipped terms
contribute exactly zero to the total.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad

CLAMP = 1e-7
NORM_EPS = 1e-8


@dataclass
class LossConfig:
    lambda_grp: float = 1.0
    lambda_tg: float = 0.5
    lambda_tp: float = 0.5
    coverage_gamma: float = 2.0     # Eq.-8-style exponent on region coverage
    tau: float = 0.1                # text-group temperature
    tau_hard: float = 0.05          # hard-negative log-sum-exp temperature
    margin: float = 0.2
    n_pos: int = 64
    n_neg: int = 256
    focal_gamma: float = 2.0
    hard_targets: bool = False      # binarize soft heatmap targets at 0.5
    tg_per_object: bool = False     # normalize the group softmax per object

    def validate(self):
        if self.tau <= 0 or self.tau_hard <= 0:
            raise ValueError("temperatures must be > 0")
        if min(self.lambda_grp, self.lambda_tg, self.lambda_tp) < 0:
            raise ValueError("loss weights must be >= 0")
        if self.n_pos < 1 or self.n_neg < 1:
            raise ValueError("sample counts must be >= 1")
        return self


@dataclass
class LossBundle:
    total: ad.DiffValue
    hm: float
    grp: float = 0.0
    tg: float = 0.0
    tp: float = 0.0
    skipped: set = field(default_factory=set)

    def to_dict(self) -> dict:
        return {"total": float(self.total.value), "hm": self.hm,
                "grp": self.grp, "tg": self.tg, "tp": self.tp,
                "skipped": sorted(self.skipped)}


def _as_column(values) -> np.ndarray:
    arr = np.asarray(values, dtype=np.float64)
    return arr.reshape(-1, 1)


def focal_heatmap_loss(pred: ad.DiffValue, target, focal_gamma: float = 2.0,
                       hard_targets: bool = False) -> ad.DiffValue:
    """Soft-target focal BCE: mean |y - p|^g * BCE(p, y)."""
    y = _as_column(target)
    if y.shape[0] != pred.value.shape[0]:
        raise ValueError("prediction/target length mismatch")
    if y.min() < 0 or y.max() > 1:
        raise ValueError("targets must lie in [0, 1]")
    if hard_targets:
        y = (y >= 0.5).astype(np.float64)
    yc = ad.constant(y)
    p = ad.clip_const(pred, CLAMP, 1.0 - CLAMP)
    bce = ad.neg(ad.add(ad.mul(yc, ad.log(p)),
                        ad.mul(ad.constant(1.0 - y), ad.log(ad.sub(1.0, p)))))
    if focal_gamma == 0.0:
        return ad.mean_all(bce)
    weight = ad.pow_const(ad.abs_(ad.sub(yc, p)), focal_gamma)
    return ad.mean_all(ad.mul(weight, bce))


def group_relevance_loss(scores: ad.DiffValue, coverage) -> ad.DiffValue:
    """Mean soft-target BCE between region scores and region coverage."""
    y = _as_column(coverage)
    if y.shape[0] != scores.value.shape[0]:
        raise ValueError("scores/coverage length mismatch")
    s = ad.clip_const(scores, CLAMP, 1.0 - CLAMP)
    return ad.neg(ad.mean_all(
        ad.add(ad.mul(ad.constant(y), ad.log(s)),
               ad.mul(ad.constant(1.0 - y), ad.log(ad.sub(1.0, s))))))


def tg_soft_labels(coverages, gamma: float):
    """Sharpened, normalized coverage distribution; None on zero coverage."""
    w = np.asarray(coverages, dtype=np.float64)
    if (w < 0).any():
        raise ValueError("coverages must be >= 0")
    wg = np.power(w, gamma)
    total = wg.sum()
    if total <= 0.0:
        return None
    return wg / total


def cosine_to_anchor(rows: ad.DiffValue, anchor: ad.DiffValue) -> ad.DiffValue:
    """Cosine similarity of each row of (G, D) against a (1, D) anchor.

    Norms are floored at NORM_EPS rather than shifted so the similarity is
    exactly invariant to positive rescaling of nonzero inputs.
    """
    num = ad.matmul(rows, ad.transpose(anchor))
    nr = ad.maximum_const(ad.sqrt(ad.row_sum(ad.mul(rows, rows))), NORM_EPS)
    na = ad.maximum_const(ad.sqrt(ad.row_sum(ad.mul(anchor, anchor))), NORM_EPS)
    return ad.div(num, ad.mul(nr, na))


def _log_softmax_column(logits: ad.DiffValue) -> ad.DiffValue:
    shift = float(logits.value.max())
    shifted = ad.sub(logits, shift)
    lse = ad.add(ad.log(ad.sum_all(ad.exp(shifted))), shift)
    return ad.sub(logits, lse)


def tg_softmax_loss(t_tg: ad.DiffValue, z: ad.DiffValue, p: np.ndarray,
                    tau: float) -> ad.DiffValue:
    """Soft-label cross-entropy over group/text cosine similarities."""
    if abs(float(np.sum(p)) - 1.0) > 1e-9:
        raise ValueError("soft labels must sum to 1")
    logits = ad.div(cosine_to_anchor(z, t_tg), tau)
    log_probs = _log_softmax_column(logits)
    return ad.neg(ad.sum_all(ad.mul(ad.constant(_as_column(p)), log_probs)))


def sample_pos_neg(target, n_pos: int, n_neg: int, rng):
    """Index samples from {y >= 0.5} and {y < 0.5}; None when either pool
    is empty (negative-query skip signal)."""
    if isinstance(rng, (int, np.integer)):
        rng = np.random.default_rng(rng)
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    pos_pool = np.flatnonzero(y >= 0.5)
    neg_pool = np.flatnonzero(y < 0.5)
    if pos_pool.size == 0 or neg_pool.size == 0:
        return None
    pos = rng.choice(pos_pool, size=min(n_pos, pos_pool.size), replace=False)
    neg = rng.choice(neg_pool, size=min(n_neg, neg_pool.size), replace=False)
    return pos.astype(np.int64), neg.astype(np.int64)


def smooth_max_similarity(t_tp: ad.DiffValue, neg_feats: ad.DiffValue,
                          tau_hard: float) -> ad.DiffValue:
    """tau_h * logsumexp(cos/tau_h): a smooth upper proxy of the hardest
    negative similarity, computed with max subtraction."""
    sims = cosine_to_anchor(neg_feats, t_tp)
    scaled = ad.div(sims, tau_hard)
    shift = float(scaled.value.max())
    lse = ad.add(ad.log(ad.sum_all(ad.exp(ad.sub(scaled, shift)))), shift)
    return ad.mul(lse, tau_hard)


def tp_hardneg_loss(t_tp: ad.DiffValue, pos_feats: ad.DiffValue,
                    neg_feats: ad.DiffValue, margin: float,
                    tau_hard: float) -> ad.DiffValue:
    """Softplus margin loss of positives against the smooth hardest negative."""
    if pos_feats.value.shape[0] < 1 or neg_feats.value.shape[0] < 1:
        raise ValueError("need at least one positive and one negative point")
    s_neg = smooth_max_similarity(t_tp, neg_feats, tau_hard)
    pos_sims = cosine_to_anchor(pos_feats, t_tp)
    arg = ad.add(ad.sub(s_neg, pos_sims), margin)
    return ad.mean_all(ad.softplus(arg))


def group_coverage(target, group_idx: np.ndarray) -> np.ndarray:
    """Mean ground-truth value over each group's members."""
    y = np.asarray(target, dtype=np.float64).reshape(-1)
    return y[group_idx].mean(axis=1)


def total_loss(outputs, target, cfg: LossConfig, rng) -> LossBundle:
    """Assemble the weighted objective, honoring ablations and skips."""
    if outputs.mode != "train":
        raise ValueError("total_loss requires train-mode outputs")
    model_cfg = outputs.model_cfg
    hm = focal_heatmap_loss(outputs.heatmap, target, cfg.focal_gamma,
                            cfg.hard_targets)
    total = hm
    bundle = LossBundle(total=hm, hm=float(hm.value))
    skipped = bundle.skipped

    coverage = None
    if outputs.group_scores is not None:
        coverage = group_coverage(target, outputs.geom.group_idx)

    use_grp = outputs.group_scores is not None and (
        model_cfg is None or model_cfg.use_group_loss)
    if use_grp:
        grp = group_relevance_loss(outputs.group_scores, coverage)
        bundle.grp = float(grp.value)
        if cfg.lambda_grp > 0:
            total = ad.add(total, ad.mul(grp, cfg.lambda_grp))
    else:
        skipped.add("grp")

    use_tg = outputs.z is not None and (model_cfg is None or model_cfg.use_tg)
    if use_tg:
        tg = _tg_term(outputs, coverage, cfg)
        if tg is None:
            skipped.add("tg")
        else:
            bundle.tg = float(tg.value)
            if cfg.lambda_tg > 0:
                total = ad.add(total, ad.mul(tg, cfg.lambda_tg))
    else:
        skipped.add("tg")

    use_tp = outputs.t_tp is not None and (model_cfg is None or model_cfg.use_tp)
    if use_tp:
        sample = sample_pos_neg(target, cfg.n_pos, cfg.n_neg, rng)
        if sample is None:
            skipped.add("tp")
        else:
            pos_idx, neg_idx = sample
            tp = tp_hardneg_loss(
                outputs.t_tp,
                ad.take_rows(outputs.features_prop, pos_idx),
                ad.take_rows(outputs.features_prop, neg_idx),
                cfg.margin, cfg.tau_hard)
            bundle.tp = float(tp.value)
            if cfg.lambda_tp > 0:
                total = ad.add(total, ad.mul(tp, cfg.lambda_tp))
    else:
        skipped.add("tp")

    bundle.total = total
    return bundle


def _tg_term(outputs, coverage, cfg: LossConfig):
    if not cfg.tg_per_object:
        p = tg_soft_labels(coverage, cfg.coverage_gamma)
        if p is None:
            return None
        return tg_softmax_loss(outputs.t_tg, outputs.z, p, cfg.tau)
    # per-object normalization: objects without coverage are skipped
    terms = []
    group_object = outputs.geom.group_object
    for k in range(outputs.geom.n_objects):
        rows = np.flatnonzero(group_object == k)
        p = tg_soft_labels(coverage[rows], cfg.coverage_gamma)
        if p is None:
            continue
        z_k = ad.row_slice(outputs.z, int(rows[0]), int(rows[-1]) + 1)
        terms.append(tg_softmax_loss(outputs.t_tg, z_k, p, cfg.tau))
    if not terms:
        return None
    acc = terms[0]
    for t in terms[1:]:
        acc = ad.add(acc, t)
    return ad.div(acc, float(len(terms)))
