"""Evaluation metrics (threshold-swept IoU, rank AUC, histogram-intersection
similarity, MAE), abstention statistics, and split-level report emission.

Per-metric negative-query policy: aIoU and MAE include negative queries,
AUC and SIM exclude them (degenerate ground truth); the report records
the policy so ablations stay interpretable.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import formats

SCHEMA_VERSION = 1
# integer grid divided once: each threshold is the correctly rounded i/100
THRESHOLDS = np.arange(1, 100) / 100.0
GT_BINARIZE = 0.5
ABSTENTION_THRESHOLD = 0.5

NEGATIVE_POLICY = {"aiou": "included", "auc": "excluded",
                   "sim": "excluded", "mae": "included"}


def _validate(pred, gt):
    pred = np.asarray(pred, dtype=np.float64).reshape(-1)
    gt = np.asarray(gt, dtype=np.float64).reshape(-1)
    if pred.shape != gt.shape:
        raise ValueError(f"length mismatch: {pred.shape} vs {gt.shape}")
    for name, arr in (("prediction", pred), ("ground truth", gt)):
        if arr.size == 0:
            raise ValueError(f"empty {name}")
        if arr.min() < 0 or arr.max() > 1:
            raise ValueError(f"{name} values must lie in [0, 1]")
    return pred, gt


def aiou(pred, gt) -> float:
    """IoU averaged over binarization thresholds 0.01..0.99.

    Ground truth binarizes at 0.5; a threshold where both masks are empty
    counts as IoU 1 (rewards abstention on negative queries).
    """
    pred, gt = _validate(pred, gt)
    gt_bin = gt >= GT_BINARIZE
    pred_bin = pred[None, :] >= THRESHOLDS[:, None]
    inter = (pred_bin & gt_bin[None, :]).sum(axis=1)
    union = (pred_bin | gt_bin[None, :]).sum(axis=1)
    iou = np.where(union > 0, inter / np.maximum(union, 1), 1.0)
    return float(iou.mean())


def auc(pred, gt):
    """Mann-Whitney rank AUC with tie averaging; None when ground truth is
    single-class (negative queries are excluded from the AUC mean)."""
    pred, gt = _validate(pred, gt)
    gt_bin = gt >= GT_BINARIZE
    n_pos = int(gt_bin.sum())
    n_neg = gt_bin.size - n_pos
    if n_pos == 0 or n_neg == 0:
        return None
    order = np.argsort(pred, kind="stable")
    sorted_pred = pred[order]
    _, inverse, counts = np.unique(sorted_pred, return_inverse=True,
                                   return_counts=True)
    ends = np.cumsum(counts)
    starts = ends - counts + 1
    avg_rank = (starts + ends) / 2.0
    ranks = np.empty(pred.size)
    ranks[order] = avg_rank[inverse]
    pos_rank_sum = ranks[gt_bin].sum()
    return float((pos_rank_sum - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg))


def sim(pred, gt):
    """Histogram intersection of sum-normalized maps; None when the ground
    truth sums to zero, 0 when only the prediction does."""
    pred, gt = _validate(pred, gt)
    gt_total = gt.sum()
    if gt_total == 0.0:
        return None
    pred_total = pred.sum()
    if pred_total == 0.0:
        return 0.0
    return float(np.minimum(pred / pred_total, gt / gt_total).sum())


def mae(pred, gt) -> float:
    pred, gt = _validate(pred, gt)
    return float(np.abs(pred - gt).mean())


@dataclass
class SampleScore:
    query_id: str
    is_negative: bool
    aiou: float
    auc: float | None
    sim: float | None
    mae: float
    mean_activation: float
    max_activation: float


def score_sample(query_id: str, pred, gt, is_negative: bool) -> SampleScore:
    pred, gt = _validate(pred, gt)
    return SampleScore(
        query_id=query_id,
        is_negative=is_negative,
        aiou=aiou(pred, gt),
        auc=auc(pred, gt),
        sim=sim(pred, gt),
        mae=mae(pred, gt),
        mean_activation=float(pred.mean()),
        max_activation=float(pred.max()),
    )


def abstention_stats(negative_predictions, threshold: float = ABSTENTION_THRESHOLD):
    """(abstention rate, mean activation) over negative-query predictions."""
    preds = [np.asarray(p, dtype=np.float64).reshape(-1)
             for p in negative_predictions]
    if not preds:
        raise ValueError("no negative-query predictions supplied")
    rate = float(np.mean([p.max() < threshold for p in preds]))
    mean_act = float(np.mean([p.mean() for p in preds]))
    return rate, mean_act


def aggregate(scores) -> dict:
    """Fold per-sample scores into the split report body (query_id order)."""
    scores = sorted(scores, key=lambda s: s.query_id)
    n = len(scores)
    body = {}
    for metric, scale in (("aiou", 100.0), ("auc", 100.0),
                          ("sim", 1.0), ("mae", 1.0)):
        defined = [getattr(s, metric) for s in scores
                   if getattr(s, metric) is not None]
        body[metric] = {
            "mean": (float(np.mean(defined)) * scale) if defined else None,
            "count": len(defined),
            "skipped": n - len(defined),
        }
    negatives = [s for s in scores if s.is_negative]
    abstention = {"count": len(negatives), "threshold": ABSTENTION_THRESHOLD,
                  "rate": None, "mean_activation": None}
    if negatives:
        abstention["rate"] = float(np.mean(
            [s.max_activation < ABSTENTION_THRESHOLD for s in negatives]))
        abstention["mean_activation"] = float(np.mean(
            [s.mean_activation for s in negatives]))
    return {
        "counts": {"total": n, "negatives": len(negatives),
                   "positives": n - len(negatives)},
        "metrics": body,
        "abstention": abstention,
        "negative_policy": dict(NEGATIVE_POLICY),
    }


def evaluate_split(dataset, split: str, model=None, predictions_dir=None,
                   oracle: bool = False, geometry_cache=None,
                   report_path=None, config_echo=None) -> dict:
    """Score every query of a split and emit a JSON report.

    Exactly one prediction source must be given: a model (inference), a
    directory of CMPM files named by query id, or `oracle=True` (predict
    the ground truth; the upper-bound sanity mode).
    """
    from .synth.dataset import DatasetView

    if not isinstance(dataset, DatasetView):
        dataset = DatasetView.open(dataset)
    sources = [model is not None, predictions_dir is not None, oracle]
    if sum(sources) != 1:
        raise ValueError("pass exactly one of model=, predictions_dir=, oracle=True")

    records = sorted(dataset.queries(split), key=lambda r: r["query_id"])
    if model is not None and geometry_cache is None:
        from .model import GeometryCache

        geometry_cache = GeometryCache(model.cfg)

    start = time.time()
    scores = []
    for rec in records:
        gt = dataset.mask(rec)
        if oracle:
            pred = gt.copy()
        elif predictions_dir is not None:
            pred = formats.read_mask(Path(predictions_dir) / f"{rec['query_id']}.cmpm")
            if pred.shape != gt.shape:
                raise ValueError(f"{rec['query_id']}: prediction length "
                                 f"{pred.shape} != scene {gt.shape}")
        else:
            points, labels, _ = dataset.scene(rec["scene_id"])
            geom = geometry_cache.get(rec["scene_id"], points, labels)
            out = model.forward(geom, rec["text"], mode="infer")
            pred = out.heatmap_values
        scores.append(score_sample(rec["query_id"], pred, gt,
                                   rec["polarity"] == "negative"))

    report = {
        "schema_version": SCHEMA_VERSION,
        "split": split,
        "elapsed_s": round(time.time() - start, 3),
        **aggregate(scores),
    }
    if config_echo is not None:
        report["config"] = config_echo
    if report_path is not None:
        formats.dump_json(report_path, report)
    return report
