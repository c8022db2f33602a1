"""Classification, crack-probability post-processing, ROC/AUC, reports.

The crack-probability map inverts a local box count: with the binary
convention crack = 0 / background = 1, S(i,j) sums the (2n+1)^2 window
around each pixel (out-of-bounds cells count as background so borders are
not inflated) and P = 1 - S / max S. A window full of background gives
P = 0; the crack-densest window in the image defines P = 1. The
max S = 0 guard (P forced to 1 everywhere, flagged) protects the
division; with background-valued padding it cannot fire for any 2-D
input, but it is kept so the function stays total.
"""
import warnings
from dataclasses import dataclass

import numpy as np

from . import losses
from .data import CLASS_NAMES
from .errors import EvalError, InputError


def classify(probabilities):
    """Per-pixel argmax over the trailing class axis; ties go to the
    lowest class index."""
    p = np.asarray(probabilities)
    if p.ndim < 1 or p.shape[-1] < 2:
        raise InputError(f"need a trailing class axis, got shape {p.shape}")
    return p.argmax(axis=-1).astype(np.uint8)


@dataclass(frozen=True)
class CrackProbabilityMap:
    p: np.ndarray  # (H, W) float64 in [0, 1]
    n: int
    degenerate: bool  # True when the input had no background at all


def crack_probability_map(mask, n):
    """Neighborhood crack probability of a binary map (crack=0, background=1)."""
    c = np.asarray(mask)
    if n < 1 or int(n) != n:
        raise InputError(f"window radius must be a positive integer, got {n}")
    if c.ndim != 2:
        raise InputError(f"binary map must be 2-D, got shape {c.shape}")
    if not np.all((c == 0) | (c == 1)):
        raise InputError("crack map input must be binary (crack=0, background=1)")
    n = int(n)
    padded = np.pad(c.astype(np.float64), n, constant_values=1.0)
    # integral image: S(i,j) = box sum of the (2n+1)^2 window
    ii = np.zeros((padded.shape[0] + 1, padded.shape[1] + 1))
    np.cumsum(padded, axis=0, out=ii[1:, 1:])
    ii[1:, 1:] = np.cumsum(ii[1:, 1:], axis=1)
    k = 2 * n + 1
    h, w = c.shape
    s = (ii[k:k + h, k:k + w] - ii[:h, k:k + w] - ii[k:k + h, :w] + ii[:h, :w])
    s_max = s.max()
    if s_max == 0:
        warnings.warn("crack map input contains no background pixels; "
                      "emitting the degenerate all-ones probability map")
        return CrackProbabilityMap(np.ones_like(s), n, True)
    return CrackProbabilityMap(1.0 - s / s_max, n, False)


@dataclass(frozen=True)
class RocCurve:
    thresholds: np.ndarray  # descending; leading +inf for the (0, 0) point
    fpr: np.ndarray
    tpr: np.ndarray


def roc_and_auc(scores, truth):
    """ROC over distinct score thresholds (descending) and trapezoidal AUC.

    ``truth`` is binary crack presence. Needs both classes; otherwise the
    curve and the area are undefined.
    """
    s = np.asarray(scores, dtype=np.float64).ravel()
    t = np.asarray(truth).ravel()
    if s.shape != t.shape:
        raise EvalError(f"scores ({s.size}) and truth ({t.size}) differ in length")
    if not np.all((t == 0) | (t == 1)):
        raise EvalError("truth must be binary")
    pos = int(t.sum())
    neg = t.size - pos
    if pos == 0 or neg == 0:
        raise EvalError("AUC undefined: truth contains a single class")
    order = np.argsort(-s, kind="stable")
    s_sorted = s[order]
    t_sorted = t[order].astype(np.float64)
    # cumulative TP/FP after each element; keep only the last index of
    # each distinct score = the sweep position for that threshold
    tp = np.cumsum(t_sorted)
    fp = np.cumsum(1.0 - t_sorted)
    last = np.flatnonzero(np.diff(s_sorted, append=-np.inf))
    thresholds = np.concatenate([[np.inf], s_sorted[last]])
    tpr = np.concatenate([[0.0], tp[last] / pos])
    fpr = np.concatenate([[0.0], fp[last] / neg])
    auc = float(np.sum(np.diff(fpr) * (tpr[1:] + tpr[:-1])) / 2.0)
    return RocCurve(thresholds, fpr, tpr), auc


def _binary_confusion(pred_mask, truth_mask):
    tp = int(np.sum(pred_mask & truth_mask))
    fp = int(np.sum(pred_mask & ~truth_mask))
    fn = int(np.sum(~pred_mask & truth_mask))
    tn = int(np.sum(~pred_mask & ~truth_mask))
    return {"tp": tp, "fp": fp, "tn": tn, "fn": fn}


def _image_entry(entry_id, pred, truth, score):
    crack_pred = pred == 1
    crack_truth = truth == 1
    auc = None
    if score is not None and 0 < crack_truth.sum() < crack_truth.size:
        _, auc = roc_and_auc(score, crack_truth)
    return {
        "id": entry_id,
        "auc": auc,
        "accuracy": float(np.mean(pred == truth)),
        "dice": {name: losses.dice(truth == c, pred == c) for c, name in enumerate(CLASS_NAMES)},
        "confusion": _binary_confusion(crack_pred, crack_truth),
    }


def evaluate_corpus(predictions, truths, crack_scores=None, ids=None):
    """Per-image and pooled metrics as a JSON-ready report dict.

    predictions/truths: aligned lists of (H, W) class maps. crack_scores:
    optional aligned list of per-pixel crack scores — without them every
    AUC field is None. Confusion counts are binary crack-vs-rest;
    accuracy and Dice cover all classes.
    """
    if len(predictions) != len(truths):
        raise EvalError(f"{len(predictions)} predictions vs {len(truths)} truths")
    if crack_scores is not None and len(crack_scores) != len(truths):
        raise EvalError(f"{len(crack_scores)} score maps vs {len(truths)} truths")
    if ids is not None and len(ids) != len(truths):
        raise EvalError(f"{len(ids)} ids vs {len(truths)} truths")
    if not truths:
        raise EvalError("nothing to evaluate: empty prediction/truth lists")
    if ids is None:
        ids = [str(i) for i in range(len(truths))]

    per_image = []
    for i, (pred, truth) in enumerate(zip(predictions, truths)):
        pred = np.asarray(pred)
        truth = np.asarray(truth)
        if pred.shape != truth.shape:
            raise EvalError(f"image {ids[i]}: prediction shape {pred.shape} != truth {truth.shape}")
        score = None if crack_scores is None else np.asarray(crack_scores[i])
        per_image.append(_image_entry(ids[i], pred, truth, score))

    pred_all = np.concatenate([np.asarray(p).ravel() for p in predictions])
    truth_all = np.concatenate([np.asarray(t).ravel() for t in truths])
    score_all = None if crack_scores is None else np.concatenate(
        [np.asarray(s).ravel() for s in crack_scores])
    aggregate = _image_entry("aggregate", pred_all, truth_all, score_all)
    aggregate.pop("id")
    image_aucs = [e["auc"] for e in per_image if e["auc"] is not None]
    aggregate["mean_per_image_auc"] = float(np.mean(image_aucs)) if image_aucs else None
    aggregate["median_per_image_auc"] = float(np.median(image_aucs)) if image_aucs else None
    return {"per_image": per_image, "aggregate": aggregate}
