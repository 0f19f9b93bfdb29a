"""Precision-recall curves, AUC and max F1 for pairwise predictions."""

from __future__ import annotations

import math

import numpy as np


def pr_curve(scores, labels) -> list[tuple[float, float, float]]:
    """``(threshold, precision, recall)`` triples, thresholds descending.

    A pair is predicted positive when its score is >= threshold. The first
    entry uses threshold +inf (nothing predicted, precision 0/0 taken as 1),
    followed by one entry per unique score.
    """
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape or scores.ndim != 1:
        raise ValueError("scores and labels must be 1-D and of equal length")
    n_pos = int(labels.sum())
    if n_pos == 0 or n_pos == len(labels):
        raise ValueError("need at least one positive and one negative label")
    order = np.argsort(-scores, kind="stable")
    s, y = scores[order], labels[order]
    tp = np.cumsum(y)
    fp = np.cumsum(1 - y)
    last = np.r_[np.flatnonzero(np.diff(s) != 0), len(s) - 1]
    curve = [(math.inf, 1.0, 0.0)]
    for k in last:
        t, f = int(tp[k]), int(fp[k])
        precision = t / (t + f) if t + f else 1.0
        curve.append((float(s[k]), precision, t / n_pos))
    return curve


def f1(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def max_f1(curve) -> float:
    if not curve:
        raise ValueError("empty curve")
    return max(f1(p, r) for _, p, r in curve)


def best_threshold(curve) -> float:
    """Threshold attaining max F1 (the highest one on ties)."""
    best = max(range(len(curve)), key=lambda k: (f1(curve[k][1], curve[k][2]), curve[k][0]))
    return curve[best][0]


def auc(curve) -> float:
    """Trapezoidal area under precision as a function of recall.

    Summed with ``math.fsum`` so the result does not depend on summation order.
    """
    pts = [(r, p) for _, p, r in curve]
    return math.fsum((r1 - r0) * (p0 + p1) / 2 for (r0, p0), (r1, p1) in zip(pts, pts[1:]))


def summarize(scores, labels) -> dict:
    curve = pr_curve(scores, labels)
    return {"max_f1": max_f1(curve), "auc": auc(curve), "threshold": best_threshold(curve), "curve": curve}
