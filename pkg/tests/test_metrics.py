import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from semloop.metrics import auc, best_threshold, f1, max_f1, pr_curve, summarize


def brute_curve(scores, labels):
    """Exhaustive O(n^2) enumeration: one point per candidate threshold."""
    n_pos = sum(labels)
    out = [(math.inf, 1.0, 0.0)]
    for t in sorted(set(scores), reverse=True):
        tp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 1)
        fp = sum(1 for s, y in zip(scores, labels) if s >= t and y == 0)
        out.append((t, tp / (tp + fp) if tp + fp else 1.0, tp / n_pos))
    return out


def brute_max_f1(curve):
    best = 0.0
    for _, p, r in curve:
        best = max(best, 2 * p * r / (p + r) if p + r else 0.0)
    return best


def brute_auc(curve):
    return math.fsum((curve[k + 1][2] - curve[k][2]) * (curve[k][1] + curve[k + 1][1]) / 2
                     for k in range(len(curve) - 1))


def test_hand_case():
    scores = [0.9, 0.8, 0.7, 0.1]
    labels = [1, 0, 1, 0]
    curve = pr_curve(scores, labels)
    assert curve == brute_curve(scores, labels)
    assert curve[1:] == [(0.9, 1.0, 0.5), (0.8, 0.5, 0.5), (0.7, 2 / 3, 1.0), (0.1, 0.5, 1.0)]
    assert max_f1(curve) == brute_max_f1(curve) == pytest.approx(0.8)
    assert auc(curve) == brute_auc(curve)


def test_perfect_separation():
    curve = pr_curve([0.9, 0.8, 0.3, 0.2], [1, 1, 0, 0])
    assert (0.8, 1.0, 1.0) in curve
    assert max_f1(curve) == 1.0
    assert f1(1.0, 1.0) == 1.0


def test_scores_equal_labels():
    labels = [1, 0, 0, 1, 1, 0]
    s = summarize([float(y) for y in labels], labels)
    assert s["auc"] == 1.0 and s["max_f1"] == 1.0 and s["threshold"] == 1.0


def test_one_class_rejected():
    with pytest.raises(ValueError):
        pr_curve([0.1, 0.2], [1, 1])
    with pytest.raises(ValueError):
        pr_curve([0.1, 0.2], [0, 0])


def test_random_scores_near_two_thirds():
    rng = np.random.default_rng(0)
    labels = np.r_[np.ones(5000), np.zeros(5000)].astype(int)
    scores = rng.uniform(size=10000)
    assert abs(max_f1(pr_curve(scores, labels)) - 2 / 3) < 0.1


def test_best_threshold_reaches_max():
    rng = np.random.default_rng(1)
    labels = rng.integers(0, 2, 200)
    labels[:2] = [0, 1]
    scores = np.clip(labels * 0.3 + rng.uniform(size=200) * 0.7, 0, 1)
    curve = pr_curve(scores, labels)
    t = best_threshold(curve)
    pred = scores >= t
    tp = int((pred & (labels == 1)).sum())
    fp = int((pred & (labels == 0)).sum())
    assert f1(tp / (tp + fp), tp / labels.sum()) == max_f1(curve)


# coarse score grids force ties
_scores = st.one_of(st.floats(0, 1, allow_nan=False), st.sampled_from([0.0, 0.25, 0.5, 0.75, 1.0]))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.tuples(_scores, st.integers(0, 1)), min_size=2, max_size=60)
       .filter(lambda xs: 0 < sum(y for _, y in xs) < len(xs)))
def test_matches_brute_force(data):
    scores = [s for s, _ in data]
    labels = [y for _, y in data]
    curve = pr_curve(scores, labels)
    ref = brute_curve(scores, labels)
    assert curve == ref
    assert max_f1(curve) == brute_max_f1(ref)
    assert auc(curve) == brute_auc(ref)
