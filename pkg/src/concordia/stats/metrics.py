"""Regression and binary-classification metrics."""

import numpy as np
from scipy.special import ndtr


class UndefinedMetric(ValueError):
    """Raised when a metric has no value on the given sample (e.g. one class)."""


def _pair(a, b):
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    if a.size != b.size:
        raise ValueError("length mismatch")
    return a, b


def standardized_residuals(preds, labels):
    """(pred - label) / sigma with sigma the n-1 standard deviation of the raw residuals.

    Residuals are not mean-centred.
    """
    p, y = _pair(preds, labels)
    if p.size < 2:
        raise ValueError("need at least two points")
    r = p - y
    sigma = r.std(ddof=1)
    if sigma == 0:
        raise UndefinedMetric("constant residuals")
    return r / sigma


def pp_points(e):
    """Sorted (empirical CDF, normal CDF) pairs, plotting positions (i - 0.5)/n."""
    e = np.sort(np.asarray(e, dtype=np.float64).ravel())
    n = e.size
    if n == 0:
        raise ValueError("need at least one residual")
    emp = (np.arange(1, n + 1) - 0.5) / n
    return np.column_stack([emp, ndtr(e)])


def r_squared(preds, labels):
    p, y = _pair(preds, labels)
    if p.size < 2:
        raise ValueError("need at least two points")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise UndefinedMetric("constant labels")
    return float(1.0 - np.sum((p - y) ** 2) / ss_tot)


def rmse(preds, labels):
    p, y = _pair(preds, labels)
    if p.size == 0:
        raise ValueError("empty input")
    return float(np.sqrt(np.mean((p - y) ** 2)))


def _binary(scores, labels):
    s, y = _pair(scores, labels)
    y = y.astype(bool)
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == y.size:
        raise UndefinedMetric("both classes must be present")
    return s, y, n_pos, y.size - n_pos


def _sweep(s, y):
    """Cumulative (tp, fp) after each distinct score, scanning high to low."""
    order = np.argsort(-s, kind="mergesort")
    s, y = s[order], y[order]
    last = np.r_[np.flatnonzero(np.diff(s) != 0), s.size - 1]
    tp = np.cumsum(y)[last]
    fp = np.cumsum(~y)[last]
    return s[last], tp.astype(np.int64), fp.astype(np.int64)


def roc_auc(scores, labels):
    """ROC curve over distinct-score thresholds and its trapezoidal area.

    Tied scores form one threshold step, which is the half-credit rank
    statistic.  The area is accumulated in integers and divided once.
    Returns ``(points, auc)``; points are (fpr, tpr) from (0, 0) to (1, 1).
    """
    s, y, n_pos, n_neg = _binary(scores, labels)
    _, tp, fp = _sweep(s, y)
    tp0 = np.r_[0, tp[:-1]]
    dfp = np.diff(np.r_[0, fp])
    area2 = int(np.sum(dfp * (tp0 + tp)))  # twice the trapezoid sum in count units
    auc = area2 / (2 * n_pos * n_neg)
    pts = np.column_stack([np.r_[0, fp] / n_neg, np.r_[0, tp] / n_pos])
    return pts, auc


def pr_curve(scores, labels):
    """Precision-recall points over the descending sweep and step-interpolated AP."""
    s, y, n_pos, _ = _binary(scores, labels)
    _, tp, fp = _sweep(s, y)
    precision = tp / (tp + fp)
    recall = tp / n_pos
    ap = float(np.sum(np.diff(np.r_[0.0, recall]) * precision))
    return np.column_stack([recall, precision]), ap


def confusion(scores, labels, threshold):
    s, y = _pair(scores, labels)
    y = y.astype(bool)
    pred = s >= threshold
    return (int(np.sum(pred & y)), int(np.sum(pred & ~y)), int(np.sum(~pred & ~y)), int(np.sum(~pred & y)))


def precision_at(scores, labels, threshold):
    tp, fp, _, _ = confusion(scores, labels, threshold)
    if tp + fp == 0:
        raise UndefinedMetric("no predicted positives")
    return tp / (tp + fp)


def recall_at(scores, labels, threshold):
    tp, _, _, fn = confusion(scores, labels, threshold)
    if tp + fn == 0:
        raise UndefinedMetric("no positives")
    return tp / (tp + fn)


def specificity_at(scores, labels, threshold):
    _, fp, tn, _ = confusion(scores, labels, threshold)
    if tn + fp == 0:
        raise UndefinedMetric("no negatives")
    return tn / (tn + fp)


def pr_metrics(scores, labels, threshold):
    """Point metrics at ``score >= threshold`` plus the PR curve and AP.

    Precision is NaN (flagged in ``precision_defined``) when nothing is
    predicted positive.
    """
    _binary(scores, labels)
    curve, ap = pr_curve(scores, labels)
    try:
        prec = precision_at(scores, labels, threshold)
        defined = True
    except UndefinedMetric:
        prec, defined = float("nan"), False
    return {
        "precision": prec,
        "precision_defined": defined,
        "recall": recall_at(scores, labels, threshold),
        "specificity": specificity_at(scores, labels, threshold),
        "pr_curve": curve,
        "average_precision": ap,
    }


def default_threshold_grid(labels=()):
    grid = {round(0.05 * i, 2) for i in range(1, 20)}
    grid.update(float(v) for v in np.asarray(labels, dtype=np.float64).ravel())
    return sorted(grid)


def grid_search_gt_threshold(concordance_labels, predictions, grid=None):
    """Binarize ground truth as label > t for each candidate t and keep the AUC argmax.

    Candidates leaving a class empty are skipped; ties go to the smallest t.
    Returns ``(best_t, table)`` where table maps t -> (auc, ap).
    """
    y = np.asarray(concordance_labels, dtype=np.float64)
    p = np.asarray(predictions, dtype=np.float64)
    grid = default_threshold_grid(y) if grid is None else list(grid)
    if not grid:
        raise ValueError("empty threshold grid")
    table = {}
    for t in sorted(set(float(v) for v in grid)):
        yb = y > t
        if yb.all() or not yb.any():
            continue
        table[t] = (roc_auc(p, yb)[1], pr_curve(p, yb)[1])
    if not table:
        raise ValueError("no valid threshold candidate")
    best = max(table, key=lambda t: (table[t][0], -t))
    return best, table
