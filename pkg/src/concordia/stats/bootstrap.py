from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .metrics import UndefinedMetric


@dataclass
class ConfidenceInterval:
    low: float
    high: float
    confidence: float = 0.90
    n_resamples: int = 2000
    n_redrawn: int = 0


def _value(metric, idx):
    try:
        v = float(metric(idx))
    except (UndefinedMetric, ZeroDivisionError, FloatingPointError):
        return None
    return None if math.isnan(v) else v


def bootstrap_values(metric, n, n_resamples=2000, seed=0):
    """Metric values over ``n_resamples`` index resamples drawn with replacement.

    ``metric`` takes an index array and returns a float; resamples where it
    raises :class:`UndefinedMetric` or returns NaN are redrawn.  Returns
    ``(values, n_redrawn)``.
    """
    if n < 1 or n_resamples < 1:
        raise ValueError("need n >= 1 and n_resamples >= 1")
    rng = np.random.default_rng(seed)
    draws = rng.integers(0, n, size=(n_resamples, n))
    values = np.empty(n_resamples)
    redrawn = 0
    for i in range(n_resamples):
        v = _value(metric, draws[i])
        while v is None:
            redrawn += 1
            if redrawn > n_resamples:
                raise UndefinedMetric("metric undefined on more than half of the resamples")
            v = _value(metric, rng.integers(0, n, size=n))
        values[i] = v
    return values, redrawn


def bootstrap_ci(metric, n, n_resamples=2000, confidence=0.90, seed=0):
    """Percentile bootstrap interval; endpoints are order statistics of the resampled values."""
    if not 0.0 < confidence < 1.0:
        raise ValueError("confidence must lie in (0, 1)")
    values, redrawn = bootstrap_values(metric, n, n_resamples, seed)
    lo = float(np.quantile(values, (1.0 - confidence) / 2.0, method="inverted_cdf"))
    hi = float(np.quantile(values, (1.0 + confidence) / 2.0, method="inverted_cdf"))
    return ConfidenceInterval(lo, hi, confidence, n_resamples, redrawn)
