"""QC oracles shared with the acceptance suite."""

from fractions import Fraction

import numpy as np

from concordia.qc import DEFAULT_BLUR_THRESHOLD, DEFAULT_INK_THRESHOLD, calibrate_thresholds


def otsu_oracle(hist):
    """Exhaustive scan with exact rational arithmetic; lowest t wins ties."""
    n = sum(hist)
    s = sum(i * v for i, v in enumerate(hist))
    best_t, best_v = None, None
    n0 = s0 = 0
    for t in range(256):
        n0 += hist[t]
        s0 += t * hist[t]
        n1 = n - n0
        if n0 == 0 or n1 == 0:
            continue
        mu0, mu1 = Fraction(s0, n0), Fraction(s - s0, n1)
        v = Fraction(n0 * n1, n * n) * (mu0 - mu1) ** 2
        if best_v is None or v > best_v:
            best_t, best_v = t, v
    return best_t


def random_histogram(rng, i):
    kind = i % 4
    if kind == 0:
        h = rng.integers(0, 50, 256)
    elif kind == 1:  # sparse spikes provoke plateaus and ties
        h = np.zeros(256, np.int64)
        h[rng.choice(256, rng.integers(2, 6), replace=False)] = rng.integers(1, 4)
    elif kind == 2:  # bimodal
        x = np.concatenate([rng.normal(rng.uniform(30, 120), 15, 400), rng.normal(rng.uniform(140, 230), 15, 400)])
        h = np.bincount(np.clip(x, 0, 255).astype(int), minlength=256)
    else:  # narrow support of symmetric counts
        h = np.zeros(256, np.int64)
        lo = rng.integers(0, 250)
        h[lo : lo + 5] = rng.integers(0, 3, 5)
        h[lo] += 1
        h[lo + 4] += 1
    h = np.asarray(h, np.int64)
    if np.count_nonzero(h) < 2:
        h[0] += 1
        h[255] += 1
    return h


def otsu_mismatches(n=1000, seed=11):
    from concordia.qc import otsu_threshold

    rng = np.random.default_rng(seed)
    bad = []
    for i in range(n):
        h = random_histogram(rng, i)
        if otsu_threshold(h) != otsu_oracle([int(v) for v in h]):
            bad.append(i)
    return bad


def qc_efficacy(n_slides=40, seed=2024):
    """(fraction of flagged tiles rejected, fraction of clean tiles rejected, n flagged, n clean)."""
    scores = calibrate_thresholds(n_slides=n_slides, seed=seed)
    blur_c, ink_c = scores["clean"]
    clean_rej = ((ink_c > DEFAULT_INK_THRESHOLD) | (blur_c < DEFAULT_BLUR_THRESHOLD)).mean()
    bad = []
    for kind in ("ink", "blur"):
        b, f = scores[kind]
        bad.append((f > DEFAULT_INK_THRESHOLD) | (b < DEFAULT_BLUR_THRESHOLD))
    bad = np.concatenate(bad)
    return float(bad.mean()), float(clean_rej), int(bad.size), int(blur_c.size)
