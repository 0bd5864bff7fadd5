"""Shapiro-Wilk W test, Royston's AS R94 approximation (complete samples)."""

import math

import numpy as np
from numpy.polynomial import polynomial as P
from scipy.special import ndtr, ndtri

# polynomial coefficients, lowest order first
C1 = (0.0, 0.221157, -0.147981, -2.07119, 4.434685, -2.706056)
C2 = (0.0, 0.042981, -0.293762, -1.752461, 5.682633, -3.582633)
C3 = (0.544, -0.39978, 0.025054, -6.714e-4)
C4 = (1.3822, -0.77857, 0.062767, -0.0020322)
C5 = (-1.5861, -0.31082, -0.083751, 0.0038915)
C6 = (-0.4803, -0.082676, 0.0030302)
G = (-2.273, 0.459)
SMALL = 1e-19


def _coefficients(n):
    """Antisymmetric weights a_1..a_{n//2} for the lower half of the order statistics."""
    nn2 = n // 2
    if n == 3:
        return np.array([math.sqrt(0.5)])
    m = ndtri((np.arange(1, nn2 + 1) - 0.375) / (n + 0.25))
    summ2 = 2.0 * np.sum(m ** 2)
    ssumm2 = math.sqrt(summ2)
    rsn = 1.0 / math.sqrt(n)
    a = -m.copy()
    a1 = P.polyval(rsn, C1) - m[0] / ssumm2
    if n > 5:
        a2 = -m[1] / ssumm2 + P.polyval(rsn, C2)
        fac = math.sqrt((summ2 - 2 * m[0] ** 2 - 2 * m[1] ** 2) / (1 - 2 * a1 ** 2 - 2 * a2 ** 2))
        a /= fac
        a[1] = a2
    else:
        fac = math.sqrt((summ2 - 2 * m[0] ** 2) / (1 - 2 * a1 ** 2))
        a /= fac
    a[0] = a1
    return a


def shapiro_wilk(samples):
    """Return ``(W, p)`` for 3 <= n <= 5000."""
    x = np.sort(np.asarray(samples, dtype=np.float64).ravel())
    n = x.size
    if n < 3 or n > 5000:
        raise ValueError("Shapiro-Wilk needs 3 <= n <= 5000")
    rng = x[-1] - x[0]
    if rng < SMALL:
        raise ValueError("all samples are equal")
    half = _coefficients(n)
    coef = np.zeros(n)
    coef[: n // 2] = -half
    coef[n - n // 2 :] = half[::-1]
    xs = x / rng
    xc = xs - xs.mean()
    ac = coef - coef.mean()
    ssa = np.sum(ac ** 2)
    ssx = np.sum(xc ** 2)
    sax = np.sum(ac * xc)
    ssassx = math.sqrt(ssa * ssx)
    w1 = (ssassx - sax) * (ssassx + sax) / (ssa * ssx)
    w = 1.0 - w1

    if n == 3:
        pw = 6.0 / math.pi * (math.asin(math.sqrt(w)) - math.pi / 3.0)
        return w, max(pw, 0.0)
    y = math.log(w1)
    xx = math.log(n)
    if n <= 11:
        gamma = P.polyval(n, G)
        if y >= gamma:
            return w, 1e-99
        y = -math.log(gamma - y)
        m = P.polyval(n, C3)
        s = math.exp(P.polyval(n, C4))
    else:
        m = P.polyval(xx, C5)
        s = math.exp(P.polyval(xx, C6))
    return w, float(ndtr(-(y - m) / s))
