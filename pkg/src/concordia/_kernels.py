"""Hot numeric kernels with a numba path and a pure-numpy fallback.

The numba path is used when numba imports cleanly and ``CONCORDIA_NUMBA`` is
not set to ``0``.  Both paths are always importable as ``*_numpy`` /
``*_numba`` so tests and the benchmark can compare them directly.
``CONCORDIA_THREADS`` caps numba's worker pool.
"""

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAS_NUMBA = False

USE_NUMBA = HAS_NUMBA and os.environ.get("CONCORDIA_NUMBA", "1") != "0"

if HAS_NUMBA and os.environ.get("CONCORDIA_THREADS"):
    numba.set_num_threads(max(1, min(int(os.environ["CONCORDIA_THREADS"]), numba.config.NUMBA_NUM_THREADS)))

LUMA = (0.299, 0.587, 0.114)


def _njit(fn):
    if not HAS_NUMBA:
        return fn
    return numba.njit(cache=True, nogil=True)(fn)


# --------------------------------------------------------------------------
# Otsu between-class variance scan
# --------------------------------------------------------------------------

def otsu_scores_numpy(hist):
    """Scaled between-class variance N^2 * sigma_b^2(t) for every t in 0..255.

    Class 0 holds intensities <= t.  Empty classes score 0.
    """
    h = np.asarray(hist, dtype=np.float64)
    levels = np.arange(h.size, dtype=np.float64)
    n0 = np.cumsum(h)
    s0 = np.cumsum(h * levels)
    n = n0[-1]
    s = s0[-1]
    n1 = n - n0
    num = (n * s0 - s * n0) ** 2
    den = n0 * n1
    out = np.zeros_like(h)
    ok = den > 0
    out[ok] = num[ok] / den[ok]
    return out


@_njit
def otsu_scores_numba(hist):
    m = hist.shape[0]
    out = np.zeros(m, dtype=np.float64)
    n = 0.0
    s = 0.0
    for i in range(m):
        n += hist[i]
        s += hist[i] * i
    n0 = 0.0
    s0 = 0.0
    for t in range(m):
        n0 += hist[t]
        s0 += hist[t] * t
        n1 = n - n0
        den = n0 * n1
        if den > 0:
            d = n * s0 - s * n0
            out[t] = d * d / den
    return out


# --------------------------------------------------------------------------
# Grayscale / Laplacian variance
# --------------------------------------------------------------------------

def luma_numpy(rgb):
    rgb = np.asarray(rgb, dtype=np.float64)
    return rgb[..., 0] * LUMA[0] + rgb[..., 1] * LUMA[1] + rgb[..., 2] * LUMA[2]


def laplacian_variance_numpy(gray):
    """Population variance of the interior 4-neighbour Laplacian, per image.

    ``gray`` is (B, H, W); returns (B,).
    """
    g = np.asarray(gray, dtype=np.float64)
    resp = (g[:, :-2, 1:-1] + g[:, 2:, 1:-1] + g[:, 1:-1, :-2] + g[:, 1:-1, 2:]
            - 4.0 * g[:, 1:-1, 1:-1])
    return resp.reshape(resp.shape[0], -1).var(axis=1)


@_njit
def laplacian_variance_numba(gray):
    b, h, w = gray.shape
    out = np.empty(b, dtype=np.float64)
    cnt = (h - 2) * (w - 2)
    for k in range(b):
        # two-pass for numerical agreement with the numpy path
        tot = 0.0
        for i in range(1, h - 1):
            for j in range(1, w - 1):
                tot += (gray[k, i - 1, j] + gray[k, i + 1, j] + gray[k, i, j - 1]
                        + gray[k, i, j + 1] - 4.0 * gray[k, i, j])
        mean = tot / cnt
        acc = 0.0
        for i in range(1, h - 1):
            for j in range(1, w - 1):
                r = (gray[k, i - 1, j] + gray[k, i + 1, j] + gray[k, i, j - 1]
                     + gray[k, i, j + 1] - 4.0 * gray[k, i, j]) - mean
                acc += r * r
        out[k] = acc / cnt
    return out


# --------------------------------------------------------------------------
# Ink gamut
# --------------------------------------------------------------------------

# Blue/black pen strokes.  Hue in degrees, saturation/value in [0, 1].
INK_HUE_LO = 200.0
INK_HUE_HI = 265.0
INK_MIN_SAT = 0.40
INK_MAX_VAL = 0.75
INK_BLACK_VAL = 0.25


def ink_mask_numpy(rgb):
    """Boolean mask of pixels inside the ink gamut; ``rgb`` is uint8 (..., 3)."""
    x = np.asarray(rgb, dtype=np.float64) / 255.0
    mx = x.max(axis=-1)
    mn = x.min(axis=-1)
    c = mx - mn
    sat = np.where(mx > 0, c / np.where(mx > 0, mx, 1.0), 0.0)
    r, g, b = x[..., 0], x[..., 1], x[..., 2]
    safe = np.where(c > 0, c, 1.0)
    hue = np.where(mx == r, ((g - b) / safe) % 6.0,
                   np.where(mx == g, (b - r) / safe + 2.0, (r - g) / safe + 4.0)) * 60.0
    hue = np.where(c > 0, hue, 0.0)
    blue = (c > 0) & (hue >= INK_HUE_LO) & (hue <= INK_HUE_HI) & (sat >= INK_MIN_SAT) & (mx <= INK_MAX_VAL)
    return blue | (mx <= INK_BLACK_VAL)


def ink_fraction_numpy(rgb):
    """Per-image ink fraction for a (B, H, W, 3) uint8 batch."""
    m = ink_mask_numpy(rgb)
    return m.reshape(m.shape[0], -1).mean(axis=1)


@_njit
def ink_fraction_numba(rgb):
    b, h, w, _ = rgb.shape
    out = np.empty(b, dtype=np.float64)
    for k in range(b):
        cnt = 0
        for i in range(h):
            for j in range(w):
                r = rgb[k, i, j, 0] / 255.0
                g = rgb[k, i, j, 1] / 255.0
                bl = rgb[k, i, j, 2] / 255.0
                mx = max(r, g, bl)
                mn = min(r, g, bl)
                c = mx - mn
                if mx <= INK_BLACK_VAL:
                    cnt += 1
                    continue
                if c <= 0 or mx > INK_MAX_VAL or c / mx < INK_MIN_SAT:
                    continue
                if mx == r:
                    hue = ((g - bl) / c) % 6.0
                elif mx == g:
                    hue = (bl - r) / c + 2.0
                else:
                    hue = (r - g) / c + 4.0
                hue *= 60.0
                if hue >= INK_HUE_LO and hue <= INK_HUE_HI:
                    cnt += 1
        out[k] = cnt / (h * w)
    return out


# --------------------------------------------------------------------------
# im2col / col2im for NHWC convolution
# --------------------------------------------------------------------------

def conv_out_size(n, k, s, p):
    return (n + 2 * p - k) // s + 1


def im2col_numpy(x, k, s, p):
    """(B, H, W, C) -> (B, Ho, Wo, C*k*k) with (C, ki, kj) column order."""
    if p:
        x = np.pad(x, ((0, 0), (p, p), (p, p), (0, 0)))
    b, hp, wp, c = x.shape
    ho = (hp - k) // s + 1
    wo = (wp - k) // s + 1
    win = np.lib.stride_tricks.sliding_window_view(x, (k, k), axis=(1, 2))
    win = win[:, : (ho - 1) * s + 1 : s, : (wo - 1) * s + 1 : s]
    return np.ascontiguousarray(win).reshape(b, ho, wo, c * k * k)


def col2im_numpy(cols, x_shape, k, s, p):
    """Adjoint of :func:`im2col_numpy`: scatter-add columns back to (B, H, W, C)."""
    b, h, w, c = x_shape
    ho, wo = cols.shape[1], cols.shape[2]
    d = cols.reshape(b, ho, wo, c, k, k)
    out = np.zeros((b, h + 2 * p, w + 2 * p, c), dtype=cols.dtype)
    for ki in range(k):
        for kj in range(k):
            out[:, ki : ki + (ho - 1) * s + 1 : s, kj : kj + (wo - 1) * s + 1 : s, :] += d[:, :, :, :, ki, kj]
    if p:
        out = out[:, p:-p, p:-p, :]
    return out


@_njit
def _im2col_numba(x, k, s, p, out):
    b, h, w, c = x.shape
    ho = out.shape[1]
    wo = out.shape[2]
    for n in range(b):
        for i in range(ho):
            for j in range(wo):
                col = 0
                for ch in range(c):
                    for ki in range(k):
                        y = i * s + ki - p
                        for kj in range(k):
                            xx = j * s + kj - p
                            if 0 <= y < h and 0 <= xx < w:
                                out[n, i, j, col] = x[n, y, xx, ch]
                            else:
                                out[n, i, j, col] = 0.0
                            col += 1


@_njit
def _col2im_numba(cols, k, s, p, out):
    b, h, w, c = out.shape
    ho = cols.shape[1]
    wo = cols.shape[2]
    # ki/kj-major accumulation order matches the numpy path bit for bit
    for ki in range(k):
        for kj in range(k):
            for n in range(b):
                for i in range(ho):
                    y = i * s + ki - p
                    if y < 0 or y >= h:
                        continue
                    for j in range(wo):
                        xx = j * s + kj - p
                        if xx < 0 or xx >= w:
                            continue
                        for ch in range(c):
                            out[n, y, xx, ch] += cols[n, i, j, (ch * k + ki) * k + kj]


def im2col_numba(x, k, s, p):
    b, h, w, c = x.shape
    ho = conv_out_size(h, k, s, p)
    wo = conv_out_size(w, k, s, p)
    out = np.empty((b, ho, wo, c * k * k), dtype=x.dtype)
    _im2col_numba(np.ascontiguousarray(x), k, s, p, out)
    return out


def col2im_numba(cols, x_shape, k, s, p):
    out = np.zeros(x_shape, dtype=cols.dtype)
    _col2im_numba(np.ascontiguousarray(cols), k, s, p, out)
    return out


# --------------------------------------------------------------------------
# HSV hue rotation (augmentation)
# --------------------------------------------------------------------------

def hue_shift_numpy(x, shifts):
    """Rotate hue of each image in (B, H, W, 3) float [0, 1] by ``shifts`` turns."""
    from .color import hsv_to_rgb, rgb_to_hsv

    hsv = rgb_to_hsv(x)
    hsv[..., 0] = (hsv[..., 0] + np.asarray(shifts)[:, None, None]) % 1.0
    return hsv_to_rgb(hsv).astype(x.dtype, copy=False)


@_njit
def _hue_shift_numba(x, shifts, out):
    b, h, w, _ = x.shape
    for k in range(b):
        sh = shifts[k]
        for i in range(h):
            for j in range(w):
                r = x[k, i, j, 0]
                g = x[k, i, j, 1]
                bl = x[k, i, j, 2]
                mx = max(r, g, bl)
                mn = min(r, g, bl)
                c = mx - mn
                if c <= 0:
                    out[k, i, j, 0] = r
                    out[k, i, j, 1] = g
                    out[k, i, j, 2] = bl
                    continue
                if mx == r:
                    hh = ((g - bl) / c) % 6.0
                elif mx == g:
                    hh = (bl - r) / c + 2.0
                else:
                    hh = (r - g) / c + 4.0
                hh = ((hh / 6.0 + sh) % 1.0) * 6.0
                s = c / mx
                v = mx
                sec = int(np.floor(hh)) % 6
                f = hh - np.floor(hh)
                p = v * (1.0 - s)
                q = v * (1.0 - s * f)
                t = v * (1.0 - s * (1.0 - f))
                if sec == 0:
                    rr, gg, bb = v, t, p
                elif sec == 1:
                    rr, gg, bb = q, v, p
                elif sec == 2:
                    rr, gg, bb = p, v, t
                elif sec == 3:
                    rr, gg, bb = p, q, v
                elif sec == 4:
                    rr, gg, bb = t, p, v
                else:
                    rr, gg, bb = v, p, q
                out[k, i, j, 0] = rr
                out[k, i, j, 1] = gg
                out[k, i, j, 2] = bb


def hue_shift_numba(x, shifts):
    out = np.empty_like(x)
    _hue_shift_numba(np.ascontiguousarray(x), np.asarray(shifts, dtype=np.float64), out)
    return out


# --------------------------------------------------------------------------
# dispatch
# --------------------------------------------------------------------------

if USE_NUMBA:
    otsu_scores = otsu_scores_numba
    laplacian_variance_batch = laplacian_variance_numba
    ink_fraction_batch = ink_fraction_numba
    im2col = im2col_numba
    col2im = col2im_numba
    hue_shift = hue_shift_numba
else:
    otsu_scores = otsu_scores_numpy
    laplacian_variance_batch = laplacian_variance_numpy
    ink_fraction_batch = ink_fraction_numpy
    im2col = im2col_numpy
    col2im = col2im_numpy
    hue_shift = hue_shift_numpy


def backend():
    return "numba" if USE_NUMBA else "numpy"
