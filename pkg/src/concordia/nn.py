"""Small manual-backprop building blocks shared by the encoder and the MIL head."""

import numpy as np

from . import _kernels as K


def relu(x):
    return np.maximum(x, 0)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def he_normal(rng, fan_in, shape, dtype=np.float64):
    return (rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)).astype(dtype)


def conv_forward(x, w, b, k, s, p):
    """NHWC convolution via im2col.  ``w`` is (C*k*k, F)."""
    cols = K.im2col(x, k, s, p)
    bsz, ho, wo, ck = cols.shape
    out = (cols.reshape(-1, ck) @ w + b).reshape(bsz, ho, wo, w.shape[1])
    return out, cols


def conv_backward(dout, cols, x_shape, w, k, s, p, need_dx=True):
    f = w.shape[1]
    d2 = dout.reshape(-1, f)
    c2 = cols.reshape(-1, cols.shape[-1])
    dw = c2.T @ d2
    db = d2.sum(axis=0)
    dx = None
    if need_dx:
        dcols = (d2 @ w.T).reshape(cols.shape)
        dx = K.col2im(dcols, x_shape, k, s, p)
    return dx, dw, db


class SGD:
    """Plain SGD with heavy-ball momentum over a dict of arrays."""

    def __init__(self, params, lr, momentum=0.9, weight_decay=0.0):
        self.lr = lr
        self.momentum = momentum
        self.weight_decay = weight_decay
        self.velocity = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, params, grads):
        if self.lr == 0:
            return
        for k, g in grads.items():
            if self.weight_decay:
                g = g + self.weight_decay * params[k]
            v = self.velocity[k]
            v *= self.momentum
            v += g
            params[k] -= (self.lr * v).astype(params[k].dtype)


def relative_error(a, b):
    """Norm-wise relative difference, the measure used for gradient checks."""
    a = np.ravel(np.asarray(a, dtype=np.float64))
    b = np.ravel(np.asarray(b, dtype=np.float64))
    den = max(np.linalg.norm(a), np.linalg.norm(b))
    if den == 0:
        return 0.0
    return float(np.linalg.norm(a - b) / den)


def numerical_gradient(f, x, eps=1e-6):
    """Central finite differences of scalar ``f()`` w.r.t. array ``x`` (modified in place)."""
    g = np.zeros_like(x, dtype=np.float64)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = x[idx]
        x[idx] = old + eps
        fp = f()
        x[idx] = old - eps
        fm = f()
        x[idx] = old
        g[idx] = (fp - fm) / (2 * eps)
    return g
