"""Finite-difference gradient checks shared by the unit and acceptance suites.

Each ``check_*`` draws a random small shape from ``seed``, compares the
analytic gradient with central differences in float64 and returns the
worst norm-wise relative error over the arrays it checks.
"""

import numpy as np

from concordia.features.encoder import EncoderConfig, encoder_backward, encoder_forward, init_encoder
from concordia.features.ntxent import nt_xent_loss
from concordia.milreg import (
    RegressorConfig,
    attention_pool,
    init_regressor,
    regressor_backward,
    regressor_forward,
    rmse_grad,
    rmse_loss,
)
from concordia.nn import numerical_gradient, relative_error

N_SHAPES = 20
TOL = 1e-4


def check_ntxent(seed):
    rng = np.random.default_rng(seed)
    n, d = int(rng.integers(2, 6)), int(rng.integers(2, 9))
    tau = float(rng.uniform(0.1, 1.0))
    p = rng.standard_normal((2 * n, d))
    _, g = nt_xent_loss(p, tau)
    num = numerical_gradient(lambda: nt_xent_loss(p, tau)[0], p)
    return relative_error(g, num)


def check_encoder(seed):
    rng = np.random.default_rng(seed)
    depth = int(rng.integers(1, 3))
    cfg = EncoderConfig(
        channels=tuple(int(c) for c in rng.integers(2, 4, depth)),
        kernels=tuple(int(k) for k in rng.integers(2, 4, depth)),
        strides=tuple(int(s) for s in rng.integers(1, 3, depth)),
        paddings=tuple(int(p) for p in rng.integers(0, 2, depth)),
        proj_hidden=int(rng.integers(2, 5)), proj_dim=int(rng.integers(2, 4)),
        seed=int(seed), dtype="float64")
    params = init_encoder(cfg)
    for v in params.arrays.values():  # move biases off zero so no unit sits on a ReLU kink
        v += 0.1 * rng.standard_normal(v.shape)
    size = int(rng.integers(6, 10))
    x = rng.random((int(rng.integers(1, 3)), size, size, 3))
    r = None

    def loss():
        proj, _ = encoder_forward(params, x)
        return float(np.sum(proj * r))

    proj, cache = encoder_forward(params, x)
    r = rng.standard_normal(proj.shape)
    g = encoder_backward(params, cache, r)
    return max(relative_error(g[k], numerical_gradient(loss, params.arrays[k])) for k in params.arrays)


def check_attention(seed):
    rng = np.random.default_rng(seed)
    k, f, a = int(rng.integers(1, 7)), int(rng.integers(2, 6)), int(rng.integers(1, 4))
    arrays = {"att.V": rng.standard_normal((a, f)), "att.bV": rng.standard_normal(a),
              "att.U": rng.standard_normal((a, f)), "att.bU": rng.standard_normal(a),
              "att.w": rng.standard_normal(a)}
    h = rng.standard_normal((k, f))
    r = rng.standard_normal(f)

    def loss():
        return float(attention_pool(h, arrays)[0] @ r)

    # a regressor with no FC layers and out.w = r backpropagates exactly bag @ r
    cfg = RegressorConfig(input_dim=f, widths=(), attention_dim=a)
    params = init_regressor(cfg)
    params.arrays.update(arrays)
    params.arrays["out.w"] = r[:, None].copy()
    params.arrays["out.b"] = np.zeros(1)
    _, cache = regressor_forward(params, h)
    g = regressor_backward(params, cache, 1.0)
    errs = [relative_error(g[name], numerical_gradient(loss, arrays[name])) for name in arrays]
    return max(errs)


def check_fc_stack(seed, attention="gated", eps=1e-6):
    rng = np.random.default_rng(seed)
    d = int(rng.integers(2, 6))
    widths = tuple(int(w) for w in rng.integers(2, 6, int(rng.integers(1, 4))))
    cfg = RegressorConfig(input_dim=d, widths=widths, attention_dim=int(rng.integers(1, 3)),
                          attention=attention, n_outputs=int(rng.integers(1, 3)), seed=int(seed))
    params = init_regressor(cfg, rng.standard_normal(d), rng.uniform(0.5, 2.0, d))
    for v in params.arrays.values():
        v += 0.1 * rng.standard_normal(v.shape)
    x = rng.standard_normal((int(rng.integers(1, 6)), d))
    r = rng.standard_normal(cfg.n_outputs)

    def loss():
        y, _ = regressor_forward(params, x)
        return float(np.sum(np.atleast_1d(y) * r))

    _, cache = regressor_forward(params, x)
    g = regressor_backward(params, cache, r if cfg.n_outputs > 1 else r[0])
    return max(relative_error(g[k], numerical_gradient(loss, params.arrays[k], eps)) for k in params.arrays)


def check_rmse(seed):
    rng = np.random.default_rng(seed)
    n = int(rng.integers(1, 20))
    p = rng.random(n)
    y = rng.random(n)
    return relative_error(rmse_grad(p, y), numerical_gradient(lambda: rmse_loss(p, y), p))


CHECKS = {
    "nt_xent": check_ntxent,
    "encoder": check_encoder,
    "attention_pooling": check_attention,
    "fc_stack": check_fc_stack,
    "rmse_loss": check_rmse,
}


def worst_errors(n_shapes=N_SHAPES, base_seed=0):
    return {name: max(fn(base_seed + i) for i in range(n_shapes)) for name, fn in CHECKS.items()}
