"""Attention-pooling invariants on random bags, shared with the acceptance suite."""

import numpy as np

from concordia.milreg import RegressorConfig, attention_pool, init_regressor, regressor_forward


def random_model(rng, d=6, attention_dim=None):
    cfg = RegressorConfig(input_dim=d, widths=(8, 5), attention_dim=attention_dim or int(rng.integers(1, 4)),
                          seed=int(rng.integers(2**31)))
    params = init_regressor(cfg, rng.standard_normal(d), rng.uniform(0.5, 2.0, d))
    for v in params.arrays.values():
        v += 0.3 * rng.standard_normal(v.shape)
    return params


def invariant_errors(n_bags=100, seed=0):
    """Worst deviations over ``n_bags`` random bags.

    Keys: ``sum`` (|sum w - 1|), ``negative`` (most negative weight, as a
    positive number), ``permutation`` and ``duplication`` (max abs change of
    the bag vector and of the model output).
    """
    rng = np.random.default_rng(seed)
    worst = {"sum": 0.0, "negative": 0.0, "permutation": 0.0, "duplication": 0.0}
    for _ in range(n_bags):
        params = random_model(rng)
        k = int(rng.integers(1, 40))
        h = 2.0 * rng.standard_normal((k, 5))
        bag, w, _ = attention_pool(h, params)
        worst["sum"] = max(worst["sum"], abs(w.sum() - 1.0))
        worst["negative"] = max(worst["negative"], float(-min(w.min(), 0.0)))

        perm = rng.permutation(k)
        bag_p, w_p, _ = attention_pool(h[perm], params)
        worst["permutation"] = max(worst["permutation"], float(np.abs(bag_p - bag).max()),
                                   float(np.abs(w_p - w[perm]).max()))
        bag_d, _, _ = attention_pool(np.concatenate([h, h]), params)
        worst["duplication"] = max(worst["duplication"], float(np.abs(bag_d - bag).max()))

        x = rng.standard_normal((k, 6))
        y, _ = regressor_forward(params, x)
        yp, _ = regressor_forward(params, x[perm])
        yd, _ = regressor_forward(params, np.concatenate([x, x[::-1]]))
        worst["permutation"] = max(worst["permutation"], abs(yp - y))
        worst["duplication"] = max(worst["duplication"], abs(yd - y))
    return worst
