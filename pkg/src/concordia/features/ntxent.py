import numpy as np


def nt_xent_loss(projections, tau=0.1):
    """Normalized temperature-scaled cross-entropy over 2N views.

    Rows ``i`` and ``i + N`` are positives.  Each view is classified against
    the other 2N - 1 views (itself excluded); the loss is the mean over all
    2N views.  Returns ``(loss, dL/dprojections)`` with the gradient taken
    w.r.t. the unnormalized rows.
    """
    p = np.asarray(projections, dtype=np.float64)
    if tau <= 0:
        raise ValueError("tau must be > 0")
    m = p.shape[0]
    if p.ndim != 2 or m % 2 or m < 4:
        raise ValueError("need a 2N x d matrix with N >= 2")
    n = m // 2
    norms = np.linalg.norm(p, axis=1)
    if (norms == 0).any():
        raise ValueError("zero-norm projection row")
    z = p / norms[:, None]
    logits = (z @ z.T) / tau
    np.fill_diagonal(logits, -np.inf)
    pos = np.concatenate([np.arange(n, m), np.arange(n)])
    mx = logits.max(axis=1, keepdims=True)
    e = np.exp(logits - mx)
    denom = e.sum(axis=1, keepdims=True)
    log_z = np.log(denom[:, 0]) + mx[:, 0]
    rows = np.arange(m)
    loss = float(np.mean(log_z - logits[rows, pos]))

    soft = e / denom
    soft[rows, pos] -= 1.0
    soft /= m
    dz = (soft + soft.T) @ z / tau
    dp = (dz - z * np.sum(z * dz, axis=1, keepdims=True)) / norms[:, None]
    return loss, dp
