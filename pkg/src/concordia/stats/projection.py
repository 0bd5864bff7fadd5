import numpy as np


def pca_2d(x):
    """Top-two principal-component scores with a deterministic sign convention."""
    x = np.asarray(x, dtype=np.float64)
    xc = x - x.mean(axis=0)
    if x.shape[0] < 2:
        return np.zeros((x.shape[0], 2))
    _, _, vt = np.linalg.svd(xc, full_matrices=False)
    comps = np.zeros((2, x.shape[1]))
    comps[: min(2, vt.shape[0])] = vt[:2]
    for c in comps:
        j = np.argmax(np.abs(c))
        if c[j] < 0:
            c *= -1
    return xc @ comps.T


def unit_square(xy):
    lo = xy.min(axis=0)
    span = xy.max(axis=0) - lo
    out = np.full_like(xy, 0.5)
    ok = span > 0
    out[:, ok] = (xy[:, ok] - lo[ok]) / span[ok]
    return out


def projection_grid(embeddings, grid_w, grid_h):
    """Assign each embedding row a distinct (gx, gy) cell of a grid_w x grid_h plane.

    Rows are projected with PCA, scaled to the unit square, then matched to
    cell centres greedily: all (point, cell) pairs are taken in order of
    increasing squared distance and accepted when both are still free.
    """
    x = np.asarray(embeddings, dtype=np.float64)
    n = x.shape[0]
    if n > grid_w * grid_h:
        raise ValueError("more points than grid cells")
    if n == 0:
        return np.zeros((0, 2), dtype=np.int64)
    pts = unit_square(pca_2d(x)) if n > 1 else np.full((1, 2), 0.5)
    gx, gy = np.meshgrid(np.arange(grid_w), np.arange(grid_h))
    cells = np.column_stack([gx.ravel(), gy.ravel()])
    centres = (cells + 0.5) / np.array([grid_w, grid_h])
    d2 = ((pts[:, None, :] - centres[None, :, :]) ** 2).sum(axis=-1)
    order = np.argsort(d2, axis=None, kind="stable")
    point_done = np.zeros(n, bool)
    cell_used = np.zeros(len(cells), bool)
    out = np.zeros((n, 2), dtype=np.int64)
    left = n
    for flat in order:
        i, c = divmod(int(flat), len(cells))
        if point_done[i] or cell_used[c]:
            continue
        point_done[i] = cell_used[c] = True
        out[i] = cells[c]
        left -= 1
        if not left:
            break
    return out
