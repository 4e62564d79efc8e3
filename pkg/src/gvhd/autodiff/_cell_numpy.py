"""Pure-numpy masked cell-lift kernels.

Every lab cell is lifted by one of two shared two-layer nets: the observed
branch reads ``(value, p)``, the missing branch reads ``p`` only. Only the
branch selected by the mask is evaluated for each cell.

Weights: ``w1o [2, H]``, ``b1o [H]``, ``w2o [H, E]``, ``b2o [E]`` and
``w1m [1, H]``, ``b1m [H]``, ``w2m [H, E]``, ``b2m [E]``.
"""

import numpy as np


def cell_lift_forward(v, p, observed, w1o, b1o, w2o, b2o, w1m, b1m, w2m, b2m):
    io = np.flatnonzero(observed)
    im = np.flatnonzero(~observed)
    out = np.empty((v.shape[0], w2o.shape[1]))
    ho = np.maximum(np.outer(v[io], w1o[0]) + np.outer(p[io], w1o[1]) + b1o, 0.0)
    out[io] = ho @ w2o + b2o
    hm = np.maximum(np.outer(p[im], w1m[0]) + b1m, 0.0)
    out[im] = hm @ w2m + b2m
    return out


def cell_lift_backward(g, v, p, observed, w1o, b1o, w2o, b2o, w1m, b1m, w2m, b2m):
    io = np.flatnonzero(observed)
    im = np.flatnonzero(~observed)
    dp = np.empty_like(p)

    vo, po, go = v[io], p[io], g[io]
    ao = np.outer(vo, w1o[0]) + np.outer(po, w1o[1]) + b1o
    ho = np.maximum(ao, 0.0)
    dw2o = ho.T @ go
    db2o = go.sum(axis=0)
    dao = (go @ w2o.T) * (ao > 0)
    dw1o = np.stack([vo @ dao, po @ dao])
    db1o = dao.sum(axis=0)
    dp[io] = dao @ w1o[1]

    pm, gm = p[im], g[im]
    am = np.outer(pm, w1m[0]) + b1m
    hm = np.maximum(am, 0.0)
    dw2m = hm.T @ gm
    db2m = gm.sum(axis=0)
    dam = (gm @ w2m.T) * (am > 0)
    dw1m = (pm @ dam)[None, :]
    db1m = dam.sum(axis=0)
    dp[im] = dam @ w1m[0]
    return dp, dw1o, db1o, dw2o, db2o, dw1m, db1m, dw2m, db2m
