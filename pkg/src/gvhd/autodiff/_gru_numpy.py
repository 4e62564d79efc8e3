"""Pure-numpy GRU recurrence kernels (forward and backprop-through-time).

Gate layout along the last axis of ``xw`` and ``u`` is ``[update | reset | candidate]``.
``xw`` already holds ``x_t W + b`` for every step.
"""

import numpy as np
from scipy.special import expit


def gru_forward(xw, u, h0):
    B, T, h3 = xw.shape
    h = h3 // 3
    uz, ur, uh = u[:, :h], u[:, h:2 * h], u[:, 2 * h:]
    hs = np.empty((B, T + 1, h))
    zs = np.empty((B, T, h))
    rs = np.empty((B, T, h))
    cs = np.empty((B, T, h))
    hs[:, 0] = h0
    hp = h0
    for t in range(T):
        xt = xw[:, t]
        z = expit(xt[:, :h] + hp @ uz)
        r = expit(xt[:, h:2 * h] + hp @ ur)
        c = np.tanh(xt[:, 2 * h:] + (r * hp) @ uh)
        hp = hp + z * (c - hp)
        hs[:, t + 1] = hp
        zs[:, t] = z
        rs[:, t] = r
        cs[:, t] = c
    return hs, zs, rs, cs


def gru_backward(dh_last, u, hs, zs, rs, cs):
    B, T, h = zs.shape
    uz, ur, uh = u[:, :h], u[:, h:2 * h], u[:, 2 * h:]
    dxw = np.empty((B, T, 3 * h))
    du = np.zeros_like(u)
    dh = dh_last.copy()
    for t in range(T - 1, -1, -1):
        hp = hs[:, t]
        z, r, c = zs[:, t], rs[:, t], cs[:, t]
        dc = dh * z
        dz = dh * (c - hp)
        dh_prev = dh * (1.0 - z)
        dah = dc * (1.0 - c * c)
        rh = r * hp
        du[:, 2 * h:] += rh.T @ dah
        drh = dah @ uh.T
        dr = drh * hp
        dh_prev += drh * r
        daz = dz * z * (1.0 - z)
        dar = dr * r * (1.0 - r)
        du[:, :h] += hp.T @ daz
        du[:, h:2 * h] += hp.T @ dar
        dh_prev += daz @ uz.T + dar @ ur.T
        dxw[:, t, :h] = daz
        dxw[:, t, h:2 * h] = dar
        dxw[:, t, 2 * h:] = dah
        dh = dh_prev
    return dxw, du, dh
