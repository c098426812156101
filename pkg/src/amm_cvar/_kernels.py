"""numba kernels for the per-event replay loop and the LP unwind.

The swap arithmetic is written with the same operation order as
:mod:`amm_cvar.pool_engine`, which serves as the reference these kernels are
tested against.
"""

from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _replay_path(rx, ry, phi, start, end, types, x_to_y, normals, noff,
                 sigma_all, sigma, rec_rx, rec_ry, rec_v, record):
    n = rx.shape[0]
    for m in range(start, end):
        j = types[m]
        xy = x_to_y[m]
        k = noff[m]
        if j == 0:
            for i in range(n):
                if xy:
                    mu = 0.0
                else:
                    mu = math.log(rx[i] / ry[i])
                v = math.exp(mu + sigma_all[i] * normals[k + i])
                g = 1.0 - phi[i]
                if xy:
                    den = rx[i] + g * v
                    ry[i] = ry[i] * rx[i] / den
                    rx[i] = rx[i] + v
                else:
                    den = ry[i] + g * v
                    rx[i] = rx[i] * ry[i] / den
                    ry[i] = ry[i] + v
                if record:
                    rec_v[m, i] = v
        else:
            i = j - 1
            if xy:
                mu = 0.0
            else:
                mu = math.log(rx[i] / ry[i])
            v = math.exp(mu + sigma[j] * normals[k])
            g = 1.0 - phi[i]
            if xy:
                den = rx[i] + g * v
                ry[i] = ry[i] * rx[i] / den
                rx[i] = rx[i] + v
            else:
                den = ry[i] + g * v
                rx[i] = rx[i] * ry[i] / den
                ry[i] = ry[i] + v
            if record:
                rec_v[m, i] = v
        if record:
            for i in range(n):
                rec_rx[m, i] = rx[i]
                rec_ry[m, i] = ry[i]


@njit(cache=True, nogil=True)
def replay_paths(rx0, ry0, phi, offsets, types, x_to_y, normals, noff,
                 sigma_all, sigma, record):
    b = offsets.shape[0] - 1
    n = rx0.shape[0]
    total = offsets[b]
    final_rx = np.empty((b, n))
    final_ry = np.empty((b, n))
    rows = total if record else 0
    rec_rx = np.zeros((rows, n))
    rec_ry = np.zeros((rows, n))
    rec_v = np.zeros((rows, n))
    rx = np.empty(n)
    ry = np.empty(n)
    for p in range(b):
        rx[:] = rx0
        ry[:] = ry0
        _replay_path(rx, ry, phi, offsets[p], offsets[p + 1], types, x_to_y,
                     normals, noff, sigma_all, sigma, rec_rx, rec_ry, rec_v, record)
        final_rx[p, :] = rx
        final_ry[p, :] = ry
    return final_rx, final_ry, rec_rx, rec_ry, rec_v


@njit(cache=True, nogil=True)
def _unwind(rx, ry, l_total, phi, lp, x0):
    n = rx.shape[0]
    xbar = 0.0
    ybar = 0.0
    for i in range(n):
        if lp[i] > 0.0:
            share = lp[i] / l_total[i]
            xb = share * rx[i]
            yb = share * ry[i]
            rx[i] = rx[i] - xb
            ry[i] = ry[i] - yb
            xbar += xb
            ybar += yb
    best = 0.0
    if ybar > 0.0:
        best = -1.0
        for i in range(n):
            g = 1.0 - phi[i]
            out = ybar * g * rx[i] / (ry[i] + g * ybar)
            if out > best:
                best = out
    return xbar + best


@njit(cache=True, nogil=True)
def lp_log_returns(rx0, ry0, l_total, phi, lp, x0, offsets, types, x_to_y,
                   normals, noff, sigma_all, sigma):
    """Replay every path from the post-deploy state, unwind, return log(x_T / x0)."""
    b = offsets.shape[0] - 1
    n = rx0.shape[0]
    out = np.empty(b)
    rx = np.empty(n)
    ry = np.empty(n)
    dummy = np.zeros((0, n))
    for p in range(b):
        rx[:] = rx0
        ry[:] = ry0
        _replay_path(rx, ry, phi, offsets[p], offsets[p + 1], types, x_to_y,
                     normals, noff, sigma_all, sigma, dummy, dummy, dummy, False)
        out[p] = math.log(_unwind(rx, ry, l_total, phi, lp, x0) / x0)
    return out


@njit(cache=True, nogil=True)
def burn_holdings(final_rx, final_ry, l_total, lp):
    """Per-path, per-pool burn proceeds and post-burn reserves for fixed LP holdings."""
    b, n = final_rx.shape
    xb = np.zeros((b, n))
    yb = np.zeros((b, n))
    rx_after = final_rx.copy()
    ry_after = final_ry.copy()
    for p in range(b):
        for i in range(n):
            if lp[i] > 0.0:
                share = lp[i] / l_total[i]
                xb[p, i] = share * final_rx[p, i]
                yb[p, i] = share * final_ry[p, i]
                rx_after[p, i] = final_rx[p, i] - xb[p, i]
                ry_after[p, i] = final_ry[p, i] - yb[p, i]
    return xb, yb, rx_after, ry_after
