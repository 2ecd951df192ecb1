"""Hot inner loops, each with a numba kernel and a pure-numpy twin.

The public functions dispatch on ``irsopt._jit.USE_NUMBA``; the ``*_numba``
and ``*_numpy`` variants stay importable so both paths can be tested and
benchmarked against each other in one process.
"""

from __future__ import annotations

import numpy as np

from . import _jit
from ._jit import njit

LN_EPS = 1e-5


# ---------------------------------------------------------------------------
# coordinate ascent sweep

@njit(cache=True)
def ca_sweep_numba(c, h, u, objs):
    """One in-place sweep over all elements.

    ``h`` must equal ``h_bu + C^H u`` on entry and is kept consistent.
    ``objs[m]`` receives ``||h||^2`` after the update of element ``m``.
    An update is rejected when rounding would make the objective drop.
    Returns ``||h||^2`` on entry, summed the same way as ``objs``.
    """
    m_count, n = c.shape
    cur = 0.0
    for k in range(n):
        cur += h[k].real * h[k].real + h[k].imag * h[k].imag
    start = cur
    for m in range(m_count):
        um = u[m]
        q = 0j
        for k in range(n):
            q += c[m, k] * (h[k] - np.conj(c[m, k]) * um)
        a = abs(q)
        if a > 0.0:
            unew = q / a
            d = unew - um
            new = 0.0
            for k in range(n):
                t = h[k] + np.conj(c[m, k]) * d
                new += t.real * t.real + t.imag * t.imag
            if new >= cur:
                for k in range(n):
                    h[k] += np.conj(c[m, k]) * d
                u[m] = unew
                cur = new
        objs[m] = cur
    return start


def ca_sweep_numpy(c, h, u, objs):
    cur = float(np.vdot(h, h).real)
    start = cur
    for m in range(c.shape[0]):
        cm = c[m]
        q = cm @ (h - cm.conj() * u[m])
        a = abs(q)
        if a > 0.0:
            d = q / a - u[m]
            t = h + cm.conj() * d
            new = float(np.vdot(t, t).real)
            if new >= cur:
                h[:] = t
                u[m] = q / a
                cur = new
        objs[m] = cur
    return start


def ca_sweep(c, h, u, objs):
    if _jit.USE_NUMBA:
        return ca_sweep_numba(c, h, u, objs)
    return ca_sweep_numpy(c, h, u, objs)


# ---------------------------------------------------------------------------
# exhaustive phase grid

@njit(cache=True)
def grid_search_numba(c, h_bu, phasors):
    """Index vector maximising ``||h_bu + sum_m conj(c_m) phasors[k_m]||^2``.

    Enumeration is lexicographic and only a strict improvement replaces the
    incumbent, so ties resolve to the smallest index vector.
    """
    m_count, n = c.shape
    levels = phasors.shape[0]
    idx = np.zeros(m_count, dtype=np.int64)
    best_idx = np.zeros(m_count, dtype=np.int64)
    best = -1.0
    total = levels ** m_count
    h = np.empty(n, dtype=np.complex128)
    for _ in range(total):
        for k in range(n):
            h[k] = h_bu[k]
        for m in range(m_count):
            p = phasors[idx[m]]
            for k in range(n):
                h[k] += np.conj(c[m, k]) * p
        val = 0.0
        for k in range(n):
            val += h[k].real * h[k].real + h[k].imag * h[k].imag
        if val > best:
            best = val
            for m in range(m_count):
                best_idx[m] = idx[m]
        # odometer, last index fastest
        j = m_count - 1
        while j >= 0:
            idx[j] += 1
            if idx[j] < levels:
                break
            idx[j] = 0
            j -= 1
    return best_idx, best


def grid_search_numpy(c, h_bu, phasors):
    m_count, n = c.shape
    levels = phasors.shape[0]
    # contrib[m] has shape (levels, N)
    contrib = [np.outer(phasors, c[m].conj()) for m in range(m_count)]
    tail = np.broadcast_to(h_bu, (1, n)).copy()
    for m in range(1, m_count):
        tail = (tail[:, None, :] + contrib[m][None, :, :]).reshape(-1, n)
    best, best_flat = -1.0, 0
    for k0 in range(levels):
        vals = np.sum(np.abs(tail + contrib[0][k0]) ** 2, axis=1)
        j = int(np.argmax(vals))
        if vals[j] > best:
            best, best_flat = float(vals[j]), k0 * tail.shape[0] + j
    return np.array(np.unravel_index(best_flat, (levels,) * m_count), dtype=np.int64), best


def grid_search(c, h_bu, phasors):
    if _jit.USE_NUMBA:
        return grid_search_numba(c, h_bu, phasors)
    return grid_search_numpy(c, h_bu, phasors)


# ---------------------------------------------------------------------------
# single-sample forward pass of the fixed 2-hidden-layer MLP

@njit(cache=True)
def _dense_ln_relu(x, w, b, g, e):
    n_in, n_out = w.shape
    z = b.copy()
    for i in range(n_in):
        xi = x[i]
        if xi != 0.0:
            for j in range(n_out):
                z[j] += xi * w[i, j]
    mu = z.mean()
    var = 0.0
    for j in range(n_out):
        var += (z[j] - mu) ** 2
    inv = 1.0 / np.sqrt(var / n_out + LN_EPS)
    for j in range(n_out):
        v = g[j] * (z[j] - mu) * inv + e[j]
        z[j] = v if v > 0.0 else 0.0
    return z


@njit(cache=True)
def mlp3_forward_numba(x, w0, b0, g0, e0, w1, b1, g1, e1, w2, b2, scaled):
    a0 = _dense_ln_relu(x, w0, b0, g0, e0)
    a1 = _dense_ln_relu(a0, w1, b1, g1, e1)
    n_in, n_out = w2.shape
    out = b2.copy()
    for i in range(n_in):
        ai = a1[i]
        if ai != 0.0:
            for j in range(n_out):
                out[j] += ai * w2[i, j]
    if scaled:
        for j in range(n_out):
            out[j] = np.pi * (np.tanh(out[j]) + 1.0)
    return out


def mlp3_forward_numpy(x, w0, b0, g0, e0, w1, b1, g1, e1, w2, b2, scaled):
    a = x
    for w, b, g, e in ((w0, b0, g0, e0), (w1, b1, g1, e1)):
        z = a @ w + b
        z = (z - z.mean()) / np.sqrt(z.var() + LN_EPS)
        a = np.maximum(g * z + e, 0.0)
    out = a @ w2 + b2
    if scaled:
        out = np.pi * (np.tanh(out) + 1.0)
    return out


def mlp3_forward(x, *params, scaled):
    if _jit.USE_NUMBA:
        return mlp3_forward_numba(x, *params, scaled)
    return mlp3_forward_numpy(x, *params, scaled)
