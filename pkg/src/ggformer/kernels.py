"""Depthwise 2D cross-correlation kernels (forward and both backward passes).

Every kernel exists twice: a loop form compiled by numba and a vectorised
numpy form that loops over taps only. ``forward``/``backward_input``/
``backward_kernel`` dispatch on ``ggformer._jit.USE_NUMBA``. Inputs are
``C x h x w`` maps and ``C x kh x kw`` kernels with odd extents; padding is
"same" with zeros. Taps are accumulated in ascending (i, j) order in both
forms.
"""
import numpy as np

from ._jit import USE_NUMBA, njit


def _pad(x, ph, pw):
    return np.pad(x, ((0, 0), (ph, ph), (pw, pw)))


# -- numpy forms -------------------------------------------------------------

def forward_numpy(x, k):
    c, h, w = x.shape
    _, kh, kw = k.shape
    xp = _pad(x, kh // 2, kw // 2)
    out = np.zeros_like(x)
    for i in range(kh):
        for j in range(kw):
            out += k[:, i, j, None, None] * xp[:, i:i + h, j:j + w]
    return out


def backward_input_numpy(g, k):
    c, h, w = g.shape
    _, kh, kw = k.shape
    ph, pw = kh // 2, kw // 2
    gp = np.zeros((c, h + 2 * ph, w + 2 * pw), dtype=g.dtype)
    for i in range(kh):
        for j in range(kw):
            gp[:, i:i + h, j:j + w] += k[:, i, j, None, None] * g
    return np.ascontiguousarray(gp[:, ph:ph + h, pw:pw + w])


def backward_kernel_numpy(g, x, kh, kw):
    c, h, w = x.shape
    xp = _pad(x, kh // 2, kw // 2)
    gk = np.empty((c, kh, kw), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            gk[:, i, j] = (g * xp[:, i:i + h, j:j + w]).reshape(c, -1).sum(axis=1)
    return gk


# -- loop forms (numba) ------------------------------------------------------

@njit
def forward_loops(x, k):
    c, h, w = x.shape
    kh, kw = k.shape[1], k.shape[2]
    ph, pw = kh // 2, kw // 2
    out = np.zeros_like(x)
    for ch in range(c):
        for y in range(h):
            for xx in range(w):
                acc = 0.0
                for i in range(kh):
                    yy = y + i - ph
                    if yy < 0 or yy >= h:
                        continue
                    for j in range(kw):
                        xj = xx + j - pw
                        if xj < 0 or xj >= w:
                            continue
                        acc += k[ch, i, j] * x[ch, yy, xj]
                out[ch, y, xx] = acc
    return out


@njit
def backward_input_loops(g, k):
    c, h, w = g.shape
    kh, kw = k.shape[1], k.shape[2]
    ph, pw = kh // 2, kw // 2
    gx = np.zeros_like(g)
    for ch in range(c):
        for y in range(h):
            for xx in range(w):
                acc = 0.0
                # out[y - i + ph, x - j + pw] touched input (y, x) through tap (i, j)
                for i in range(kh):
                    oy = y - i + ph
                    if oy < 0 or oy >= h:
                        continue
                    for j in range(kw):
                        ox = xx - j + pw
                        if ox < 0 or ox >= w:
                            continue
                        acc += k[ch, i, j] * g[ch, oy, ox]
                gx[ch, y, xx] = acc
    return gx


@njit
def backward_kernel_loops(g, x, kh, kw):
    c, h, w = x.shape
    ph, pw = kh // 2, kw // 2
    gk = np.zeros((c, kh, kw), dtype=x.dtype)
    for ch in range(c):
        for i in range(kh):
            for j in range(kw):
                acc = 0.0
                for y in range(h):
                    yy = y + i - ph
                    if yy < 0 or yy >= h:
                        continue
                    for xx in range(w):
                        xj = xx + j - pw
                        if xj < 0 or xj >= w:
                            continue
                        acc += g[ch, y, xx] * x[ch, yy, xj]
                gk[ch, i, j] = acc
    return gk


if USE_NUMBA:
    forward = forward_loops
    backward_input = backward_input_loops
    backward_kernel = backward_kernel_loops
    BACKEND = "numba"
else:
    forward = forward_numpy
    backward_input = backward_input_numpy
    backward_kernel = backward_kernel_numpy
    BACKEND = "numpy"
