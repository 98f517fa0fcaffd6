"""Straight-line reference computations used to cross-check the fast paths.

These deliberately avoid the tensor engine and the permutation code: token
membership is recomputed from grid coordinates with explicit loops.
"""
import numpy as np


def naive_softmax(s):
    e = np.exp(s - s.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def naive_msa(x, wq, wk, wv, wo, heads=1, bq=None, bk=None, bv=None, bo=None,
              kv=None, return_attn=False):
    """Dense multi-head attention on plain arrays; ``kv`` overrides the key/value source."""
    kv = x if kv is None else kv
    z = lambda n: 0.0 if n is None else n  # noqa: E731
    q, k, v = x @ wq + z(bq), kv @ wk + z(bk), kv @ wv + z(bv)
    C = x.shape[1]
    d = C // heads
    outs, attns = [], []
    for hd in range(heads):
        sl = slice(hd * d, (hd + 1) * d)
        a = naive_softmax(q[:, sl] @ k[:, sl].T / np.sqrt(d))
        attns.append(a)
        outs.append(a @ v[:, sl])
    out = np.concatenate(outs, axis=1) @ wo + z(bo)
    return (out, attns) if return_attn else out


def dilated_groups(h, w, M):
    """Grid indices of each dilated partition, found by residue class."""
    dh, dw = h // M, w // M
    groups = {}
    for a in range(h):
        for b in range(w):
            groups.setdefault((a % dh, b % dw), []).append(a * w + b)
    return [groups[key] for key in sorted(groups)]


def window_groups(h, w, M):
    groups = {}
    for a in range(h):
        for b in range(w):
            groups.setdefault((a // M, b // M), []).append(a * w + b)
    return [groups[key] for key in sorted(groups)]


def brute_force_partition_attention(x, groups, wq, wk, wv, wo, heads=1, **biases):
    """Run :func:`naive_msa` on every group independently and scatter results back."""
    out = np.zeros((x.shape[0], wo.shape[1]))
    for idx in groups:
        out[idx] = naive_msa(x[idx], wq, wk, wv, wo, heads, **biases)
    return out


def naive_dwconv(x, k):
    """Zero-padded depthwise cross-correlation with explicit bounds checks."""
    C, h, w = x.shape
    _, kh, kw = k.shape
    out = np.zeros_like(x)
    for c in range(C):
        for y in range(h):
            for xx in range(w):
                s = 0.0
                for i in range(kh):
                    for j in range(kw):
                        yy, xj = y + i - kh // 2, xx + j - kw // 2
                        if 0 <= yy < h and 0 <= xj < w:
                            s += k[c, i, j] * x[c, yy, xj]
                out[c, y, xx] = s
    return out


def naive_layer_norm(x, g, b, eps=1e-5):
    mu = x.mean(axis=-1, keepdims=True)
    var = ((x - mu) ** 2).mean(axis=-1, keepdims=True)
    return (x - mu) / np.sqrt(var + eps) * g + b


def naive_gg_msa(x, h, w, M, wq, wk, wv, wo, gaze_kernel, heads=1):
    """Glance-and-gaze attention written out in one place (no relative bias, zero biases)."""
    q, k, v = x @ wq, x @ wk, x @ wv
    C = x.shape[1]
    d = C // heads
    ctx = np.zeros_like(x)
    for idx in dilated_groups(h, w, M):
        for hd in range(heads):
            sl = slice(hd * d, (hd + 1) * d)
            a = naive_softmax(q[idx, sl] @ k[idx, sl].T / np.sqrt(d))
            ctx[np.ix_(idx, range(hd * d, (hd + 1) * d))] = a @ v[idx, sl]
    g = naive_dwconv(v.T.reshape(C, h, w), gaze_kernel).reshape(C, h * w).T
    return (ctx + g) @ wo
