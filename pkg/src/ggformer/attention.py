"""Multi-head self-attention and its restricted variants.

``msa`` attends over all N tokens. ``g_msa`` (glance) attends inside the
dilated partitions of the token grid, ``w_msa`` inside contiguous windows,
and ``sra`` attends from every token to an average-pooled key/value grid.
All four share one weight layout and one output projection.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import init
from .errors import ConfigError, DimensionError
from .partition import (
    PartitionSpec,
    Permutation,
    dilated_split_permutation,
    merge,
    split,
    window_split_permutation,
)
from .tensor import (
    Parameter,
    add,
    as_tensor,
    linear,
    matmul,
    mean,
    reshape,
    scale,
    scope,
    softmax_rows,
    take,
    transpose,
)


class Variant(str, enum.Enum):
    MSA = "msa"
    G_MSA = "gmsa"
    W_MSA = "wmsa"
    SRA = "sra"


@dataclass(frozen=True)
class AttentionConfig:
    C: int
    heads: int = 1
    M: int = 7
    R: int = 1
    variant: Variant = Variant.G_MSA
    rel_pos_bias: bool = True

    def __post_init__(self):
        if self.C < 1 or self.heads < 1 or self.C % self.heads:
            raise ConfigError(f"channels C={self.C} must be a positive multiple of heads={self.heads}")
        if self.M < 1 or self.R < 1:
            raise ConfigError(f"partition side M={self.M} and reduction R={self.R} must be >= 1")
        object.__setattr__(self, "variant", Variant(self.variant))

    @property
    def head_dim(self):
        return self.C // self.heads


@dataclass
class AttentionWeights:
    wq: Parameter
    wk: Parameter
    wv: Parameter
    wo: Parameter
    bq: Optional[Parameter] = None
    bk: Optional[Parameter] = None
    bv: Optional[Parameter] = None
    bo: Optional[Parameter] = None
    # ((2M-1)^2, heads), indexed by relative offsets inside an M x M partition
    rel_bias: Optional[Parameter] = None

    def named_parameters(self, prefix=""):
        for name in ("wq", "bq", "wk", "bk", "wv", "bv", "wo", "bo", "rel_bias"):
            p = getattr(self, name)
            if p is not None:
                yield prefix + name, p


def init_attention(cfg: AttentionConfig, rng, dtype=np.float64, bias=True):
    C = cfg.C
    w = {n: init.param(init.trunc_normal(rng, (C, C)), dtype) for n in ("wq", "wk", "wv", "wo")}
    if bias:
        w.update({n: init.zeros((C,), dtype) for n in ("bq", "bk", "bv", "bo")})
    if cfg.rel_pos_bias and cfg.variant in (Variant.G_MSA, Variant.W_MSA):
        w["rel_bias"] = init.zeros(((2 * cfg.M - 1) ** 2, cfg.heads), dtype)
    return AttentionWeights(**w)


def relative_position_index(M):
    """``(M*M, M*M)`` table row for each (query, key) pair of an M x M grid."""
    p, q = np.divmod(np.arange(M * M), M)
    dp = p[:, None] - p[None, :] + M - 1
    dq = q[:, None] - q[None, :] + M - 1
    return dp * (2 * M - 1) + dq


def _heads_first(t, heads):
    # (P, n, C) -> (P, heads, n, d)
    P, n, C = t.shape
    return transpose(reshape(t, (P, n, heads, C // heads)), (0, 2, 1, 3))


def attend(q, k, v, heads, bias=None):
    """Scaled dot-product attention over stacked groups.

    ``q`` is ``(P, n, C)``, ``k`` and ``v`` are ``(P, m, C)``; ``bias`` is
    ``(heads, n, m)`` or None. Returns ``(P, n, C)`` before any projection.
    """
    P, n, C = q.shape
    qh, kh, vh = (_heads_first(t, heads) for t in (q, k, v))
    with scope("scores"):
        s = matmul(qh, transpose(kh, (0, 1, 3, 2)))
    s = scale(s, 1.0 / math.sqrt(C // heads))
    if bias is not None:
        s = add(s, bias)
    a = softmax_rows(s)
    with scope("context"):
        ctx = matmul(a, vh)
    return reshape(transpose(ctx, (0, 2, 1, 3)), (P, n, C))


def _project_qkv(x, w):
    with scope("q"):
        q = linear(x, w.wq, w.bq)
    with scope("k"):
        k = linear(x, w.wk, w.bk)
    with scope("v"):
        v = linear(x, w.wv, w.bv)
    return q, k, v


def _project_out(x, w):
    with scope("o"):
        return linear(x, w.wo, w.bo)


def _check_tokens(x, cfg, spec=None):
    if x.ndim != 2 or x.shape[1] != cfg.C:
        raise DimensionError(f"expected N x {cfg.C} tokens, got {x.shape}")
    if spec is not None and x.shape[0] != spec.N:
        raise DimensionError(f"{x.shape[0]} tokens do not fill a {spec.h}x{spec.w} grid")


def msa(x, w: AttentionWeights, cfg: AttentionConfig):
    """Full multi-head self-attention over all tokens."""
    x = as_tensor(x)
    _check_tokens(x, cfg)
    N, C = x.shape
    q, k, v = (reshape(t, (1, N, C)) for t in _project_qkv(x, w))
    ctx = attend(q, k, v, cfg.heads)
    return _project_out(reshape(ctx, (N, C)), w)


def partitioned_context(x, w: AttentionWeights, spec: PartitionSpec, cfg: AttentionConfig,
                        perm: Permutation):
    """Attention inside each partition of ``perm``, before the output projection.

    Returns ``(context, values)``, both ``N x C`` in grid order; ``values`` is
    the value tensor after split and merge.
    """
    x = as_tensor(x)
    _check_tokens(x, cfg, spec)
    N, C = x.shape
    n = spec.M * spec.M
    P = N // n
    q, k, v = _project_qkv(x, w)
    v_parts = split(v, perm)
    qs, ks = (reshape(split(t, perm), (P, n, C)) for t in (q, k))
    bias = None
    if cfg.rel_pos_bias and w.rel_bias is not None:
        if w.rel_bias.shape != ((2 * spec.M - 1) ** 2, cfg.heads):
            raise DimensionError(f"relative bias table {w.rel_bias.shape} does not fit M={spec.M}")
        bias = transpose(take(w.rel_bias, relative_position_index(spec.M), axis=0), (2, 0, 1))
    ctx = attend(qs, ks, reshape(v_parts, (P, n, C)), cfg.heads, bias)
    return merge(reshape(ctx, (N, C)), perm), merge(v_parts, perm)


def g_msa(x, w, spec, cfg, perm=None, return_values=False):
    """Glance attention: MSA inside each adaptively-dilated partition.

    ``perm`` overrides the dilated permutation (used for fault injection).
    With ``return_values`` the merged value tensor is returned as well.
    """
    perm = dilated_split_permutation(spec) if perm is None else perm
    ctx, values = partitioned_context(x, w, spec, cfg, perm)
    out = _project_out(ctx, w)
    return (out, values) if return_values else out


def w_msa(x, w, spec, cfg, perm=None):
    """Local-window attention over contiguous M x M blocks."""
    perm = window_split_permutation(spec) if perm is None else perm
    ctx, _ = partitioned_context(x, w, spec, cfg, perm)
    return _project_out(ctx, w)


def avg_pool_tokens(x, h, w, R):
    """Average-pool an ``(h*w) x C`` token grid by ``R x R`` blocks."""
    C = x.shape[1]
    t = reshape(x, (h // R, R, w // R, R, C))
    t = reshape(transpose(t, (0, 2, 1, 3, 4)), ((h // R) * (w // R), R * R, C))
    return mean(t, axis=1)


def sra(x, w, spec, cfg):
    """Spatial-reduction attention: keys and values from an R x R pooled grid."""
    x = as_tensor(x)
    _check_tokens(x, cfg, spec)
    R = cfg.R
    if spec.h % R or spec.w % R:
        raise ConfigError(f"grid {spec.h}x{spec.w} is not divisible by reduction R={R}")
    N, C = x.shape
    pooled = avg_pool_tokens(x, spec.h, spec.w, R) if R > 1 else x
    m = pooled.shape[0]
    with scope("q"):
        q = linear(x, w.wq, w.bq)
    with scope("k"):
        k = linear(pooled, w.wk, w.bk)
    with scope("v"):
        v = linear(pooled, w.wv, w.bv)
    ctx = attend(reshape(q, (1, N, C)), reshape(k, (1, m, C)), reshape(v, (1, m, C)), cfg.heads)
    return _project_out(reshape(ctx, (N, C)), w)


def attention(x, w, cfg: AttentionConfig, spec: Optional[PartitionSpec] = None):
    """Dispatch on ``cfg.variant``."""
    if cfg.variant is Variant.MSA:
        return msa(x, w, cfg)
    if spec is None:
        raise ConfigError(f"variant {cfg.variant.value} needs a token grid")
    if cfg.variant is Variant.G_MSA:
        return g_msa(x, w, spec, cfg)
    if cfg.variant is Variant.W_MSA:
        return w_msa(x, w, spec, cfg)
    return sra(x, w, spec, cfg)
