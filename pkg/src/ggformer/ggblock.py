"""Glance-and-gaze transformer block.

The attention module runs two branches off one set of projections: glance
attention inside dilated partitions, and a depthwise convolution (gaze)
over the merged value map. Their outputs are summed before the shared
output projection. The block wraps it with pre-norm residuals and an MLP.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Tuple, Union

import numpy as np

from . import init
from .attention import AttentionConfig, AttentionWeights, Variant, init_attention, partitioned_context
from .errors import ConfigError, DimensionError
from .partition import PartitionSpec, dilated_split_permutation
from .tensor import (
    Parameter,
    add,
    as_tensor,
    depthwise_conv2d,
    gelu,
    layer_norm,
    linear,
    reshape,
    scope,
    transpose,
)

FIXED = "fixed"
ADAPTIVE = "adaptive"


def adaptive_kernel_extent(dilation: int) -> int:
    """Smallest odd integer >= dilation + 1."""
    k = dilation + 1
    return k if k % 2 else k + 1


@dataclass(frozen=True)
class GazeConfig:
    policy: str = ADAPTIVE
    k: Union[int, Tuple[int, int]] = 3  # used by the fixed policy

    def __post_init__(self):
        if self.policy not in (FIXED, ADAPTIVE):
            raise ConfigError(f"unknown gaze policy {self.policy!r}")
        if self.policy == FIXED:
            ks = (self.k, self.k) if isinstance(self.k, int) else tuple(self.k)
            if len(ks) != 2 or any(v < 1 or v % 2 == 0 for v in ks):
                raise ConfigError(f"fixed gaze kernel must be odd and >= 1, got {self.k}")

    def kernel(self, spec: PartitionSpec):
        if self.policy == FIXED:
            return (self.k, self.k) if isinstance(self.k, int) else tuple(self.k)
        dh, dw = spec.dilation
        return adaptive_kernel_extent(dh), adaptive_kernel_extent(dw)

    @classmethod
    def fixed(cls, k=3):
        return cls(FIXED, k)

    @classmethod
    def adaptive(cls):
        return cls(ADAPTIVE)


@dataclass(frozen=True)
class BlockConfig:
    C: int
    heads: int
    spec: PartitionSpec
    mlp_ratio: float = 4.0
    gaze: GazeConfig = field(default_factory=GazeConfig)
    rel_pos_bias: bool = True

    def __post_init__(self):
        hidden = self.mlp_ratio * self.C
        if self.mlp_ratio <= 0 or hidden != int(hidden):
            raise ConfigError(f"MLP hidden width {self.mlp_ratio} * {self.C} must be a positive integer")

    @property
    def M(self):
        return self.spec.M

    @property
    def hidden(self):
        return int(self.mlp_ratio * self.C)

    @property
    def kernel(self):
        return self.gaze.kernel(self.spec)

    @property
    def attention(self):
        return AttentionConfig(self.C, self.heads, self.M, 1, Variant.G_MSA, self.rel_pos_bias)


@dataclass
class BlockWeights:
    ln1_g: Parameter
    ln1_b: Parameter
    attn: AttentionWeights
    gaze: Parameter  # C x kh x kw, no bias
    ln2_g: Parameter
    ln2_b: Parameter
    fc1_w: Parameter
    fc1_b: Parameter
    fc2_w: Parameter
    fc2_b: Parameter

    def named_parameters(self, prefix=""):
        yield prefix + "norm1.weight", self.ln1_g
        yield prefix + "norm1.bias", self.ln1_b
        yield from self.attn.named_parameters(prefix + "attn.")
        yield prefix + "attn.gaze", self.gaze
        yield prefix + "norm2.weight", self.ln2_g
        yield prefix + "norm2.bias", self.ln2_b
        yield prefix + "mlp.fc1.weight", self.fc1_w
        yield prefix + "mlp.fc1.bias", self.fc1_b
        yield prefix + "mlp.fc2.weight", self.fc2_w
        yield prefix + "mlp.fc2.bias", self.fc2_b


def init_block(cfg: BlockConfig, rng, dtype=np.float64):
    C, H = cfg.C, cfg.hidden
    kh, kw = cfg.kernel
    return BlockWeights(
        ln1_g=init.ones((C,), dtype),
        ln1_b=init.zeros((C,), dtype),
        attn=init_attention(cfg.attention, rng, dtype),
        gaze=init.param(init.trunc_normal(rng, (C, kh, kw)), dtype),
        ln2_g=init.ones((C,), dtype),
        ln2_b=init.zeros((C,), dtype),
        fc1_w=init.param(init.trunc_normal(rng, (C, H)), dtype),
        fc1_b=init.zeros((H,), dtype),
        fc2_w=init.param(init.trunc_normal(rng, (H, C)), dtype),
        fc2_b=init.zeros((C,), dtype),
    )


def gaze(v_merged, kernel, spec: PartitionSpec):
    """Depthwise convolution of an ``N x C`` value tensor laid out on the token grid."""
    v_merged = as_tensor(v_merged)
    N, C = v_merged.shape
    if N != spec.N or kernel.shape[0] != C:
        raise DimensionError(
            f"gaze: {N}x{C} values vs {spec.h}x{spec.w} grid and kernel {kernel.shape}"
        )
    fmap = reshape(transpose(v_merged, (1, 0)), (C, spec.h, spec.w))
    with scope("gaze"):
        out = depthwise_conv2d(fmap, kernel)
    return transpose(reshape(out, (C, N)), (1, 0))


def gg_msa(x, w: BlockWeights, cfg: BlockConfig, perm=None):
    """Glance context plus gaze output, then the shared output projection."""
    perm = dilated_split_permutation(cfg.spec) if perm is None else perm
    if w.gaze.shape != (cfg.C,) + tuple(cfg.kernel):
        raise DimensionError(f"gaze kernel {w.gaze.shape} does not match config {cfg.kernel}")
    ctx, values = partitioned_context(x, w.attn, cfg.spec, cfg.attention, perm)
    fused = add(ctx, gaze(values, w.gaze, cfg.spec))
    with scope("o"):
        return linear(fused, w.attn.wo, w.attn.bo)


def mlp(x, w: BlockWeights):
    with scope("fc1"):
        h = linear(x, w.fc1_w, w.fc1_b)
    h = gelu(h)
    with scope("fc2"):
        return linear(h, w.fc2_w, w.fc2_b)


def gg_block(x, w: BlockWeights, cfg: BlockConfig):
    """Pre-norm residual block: attention sub-block then MLP sub-block."""
    x = as_tensor(x)
    if x.ndim != 2 or x.shape != (cfg.spec.N, cfg.C):
        raise DimensionError(f"block expects {cfg.spec.N}x{cfg.C} tokens, got {x.shape}")
    with scope("attn"):
        z = add(x, gg_msa(layer_norm(x, w.ln1_g, w.ln1_b), w, cfg))
    with scope("mlp"):
        return add(z, mlp(layer_norm(z, w.ln2_g, w.ln2_b), w))
