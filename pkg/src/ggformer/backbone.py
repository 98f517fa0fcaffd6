"""Hierarchical four-stage GG-Transformer (GG-T, GG-S).

Depths, heads and the patch-merging transition follow the Swin-T/Swin-S
layout: patch size 4, base width 96, widths doubling per stage, partition
side 7 and MLP ratio 4.
"""
from __future__ import annotations

import json
import os
from dataclasses import asdict, dataclass, field, replace
from typing import List, Tuple

import numpy as np

from . import init
from .errors import ConfigError, DimensionError, FormatError
from .ggblock import BlockConfig, BlockWeights, GazeConfig, gg_block, init_block
from .partition import PartitionSpec
from .tensor import Parameter, as_tensor, io, layer_norm, linear, mean, no_grad, reshape, scope, transpose


@dataclass(frozen=True)
class ModelConfig:
    name: str = "GG-T"
    depths: Tuple[int, ...] = (2, 2, 6, 2)
    heads: Tuple[int, ...] = (3, 6, 12, 24)
    patch: int = 4
    embed_dim: int = 96
    M: int = 7
    mlp_ratio: float = 4.0
    gaze: GazeConfig = field(default_factory=GazeConfig)
    num_classes: int = 1000
    in_chans: int = 3
    image_size: Tuple[int, int] = (224, 224)
    rel_pos_bias: bool = True

    def __post_init__(self):
        if len(self.depths) != len(self.heads) or not self.depths:
            raise ConfigError("depths and heads must list one entry per stage")
        for s, hd in enumerate(self.heads):
            if self.width(s) % hd:
                raise ConfigError(f"stage {s + 1}: width {self.width(s)} not divisible by {hd} heads")
        if isinstance(self.image_size, int):
            object.__setattr__(self, "image_size", (self.image_size, self.image_size))

    @property
    def num_stages(self):
        return len(self.depths)

    def width(self, s):
        return self.embed_dim * 2 ** s

    @property
    def min_side(self):
        """Smallest input side for which every stage grid is divisible by M."""
        return self.patch * 2 ** (self.num_stages - 1) * self.M

    def stage_grids(self, H=None, W=None):
        """Token grid per stage for an ``H x W`` input; raises ConfigError naming the failing stage."""
        H, W = (self.image_size if H is None else (H, W))
        hint = f"valid sides are multiples of {self.min_side} (e.g. {self.min_side}, {2 * self.min_side})"
        if H % self.patch or W % self.patch:
            raise ConfigError(
                f"stage 1: input {H}x{W} is not divisible by patch size {self.patch}; {hint}"
            )
        grids = []
        h, w = H // self.patch, W // self.patch
        for s in range(self.num_stages):
            if s > 0:
                if h % 2 or w % 2:
                    raise ConfigError(
                        f"stage {s + 1}: grid {h}x{w} cannot be 2x2 patch-merged; {hint}"
                    )
                h, w = h // 2, w // 2
            if h % self.M or w % self.M:
                raise ConfigError(
                    f"stage {s + 1}: grid {h}x{w} is not divisible by partition side M={self.M}; {hint}"
                )
            grids.append((h, w))
        return grids

    def block_configs(self, H=None, W=None):
        """Per-stage block configuration (one per stage; blocks inside a stage share it)."""
        return [
            BlockConfig(self.width(s), self.heads[s], PartitionSpec(h, w, self.M),
                        self.mlp_ratio, self.gaze, self.rel_pos_bias)
            for s, (h, w) in enumerate(self.stage_grids(H, W))
        ]


GG_T = ModelConfig("GG-T", depths=(2, 2, 6, 2))
GG_S = ModelConfig("GG-S", depths=(2, 2, 18, 2))
VARIANTS = {"GG-T": GG_T, "GG-S": GG_S}


def get_config(name, **overrides):
    key = name.upper().replace("_", "-")
    if key not in VARIANTS:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(VARIANTS)}")
    return replace(VARIANTS[key], **overrides) if overrides else VARIANTS[key]


@dataclass
class MergeWeights:
    norm_g: Parameter
    norm_b: Parameter
    reduction: Parameter  # 4C x 2C, no bias

    def named_parameters(self, prefix=""):
        yield prefix + "norm.weight", self.norm_g
        yield prefix + "norm.bias", self.norm_b
        yield prefix + "reduction.weight", self.reduction


@dataclass
class ModelWeights:
    config: ModelConfig
    patch_w: Parameter  # (in_chans * P * P) x C, input flattened (channel, row, col)
    patch_b: Parameter
    patch_norm_g: Parameter
    patch_norm_b: Parameter
    stages: List[List[BlockWeights]]
    merges: List[MergeWeights]
    norm_g: Parameter
    norm_b: Parameter
    head_w: Parameter
    head_b: Parameter

    def named_parameters(self):
        yield "patch_embed.proj.weight", self.patch_w
        yield "patch_embed.proj.bias", self.patch_b
        yield "patch_embed.norm.weight", self.patch_norm_g
        yield "patch_embed.norm.bias", self.patch_norm_b
        for s, blocks in enumerate(self.stages):
            for b, bw in enumerate(blocks):
                yield from bw.named_parameters(f"stages.{s}.blocks.{b}.")
            if s < len(self.merges):
                yield from self.merges[s].named_parameters(f"stages.{s}.downsample.")
        yield "norm.weight", self.norm_g
        yield "norm.bias", self.norm_b
        yield "head.weight", self.head_w
        yield "head.bias", self.head_b

    def num_parameters(self):
        return sum(p.size for _, p in self.named_parameters())


def build(variant, seed=0, dtype=np.float64):
    """Seeded weights: truncated normal (std 0.02) matrices and kernels, zero biases, unit LN scales."""
    cfg = get_config(variant) if isinstance(variant, str) else variant
    rng = np.random.default_rng(seed)
    C, P = cfg.embed_dim, cfg.patch
    bcfgs = cfg.block_configs()
    stages, merges = [], []
    patch_w = init.param(init.trunc_normal(rng, (cfg.in_chans * P * P, C)), dtype)
    for s, bc in enumerate(bcfgs):
        stages.append([init_block(bc, rng, dtype) for _ in range(cfg.depths[s])])
        if s < cfg.num_stages - 1:
            c = cfg.width(s)
            merges.append(MergeWeights(
                init.ones((4 * c,), dtype), init.zeros((4 * c,), dtype),
                init.param(init.trunc_normal(rng, (4 * c, 2 * c)), dtype),
            ))
    c_last = cfg.width(cfg.num_stages - 1)
    weights = ModelWeights(
        config=cfg,
        patch_w=patch_w,
        patch_b=init.zeros((C,), dtype),
        patch_norm_g=init.ones((C,), dtype),
        patch_norm_b=init.zeros((C,), dtype),
        stages=stages,
        merges=merges,
        norm_g=init.ones((c_last,), dtype),
        norm_b=init.zeros((c_last,), dtype),
        head_w=init.param(init.trunc_normal(rng, (c_last, cfg.num_classes)), dtype),
        head_b=init.zeros((cfg.num_classes,), dtype),
    )
    for name, p in weights.named_parameters():
        p.name = name
    return weights


# -- stages ----------------------------------------------------------------------

def patch_embed(img, w: ModelWeights, patch=4):
    """Project non-overlapping ``patch x patch`` pixel blocks to tokens, then LayerNorm."""
    img = as_tensor(img)
    if img.ndim != 3:
        raise DimensionError(f"expected a C x H x W image, got {img.shape}")
    c, H, W = img.shape
    if H % patch or W % patch:
        raise ConfigError(f"stage 1: input {H}x{W} is not divisible by patch size {patch}")
    h, wd = H // patch, W // patch
    t = reshape(img, (c, h, patch, wd, patch))
    t = reshape(transpose(t, (1, 3, 0, 2, 4)), (h * wd, c * patch * patch))
    with scope("proj"):
        t = linear(t, w.patch_w, w.patch_b)
    return layer_norm(t, w.patch_norm_g, w.patch_norm_b)


def patch_merge(x, h, w, mw: MergeWeights):
    """Concatenate each 2x2 neighbourhood (4C), LayerNorm, reduce to 2C.

    Concatenation order is (0,0), (1,0), (0,1), (1,1) as (row, col) offsets.
    """
    x = as_tensor(x)
    if h % 2 or w % 2:
        raise DimensionError(f"patch merging needs an even grid, got {h}x{w}")
    if x.shape[0] != h * w:
        raise DimensionError(f"{x.shape[0]} tokens do not fill a {h}x{w} grid")
    C = x.shape[1]
    t = reshape(x, (h // 2, 2, w // 2, 2, C))
    # -> (row block, col block, col offset, row offset, C)
    t = reshape(transpose(t, (0, 2, 3, 1, 4)), ((h // 2) * (w // 2), 4 * C))
    t = layer_norm(t, mw.norm_g, mw.norm_b)
    with scope("reduction"):
        return linear(t, mw.reduction)


def forward(img, w: ModelWeights, cfg: ModelConfig = None, return_stages=False):
    """Image ``C x H x W`` -> logits. With ``return_stages`` also returns each stage's tokens."""
    cfg = w.config if cfg is None else cfg
    img = as_tensor(img)
    if img.ndim != 3 or img.shape[0] != cfg.in_chans:
        raise DimensionError(f"expected a {cfg.in_chans} x H x W image, got {img.shape}")
    if img.dtype != w.patch_w.dtype:
        img = as_tensor(img.data.astype(w.patch_w.dtype))
    grids = cfg.stage_grids(img.shape[1], img.shape[2])
    with scope("patch_embed"):
        x = patch_embed(img, w, cfg.patch)
    outs = []
    for s, (h, wd) in enumerate(grids):
        for b, bw in enumerate(w.stages[s]):
            kernel = tuple(bw.gaze.shape[1:])
            bc = BlockConfig(cfg.width(s), cfg.heads[s], PartitionSpec(h, wd, cfg.M),
                             cfg.mlp_ratio, GazeConfig.fixed(kernel), cfg.rel_pos_bias)
            with scope(f"stage{s}.block{b}"):
                x = gg_block(x, bw, bc)
        outs.append(x)
        if s < len(w.merges):
            with scope(f"stage{s}.downsample"):
                x = patch_merge(x, h, wd, w.merges[s])
    with scope("head"):
        x = mean(layer_norm(x, w.norm_g, w.norm_b), axis=0)
        logits = linear(reshape(x, (1, x.shape[0])), w.head_w, w.head_b)
    logits = reshape(logits, (cfg.num_classes,))
    return (logits, outs) if return_stages else logits


def predict(img, w: ModelWeights):
    """Forward without graph construction; returns a numpy array of logits."""
    with no_grad():
        return forward(img, w).data


# -- checkpoints ------------------------------------------------------------------

def _config_to_json(cfg):
    d = asdict(cfg)
    d["gaze"] = {"policy": cfg.gaze.policy, "k": cfg.gaze.k}
    return d


def _config_from_json(d):
    d = dict(d)
    g = d.pop("gaze")
    k = g["k"] if isinstance(g["k"], int) else tuple(g["k"])
    for key in ("depths", "heads", "image_size"):
        d[key] = tuple(d[key])
    return ModelConfig(gaze=GazeConfig(g["policy"], k), **d)


def save_checkpoint(w: ModelWeights, manifest_path):
    """Write ``manifest_path`` (JSON) and a companion ``.bin`` of concatenated GGT1 records."""
    manifest_path = os.fspath(manifest_path)
    bin_path = os.path.splitext(manifest_path)[0] + ".bin"
    entries, offset = [], 0
    with open(bin_path, "wb") as fh:
        for name, p in w.named_parameters():
            blob = io.encode(p.data)
            entries.append({"name": name, "shape": list(p.shape), "offset": offset, "nbytes": len(blob)})
            fh.write(blob)
            offset += len(blob)
    manifest = {
        "format": "GGT1-checkpoint",
        "version": 1,
        "binary": os.path.basename(bin_path),
        "config": _config_to_json(w.config),
        "parameters": entries,
    }
    with open(manifest_path, "w") as fh:
        json.dump(manifest, fh, indent=1)
        fh.write("\n")
    return bin_path


def load_checkpoint(manifest_path, dtype=np.float64):
    manifest_path = os.fspath(manifest_path)
    with open(manifest_path) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "GGT1-checkpoint":
        raise FormatError(f"{manifest_path}: not a GGT1 checkpoint manifest")
    cfg = _config_from_json(manifest["config"])
    with open(os.path.join(os.path.dirname(manifest_path), manifest["binary"]), "rb") as fh:
        buf = fh.read()
    w = build(cfg, seed=0, dtype=dtype)
    params = dict(w.named_parameters())
    seen = set()
    for e in manifest["parameters"]:
        if e["name"] not in params:
            raise FormatError(f"unknown parameter {e['name']!r} in manifest")
        arr, end = io.decode(buf, e["offset"])
        if end - e["offset"] != e["nbytes"] or list(arr.shape) != e["shape"]:
            raise FormatError(f"record for {e['name']!r} does not match its manifest entry")
        p = params[e["name"]]
        if arr.shape != p.shape:
            raise FormatError(f"{e['name']}: shape {arr.shape} but model expects {p.shape}")
        p.data[...] = arr.astype(dtype)
        seen.add(e["name"])
    missing = set(params) - seen
    if missing:
        raise FormatError(f"checkpoint lacks {len(missing)} parameters, e.g. {sorted(missing)[0]}")
    return w
