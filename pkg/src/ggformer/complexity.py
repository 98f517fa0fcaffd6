"""Exact multiply-accumulate and parameter accounting.

Convention: one FLOP is one multiply-accumulate. Only products count
(linear layers, attention matmuls, convolutions); softmax, LayerNorm, GELU,
residual adds and pooling are tallied separately as element counts and
never enter the headline MAC total. Relative-position-bias lookups cost 0.
"""
from __future__ import annotations

import csv
import io as _io
from dataclasses import dataclass, field
from typing import List, Optional

from .errors import ConfigError

INT64_MAX = 2 ** 63 - 1
CONVENTION = "1 FLOP = 1 multiply-accumulate; elementwise ops (softmax, LayerNorm, GELU, adds) excluded"


def _checked(value):
    if value > INT64_MAX:
        raise OverflowError(f"count {value} exceeds the signed 64-bit range")
    return value


def _positive(**kw):
    for name, v in kw.items():
        if not isinstance(v, int) or isinstance(v, bool) or v < 1:
            raise ConfigError(f"{name} must be a positive integer, got {v!r}")


def _kernel_area(k):
    if isinstance(k, int):
        if k < 0:
            raise ConfigError(f"kernel size must be >= 0, got {k}")
        return k * k
    kh, kw = k
    return kh * kw


def omega_msa(N, C):
    """Full attention: ``4NC^2 + 2N^2C``."""
    _positive(N=N, C=C)
    return _checked(4 * N * C * C + 2 * N * N * C)


def omega_g_msa(N, C, M):
    """Attention inside M x M partitions: ``4NC^2 + 2M^2NC``."""
    _positive(N=N, C=C, M=M)
    return _checked(4 * N * C * C + 2 * M * M * N * C)


omega_w_msa = omega_g_msa


def omega_gg_msa(N, C, M, k):
    """Glance plus a k x k depthwise gaze conv: ``4NC^2 + 2M^2NC + k^2NC``.

    ``k`` may be an int or a ``(kh, kw)`` pair.
    """
    return _checked(omega_g_msa(N, C, M) + _kernel_area(k) * N * C)


def omega_sra(N, C, R):
    """Keys/values pooled by R x R: ``2NC^2 + 2(N/R^2)C^2 + 2N(N/R^2)C``."""
    _positive(N=N, C=C, R=R)
    if N % (R * R):
        raise ConfigError(f"N={N} is not divisible by R^2={R * R}")
    m = N // (R * R)
    return _checked(2 * N * C * C + 2 * m * C * C + 2 * N * m * C)


def predicted_macs(variant, N, C, M=7, R=1):
    variant = getattr(variant, "value", variant)
    if variant == "msa":
        return omega_msa(N, C)
    if variant in ("gmsa", "wmsa"):
        return omega_g_msa(N, C, M)
    if variant == "sra":
        return omega_sra(N, C, R)
    raise ConfigError(f"unknown attention variant {variant!r}")


@dataclass
class LayerCount:
    name: str
    macs: int
    params: int


@dataclass
class FlopsReport:
    entries: List[LayerCount] = field(default_factory=list)
    # pointwise element count; None when not measured (symbolic reports)
    elementwise: Optional[int] = None
    convention: str = CONVENTION

    def add(self, name, macs=0, params=0):
        if macs < 0 or params < 0:
            raise ValueError(f"{name}: negative count")
        self.entries.append(LayerCount(name, _checked(int(macs)), _checked(int(params))))

    @property
    def total_macs(self):
        return _checked(sum(e.macs for e in self.entries))

    @property
    def total_params(self):
        return _checked(sum(e.params for e in self.entries))

    def subtotal(self, prefix):
        return sum(e.macs for e in self.entries if e.name.startswith(prefix))

    def as_dict(self):
        return {e.name: (e.macs, e.params) for e in self.entries}

    def to_csv(self):
        buf = _io.StringIO()
        wr = csv.writer(buf, lineterminator="\n")
        wr.writerow(["layer", "macs", "params"])
        for e in self.entries:
            wr.writerow([e.name, e.macs, e.params])
        wr.writerow(["total", self.total_macs, self.total_params])
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text):
        rows = list(csv.DictReader(_io.StringIO(text)))
        rep = cls()
        total = None
        for r in rows:
            if r["layer"] == "total":
                total = (int(r["macs"]), int(r["params"]))
            else:
                rep.add(r["layer"], int(r["macs"]), int(r["params"]))
        if total is not None and total != (rep.total_macs, rep.total_params):
            raise ValueError("CSV total row disagrees with the sum of its layers")
        return rep

    def to_table(self, title=""):
        width = max([len(e.name) for e in self.entries] + [5])
        lines = [title] if title else []
        lines.append(f"{'layer':<{width}}  {'MACs':>15}  {'params':>12}")
        lines.append("-" * (width + 31))
        for e in self.entries:
            lines.append(f"{e.name:<{width}}  {e.macs:>15,}  {e.params:>12,}")
        lines.append("-" * (width + 31))
        lines.append(f"{'total':<{width}}  {self.total_macs:>15,}  {self.total_params:>12,}")
        lines.append(f"GMACs {self.total_macs / 1e9:.3f}   params {self.total_params / 1e6:.3f}M")
        if self.elementwise is not None:
            lines.append(f"elementwise ops (not in MACs): {self.elementwise:,}")
        lines.append(f"convention: {self.convention}")
        return "\n".join(lines)


def count_gg_msa(report, prefix, N, C, heads, M, kernel, rel_pos_bias=True):
    """Append one glance-and-gaze attention module (with its pre-norm) to ``report``."""
    kh, kw = kernel
    report.add(prefix, 0, 2 * C + (((2 * M - 1) ** 2) * heads if rel_pos_bias else 0))
    for proj in ("q", "k", "v"):
        report.add(f"{prefix}.{proj}", N * C * C, C * C + C)
    report.add(f"{prefix}.scores", M * M * N * C, 0)
    report.add(f"{prefix}.context", M * M * N * C, 0)
    report.add(f"{prefix}.gaze", kh * kw * N * C, kh * kw * C)
    report.add(f"{prefix}.o", N * C * C, C * C + C)


def count_model(cfg, image_size=None):
    """Walk the architecture symbolically; entry names match executed-trace scopes."""
    H, W = cfg.image_size if image_size is None else (
        (image_size, image_size) if isinstance(image_size, int) else tuple(image_size))
    if image_size is not None:
        from dataclasses import replace
        cfg = replace(cfg, image_size=(H, W))
    bcfgs = cfg.block_configs()
    rep = FlopsReport()
    P, C0 = cfg.patch, cfg.embed_dim
    fan_in = cfg.in_chans * P * P
    n0 = bcfgs[0].spec.N
    rep.add("patch_embed.proj", n0 * fan_in * C0, fan_in * C0 + C0)
    rep.add("patch_embed", 0, 2 * C0)
    for s, bc in enumerate(bcfgs):
        N, C, Hd = bc.spec.N, bc.C, bc.hidden
        for b in range(cfg.depths[s]):
            blk = f"stage{s}.block{b}"
            count_gg_msa(rep, f"{blk}.attn", N, C, bc.heads, bc.M, bc.kernel, cfg.rel_pos_bias)
            rep.add(f"{blk}.mlp", 0, 2 * C)
            rep.add(f"{blk}.mlp.fc1", N * C * Hd, C * Hd + Hd)
            rep.add(f"{blk}.mlp.fc2", N * Hd * C, Hd * C + C)
        if s < cfg.num_stages - 1:
            rep.add(f"stage{s}.downsample", 0, 8 * C)
            rep.add(f"stage{s}.downsample.reduction", (N // 4) * 4 * C * 2 * C, 8 * C * C)
    c_last = cfg.width(cfg.num_stages - 1)
    rep.add("head", c_last * cfg.num_classes, 2 * c_last + c_last * cfg.num_classes + cfg.num_classes)
    return rep


def count_executed(trace):
    """Aggregate a recorded :class:`~ggformer.tensor.Trace` by scope.

    Parameters are attributed to the scope where they were first used.
    """
    macs, params, order = {}, {}, []
    for r in trace.records:
        if r.scope not in macs:
            macs[r.scope] = 0
            order.append(r.scope)
        macs[r.scope] += r.macs
    for where, n in trace.params.values():
        if where not in macs:
            macs[where] = 0
            order.append(where)
        params[where] = params.get(where, 0) + n
    rep = FlopsReport(elementwise=trace.elementwise)
    for name in order:
        if macs[name] or params.get(name, 0):
            rep.add(name, macs[name], params.get(name, 0))
    return rep
