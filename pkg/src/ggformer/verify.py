"""Invariant suites behind ``ggformer verify``.

Each suite returns a list of :class:`Check`; a suite passes iff every check
does. ``fault="merge"`` corrupts the merge permutation handed to glance
attention so the oracle suite can be shown to catch it.
"""
from __future__ import annotations

import itertools
import json
import time
from dataclasses import dataclass

import numpy as np

from . import oracles
from .attention import AttentionConfig, Variant, g_msa, init_attention, msa
from .backbone import GG_S, GG_T, build, forward
from .complexity import count_executed, count_model, omega_g_msa, omega_gg_msa, omega_msa
from .ggblock import BlockConfig, GazeConfig, gg_block, gg_msa, init_block
from .partition import (
    PartitionSpec,
    Permutation,
    check_bijection,
    dilated_split_permutation,
    merge,
    split,
    window_split_permutation,
)
from .tensor import (
    Parameter,
    add,
    depthwise_conv2d,
    finite_diff_check,
    gelu,
    layer_norm,
    linear,
    matmul,
    mean,
    mul,
    no_grad,
    record,
    scale,
    softmax_rows,
    sum_all,
    take,
    transpose,
)

SUITES = ("oracle", "grad", "perm", "flops")


@dataclass
class Check:
    suite: str
    name: str
    passed: bool
    value: object = None
    tol: object = None

    def line(self):
        return json.dumps({"suite": self.suite, "check": self.name,
                           "status": "PASS" if self.passed else "FAIL",
                           "value": self.value, "tol": self.tol})


def _weights(rng, C):
    return [rng.standard_normal((C, C)) / np.sqrt(C) for _ in range(4)]


def faulty_dilated(spec):
    """Dilated permutation whose merge step swaps the first two tokens back wrongly."""
    good = dilated_split_permutation(spec)
    inv = good.inverse.copy()
    inv[[0, 1]] = inv[[1, 0]]
    return Permutation(good.forward, inv)


# -- suites ------------------------------------------------------------------

def oracle_suite(seed=0, fault=None):
    rng = np.random.default_rng(seed)
    checks = []
    worst, worst_deg = 0.0, 0.0
    for M, heads in itertools.product((1, 2, 4), (1, 2)):
        C = 4 * heads
        for h, w in itertools.product(range(M, 9, M), repeat=2):
            spec = PartitionSpec(h, w, M)
            x = rng.standard_normal((h * w, C))
            W = _weights(rng, C)
            cfg = AttentionConfig(C, heads, M, rel_pos_bias=False)
            aw = init_attention(cfg, rng)
            for p, arr in zip((aw.wq, aw.wk, aw.wv, aw.wo), W):
                p.data[...] = arr
            perm = faulty_dilated(spec) if fault == "merge" and h * w > 1 else None
            with no_grad():
                got = g_msa(x, aw, spec, cfg, perm=perm).data
            ref = oracles.brute_force_partition_attention(
                x, oracles.dilated_groups(h, w, M), *W, heads=heads)
            worst = max(worst, float(np.abs(got - ref).max()))
            if h == w == M:
                with no_grad():
                    full = msa(x, aw, AttentionConfig(C, heads, M, variant=Variant.MSA,
                                                      rel_pos_bias=False)).data
                worst_deg = max(worst_deg, float(np.abs(got - full).max()))
    checks.append(Check("oracle", "g_msa_vs_brute_force", worst <= 1e-6, worst, 1e-6))
    checks.append(Check("oracle", "degenerate_equals_msa", worst_deg <= 1e-9, worst_deg, 1e-9))
    return checks


def primitive_gradchecks(seed=0, tol=1e-5):
    """(name, report) for every differentiable primitive at small random shapes."""
    rng = np.random.default_rng(seed)
    P = lambda *s: Parameter(rng.standard_normal(s))  # noqa: E731
    out = []

    def run(name, make, params):
        fixed = {}

        def f():
            y = make()
            if "r" not in fixed:
                fixed["r"] = rng.standard_normal(y.shape)
            return sum_all(mul(y, fixed["r"]))

        out.append((name, finite_diff_check(f, params, tol=tol)))

    a, b = P(3, 5), P(5, 4)
    run("matmul", lambda: matmul(a, b), [a, b])
    ba, bb = P(2, 3, 4), P(2, 4, 2)
    run("matmul_batched", lambda: matmul(ba, bb), [ba, bb])
    x, w, bias = P(6, 5), P(5, 3), P(3)
    run("linear", lambda: linear(x, w, bias), [x, w, bias])
    s = P(4, 7)
    run("softmax_rows", lambda: softmax_rows(s), [s])
    xl, g, be = P(5, 6), P(6), P(6)
    run("layer_norm", lambda: layer_norm(xl, g, be), [xl, g, be])
    xg = P(4, 5)
    run("gelu", lambda: gelu(xg), [xg])
    xc, kc = P(3, 5, 6), P(3, 3, 5)
    run("depthwise_conv2d", lambda: depthwise_conv2d(xc, kc), [xc, kc])
    xt = P(3, 4, 2)
    idx = rng.integers(0, 3, size=5)
    run("take", lambda: take(xt, idx, axis=0), [xt])
    run("transpose", lambda: transpose(xt, (2, 0, 1)), [xt])
    run("mean", lambda: mean(xt, axis=1), [xt])
    xa, ba2 = P(2, 3, 4), P(3, 4)
    run("add_broadcast", lambda: add(xa, ba2), [xa, ba2])
    m2 = P(3, 5)
    run("mul", lambda: mul(a, m2), [a, m2])
    run("scale", lambda: scale(a, -1.7), [a])
    return out


def toy_block(seed=0, heads=2):
    rng = np.random.default_rng(seed)
    cfg = BlockConfig(C=4, heads=heads, spec=PartitionSpec(4, 4, 2), mlp_ratio=2.0,
                      gaze=GazeConfig.fixed(3), rel_pos_bias=True)
    w = init_block(cfg, rng)
    # non-degenerate values everywhere so every path carries gradient
    for _, p in w.named_parameters():
        p.data[...] = rng.standard_normal(p.shape) * 0.5
    return cfg, w, rng


def block_gradcheck(seed=0, tol=1e-4):
    cfg, w, rng = toy_block(seed)
    x = Parameter(rng.standard_normal((cfg.spec.N, cfg.C)), name="x")
    r = rng.standard_normal((cfg.spec.N, cfg.C))
    params = [x] + [p for _, p in w.named_parameters()]
    for name, p in w.named_parameters():
        p.name = name
    # O(1) loss: the key bias has an identically zero gradient (softmax shift
    # invariance), so its check is rounding noise against the 1e-8 floor.
    n = r.size
    return finite_diff_check(lambda: scale(sum_all(mul(gg_block(x, w, cfg), r)), 1.0 / n),
                             params, tol=tol)


def grad_suite(seed=0):
    checks = [Check("grad", f"primitive:{n}", rep.passed, rep.max_rel_error, rep.tol)
              for n, rep in primitive_gradchecks(seed)]
    rep = block_gradcheck(seed)
    checks.append(Check("grad", "gg_block", rep.passed, rep.max_rel_error, rep.tol))
    return checks


def perm_suite(seed=0, n_random=100):
    rng = np.random.default_rng(seed)
    ok_inverse = True
    for _ in range(n_random):
        M = int(rng.integers(1, 6))
        spec = PartitionSpec(M * int(rng.integers(1, 6)), M * int(rng.integers(1, 6)), M)
        for perm in (dilated_split_permutation(spec), window_split_permutation(spec)):
            check_bijection(perm.forward)
            x = rng.standard_normal((spec.N, 2))
            with no_grad():
                ok_inverse &= np.array_equal(merge(split(x, perm), perm).data, x)
                ok_inverse &= np.array_equal(split(merge(x, perm), perm).data, x)
            ok_inverse &= np.array_equal(perm.inverse[perm.forward], np.arange(spec.N))
    residue_ok, n_specs = True, 0
    for h, w in itertools.product(range(1, 17), repeat=2):
        for M in range(1, min(h, w) + 1):
            if h % M or w % M:
                continue
            spec = PartitionSpec(h, w, M)
            groups = dilated_split_permutation(spec).forward.reshape(spec.num_partitions, M * M)
            dh, dw = spec.dilation
            for part, idx in enumerate(groups):
                a, b = np.divmod(idx, w)
                residue_ok &= bool(np.all(a % dh == part // dw) and np.all(b % dw == part % dw))
            n_specs += 1
    return [
        Check("perm", "split_merge_inverse_bijection", bool(ok_inverse), n_random),
        Check("perm", "residue_class_membership", bool(residue_ok), n_specs),
    ]


def random_gg_msa_case(rng):
    M = int(rng.integers(1, 5))
    h, w = M * int(rng.integers(1, 5)), M * int(rng.integers(1, 5))
    heads = int(rng.integers(1, 3))
    C = heads * int(rng.integers(1, 5))
    k = int(rng.choice([1, 3, 5, 7]))
    return h, w, M, C, heads, k


def executed_macs(fn):
    with no_grad(), record() as tr:
        fn()
    return tr.macs


def flops_suite(seed=0, full_model=True):
    rng = np.random.default_rng(seed)
    parity = {"gg_msa": True, "g_msa": True, "msa": True}
    for _ in range(20):
        h, w, M, C, heads, k = random_gg_msa_case(rng)
        spec = PartitionSpec(h, w, M)
        N = spec.N
        bc = BlockConfig(C, heads, spec, 4.0, GazeConfig.fixed(k))
        bw = init_block(bc, rng)
        x = rng.standard_normal((N, C))
        parity["gg_msa"] &= executed_macs(lambda: gg_msa(x, bw, bc)) == omega_gg_msa(N, C, M, k)
        parity["g_msa"] &= executed_macs(
            lambda: g_msa(x, bw.attn, spec, bc.attention)) == omega_g_msa(N, C, M)
        mc = AttentionConfig(C, heads, M, variant=Variant.MSA)
        parity["msa"] &= executed_macs(lambda: msa(x, bw.attn, mc)) == omega_msa(N, C)
    checks = [Check("flops", f"formula_parity:{k}", bool(v), 20) for k, v in parity.items()]
    spots = (omega_msa(196, 96), omega_g_msa(3136, 96, 7), omega_gg_msa(3136, 96, 7, 9))
    checks.append(Check("flops", "spot_values", spots == (14601216, 145108992, 169494528), list(spots)))
    for cfg, p_ref, f_ref in ((GG_T, 28e6, 4.5e9), (GG_S, 50e6, 8.7e9)):
        rep = count_model(cfg)
        dp, df = rep.total_params / p_ref - 1, rep.total_macs / f_ref - 1
        checks.append(Check("flops", f"{cfg.name}:params", abs(dp) <= 0.03, rep.total_params, "3%"))
        checks.append(Check("flops", f"{cfg.name}:macs", abs(df) <= 0.05, rep.total_macs, "5%"))
    kernels = tuple(bc.kernel[0] for bc in GG_T.block_configs())
    checks.append(Check("flops", "adaptive_kernels", kernels == (9, 5, 3, 3), list(kernels)))
    if full_model:
        w = build(GG_T, seed)
        img = np.random.default_rng(seed).standard_normal((3, 224, 224))
        with no_grad(), record() as tr:
            forward(img, w)
        ex, sym = count_executed(tr), count_model(GG_T)
        checks.append(Check("flops", "GG-T:executed_equals_symbolic",
                            ex.as_dict() == sym.as_dict(), ex.total_macs))
        checks.append(Check("flops", "GG-T:weight_enumeration_params",
                            w.num_parameters() == sym.total_params, w.num_parameters()))
    return checks


def run_suites(names, seed=0, fault=None):
    names = SUITES if "all" in names else names
    out = []
    for name in names:
        t0 = time.perf_counter()
        if name == "oracle":
            checks = oracle_suite(seed, fault)
        elif name == "grad":
            checks = grad_suite(seed)
        elif name == "perm":
            checks = perm_suite(seed)
        elif name == "flops":
            checks = flops_suite(seed)
        else:
            raise ValueError(f"unknown suite {name!r}")
        out.append((name, checks, time.perf_counter() - t0))
    return out
