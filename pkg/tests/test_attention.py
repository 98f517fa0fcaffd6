import itertools

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ggformer import oracles
from ggformer.attention import (
    AttentionConfig,
    Variant,
    attention,
    g_msa,
    init_attention,
    msa,
    relative_position_index,
    sra,
    w_msa,
)
from ggformer.errors import ConfigError, DimensionError, PartitionError
from ggformer.partition import PartitionSpec, dilated_split_permutation
from ggformer.tensor import no_grad


def make(rng, C, heads=1, M=2, R=1, variant=Variant.G_MSA, bias=False, scale=1.0):
    cfg = AttentionConfig(C, heads, M, R, variant, rel_pos_bias=bias)
    w = init_attention(cfg, rng)
    for _, p in w.named_parameters():
        p.data[...] = rng.standard_normal(p.shape) * scale / np.sqrt(C)
    return cfg, w


def arrays(w):
    return dict(wq=w.wq.data, wk=w.wk.data, wv=w.wv.data, wo=w.wo.data,
                bq=w.bq.data, bk=w.bk.data, bv=w.bv.data, bo=w.bo.data)


def run(fn, *args, **kw):
    with no_grad():
        return fn(*args, **kw).data


def test_config_validation():
    with pytest.raises(ConfigError):
        AttentionConfig(C=6, heads=4)
    with pytest.raises(ConfigError):
        AttentionConfig(C=4, heads=1, R=0)


def test_msa_single_token(rng):
    cfg, w = make(rng, 4, variant=Variant.MSA)
    x = rng.standard_normal((1, 4))
    v = x @ w.wv.data + w.bv.data
    assert np.allclose(run(msa, x, w, cfg), v @ w.wo.data + w.bo.data, atol=1e-12)


def test_msa_uniform_attention_averages(rng):
    cfg, w = make(rng, 4, variant=Variant.MSA)
    for p in (w.wq, w.wk, w.bq, w.bk, w.bv, w.bo):
        p.data[...] = 0
    w.wv.data[...] = np.eye(4)
    w.wo.data[...] = np.eye(4)
    x = rng.standard_normal((6, 4))
    assert np.allclose(run(msa, x, w, cfg), np.broadcast_to(x.mean(axis=0), x.shape), atol=1e-12)


def test_msa_matches_three_line_oracle(rng):
    cfg, w = make(rng, 4, variant=Variant.MSA)
    x = rng.standard_normal((6, 4))
    a = arrays(w)
    q, k, v = x @ a["wq"] + a["bq"], x @ a["wk"] + a["bk"], x @ a["wv"] + a["bv"]
    s = q @ k.T / 2.0
    ref = (np.exp(s) / np.exp(s).sum(1, keepdims=True)) @ v @ a["wo"] + a["bo"]
    assert np.allclose(run(msa, x, w, cfg), ref, atol=1e-9)


def test_oracle_attention_rows_stochastic(rng):
    x = rng.standard_normal((9, 4))
    W = [rng.standard_normal((4, 4)) for _ in range(4)]
    _, attns = oracles.naive_msa(x, *W, heads=2, return_attn=True)
    for a in attns:
        assert np.allclose(a.sum(axis=1), 1.0, atol=1e-6)


@pytest.mark.parametrize("heads", [1, 2])
def test_g_msa_single_partition_equals_msa(rng, heads):
    cfg, w = make(rng, 4 * heads, heads, M=3)
    x = rng.standard_normal((9, 4 * heads))
    full = run(msa, x, w, AttentionConfig(4 * heads, heads, 3, variant=Variant.MSA, rel_pos_bias=False))
    assert np.abs(run(g_msa, x, w, PartitionSpec(3, 3, 3), cfg) - full).max() <= 1e-9
    wcfg = AttentionConfig(4 * heads, heads, 3, variant=Variant.W_MSA, rel_pos_bias=False)
    assert np.abs(run(w_msa, x, w, PartitionSpec(3, 3, 3), wcfg) - full).max() <= 1e-9


def test_g_msa_brute_force_8x8(rng):
    cfg, w = make(rng, 8, heads=2, M=2)
    x = rng.standard_normal((64, 8))
    ref = oracles.brute_force_partition_attention(x, oracles.dilated_groups(8, 8, 2), heads=2, **arrays(w))
    assert np.abs(run(g_msa, x, w, PartitionSpec(8, 8, 2), cfg) - ref).max() <= 1e-6


def test_w_msa_brute_force_8x8(rng):
    cfg, w = make(rng, 8, heads=2, M=2, variant=Variant.W_MSA)
    x = rng.standard_normal((64, 8))
    ref = oracles.brute_force_partition_attention(x, oracles.window_groups(8, 8, 2), heads=2, **arrays(w))
    assert np.abs(run(w_msa, x, w, PartitionSpec(8, 8, 2), cfg) - ref).max() <= 1e-6


def test_g_msa_oracle_sweep(rng):
    worst = 0.0
    for M, heads in itertools.product((1, 2, 4), (1, 2)):
        for h, wd in itertools.product(range(M, 9, M), repeat=2):
            cfg, w = make(rng, 4 * heads, heads, M)
            x = rng.standard_normal((h * wd, 4 * heads))
            ref = oracles.brute_force_partition_attention(
                x, oracles.dilated_groups(h, wd, M), heads=heads, **arrays(w))
            worst = max(worst, np.abs(run(g_msa, x, w, PartitionSpec(h, wd, M), cfg) - ref).max())
    assert worst <= 1e-6


def test_g_msa_differs_from_w_msa(rng):
    # constant inside each dilated partition of a 4x4 grid (M=2), varying across windows
    values = rng.standard_normal((4, 4))
    x = np.array([values[(a % 2) * 2 + b % 2] for a in range(4) for b in range(4)])
    cfg, w = make(rng, 4, M=2)
    spec = PartitionSpec(4, 4, 2)
    g = run(g_msa, x, w, spec, cfg)
    wo = run(w_msa, x, w, spec, AttentionConfig(4, 1, 2, variant=Variant.W_MSA, rel_pos_bias=False))
    # glance sees identical tokens, so its output is the projected value of the token itself
    assert np.allclose(g, (x @ w.wv.data + w.bv.data) @ w.wo.data + w.bo.data, atol=1e-12)
    assert np.abs(g - wo).max() > 1e-3


def test_g_msa_equivariant_within_partition(rng):
    cfg, w = make(rng, 4, M=2)
    spec = PartitionSpec(4, 4, 2)
    x = rng.standard_normal((16, 4))
    part = list(dilated_split_permutation(spec).forward[:4])  # members of partition (0, 0)
    shuffled = np.arange(16)
    shuffled[part] = np.roll(part, 1)
    base = run(g_msa, x, w, spec, cfg)
    moved = run(g_msa, x[shuffled], w, spec, cfg)
    assert np.allclose(moved, base[shuffled], atol=1e-12)


def test_g_msa_equivariant_to_partition_swap(rng):
    # exchange two whole partitions: a global permutation mapping partitions onto partitions
    cfg, w = make(rng, 4, M=2)
    spec = PartitionSpec(4, 4, 2)
    fwd = dilated_split_permutation(spec).forward.reshape(4, 4)
    mapping = np.arange(16)
    mapping[fwd[0]] = fwd[3]
    mapping[fwd[3]] = fwd[0]
    x = rng.standard_normal((16, 4))
    assert np.allclose(run(g_msa, x[mapping], w, spec, cfg), run(g_msa, x, w, spec, cfg)[mapping],
                       atol=1e-12)


def test_g_msa_returns_merged_values(rng):
    cfg, w = make(rng, 4, M=2)
    x = rng.standard_normal((16, 4))
    with no_grad():
        _, values = g_msa(x, w, PartitionSpec(4, 4, 2), cfg, return_values=True)
    assert np.allclose(values.data, x @ w.wv.data + w.bv.data, atol=1e-14)


def test_g_msa_divisibility_error(rng):
    with pytest.raises(PartitionError):
        PartitionSpec(5, 4, 2)
    cfg, w = make(rng, 4, M=2)
    with pytest.raises(DimensionError):
        g_msa(rng.standard_normal((12, 4)), w, PartitionSpec(4, 4, 2), cfg)


def test_rel_pos_bias_changes_output_and_index_range(rng):
    idx = relative_position_index(3)
    assert idx.shape == (9, 9) and idx.min() == 0 and idx.max() == 24
    assert np.all(np.diag(idx) == 12)
    cfg, w = make(rng, 4, heads=2, M=2, bias=True)
    spec = PartitionSpec(4, 4, 2)
    x = rng.standard_normal((16, 4))
    before = run(g_msa, x, w, spec, cfg)
    w.rel_bias.data[...] = rng.standard_normal(w.rel_bias.shape)
    assert np.abs(run(g_msa, x, w, spec, cfg) - before).max() > 1e-6


def test_sra_r1_equals_msa(rng):
    cfg, w = make(rng, 4, variant=Variant.SRA, R=1)
    x = rng.standard_normal((16, 4))
    full = run(msa, x, w, AttentionConfig(4, 1, variant=Variant.MSA, rel_pos_bias=False))
    assert np.abs(run(sra, x, w, PartitionSpec(4, 4, 1), cfg) - full).max() <= 1e-12


def test_sra_full_collapse(rng):
    cfg, w = make(rng, 4, variant=Variant.SRA, R=4)
    x = rng.standard_normal((16, 4))
    a = arrays(w)
    expected = (x.mean(axis=0) @ a["wv"] + a["bv"]) @ a["wo"] + a["bo"]
    out = run(sra, x, w, PartitionSpec(4, 4, 1), cfg)
    assert np.allclose(out, np.broadcast_to(expected, out.shape), atol=1e-12)


def test_sra_matches_pool_then_attend_oracle(rng):
    cfg, w = make(rng, 4, heads=2, variant=Variant.SRA, R=2)
    x = rng.standard_normal((16, 4))
    grid = x.reshape(4, 4, 4)
    pooled = np.array([grid[2 * i:2 * i + 2, 2 * j:2 * j + 2].reshape(4, 4).mean(axis=0)
                       for i in range(2) for j in range(2)])
    ref = oracles.naive_msa(x, heads=2, kv=pooled, **arrays(w))
    assert np.abs(run(sra, x, w, PartitionSpec(4, 4, 1), cfg) - ref).max() <= 1e-9


def test_sra_indivisible(rng):
    cfg, w = make(rng, 4, variant=Variant.SRA, R=3)
    with pytest.raises(ConfigError):
        sra(rng.standard_normal((16, 4)), w, PartitionSpec(4, 4, 1), cfg)


@given(st.sampled_from(list(Variant)), st.integers(1, 2), st.integers(0, 2**32 - 1))
def test_output_shape_equals_input_shape(variant, M, seed):
    r = np.random.default_rng(seed)
    cfg, w = make(r, 4, heads=2, M=M, R=M, variant=variant)
    x = r.standard_normal((16, 4))
    assert run(attention, x, w, cfg, PartitionSpec(4, 4, M)).shape == x.shape
