import threading

import numpy as np
import pytest

from ggformer import oracles
from ggformer.backbone import (
    GG_S,
    GG_T,
    ModelConfig,
    build,
    forward,
    get_config,
    load_checkpoint,
    patch_embed,
    patch_merge,
    predict,
    save_checkpoint,
)
from ggformer.complexity import count_model
from ggformer.errors import ConfigError, DimensionError, FormatError
from ggformer.tensor import no_grad

TINY = ModelConfig("tiny", depths=(1, 1, 2, 1), heads=(1, 2, 2, 4), embed_dim=8, M=2,
                   num_classes=10, image_size=(64, 64))


@pytest.fixture(scope="module")
def ggt():
    return build(GG_T, seed=0)


@pytest.fixture(scope="module")
def ggt_image():
    return np.random.default_rng(5).standard_normal((3, 224, 224))


def test_ggt_forward_shapes(ggt, ggt_image):
    with no_grad():
        logits, stages = forward(ggt_image, ggt, return_stages=True)
    assert logits.shape == (1000,)
    assert [s.shape for s in stages] == [(3136, 96), (784, 192), (196, 384), (49, 768)]
    p = np.exp(logits.data - logits.data.max())
    assert (p / p.sum()).sum() == pytest.approx(1.0, abs=1e-12)


def test_ggt_forward_deterministic(ggt, ggt_image):
    a = predict(ggt_image, ggt)
    b = predict(ggt_image, build(GG_T, seed=0))
    assert np.array_equal(a, b)


def test_stage_grids_and_widths():
    assert GG_T.stage_grids() == [(56, 56), (28, 28), (14, 14), (7, 7)]
    assert [GG_T.width(s) for s in range(4)] == [96, 192, 384, 768]
    assert GG_S.depths == (2, 2, 18, 2) and GG_S.heads == (3, 6, 12, 24)


@pytest.mark.parametrize("side,stage", [(225, 1), (228, 1), (252, 2), (280, 3), (336, 4)])
def test_invalid_geometry_names_stage(side, stage):
    with pytest.raises(ConfigError, match=f"stage {stage}"):
        GG_T.stage_grids(side, side)


@pytest.mark.parametrize("H,W", [(448, 448), (224, 448), (672, 224)])
def test_valid_geometries_accepted(H, W):
    grids = GG_T.stage_grids(H, W)
    assert all(h % 7 == 0 and w % 7 == 0 for h, w in grids)


def test_unknown_variant():
    with pytest.raises(ConfigError):
        get_config("GG-X")
    assert get_config("gg_s") is GG_S


def test_build_same_seed_identical_different_seed_differs():
    a, b, c = build(TINY, 3), build(TINY, 3), build(TINY, 4)
    pa, pb, pc = (dict(m.named_parameters()) for m in (a, b, c))
    assert all(np.array_equal(pa[k].data, pb[k].data) for k in pa)
    assert any(not np.array_equal(pa[k].data, pc[k].data) for k in pa)


def test_build_init_scheme():
    w = build(TINY, 0)
    for name, p in w.named_parameters():
        if name.endswith("bias") or name.endswith(("bq", "bk", "bv", "bo", "rel_bias")):
            assert not p.data.any(), name
        elif "norm" in name:
            assert np.all(p.data == 1), name
        else:
            assert np.abs(p.data).max() <= 0.04 + 1e-9, name
            assert np.array_equal(p.data, p.data.astype(np.float32)), name


def test_parameter_enumeration_matches_count(ggt):
    assert ggt.num_parameters() == count_model(GG_T).total_params
    assert build(TINY, 0).num_parameters() == count_model(TINY).total_params


def test_patch_embed_shape_and_zero(ggt):
    with no_grad():
        assert patch_embed(np.zeros((3, 224, 224)), ggt).shape == (3136, 96)
        # zero image, zero bias, unit LN scale and zero shift -> zero tokens
        assert not patch_embed(np.zeros((3, 8, 8)), ggt).data.any()


def test_patch_embed_flatten_identity(rng):
    w = build(TINY, 0)
    w.patch_w.data[...] = 0
    w.patch_w.data[:8, :8] = np.eye(8)  # first 8 of the 48 flattened pixels
    img = rng.standard_normal((3, 4, 4))
    with no_grad():
        tok = patch_embed(img, w).data
    flat = np.zeros(8)
    flat[:8] = img.reshape(-1)[:8]
    assert np.allclose(tok[0], oracles.naive_layer_norm(flat, np.ones(8), np.zeros(8)), atol=1e-12)


def test_patch_embed_indivisible(ggt):
    with pytest.raises(ConfigError):
        patch_embed(np.zeros((3, 10, 12)), ggt)


def test_patch_merge_shape(ggt, rng):
    with no_grad():
        assert patch_merge(rng.standard_normal((3136, 96)), 56, 56, ggt.merges[0]).shape == (784, 192)


def test_patch_merge_odd_grid(ggt):
    with pytest.raises(DimensionError):
        patch_merge(np.zeros((15, 96)), 3, 5, ggt.merges[0])


def test_patch_merge_constant_input(rng):
    w = build(TINY, 0).merges[0]
    w.reduction.data[...] = np.vstack([np.eye(8, 16)] * 4) / 4
    w.norm_b.data[...] = rng.standard_normal(32)
    x = np.tile(rng.standard_normal(8), (16, 1))
    with no_grad():
        out = patch_merge(x, 4, 4, w).data
    assert np.allclose(out, out[0], atol=1e-14)


def test_patch_merge_average_reduction(rng):
    C = 8
    w = build(TINY, 0).merges[0]
    half = np.hstack([np.eye(C), np.eye(C)])  # C x 2C, duplicates the input
    w.reduction.data[...] = np.vstack([half] * 4) / 4
    x = rng.standard_normal((4, C))
    with no_grad():
        out = patch_merge(x, 2, 2, w).data[0]
    # concat order (0,0), (1,0), (0,1), (1,1) = tokens 0, 2, 1, 3
    cat = oracles.naive_layer_norm(np.concatenate([x[0], x[2], x[1], x[3]]), np.ones(4 * C), np.zeros(4 * C))
    m = cat.reshape(4, C).mean(axis=0)
    assert np.allclose(out, np.concatenate([m, m]), atol=1e-12)


def test_checkpoint_roundtrip_bit_exact(tmp_path, rng):
    w = build(TINY, 11)
    save_checkpoint(w, tmp_path / "tiny.json")
    back = load_checkpoint(tmp_path / "tiny.json")
    assert back.config == TINY
    for (n1, p1), (n2, p2) in zip(w.named_parameters(), back.named_parameters()):
        assert n1 == n2 and np.array_equal(p1.data, p2.data)
    img = rng.standard_normal((3, 64, 64))
    assert np.array_equal(predict(img, w), predict(img, back))
    save_checkpoint(back, tmp_path / "again.json")
    assert (tmp_path / "tiny.bin").read_bytes() == (tmp_path / "again.bin").read_bytes()


def test_checkpoint_corrupt_record(tmp_path):
    save_checkpoint(build(TINY, 0), tmp_path / "t.json")
    raw = bytearray((tmp_path / "t.bin").read_bytes())
    raw[0:4] = b"XXXX"
    (tmp_path / "t.bin").write_bytes(bytes(raw))
    with pytest.raises(FormatError):
        load_checkpoint(tmp_path / "t.json")


def test_concurrent_forward_on_shared_weights(rng):
    w = build(TINY, 2)
    imgs = [rng.standard_normal((3, 64, 64)) for _ in range(4)]
    expected = [predict(im, w) for im in imgs]
    got = [None] * 4

    def work(i):
        got[i] = predict(imgs[i], w)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(4)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert all(np.array_equal(a, b) for a, b in zip(got, expected))


def test_float32_forward_close_to_float64(rng):
    img = rng.standard_normal((3, 64, 64))
    w64, w32 = build(TINY, 1), build(TINY, 1, dtype=np.float32)
    out32 = predict(img, w32)
    assert out32.dtype == np.float32
    assert np.allclose(out32, predict(img, w64), atol=1e-4)
