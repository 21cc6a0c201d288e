import numpy as np
import pytest
from oracles import spatial_pool_np, temporal_pool_np

from stinet.autograd import Tensor
from stinet.config import DESK_DIMS, PAPER_DIMS
from stinet.gmi import (CuboidEmbed, GlobalMotionInfusion, GmiLayer,
                        TrajectoryAttention, align_sti_temporal,
                        spatial_trajectory_pool, temporal_trajectory_pool)

RNG = np.random.default_rng(77)


# ------------------------------------------------------------------ tokenizer


def test_tokenize_paper_preset_counts():
    d = PAPER_DIMS
    embed = CuboidEmbed(d.frame_hw, d.seq_len, d.patch, 32, RNG)
    assert embed.grid == (8, 14, 14)
    assert embed.pos.shape == (8, 196, 32)
    assert d.temporal_len == 8  # 1568 tokens at temporal resolution 8
    assert 8 * 14 * 14 == 1568


def test_tokenize_desk_preset_counts():
    d = DESK_DIMS
    embed = CuboidEmbed(d.frame_hw, d.seq_len, d.patch, d.d, RNG)
    grid = embed(RNG.random((2, 16, 32, 32, 3)))
    assert grid.tokens.shape == (2, 8, 16, d.d)  # 128 tokens
    assert grid.cls.shape == (2, 1, d.d)  # learned class token prepended
    assert grid.grid_hw == (4, 4)


def test_tokenize_black_video_zero_positions_gives_bias():
    embed = CuboidEmbed((8, 8), 4, (2, 4, 4), 6, RNG)
    embed.pos.data[:] = 0.0
    grid = embed(np.zeros((1, 4, 8, 8, 3)))
    expected = embed.proj.bias.data
    np.testing.assert_allclose(grid.tokens.data,
                               np.broadcast_to(expected, grid.tokens.shape),
                               atol=1e-15)


def test_tokenize_indivisible_dims_name_axis():
    with pytest.raises(ValueError, match="time"):
        CuboidEmbed((8, 8), 5, (2, 4, 4), 6, RNG)
    with pytest.raises(ValueError, match="height"):
        CuboidEmbed((9, 8), 4, (2, 4, 4), 6, RNG)
    with pytest.raises(ValueError, match="width"):
        CuboidEmbed((8, 10), 4, (2, 4, 4), 6, RNG)


def test_tokenize_patches_pick_correct_pixels():
    # one bright pixel; only the cuboid containing it should differ
    embed = CuboidEmbed((8, 8), 4, (2, 4, 4), 6, RNG)
    embed.pos.data[:] = 0.0
    video = np.zeros((1, 4, 8, 8, 3))
    video[0, 3, 6, 2, 0] = 1.0  # frame 3 -> temporal group 1; row 6, col 2 -> patch (1, 0)
    grid = embed(video).tokens.data
    base = embed(np.zeros((1, 4, 8, 8, 3))).tokens.data
    diff = np.abs(grid - base).sum(axis=-1)[0]
    assert diff[1, 2] > 0  # spatial index = row 1 * 2 cols + col 0 -> 2
    diff[1, 2] = 0
    np.testing.assert_array_equal(diff, 0.0)


# ------------------------------------------------------------------ alignment


def test_align_16_to_8_averages_pairs():
    x = RNG.normal(size=(2, 16, 5))
    out = align_sti_temporal(Tensor(x), 8).data
    np.testing.assert_allclose(out, (x[:, 0::2] + x[:, 1::2]) / 2.0, atol=1e-12)


def test_align_identity_when_equal():
    x = RNG.normal(size=(2, 8, 5))
    out = align_sti_temporal(Tensor(x), 8).data
    np.testing.assert_array_equal(out, x)


def test_align_constant_sequence():
    x = np.broadcast_to(RNG.normal(size=(1, 1, 5)), (1, 12, 5)).copy()
    out = align_sti_temporal(Tensor(x), 4).data
    np.testing.assert_allclose(out, x[:, :4], atol=1e-12)


def test_align_indivisible_errors():
    with pytest.raises(ValueError, match="divisible"):
        align_sti_temporal(Tensor(np.zeros((1, 10, 4))), 4)


# ------------------------------------------------------------------ kernels


def test_spatial_pool_single_location_returns_value():
    q = Tensor(RNG.normal(size=(1, 1, 3, 4)))
    k = Tensor(RNG.normal(size=(1, 1, 2, 1, 4)))  # H'=W'=1
    v = Tensor(RNG.normal(size=(1, 1, 2, 1, 4)))
    out, w = spatial_trajectory_pool(q, k, v, 0.5)
    np.testing.assert_allclose(out.data, np.broadcast_to(
        v.data[:, :, None, :, 0, :], (1, 1, 3, 2, 4)), atol=1e-12)
    np.testing.assert_allclose(w.data, 1.0, atol=1e-12)


def test_spatial_pool_identical_keys_mean_values():
    q = Tensor(RNG.normal(size=(1, 1, 2, 4)))
    k = Tensor(np.broadcast_to(RNG.normal(size=(1, 1, 2, 1, 4)), (1, 1, 2, 5, 4)).copy())
    v = Tensor(RNG.normal(size=(1, 1, 2, 5, 4)))
    out, _ = spatial_trajectory_pool(q, k, v, 0.5)
    expected = v.data.mean(axis=3)  # uniform weights over s
    for qi in range(2):
        np.testing.assert_allclose(out.data[0, 0, qi], expected[0, 0], atol=1e-12)


def test_spatial_pool_matches_loop_oracle():
    scale = 1.0 / np.sqrt(4)
    q = RNG.normal(size=(1, 1, 3, 4))
    k = RNG.normal(size=(1, 1, 2, 4, 4))  # 2x2 spatial grid
    v = RNG.normal(size=(1, 1, 2, 4, 4))
    out, w = spatial_trajectory_pool(Tensor(q), Tensor(k), Tensor(v), scale)
    ref = spatial_pool_np(q[0, 0], k[0, 0], v[0, 0], scale)
    np.testing.assert_allclose(out.data[0, 0], ref, atol=1e-10)
    np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-9)


def test_spatial_pool_convex_envelope():
    q = Tensor(RNG.normal(size=(2, 2, 4, 8)))
    k = Tensor(RNG.normal(size=(2, 2, 3, 6, 8)))
    v = Tensor(RNG.normal(size=(2, 2, 3, 6, 8)))
    out, _ = spatial_trajectory_pool(q, k, v, 0.3, check_envelope=True)
    lo = v.data.min(axis=3)
    hi = v.data.max(axis=3)
    for qi in range(4):
        assert (out.data[:, :, qi] >= lo - 1e-12).all()
        assert (out.data[:, :, qi] <= hi + 1e-12).all()


def test_temporal_pool_single_frame_returns_value():
    q = Tensor(RNG.normal(size=(1, 1, 3, 4)))
    k = Tensor(RNG.normal(size=(1, 1, 3, 1, 4)))
    v = Tensor(RNG.normal(size=(1, 1, 3, 1, 4)))
    out, _ = temporal_trajectory_pool(q, k, v, 0.5)
    np.testing.assert_allclose(out.data, v.data[:, :, :, 0, :], atol=1e-12)


def test_temporal_pool_identical_keys_uniform_average():
    q = Tensor(RNG.normal(size=(1, 1, 2, 4)))
    k = Tensor(np.broadcast_to(RNG.normal(size=(1, 1, 2, 1, 4)), (1, 1, 2, 5, 4)).copy())
    v = Tensor(RNG.normal(size=(1, 1, 2, 5, 4)))
    out, w = temporal_trajectory_pool(q, k, v, 0.5)
    np.testing.assert_allclose(out.data, v.data.mean(axis=3), atol=1e-12)
    np.testing.assert_allclose(w.data, 0.2, atol=1e-12)


def test_temporal_pool_matches_loop_oracle():
    scale = 1.0 / np.sqrt(4)
    q = RNG.normal(size=(1, 1, 5, 4))
    k = RNG.normal(size=(1, 1, 5, 3, 4))  # T'=3
    v = RNG.normal(size=(1, 1, 5, 3, 4))
    out, w = temporal_trajectory_pool(Tensor(q), Tensor(k), Tensor(v), scale)
    ref = temporal_pool_np(q[0, 0], k[0, 0], v[0, 0], scale)
    np.testing.assert_allclose(out.data[0, 0], ref, atol=1e-10)
    np.testing.assert_allclose(w.data.sum(axis=-1), 1.0, atol=1e-9)


def test_trajectory_attention_shapes_and_determinism():
    attn = TrajectoryAttention(8, 2, RNG)
    queries = RNG.normal(size=(2, 5, 8))
    grid = RNG.normal(size=(2, 3, 4, 8))
    frames = np.array([0, 1, 2, 0, 1])
    a = attn(Tensor(queries), Tensor(grid), frames).data
    b = attn(Tensor(queries), Tensor(grid), frames).data
    assert a.shape == (2, 5, 8)
    assert (a == b).all()


# ------------------------------------------------------------------ GMI layer


def _tiny_gmi(layers=1, heads=2, d=8, k=3, frame=8, t=4, patch=(2, 4, 4), seed=11):
    return GlobalMotionInfusion((frame, frame), t, patch, d, heads, layers, k,
                                np.random.default_rng(seed))


def test_gmi_layer_zero_output_projections_reduce_to_mlp_path():
    layer = GmiLayer(8, 2, RNG)
    layer.cross.wo.weight.data[:] = 0.0
    layer.cross.wo.bias.data[:] = 0.0
    layer.self_traj.wo.weight.data[:] = 0.0
    layer.self_traj.wo.bias.data[:] = 0.0
    layer.cls_attn.wo.weight.data[:] = 0.0
    layer.cls_attn.wo.bias.data[:] = 0.0

    cls = Tensor(RNG.normal(size=(1, 1, 8)))
    video = Tensor(RNG.normal(size=(1, 2, 4, 8)))
    sti = Tensor(RNG.normal(size=(1, 2, 8)))
    out_cls, out_video, out_sti, _ = layer(cls, video, sti)

    def mlp_only(x, ln, mlp):
        xt = Tensor(x)
        return (xt + mlp(ln(xt))).data

    # STI path: attention residual is zero, both MLP sublayers still apply
    sti_mid = mlp_only(sti.data, layer.ln_sti_mlp, layer.sti_mlp)
    expected_sti = mlp_only(sti_mid, layer.ln_joint_mlp, layer.joint_mlp)
    np.testing.assert_allclose(out_sti.data, expected_sti, atol=1e-12)
    expected_cls = mlp_only(cls.data, layer.ln_joint_mlp, layer.joint_mlp)
    np.testing.assert_allclose(out_cls.data, expected_cls, atol=1e-12)
    expected_video = mlp_only(video.data.reshape(1, 8, 8),
                              layer.ln_joint_mlp, layer.joint_mlp)
    np.testing.assert_allclose(out_video.data.reshape(1, 8, 8), expected_video,
                               atol=1e-12)


def test_gmi_forward_shapes_and_cls_rows():
    model = _tiny_gmi()
    video = RNG.random((2, 4, 8, 8, 3))
    sti = Tensor(RNG.normal(size=(2, 4, 8)))
    out = model(video, sti, collect_attention=True, check_envelope=True)
    assert out.logits.shape == (2, 3)
    assert out.z_cls_final.shape == (2, 8)
    assert out.refined_sti.shape == (2, 2, 8)  # aligned to T'=2
    assert len(out.cls_attention) == 1
    rows = out.cls_attention[0]
    # N = 1 cls + 2*4 video + 2 sti = 11
    assert rows.shape == (2, 2, 11)
    np.testing.assert_allclose(rows.sum(axis=-1), 1.0, atol=1e-9)


def test_gmi_classify_zero_weights_bias_only():
    model = _tiny_gmi()
    model.head.weight.data[:] = 0.0
    model.head.bias.data[:] = np.arange(3.0)
    logits = model.classify(Tensor(RNG.normal(size=(4, 8)))).data
    np.testing.assert_allclose(logits, np.broadcast_to(np.arange(3.0), (4, 3)),
                               atol=1e-15)


def test_gmi_argmax_invariant_to_constant_logit_shift():
    logits = RNG.normal(size=(5, 6))
    assert (np.argmax(logits, axis=1) == np.argmax(logits + 3.7, axis=1)).all()


def test_gmi_desk_layer_head_counts():
    assert DESK_DIMS.gmi_layers == 2 and DESK_DIMS.gmi_heads == 4
    assert PAPER_DIMS.gmi_layers == 12 and PAPER_DIMS.gmi_heads == 12
    model = _tiny_gmi(layers=2)
    assert len(model.blocks) == 2
