import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from conftest import plane_spec
from se3flow import geometry as geo
from se3flow import synthetic as S
from se3flow.errors import InvalidArgumentError, LogDomainError
from se3flow.field import (
    ConvexUpsampleMask,
    SE3Field,
    bilinear_upsample,
    bilinear_upsample_se3,
    convex_upsample,
    convex_upsample_embeddings,
    convex_upsample_se3,
    induced_flow,
    inverse_depth_residual,
    pixel_grid,
    sample_bilinear,
    sample_twist,
)


def random_field(rng, h, w, scale=0.3):
    return SE3Field.from_twists(scale * rng.standard_normal((h, w, 6)))


def random_mask(rng, h, w):
    return ConvexUpsampleMask.from_logits(3.0 * rng.standard_normal((2 * h, 2 * w, 9)))


def test_construction_normalizes_and_freezes(rng):
    q = rng.standard_normal((2, 3, 4))
    q[..., 0] = np.abs(q[..., 0]) + 1.5
    f = SE3Field(q, np.zeros((2, 3, 3)))
    assert np.allclose(np.linalg.norm(f.q, axis=-1), 1.0, atol=1e-15)
    with pytest.raises(ValueError):
        f.q[0, 0, 0] = 2.0


def test_construction_rejects_log_cut():
    q = np.tile([1.0, 0, 0, 0], (2, 2, 1))
    q[1, 0] = [np.cos((np.pi - 1e-7) / 2), np.sin((np.pi - 1e-7) / 2), 0, 0]
    with pytest.raises(LogDomainError) as info:
        SE3Field(q, np.zeros((2, 2, 3)))
    assert info.value.pixel == (1, 0)


def test_array_round_trip(rng):
    f = random_field(rng, 4, 5)
    g = SE3Field.from_array(f.to_array())
    assert np.array_equal(f.q, g.q) and np.array_equal(f.t, g.t)


def test_mask_rows_partition_unity(rng):
    m = ConvexUpsampleMask(rng.uniform(0, 3, (6, 8, 9)))
    assert np.allclose(m.weights.sum(-1), 1.0, atol=1e-12)
    assert m.coarse_shape == (3, 4)


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, (4, 4, 9), elements=st.floats(-30, 30)))
def test_softmax_mask_partition_property(logits):
    w = ConvexUpsampleMask.from_logits(logits).weights
    assert np.all(w >= 0) and np.allclose(w.sum(-1), 1.0, atol=1e-6)


def test_mask_validation():
    with pytest.raises(InvalidArgumentError):
        ConvexUpsampleMask(np.ones((3, 4, 9)))
    with pytest.raises(InvalidArgumentError):
        ConvexUpsampleMask(-np.ones((4, 4, 9)))
    with pytest.raises(InvalidArgumentError):
        ConvexUpsampleMask(np.zeros((4, 4, 9)))


def test_convex_constant_field_invariant(rng):
    T = geo.se3_exp(geo.Twist([0.3, -0.1, 0.2], [0.4, 0.2, -0.5]))
    up = convex_upsample_se3(SE3Field.constant(T, 5, 6), random_mask(rng, 5, 6))
    assert up.shape == (10, 12)
    assert np.allclose(up.q, T.q, atol=1e-9) and np.allclose(up.t, T.t, atol=1e-9)


def test_convex_identity_field(rng):
    up = convex_upsample_se3(SE3Field.identity(3, 3), random_mask(rng, 3, 3))
    assert np.array_equal(up.twists(), np.zeros((6, 6, 6)))


def test_convex_one_hot_is_replication(rng):
    f = random_field(rng, 4, 3)
    up = convex_upsample_se3(f, ConvexUpsampleMask.nearest(4, 3))
    rep = np.repeat(np.repeat(f.twists(), 2, 0), 2, 1)
    assert np.allclose(up.twists(), rep, atol=1e-12)


def test_convex_offset_convention():
    # fine pixel (0, 0) with all weight on offset (+1, +1) takes coarse pixel (1, 1)
    w = np.zeros((6, 6, 9))
    w[..., 4] = 1.0
    w[0, 0] = 0.0
    w[0, 0, 8] = 1.0
    arr = np.arange(9.0).reshape(3, 3)
    assert convex_upsample(arr, ConvexUpsampleMask(w))[0, 0] == arr[1, 1]
    # and the far corner clamps at the border
    w[5, 5] = 0.0
    w[5, 5, 8] = 1.0
    assert convex_upsample(arr, ConvexUpsampleMask(w))[5, 5] == arr[2, 2]


def test_convex_embeddings_linear_and_constant(rng):
    m = random_mask(rng, 4, 4)
    e1, e2 = rng.standard_normal((2, 4, 4, 16))
    lhs = convex_upsample_embeddings(2.0 * e1 - 3.0 * e2, m)
    rhs = 2.0 * convex_upsample_embeddings(e1, m) - 3.0 * convex_upsample_embeddings(e2, m)
    assert np.allclose(lhs, rhs, atol=1e-12)
    c = np.broadcast_to(rng.standard_normal(16), (4, 4, 16))
    assert np.allclose(convex_upsample_embeddings(c, m), c[0, 0], atol=1e-12)
    rep = np.repeat(np.repeat(e1, 2, 0), 2, 1)
    assert np.array_equal(convex_upsample_embeddings(e1, ConvexUpsampleMask.nearest(4, 4)), rep)


def test_convex_shape_mismatch(rng):
    with pytest.raises(InvalidArgumentError):
        convex_upsample(np.zeros((3, 3)), ConvexUpsampleMask.uniform(4, 4))


def test_bilinear_constant_and_factor_one(rng):
    T = geo.se3_exp(geo.Twist([1, 2, 3], [0.1, 0.2, 0.3]))
    up = bilinear_upsample_se3(SE3Field.constant(T, 3, 2), 4)
    assert up.shape == (12, 8) and np.allclose(up.twists(), geo.se3_log(T).as_vector(), atol=1e-12)
    f = random_field(rng, 3, 3)
    assert bilinear_upsample_se3(f, 1) is f
    with pytest.raises(InvalidArgumentError):
        bilinear_upsample_se3(f, 3)


def test_bilinear_midpoint_of_two_pixels():
    xi = np.array([0.1, -0.2, 0.05, 0.02, 0.1, -0.03])
    f = SE3Field.from_twists(np.stack([xi, 3 * xi])[None])
    T = sample_twist(f, 0.5, 0.0)
    E = geo.se3_exp(geo.Twist.from_vector(2 * xi))
    assert np.allclose(T.matrix(), E.matrix(), atol=1e-12)


def test_bilinear_upsample_pixel_centres():
    a = np.array([[0.0, 4.0]])
    up = bilinear_upsample(a, 2)
    # fine centres map to coarse -0.25, 0.25, 0.75, 1.25 (clamped at the ends)
    assert np.allclose(up, [[0, 1, 3, 4], [0, 1, 3, 4]])


def test_bilinear_reproduces_affine_interior(rng):
    ys, xs = np.mgrid[0:6, 0:5].astype(float)
    a = 2 * xs - 3 * ys + 1
    up = bilinear_upsample(a, 4)
    fy, fx = np.mgrid[0:24, 0:20].astype(float)
    cx, cy = (fx + 0.5) / 4 - 0.5, (fy + 0.5) / 4 - 0.5
    inner = (cx >= 0) & (cx <= 4) & (cy >= 0) & (cy <= 5)
    assert np.allclose(up[inner], (2 * cx - 3 * cy + 1)[inner], atol=1e-12)


def test_sample_bilinear_out_of_range():
    img = np.ones((3, 3))
    vals, inside = sample_bilinear(img, np.array([-0.1, 1.5, 2.0, 2.01]), np.array([1.0, 1.5, 2.0, 0.0]))
    assert inside.tolist() == [False, True, True, False] and vals.tolist() == [0, 1, 1, 0]


CAM = geo.PinholeCamera(200.0, 200.0, 31.5, 31.5)


def test_induced_flow_identity_is_zero(rng):
    d = rng.uniform(0.1, 1.0, (8, 8))
    flow, valid = induced_flow(SE3Field.identity(8, 8), d, CAM)
    assert valid.all() and np.array_equal(flow.flow, 0 * flow.flow) and np.array_equal(flow.dchange, 0 * d)


def test_induced_flow_x_translation():
    Z, tx = 2.0, 0.1
    f = SE3Field.constant(geo.SE3Transform([1, 0, 0, 0], [tx, 0, 0]), 8, 8)
    flow, _ = induced_flow(f, np.full((8, 8), 1 / Z), CAM)
    assert np.allclose(flow.flow[..., 0], CAM.fx * tx / Z) and np.allclose(flow.flow[..., 1], 0)
    assert np.allclose(flow.dchange, 0, atol=1e-15)


def test_induced_flow_z_translation_expands():
    Z, dZ = 2.0, 0.5
    f = SE3Field.constant(geo.SE3Transform([1, 0, 0, 0], [0, 0, -dZ]), 64, 64)
    flow, _ = induced_flow(f, np.full((64, 64), 1 / Z), CAM)
    assert np.allclose(flow.dchange, 1 / (Z - dZ) - 1 / Z)
    xs, ys = pixel_grid(64, 64)
    radial = (xs - CAM.cx) * flow.flow[..., 0] + (ys - CAM.cy) * flow.flow[..., 1]
    assert np.all(radial >= 0)
    assert np.allclose(flow.flow[..., 0], (xs - CAM.cx) * dZ / (Z - dZ))


def test_induced_flow_masks_invalid():
    d = np.full((4, 4), 0.5)
    d[0, 0] = 0.0
    f = SE3Field.constant(geo.SE3Transform([1, 0, 0, 0], [0, 0, -3.0]), 4, 4)
    flow, valid = induced_flow(f, d, CAM)
    assert not valid[0, 0] and not valid[1, 1]  # depth 2 moved 3 m toward the camera
    assert np.all(np.isfinite(flow.flow)) and flow.flow[1, 1].tolist() == [0, 0]


def test_induced_flow_matches_scene_ground_truth(small_scene):
    flow, valid = induced_flow(small_scene.gt_field, small_scene.frame1.inv_depth, small_scene.camera)
    assert np.array_equal(valid, small_scene.gt_valid)
    assert np.max(np.abs(flow.flow - small_scene.gt_flow.flow)) < 1e-6


def test_residual_static_scene_is_zero():
    scene = S.generate(plane_spec())
    r, valid = inverse_depth_residual(SE3Field.identity(64, 64), scene.frame1.inv_depth, scene.frame2.inv_depth, scene.camera)
    assert valid.all() and np.array_equal(r, np.zeros_like(r))


def test_residual_identity_on_z_translation():
    scene = S.generate(plane_spec(motion=geo.SE3Transform([1, 0, 0, 0], [0, 0, -0.4])))
    r, valid = inverse_depth_residual(SE3Field.identity(64, 64), scene.frame1.inv_depth, scene.frame2.inv_depth, scene.camera)
    expect = scene.frame1.inv_depth - scene.frame2.inv_depth
    assert valid.all() and np.allclose(r, expect, atol=1e-12)


def test_residual_of_true_field_vanishes(small_scene):
    sc = small_scene
    r, valid = inverse_depth_residual(sc.gt_field, sc.frame1.inv_depth, sc.frame2.inv_depth, sc.camera)
    # restrict to pixels whose target's four sampling corners lie on the same surface
    H, W = r.shape
    xs, ys = pixel_grid(H, W)
    _, label2, _ = S.raycast(sc.spec, 2, xs, ys)
    x2 = xs + sc.gt_flow.flow[..., 0]
    y2 = ys + sc.gt_flow.flow[..., 1]
    same = valid & sc.eval_mask
    for dx in (0, 1):
        for dy in (0, 1):
            cx = np.clip(np.floor(x2).astype(int) + dx, 0, W - 1)
            cy = np.clip(np.floor(y2).astype(int) + dy, 0, H - 1)
            same &= label2[cy, cx] == sc.object_mask
    # ... and on one planar face, where inverse depth is affine in the image
    d2 = sc.frame2.inv_depth
    x0 = np.clip(np.floor(x2).astype(int), 0, W - 2)
    y0 = np.clip(np.floor(y2).astype(int), 0, H - 2)
    cross = d2[y0, x0] + d2[y0 + 1, x0 + 1] - d2[y0, x0 + 1] - d2[y0 + 1, x0]
    same &= np.abs(cross) < 1e-12
    assert same.mean() > 0.8
    assert np.max(np.abs(r[same])) < 1e-6
