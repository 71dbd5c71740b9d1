import numpy as np
import pytest

from conftest import plane_spec
from se3flow import dense_se3 as dse3
from se3flow import geometry as geo
from se3flow import synthetic as S
from se3flow.errors import InvalidArgumentError, NumericError
from se3flow.field import FlowField, SE3Field, induced_flow, map_points, pixel_grid


def gt_targets(scene):
    return map_points(scene.frame1.inv_depth) + scene.gt_flow.stacked()


def field_error(est: SE3Field, gt: SE3Field, mask):
    qi, ti = geo.inverse_batch(gt.q, gt.t)
    q, t = geo.compose_batch(est.q, est.t, qi, ti)
    err = np.linalg.norm(geo.log_batch(q, t), axis=-1)
    return float(err[mask].max())


def random_problem(rng, size=12, emb_dim=4):
    cam = geo.PinholeCamera(60.0, 64.0, size / 2 - 0.3, size / 2 + 0.2)
    field = SE3Field.from_twists(0.02 * rng.standard_normal((size, size, 6)))
    inv = rng.uniform(0.2, 0.5, (size, size))
    flow, _ = induced_flow(field, inv, cam)
    targets = map_points(inv) + flow.stacked() + rng.normal(0, [0.5, 0.5, 0.005], (size, size, 3))
    conf = rng.uniform(0.2, 1, (size, size, 3))
    emb = 0.3 * rng.standard_normal((size, size, emb_dim))
    return field, emb, conf, targets, cam, inv


RIGID = geo.se3_exp(geo.Twist([0.05, -0.03, 0.1], [0.02, -0.03, 0.015]))


def test_build_targets_examples(small_scene):
    d = np.full((3, 4), 0.5)
    zero = FlowField(np.zeros((3, 4, 2)), np.zeros((3, 4)))
    assert np.array_equal(dse3.build_targets(d, zero, np.zeros((3, 4, 3))), map_points(d))
    f = FlowField(np.ones((3, 4, 2)), np.full((3, 4), 0.1))
    assert np.allclose(dse3.build_targets(d, f, np.zeros((3, 4, 3))), map_points(d) + [1, 1, 0.1])
    # oracle revision: ground truth minus the current estimate gives the true correspondence
    sc = small_scene
    cur = FlowField(np.full(sc.gt_flow.flow.shape, 2.0), np.zeros(sc.gt_flow.dchange.shape))
    rev = sc.gt_flow.stacked() - cur.stacked()
    assert np.allclose(dse3.build_targets(sc.frame1.inv_depth, cur, rev), gt_targets(sc), atol=1e-12)
    with pytest.raises(InvalidArgumentError):
        dse3.build_targets(d, zero, np.zeros((3, 4, 2)))


def test_attention_bounds(rng):
    u = rng.standard_normal((50, 16))
    assert np.all(dse3.attention(u, u) == 0.5)
    a = dse3.attention(u[:, None], u[None])
    assert np.all((a > 0) & (a <= 0.5))
    e1, e2 = np.zeros(16), np.zeros(16)
    e2[0] = np.sqrt(20.0)
    assert dse3.attention(e1, e2) < 1e-8


def test_exact_zero_residual_gives_zero_update(backend):
    # power-of-two intrinsics and depths make projection round trips exact
    H = W = 16
    cam = geo.PinholeCamera(64.0, 64.0, 8.0, 8.0)
    inv = np.full((H, W), 0.5)
    inv[:, 8:] = 0.25
    targets = map_points(inv)
    field = SE3Field.identity(H, W)
    new, delta = dse3.dense_se3_step(
        field, np.zeros((H, W, 4)), np.ones((H, W, 3)), targets, cam, inv, radius=4, return_delta=True
    )
    assert np.array_equal(delta, np.zeros_like(delta))
    assert np.array_equal(new.q, field.q) and np.array_equal(new.t, field.t)


def test_consistent_targets_give_negligible_update(rng, backend):
    H = W = 12
    cam = geo.PinholeCamera(60.0, 60.0, 5.5, 5.5)
    field = SE3Field.constant(RIGID, H, W)
    inv = rng.uniform(0.2, 0.5, (H, W))
    flow, _ = induced_flow(field, inv, cam)
    targets = map_points(inv) + flow.stacked()
    _, delta = dse3.dense_se3_step(field, rng.standard_normal((H, W, 4)), np.ones((H, W, 3)), targets, cam, inv, 3, return_delta=True)
    assert np.max(np.abs(delta)) < 1e-12


def convergence_radius(backend):
    # the NumPy kernels are too slow for full-image neighbourhoods at this size
    return 32 if backend == "compiled" else 8


def test_single_rigid_body_converges(backend):
    scene = S.generate(plane_spec(48, 48, depth=3.0, motion=RIGID))
    d = scene.frame1.inv_depth
    field = SE3Field.identity(48, 48)
    emb = np.zeros((48, 48, 16))
    conf = np.ones((48, 48, 3))
    errs = []
    for _ in range(10):
        field = dse3.dense_se3_step(field, emb, conf, gt_targets(scene), scene.camera, d, radius=convergence_radius(backend), damping=1e-4)
        errs.append(field_error(field, scene.gt_field, scene.gt_valid))
    assert errs[-1] < 1e-3
    assert errs[0] > errs[-1]


def test_two_objects_with_separated_embeddings(backend):
    scene = S.generate(S.random_scene(11, width=48, height=48, num_objects=1))
    labels = scene.object_mask
    assert len(np.unique(labels)) == 2
    emb = np.zeros(labels.shape + (16,))
    emb[..., 0] = np.sqrt(20.0) * (labels > 0)
    field = SE3Field.identity(48, 48)
    conf = np.ones((48, 48, 3))
    for _ in range(10):
        field = dse3.dense_se3_step(field, emb, conf, gt_targets(scene), scene.camera, scene.frame1.inv_depth, radius=convergence_radius(backend))
    for lab in (0, 1):
        assert field_error(field, scene.gt_field, scene.gt_valid & (labels == lab)) < 1e-2


def rigid_problem(rng, size=12, noise=0.05, spread=0.01):
    """Rigid motion with mildly noisy targets and a per-pixel perturbed start."""
    cam = geo.PinholeCamera(60.0, 64.0, size / 2 - 0.3, size / 2 + 0.2)
    inv = rng.uniform(0.2, 0.5, (size, size))
    truth = SE3Field.constant(RIGID, size, size)
    flow, _ = induced_flow(truth, inv, cam)
    targets = map_points(inv) + flow.stacked() + rng.normal(0, [noise, noise, noise / 100], (size, size, 3))
    qd, td = geo.exp_batch(spread * rng.standard_normal((size * size, 6)))
    q, t = geo.compose_batch(qd, td, truth.q.reshape(-1, 4), truth.t.reshape(-1, 3))
    field = SE3Field(q.reshape(size, size, 4), t.reshape(size, size, 3))
    conf = rng.uniform(0.2, 1, (size, size, 3))
    emb = 0.3 * rng.standard_normal((size, size, 4))
    return field, emb, conf, targets, cam, inv


def test_one_step_descends(rng, backend):
    for _ in range(5):
        prob = rigid_problem(rng)
        before = dse3.dense_objective(*prob, 3)
        after = dse3.dense_objective(dse3.dense_se3_step(*prob, 3, 1e-4), *prob[1:], 3)
        assert after <= before


def test_translation_equivariance(rng, backend):
    field, emb, conf, targets, cam, inv = random_problem(rng, size=20)
    r, oy, ox, n = 2, 3, 4, 13
    full = dse3.dense_se3_step(field, emb, conf, targets, cam, inv, r)
    sl = (slice(oy, oy + n), slice(ox, ox + n))
    sub = SE3Field(field.q[sl], field.t[sl])
    tgt = targets[sl] - [ox, oy, 0.0]
    crop = dse3.dense_se3_step(sub, emb[sl], conf[sl], tgt, cam.shifted(-ox, -oy), inv[sl], r)
    inner = (slice(r, n - r), slice(r, n - r))
    big = (slice(oy + r, oy + n - r), slice(ox + r, ox + n - r))
    assert np.allclose(crop.twists()[inner], full.twists()[big], atol=1e-9)


def test_damping_monotone(rng, backend):
    field, emb, conf, targets, cam, inv = random_problem(rng)
    Hm, g, _ = dse3.normal_equations(field, emb, conf, targets, cam, inv, 3)
    norms = [np.linalg.norm(dse3.damped_solve(Hm, g, lam), axis=-1) for lam in (1e-4, 1e-2, 1.0, 100.0)]
    for a, b in zip(norms, norms[1:]):
        assert np.all(b < a)


def test_solve_matches_numpy(rng):
    A = rng.standard_normal((5, 4, 6, 6))
    Hm = A @ np.swapaxes(A, -1, -2)
    g = rng.standard_normal((5, 4, 6))
    x = dse3.damped_solve(Hm, g, 1e-3)
    assert np.allclose(x, np.linalg.solve(Hm + 1e-3 * np.eye(6), -g[..., None])[..., 0], atol=1e-9)


def test_indefinite_system_names_pixel():
    Hm = np.zeros((3, 3, 6, 6))
    Hm[1, 2] = -np.eye(6)
    with pytest.raises(NumericError) as info:
        dse3.damped_solve(Hm, np.zeros((3, 3, 6)), 1e-4)
    assert info.value.pixel == (1, 2)
    with pytest.raises(InvalidArgumentError):
        dse3.damped_solve(Hm, np.zeros((3, 3, 6)), 0.0)


def test_pixels_without_neighbours_keep_transform(rng, backend):
    field, emb, conf, targets, cam, inv = random_problem(rng, size=12)
    inv = inv.copy()
    inv[:, :7] = 0.0  # no valid depth left of column 7; radius 2 leaves columns 0..4 isolated
    new = dse3.dense_se3_step(field, emb, conf, targets, cam, inv, 2)
    assert np.array_equal(new.q[:, :5], field.q[:, :5]) and np.array_equal(new.t[:, :5], field.t[:, :5])
    assert not np.allclose(new.t[:, 8:], field.t[:, 8:])


def test_normal_equations_brute_force(rng, backend):
    field, emb, conf, targets, cam, inv = random_problem(rng, size=6)
    r = 2
    Hm, g, count = dse3.normal_equations(field, emb, conf, targets, cam, inv, r)
    i = (2, 3)
    Ti = field[i]
    Href, gref, n = np.zeros((6, 6)), np.zeros(6), 0
    for a in range(max(0, i[0] - r), min(6, i[0] + r + 1)):
        for b in range(max(0, i[1] - r), min(6, i[1] + r + 1)):
            p = geo.backproject(cam, [b, a, inv[a, b]])
            res = geo.project(cam, geo.se3_apply(Ti, p)) - targets[a, b]
            J = geo.reprojection_jacobian(cam, Ti, p)
            w = dse3.attention(emb[i], emb[a, b])
            Href += w * J.T @ np.diag(conf[a, b]) @ J
            gref += w * J.T @ (conf[a, b] * res)
            n += 1
    assert count[i] == n
    assert np.allclose(Hm[i], Href, rtol=1e-10, atol=1e-10) and np.allclose(g[i], gref, rtol=1e-10, atol=1e-10)


def test_backends_agree_on_normal_equations(rng):
    from se3flow import _backend

    if len(_backend.available()) < 2:
        pytest.skip("compiled kernels not built")
    prob = random_problem(rng, size=10)
    outs = []
    for b in ("compiled", "python"):
        with _backend.use(b):
            outs.append(dse3.normal_equations(*prob, 4))
    for a, b in zip(*outs):
        assert np.allclose(a, b, rtol=1e-11, atol=1e-11)


def test_argument_checks(rng):
    field, emb, conf, targets, cam, inv = random_problem(rng, size=6)
    with pytest.raises(InvalidArgumentError):
        dse3.normal_equations(field, emb, -conf, targets, cam, inv, 2)
    with pytest.raises(InvalidArgumentError):
        dse3.normal_equations(field, emb, conf, targets, cam, inv, 0)
    with pytest.raises(InvalidArgumentError):
        dse3.normal_equations(field, emb[:5], conf, targets, cam, inv, 2)


def test_area_preserving_radius():
    assert [dse3.area_preserving_radius(f) for f in (16, 8, 4, 2)] == [8, 16, 32, 64]
