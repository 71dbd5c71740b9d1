"""Numerical invariant suite behind ``se3flow selfcheck``.

Every check returns ``(name, passed, detail)``; none writes files.
"""

from __future__ import annotations

import numpy as np

from . import _backend
from . import correlation as corr
from . import dense_se3 as dse3
from . import geometry as geo
from .field import SE3Field, induced_flow, pixel_grid
from .smoothing import EdgeWeightField, smooth_embeddings, smooth_embeddings_dense


def random_twists(rng, n, max_angle=np.pi - 1e-3, max_trans=2.0):
    axis = rng.standard_normal((n, 3))
    axis /= np.linalg.norm(axis, axis=1, keepdims=True)
    w = axis * rng.uniform(0.0, max_angle, (n, 1))
    v = rng.uniform(-max_trans, max_trans, (n, 3))
    return np.concatenate([v, w], axis=1)


def check_exp_log(rng, n=10_000):
    xi = random_twists(rng, n)
    q, t = geo.exp_batch(xi)
    back = geo.log_batch(q, t)
    err = np.max(np.abs(back - xi))
    return "exp/log round trip", err < 1e-9, f"max error {err:.2e} over {n} twists"


def check_group_axioms(rng, n=1000):
    qa, ta = geo.exp_batch(random_twists(rng, n))
    qb, tb = geo.exp_batch(random_twists(rng, n))
    qc, tc = geo.exp_batch(random_twists(rng, n))
    p = rng.uniform(-3, 3, (n, 3))
    qab, tab = geo.compose_batch(qa, ta, qb, tb)
    left = geo.apply_batch(*geo.compose_batch(qab, tab, qc, tc), p)
    right = geo.apply_batch(*geo.compose_batch(qa, ta, *geo.compose_batch(qb, tb, qc, tc)), p)
    assoc = np.max(np.abs(left - right))
    qi, ti = geo.inverse_batch(qa, ta)
    qe, te = geo.compose_batch(qa, ta, qi, ti)
    inv = max(np.max(np.abs(np.abs(qe[:, 0]) - 1.0)), np.max(np.abs(te)))
    ident = np.max(np.abs(geo.apply_batch(qa, ta, p) - geo.apply_batch(*geo.compose_batch(qa, ta, [1.0, 0, 0, 0], [0.0, 0, 0]), p)))
    worst = max(assoc, inv, ident)
    return "group axioms", worst < 1e-10, f"associativity {assoc:.1e}, inverse {inv:.1e}, identity {ident:.1e}"


def random_jacobian_instance(rng):
    cam = geo.PinholeCamera(*rng.uniform(150, 600, 2), *rng.uniform(50, 300, 2))
    T = geo.se3_exp(geo.Twist.from_vector(random_twists(rng, 1, max_angle=0.5, max_trans=0.3)[0]))
    p = np.array([*rng.uniform(-1, 1, 2), rng.uniform(2, 6)])
    return cam, T, p


def jacobian_fd_error(cam, T, p, h=1e-6):
    """Max relative error of the analytic Jacobian against central differences."""
    J = geo.reprojection_jacobian(cam, T, p)
    num = np.zeros((3, 6))
    for k in range(6):
        d = np.zeros(6)
        d[k] = h
        fwd = geo.project(cam, geo.se3_apply(geo.se3_exp(geo.Twist.from_vector(d)) @ T, p))
        bwd = geo.project(cam, geo.se3_apply(geo.se3_exp(geo.Twist.from_vector(-d)) @ T, p))
        num[:, k] = (fwd - bwd) / (2 * h)
    return float(np.max(np.abs(J - num)) / max(np.max(np.abs(J)), 1e-12))


def check_jacobian(rng, n=100):
    worst = max(jacobian_fd_error(*random_jacobian_instance(rng)) for _ in range(n))
    return "reprojection Jacobian", worst < 1e-5, f"max relative FD error {worst:.2e} over {n} instances"


def check_smoothing(rng, n=20, size=8):
    worst = 0.0
    for _ in range(n):
        v = rng.standard_normal((size, size, 3))
        w = EdgeWeightField(rng.uniform(0, 5, (size, size)), rng.uniform(0, 5, (size, size)))
        worst = max(worst, float(np.max(np.abs(smooth_embeddings(v, w, tol=1e-12) - smooth_embeddings_dense(v, w)))))
    return "smoothing PCG vs dense", worst < 1e-8, f"max deviation {worst:.2e} over {n} problems"


def check_correlation(rng):
    f1 = rng.standard_normal((8, 8, 5))
    f2 = rng.standard_normal((8, 8, 5))
    coords = rng.uniform(-2, 10, (8, 8, 2))
    a = corr.build_pyramid(f1, f2, corr.MATERIALIZED).lookup(coords, 3)
    b = corr.build_pyramid(f1, f2, corr.ON_DEMAND).lookup(coords, 3)
    err = float(np.max(np.abs(a - b)))
    return "correlation cross-mode", err < 1e-6, f"max deviation {err:.2e}"


def _random_gn_problem(rng, size=10):
    cam = geo.PinholeCamera(80.0, 80.0, size / 2, size / 2)
    field = SE3Field.from_twists(0.01 * rng.standard_normal((size, size, 6)))
    inv = rng.uniform(0.2, 0.5, (size, size))
    targets = np.concatenate([rng.uniform(0, size, (size, size, 2)), inv[..., None]], axis=-1)
    conf = rng.uniform(0, 1, (size, size, 3))
    emb = rng.standard_normal((size, size, 4))
    return field, emb, conf, targets, cam, inv


def check_zero_residual(rng):
    size = 10
    cam = geo.PinholeCamera(80.0, 80.0, size / 2, size / 2)
    field = SE3Field.constant(geo.se3_exp(geo.Twist([0.05, 0.0, 0.02], [0.0, 0.03, 0.0])), size, size)
    inv = rng.uniform(0.2, 0.5, (size, size))
    flow, _ = induced_flow(field, inv, cam)
    xs, ys = pixel_grid(size, size)
    targets = np.stack([xs + flow.flow[..., 0], ys + flow.flow[..., 1], inv + flow.dchange], axis=-1)
    _, delta = dse3.dense_se3_step(
        field, np.zeros((size, size, 4)), np.ones((size, size, 3)), targets, cam, inv, 3, return_delta=True
    )
    err = float(np.max(np.abs(delta)))
    return "Dense-SE3 zero residual", err < 1e-12, f"max update {err:.2e}"


def check_backends(rng):
    if len(_backend.available()) < 2:
        return "backend agreement", True, "only the NumPy backend is built; nothing to compare"
    field, emb, conf, targets, cam, inv = _random_gn_problem(rng)
    outs = {}
    for b in ("compiled", "python"):
        with _backend.use(b):
            Hm, g, count = dse3.normal_equations(field, emb, conf, targets, cam, inv, 4)
            sm = smooth_embeddings(np.ascontiguousarray(emb[:6, :6, :2]), EdgeWeightField(conf[:6, :6, 0], conf[:6, :6, 1]))
            lk = corr.build_pyramid(emb, emb[::-1], corr.ON_DEMAND).lookup(targets[..., :2], 2)
        outs[b] = (Hm, g, count, sm, lk)
    err = max(float(np.max(np.abs(a - b))) for a, b in zip(outs["compiled"], outs["python"]))
    return "backend agreement", err < 1e-9, f"compiled vs NumPy max deviation {err:.2e}"


CHECKS = (
    check_exp_log,
    check_group_axioms,
    check_jacobian,
    check_smoothing,
    check_correlation,
    check_zero_residual,
    check_backends,
)


def run_selfcheck(seed=0):
    results = []
    for check in CHECKS:
        rng = np.random.default_rng([seed, len(results)])
        try:
            results.append(check(rng))
        except Exception as exc:  # a crash is a failed check, not a crashed suite
            results.append((check.__name__, False, f"raised {type(exc).__name__}: {exc}"))
    return results
