"""Dense-SE3 layer: one damped Gauss-Newton step per pixel.

Pixel ``i`` refits its transform ``T_i`` to the revised targets ``t_j`` of all
pixels ``j`` in the square neighbourhood of half-width ``radius``. Pairs are
weighted by the embedding affinity ``sigmoid(-|u_i - u_j|^2)`` and the
per-component confidences ``c_j``. The step solves
``(H_i + damping * I) delta_i = -g_i`` and applies ``T_i <- exp(delta_i) T_i``.
"""

from __future__ import annotations

import numpy as np

from . import geometry as geo
from . import _backend
from .errors import InvalidArgumentError, LogDomainError, NumericError
from .field import FlowField, SE3Field, map_points

DEFAULT_DAMPING = 1e-4
DEFAULT_DAMPING_4SCALE = 1e-2


def build_targets(inv_depth1, current_flow: FlowField, revision, pix_coords=None):
    """Revised target positions ``x + induced flow + revision`` as an (H, W, 3) array."""
    inv_depth1 = np.asarray(inv_depth1, dtype=float)
    revision = np.asarray(revision, dtype=float)
    H, W = inv_depth1.shape
    if revision.shape != (H, W, 3) or current_flow.shape != (H, W):
        raise InvalidArgumentError("targets: revision/flow shapes do not match the inverse depth")
    x = map_points(inv_depth1)
    if pix_coords is not None:
        x[..., :2] = pix_coords
    return x + current_flow.stacked() + revision


def area_preserving_radius(factor, extent=256):
    """Radius whose neighbourhood spans ``extent`` pixels at full resolution."""
    return max(1, int(extent // (2 * factor)))


def attention(emb_i, emb_j):
    d2 = np.sum((np.asarray(emb_i) - np.asarray(emb_j)) ** 2, axis=-1)
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(d2))


def _source_points(cam, inv_depth1, targets, valid):
    d = np.asarray(inv_depth1, dtype=float)
    ok = np.isfinite(d) & (d > 0) & np.all(np.isfinite(targets), axis=-1)
    if valid is not None:
        ok &= np.asarray(valid, dtype=bool)
    m = map_points(np.where(ok, d, 1.0))
    P = geo.backproject_batch(cam, m)
    return np.ascontiguousarray(P), ok


def normal_equations(field: SE3Field, emb, conf, targets, cam, inv_depth1, radius, valid=None, eps_z=geo.EPS_Z):
    """Per-pixel ``(H, g, count)`` of the weighted reprojection objective at the current field."""
    targets = np.asarray(targets, dtype=float)
    conf = np.asarray(conf, dtype=float)
    emb = np.asarray(emb, dtype=float)
    H, W = field.shape
    if emb.ndim != 3 or emb.shape[:2] != (H, W):
        raise InvalidArgumentError(f"embeddings {emb.shape} do not match field {(H, W)}")
    if conf.shape != (H, W, 3) or targets.shape != (H, W, 3):
        raise InvalidArgumentError("confidence and targets must be (H, W, 3)")
    if np.any(conf < 0) or not np.all(np.isfinite(conf)):
        raise InvalidArgumentError("confidence must be finite and nonnegative")
    if radius < 1:
        raise InvalidArgumentError(f"radius must be >= 1, got {radius}")
    P, ok = _source_points(cam, inv_depth1, targets, valid)
    tgt = np.ascontiguousarray(np.where(ok[..., None], targets, 0.0))
    return _backend.kernels.normal_equations(
        np.ascontiguousarray(field.rotation_matrices()),
        np.ascontiguousarray(field.t),
        P,
        ok,
        tgt,
        np.ascontiguousarray(conf),
        np.ascontiguousarray(emb),
        cam.as_tuple(),
        int(radius),
        float(eps_z),
    )


def _first_bad_pixel(A):
    for idx in np.ndindex(A.shape[:2]):
        try:
            np.linalg.cholesky(A[idx])
        except np.linalg.LinAlgError:
            return idx
    return None


def damped_solve(Hm, g, damping):
    """Solve ``(Hm + damping I) delta = -g`` for every pixel by Cholesky."""
    if not damping > 0:
        raise InvalidArgumentError(f"damping must be positive, got {damping}")
    A = Hm + damping * np.eye(6)
    try:
        L = np.linalg.cholesky(A)
    except np.linalg.LinAlgError:
        raise NumericError("Cholesky factorisation failed", pixel=_first_bad_pixel(A)) from None
    b = -g
    # forward then backward substitution, vectorised over pixels
    y = np.zeros_like(b)
    for k in range(6):
        y[..., k] = (b[..., k] - np.einsum("...j,...j->...", L[..., k, :k], y[..., :k])) / L[..., k, k]
    x = np.zeros_like(b)
    for k in range(5, -1, -1):
        x[..., k] = (y[..., k] - np.einsum("...j,...j->...", L[..., k + 1 :, k], x[..., k + 1 :])) / L[..., k, k]
    return x


def dense_se3_step(
    field: SE3Field,
    emb,
    conf,
    targets,
    cam: geo.PinholeCamera,
    inv_depth1,
    radius=32,
    damping=DEFAULT_DAMPING,
    valid=None,
    eps_z=geo.EPS_Z,
    return_delta=False,
):
    """One damped Gauss-Newton update of every pixel's transform.

    ``valid`` optionally restricts which pixels may act as neighbours ``j``.
    Pixels without a single usable neighbour keep their transform.
    """
    Hm, g, count = normal_equations(field, emb, conf, targets, cam, inv_depth1, radius, valid, eps_z)
    delta = damped_solve(Hm, g, damping)
    delta[count == 0] = 0.0
    if not np.all(np.isfinite(delta)):
        bad = tuple(int(i) for i in np.argwhere(~np.isfinite(delta).all(axis=-1))[0])
        raise NumericError("non-finite Gauss-Newton step", pixel=bad)
    dq, dt = geo.exp_batch(delta)
    try:
        new = field.compose_left(dq, dt)
    except LogDomainError as exc:
        raise NumericError(f"updated field left the log domain: {exc}", pixel=exc.pixel) from exc
    return (new, delta) if return_delta else new


def dense_objective(field: SE3Field, emb, conf, targets, cam, inv_depth1, radius, valid=None, eps_z=geo.EPS_Z):
    """Value of the weighted reprojection objective summed over all pixels."""
    targets = np.asarray(targets, dtype=float)
    conf = np.asarray(conf, dtype=float)
    emb = np.asarray(emb, dtype=float)
    P, ok = _source_points(cam, inv_depth1, targets, valid)
    H, W = field.shape
    total = 0.0
    for dy in range(-min(radius, H - 1), min(radius, H - 1) + 1):
        si = slice(max(0, -dy), min(H, H - dy))
        sj = slice(max(0, dy), min(H, H + dy))
        for dx in range(-min(radius, W - 1), min(radius, W - 1) + 1):
            ci = slice(max(0, -dx), min(W, W - dx))
            cj = slice(max(0, dx), min(W, W + dx))
            Q = geo.apply_batch(field.q[si, ci], field.t[si, ci], P[sj, cj])
            m, vz = geo.project_batch(cam, Q, eps_z)
            use = ok[sj, cj] & vz
            r = np.where(use[..., None], m - targets[sj, cj], 0.0)
            a = attention(emb[si, ci], emb[sj, cj])
            total += float(np.sum(a[..., None] * conf[sj, cj] * r**2))
    return total
