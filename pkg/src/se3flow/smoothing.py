"""Edge-weighted quadratic smoothing of rigid-motion embeddings.

Minimises ``|u - v|^2 + |Dx u|^2_wx + |Dy u|^2_wy`` per channel, with forward
differences and a Neumann boundary (differences past the last column/row are
dropped). The normal equations ``(I + Dx^T Wx Dx + Dy^T Wy Dy) u = v`` are SPD
and solved matrix-free with Jacobi-preconditioned conjugate gradients.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import _backend
from .errors import InvalidArgumentError, SolverError


@dataclass
class EdgeWeightField:
    """Nonnegative weights on horizontal (``wx``) and vertical (``wy``) differences.

    ``wx[r, c]`` weights ``u[r, c+1] - u[r, c]``; ``wy[r, c]`` weights ``u[r+1, c] - u[r, c]``.
    """

    wx: np.ndarray
    wy: np.ndarray

    def __post_init__(self):
        self.wx = np.ascontiguousarray(self.wx, dtype=float)
        self.wy = np.ascontiguousarray(self.wy, dtype=float)
        if self.wx.shape != self.wy.shape or self.wx.ndim != 2:
            raise InvalidArgumentError(f"edge weight shapes differ: {self.wx.shape} vs {self.wy.shape}")
        for name, w in (("wx", self.wx), ("wy", self.wy)):
            if not np.all(np.isfinite(w)) or np.any(w < 0):
                raise InvalidArgumentError(f"edge weights {name} must be finite and nonnegative")

    @classmethod
    def zeros(cls, height, width):
        return cls(np.zeros((height, width)), np.zeros((height, width)))

    @classmethod
    def uniform(cls, height, width, value):
        return cls(np.full((height, width), float(value)), np.full((height, width), float(value)))


def _as_channels(u):
    u = np.ascontiguousarray(u, dtype=float)
    if u.ndim == 2:
        return u[..., None], True
    return u, False


def apply_smoothing_operator(u, w: EdgeWeightField):
    """Return ``u + Dx^T Wx Dx u + Dy^T Wy Dy u`` without assembling a matrix."""
    u3, squeeze = _as_channels(u)
    if u3.shape[:2] != w.wx.shape:
        raise InvalidArgumentError(f"field {u3.shape[:2]} vs weights {w.wx.shape}")
    out = _backend.kernels.smoothing_apply(u3, w.wx, w.wy)
    return out[..., 0] if squeeze else out


def operator_diagonal(w: EdgeWeightField):
    d = np.ones_like(w.wx)
    d[:, :-1] += w.wx[:, :-1]
    d[:, 1:] += w.wx[:, :-1]
    d[:-1, :] += w.wy[:-1, :]
    d[1:, :] += w.wy[:-1, :]
    return d


def smoothing_energy(u, v, w: EdgeWeightField):
    u3, _ = _as_channels(u)
    v3, _ = _as_channels(v)
    dx = u3[:, 1:] - u3[:, :-1]
    dy = u3[1:] - u3[:-1]
    return float(
        np.sum((u3 - v3) ** 2)
        + np.sum(w.wx[:, :-1, None] * dx**2)
        + np.sum(w.wy[:-1, :, None] * dy**2)
    )


def smooth_embeddings(v, w: EdgeWeightField, tol=1e-8, max_iter=500, enabled=True):
    """Solve the smoothing system for every channel of ``v`` (H, W[, E]).

    Convergence is declared per channel when ``|r| <= tol * |v|``. Raises
    :class:`SolverError` if any channel is still above tolerance after
    ``max_iter`` iterations.
    """
    if not enabled:
        return np.array(v, dtype=float)
    v3, squeeze = _as_channels(v)
    if not np.all(np.isfinite(v3)):
        raise InvalidArgumentError("embeddings must be finite")
    if v3.shape[:2] != w.wx.shape:
        raise InvalidArgumentError(f"embeddings {v3.shape[:2]} vs weights {w.wx.shape}")

    inv_diag = (1.0 / operator_diagonal(w))[..., None]
    bnorm = np.sqrt(np.sum(v3**2, axis=(0, 1)))
    thresh = tol * bnorm

    x = v3.copy()
    r = v3 - _backend.kernels.smoothing_apply(x, w.wx, w.wy)
    rnorm = np.sqrt(np.sum(r**2, axis=(0, 1)))
    active = rnorm > thresh
    z = r * inv_diag
    p = z.copy()
    rz = np.sum(r * z, axis=(0, 1))
    it = 0
    while np.any(active):
        if it >= max_iter:
            worst = float(np.max(np.where(bnorm > 0, rnorm / np.where(bnorm > 0, bnorm, 1.0), rnorm)))
            raise SolverError(
                f"smoothing PCG did not converge in {max_iter} iterations (relative residual {worst:.3e})",
                residual=worst,
            )
        Ap = _backend.kernels.smoothing_apply(np.ascontiguousarray(p), w.wx, w.wy)
        pAp = np.sum(p * Ap, axis=(0, 1))
        alpha = np.where(active, rz / np.where(active, pAp, 1.0), 0.0)
        x += alpha * p
        r -= alpha * Ap
        rnorm = np.sqrt(np.sum(r**2, axis=(0, 1)))
        active = rnorm > thresh
        z = r * inv_diag
        rz_new = np.sum(r * z, axis=(0, 1))
        beta = np.where(active, rz_new / np.where(rz > 0, rz, 1.0), 0.0)
        p = z + beta * p
        rz = rz_new
        it += 1
    return x[..., 0] if squeeze else x


def assemble_dense(w: EdgeWeightField):
    """Dense system matrix over row-major pixel order; intended for testing only."""
    H, W = w.wx.shape
    n = H * W
    A = np.eye(n)
    idx = np.arange(n).reshape(H, W)
    for a, b, wt in (
        (idx[:, :-1].ravel(), idx[:, 1:].ravel(), w.wx[:, :-1].ravel()),
        (idx[:-1, :].ravel(), idx[1:, :].ravel(), w.wy[:-1, :].ravel()),
    ):
        np.add.at(A, (a, a), wt)
        np.add.at(A, (b, b), wt)
        np.add.at(A, (a, b), -wt)
        np.add.at(A, (b, a), -wt)
    return A


def smooth_embeddings_dense(v, w: EdgeWeightField):
    v3, squeeze = _as_channels(v)
    H, W, E = v3.shape
    u = np.linalg.solve(assemble_dense(w), v3.reshape(H * W, E)).reshape(H, W, E)
    return u[..., 0] if squeeze else u
