"""Dense SE(3) fields, shared-mask convex upsampling and induced flow.

Upsampling of transforms happens in the Lie algebra: fields are mapped to
twists with ``log``, interpolated linearly, and mapped back with ``exp``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import geometry as geo
from .errors import InvalidArgumentError


class SE3Field:
    """H x W raster of rigid transforms stored as unit quaternions and translations."""

    __slots__ = ("q", "t")

    def __init__(self, q, t, check=True):
        q = np.array(q, dtype=float)
        t = np.array(t, dtype=float)
        if q.ndim != 3 or q.shape[-1] != 4 or t.shape != q.shape[:2] + (3,):
            raise InvalidArgumentError(f"bad SE3 field shapes q={q.shape}, t={t.shape}")
        if check:
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
                raise InvalidArgumentError("SE3 field has non-finite entries")
            q = geo.quat_normalize(q)
            geo.check_log_domain(q)
        q.setflags(write=False)
        t.setflags(write=False)
        self.q = q
        self.t = t

    @property
    def height(self):
        return self.q.shape[0]

    @property
    def width(self):
        return self.q.shape[1]

    @property
    def shape(self):
        return self.q.shape[:2]

    @classmethod
    def identity(cls, height, width):
        q = np.zeros((height, width, 4))
        q[..., 0] = 1.0
        return cls(q, np.zeros((height, width, 3)))

    @classmethod
    def constant(cls, T: geo.SE3Transform, height, width):
        q = np.broadcast_to(T.q, (height, width, 4))
        t = np.broadcast_to(T.t, (height, width, 3))
        return cls(q, t)

    @classmethod
    def from_twists(cls, xi):
        q, t = geo.exp_batch(xi)
        return cls(q, t)

    def twists(self):
        return geo.log_batch(self.q, self.t)

    def rotation_matrices(self):
        return geo.quat_to_matrix(self.q)

    def __getitem__(self, idx):
        r, c = idx
        return geo.SE3Transform(self.q[r, c], self.t[r, c])

    def apply(self, points):
        return geo.apply_batch(self.q, self.t, points)

    def compose_left(self, dq, dt):
        """Return the field ``exp(delta) @ T`` given per-pixel left factors."""
        q, t = geo.compose_batch(dq, dt, self.q, self.t)
        return SE3Field(q, t)

    def to_array(self):
        """(H, W, 7) array ``(qw, qx, qy, qz, tx, ty, tz)``."""
        return np.concatenate([self.q, self.t], axis=-1)

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float)
        return cls(arr[..., :4], arr[..., 4:7])

    def pad_reflect(self, pad_bottom, pad_right):
        q = np.pad(self.q, ((0, pad_bottom), (0, pad_right), (0, 0)), mode="reflect")
        t = np.pad(self.t, ((0, pad_bottom), (0, pad_right), (0, 0)), mode="reflect")
        return SE3Field(q, t, check=False)

    def crop(self, height, width):
        return SE3Field(self.q[:height, :width], self.t[:height, :width], check=False)

    def __repr__(self):
        return f"SE3Field({self.height}x{self.width})"


@dataclass
class FlowField:
    """Optical flow (H, W, 2) in pixels plus inverse-depth change (H, W)."""

    flow: np.ndarray
    dchange: np.ndarray

    @property
    def shape(self):
        return self.flow.shape[:2]

    def stacked(self):
        return np.concatenate([self.flow, self.dchange[..., None]], axis=-1)


class ConvexUpsampleMask:
    """Per fine pixel of a x2 grid, nine convex weights over the 3x3 coarse neighbourhood.

    Weight ``k`` belongs to the coarse offset ``(k // 3 - 1, k % 3 - 1)`` (row, col).
    """

    __slots__ = ("weights",)

    def __init__(self, weights):
        w = np.array(weights, dtype=float)
        if w.ndim != 3 or w.shape[-1] != 9 or w.shape[0] % 2 or w.shape[1] % 2:
            raise InvalidArgumentError(f"mask must be (2H, 2W, 9), got {w.shape}")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise InvalidArgumentError("mask weights must be finite and nonnegative")
        s = w.sum(axis=-1, keepdims=True)
        if np.any(s <= 0):
            raise InvalidArgumentError("mask has an all-zero weight row")
        self.weights = w / s

    @classmethod
    def from_logits(cls, logits):
        logits = np.asarray(logits, dtype=float)
        e = np.exp(logits - logits.max(axis=-1, keepdims=True))
        return cls(e)

    @classmethod
    def uniform(cls, height, width):
        return cls(np.ones((2 * height, 2 * width, 9)))

    @classmethod
    def nearest(cls, height, width):
        w = np.zeros((2 * height, 2 * width, 9))
        w[..., 4] = 1.0
        return cls(w)

    @property
    def coarse_shape(self):
        return self.weights.shape[0] // 2, self.weights.shape[1] // 2


def convex_upsample(arr, mask: ConvexUpsampleMask):
    """Convex x2 upsampling of an (H, W, C) raster with edge-clamped neighbourhoods."""
    arr = np.asarray(arr, dtype=float)
    squeeze = arr.ndim == 2
    if squeeze:
        arr = arr[..., None]
    H, W = arr.shape[:2]
    if mask.coarse_shape != (H, W):
        raise InvalidArgumentError(f"mask is for {mask.coarse_shape}, raster is {(H, W)}")
    padded = np.pad(arr, ((1, 1), (1, 1), (0, 0)), mode="edge")
    out = np.zeros((2 * H, 2 * W, arr.shape[2]))
    for k in range(9):
        di, dj = k // 3, k % 3
        nb = padded[di : di + H, dj : dj + W]
        nb = np.repeat(np.repeat(nb, 2, axis=0), 2, axis=1)
        out += mask.weights[..., k : k + 1] * nb
    return out[..., 0] if squeeze else out


def convex_upsample_se3(field: SE3Field, mask: ConvexUpsampleMask) -> SE3Field:
    return SE3Field.from_twists(convex_upsample(field.twists(), mask))


def convex_upsample_embeddings(emb, mask: ConvexUpsampleMask):
    return convex_upsample(emb, mask)


def _axis_weights(n_coarse, factor):
    xf = np.arange(n_coarse * factor)
    xc = np.clip((xf + 0.5) / factor - 0.5, 0.0, n_coarse - 1)
    i0 = np.minimum(np.floor(xc).astype(int), n_coarse - 1)
    i1 = np.minimum(i0 + 1, n_coarse - 1)
    return i0, i1, xc - i0


def bilinear_upsample(arr, factor):
    """Bilinear upsampling by an integer factor, pixel-centre aligned and edge-clamped."""
    arr = np.asarray(arr, dtype=float)
    if factor == 1:
        return arr.copy()
    H, W = arr.shape[:2]
    r0, r1, fr = _axis_weights(H, factor)
    c0, c1, fc = _axis_weights(W, factor)
    extra = (None,) * (arr.ndim - 2)
    fr = fr[(slice(None), None) + extra]
    fc = fc[(None, slice(None)) + extra]
    top = arr[r0][:, c0] * (1 - fc) + arr[r0][:, c1] * fc
    bot = arr[r1][:, c0] * (1 - fc) + arr[r1][:, c1] * fc
    return top * (1 - fr) + bot * fr


def bilinear_upsample_se3(field: SE3Field, factor: int) -> SE3Field:
    if factor not in (1, 2, 4, 8):
        raise InvalidArgumentError(f"upsampling factor must be 1, 2, 4 or 8, got {factor}")
    if factor == 1:
        return field
    return SE3Field.from_twists(bilinear_upsample(field.twists(), factor))


def sample_twist(field: SE3Field, x, y) -> geo.SE3Transform:
    """Bilinear interpolation of the field's twists at a continuous position."""
    xi, _ = sample_bilinear(field.twists(), np.array([x], float), np.array([y], float))
    q, t = geo.exp_batch(xi[0])
    return geo.SE3Transform(q, t)


def sample_bilinear(img, x, y):
    """Sample ``img`` (H, W[, C]) at float positions; returns ``(values, in_range)``.

    Positions outside ``[0, W-1] x [0, H-1]`` are reported out of range and
    their values set to zero.
    """
    img = np.asarray(img, dtype=float)
    H, W = img.shape[:2]
    inside = (x >= 0) & (x <= W - 1) & (y >= 0) & (y <= H - 1) & np.isfinite(x) & np.isfinite(y)
    xs = np.where(inside, x, 0.0)
    ys = np.where(inside, y, 0.0)
    x0 = np.minimum(np.floor(xs).astype(int), max(W - 2, 0))
    y0 = np.minimum(np.floor(ys).astype(int), max(H - 2, 0))
    x1 = np.minimum(x0 + 1, W - 1)
    y1 = np.minimum(y0 + 1, H - 1)
    fx = xs - x0
    fy = ys - y0
    if img.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    val = (
        img[y0, x0] * (1 - fx) * (1 - fy)
        + img[y0, x1] * fx * (1 - fy)
        + img[y1, x0] * (1 - fx) * fy
        + img[y1, x1] * fx * fy
    )
    mask = inside if img.ndim == 2 else inside[..., None]
    return np.where(mask, val, 0.0), inside


def pixel_grid(height, width):
    ys, xs = np.mgrid[0:height, 0:width].astype(float)
    return xs, ys


def map_points(inv_depth):
    """(H, W, 3) map points ``(x, y, d)`` for every pixel of an inverse-depth image."""
    H, W = inv_depth.shape
    xs, ys = pixel_grid(H, W)
    return np.stack([xs, ys, inv_depth], axis=-1)


def induced_flow(field: SE3Field, inv_depth1, cam: geo.PinholeCamera, eps_z=geo.EPS_Z):
    """Flow and inverse-depth change ``pi(T pi^-1(x)) - x``; returns ``(FlowField, valid)``.

    Pixels with invalid inverse depth or whose transformed point fails projection
    are excluded from ``valid`` and carry zeros.
    """
    inv_depth1 = np.asarray(inv_depth1, dtype=float)
    if inv_depth1.shape != field.shape:
        raise InvalidArgumentError(f"inverse depth {inv_depth1.shape} vs field {field.shape}")
    x = map_points(inv_depth1)
    valid_d = np.isfinite(inv_depth1) & (inv_depth1 > 0)
    P = geo.backproject_batch(cam, np.where(valid_d[..., None], x, [0.0, 0.0, 1.0]))
    m2, valid_z = geo.project_batch(cam, field.apply(P), eps_z)
    valid = valid_d & valid_z
    # differencing against the re-projected source makes the identity field exact
    m1, _ = geo.project_batch(cam, P, eps_z)
    diff = np.where(valid[..., None], m2 - m1, 0.0)
    return FlowField(diff[..., :2], diff[..., 2]), valid


def inverse_depth_residual(field: SE3Field, inv_depth1, inv_depth2, cam: geo.PinholeCamera):
    """Projected inverse depth of frame 1 minus frame-2 inverse depth at the target pixel."""
    ff, valid = induced_flow(field, inv_depth1, cam)
    H, W = field.shape
    xs, ys = pixel_grid(H, W)
    proj_d = inv_depth1 + ff.dchange
    inv2 = np.asarray(inv_depth2, dtype=float)
    good2 = np.isfinite(inv2) & (inv2 > 0)
    sampled, inside = sample_bilinear(np.where(good2, inv2, 0.0), xs + ff.flow[..., 0], ys + ff.flow[..., 1])
    # every contributing corner must carry a valid frame-2 depth
    corner_ok, _ = sample_bilinear(good2.astype(float), xs + ff.flow[..., 0], ys + ff.flow[..., 1])
    valid = valid & inside & (corner_ok > 1 - 1e-9)
    return np.where(valid, proj_d - sampled, 0.0), valid
