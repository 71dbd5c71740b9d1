"""SE(3) Lie group operations, inverse-depth pinhole projection and Jacobians.

Conventions used throughout the package:

* Quaternions are stored scalar-first, ``(w, x, y, z)``.
* Twists are 6-vectors ``(v, w)``: translational part first, rotational second.
* Perturbations are left-multiplicative: ``T <- exp(delta) @ T``.
* A map point is ``(x, y, d)`` with pixel coordinates and inverse depth ``d = 1/Z``.

Every batched function takes arrays with arbitrary leading dimensions, so the
same code serves single transforms and dense ``H x W`` fields.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError, LogDomainError, ProjectionDomainError

SMALL_ANGLE = 1e-8
EPS_Z = 1e-4
LOG_CUT = np.pi - 1e-6


# -- batched quaternion / twist kernels -------------------------------------


def quat_multiply(a, b):
    aw, ax, ay, az = np.moveaxis(a, -1, 0)
    bw, bx, by, bz = np.moveaxis(b, -1, 0)
    return np.stack(
        [
            aw * bw - ax * bx - ay * by - az * bz,
            aw * bx + ax * bw + ay * bz - az * by,
            aw * by - ax * bz + ay * bw + az * bx,
            aw * bz + ax * by - ay * bx + az * bw,
        ],
        axis=-1,
    )


def quat_conjugate(q):
    return q * np.array([1.0, -1.0, -1.0, -1.0])


def quat_normalize(q):
    return q / np.linalg.norm(q, axis=-1, keepdims=True)


def quat_rotate(q, p):
    """Rotate points ``p`` (..., 3) by unit quaternions ``q`` (..., 4)."""
    w = q[..., :1]
    u = q[..., 1:]
    uv = np.cross(u, p)
    return p + 2.0 * (w * uv + np.cross(u, uv))


def quat_to_matrix(q):
    w, x, y, z = np.moveaxis(q, -1, 0)
    m = np.stack(
        [
            1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y),
            2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x),
            2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y),
        ],
        axis=-1,
    )
    return m.reshape(q.shape[:-1] + (3, 3))


def matrix_to_quat(R):
    """Shepperd's method; returns the quaternion with non-negative scalar part."""
    R = np.asarray(R, dtype=float)
    flat = R.reshape(-1, 3, 3)
    out = np.empty((flat.shape[0], 4))
    for n, m in enumerate(flat):
        tr = m[0, 0] + m[1, 1] + m[2, 2]
        if tr > 0:
            s = 2.0 * np.sqrt(tr + 1.0)
            q = [0.25 * s, (m[2, 1] - m[1, 2]) / s, (m[0, 2] - m[2, 0]) / s, (m[1, 0] - m[0, 1]) / s]
        elif m[0, 0] > m[1, 1] and m[0, 0] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[0, 0] - m[1, 1] - m[2, 2])
            q = [(m[2, 1] - m[1, 2]) / s, 0.25 * s, (m[0, 1] + m[1, 0]) / s, (m[0, 2] + m[2, 0]) / s]
        elif m[1, 1] > m[2, 2]:
            s = 2.0 * np.sqrt(1.0 + m[1, 1] - m[0, 0] - m[2, 2])
            q = [(m[0, 2] - m[2, 0]) / s, (m[0, 1] + m[1, 0]) / s, 0.25 * s, (m[1, 2] + m[2, 1]) / s]
        else:
            s = 2.0 * np.sqrt(1.0 + m[2, 2] - m[0, 0] - m[1, 1])
            q = [(m[1, 0] - m[0, 1]) / s, (m[0, 2] + m[2, 0]) / s, (m[1, 2] + m[2, 1]) / s, 0.25 * s]
        q = np.array(q)
        out[n] = q if q[0] >= 0 else -q
    return quat_normalize(out).reshape(R.shape[:-2] + (4,))


def exp_batch(xi):
    """Exponential map for twists ``xi`` (..., 6) -> ``(q, t)``."""
    xi = np.asarray(xi, dtype=float)
    if not np.all(np.isfinite(xi)):
        raise InvalidArgumentError("twist has non-finite components")
    v = xi[..., :3]
    w = xi[..., 3:]
    theta = np.linalg.norm(w, axis=-1)
    small = theta < SMALL_ANGLE
    th = np.where(small, 1.0, theta)
    half = 0.5 * th
    th2 = theta * theta
    # sin(theta/2)/theta, (1-cos)/theta^2, (theta-sin)/theta^3
    k = np.where(small, 0.5 - th2 / 48.0, np.sin(half) / th)
    a = np.where(small, 0.5 - th2 / 24.0, 0.5 * (np.sin(half) / half) ** 2)
    b = np.where(small, 1.0 / 6.0 - th2 / 120.0, (th - np.sin(th)) / th**3)
    qw = np.where(small, 1.0 - th2 / 8.0, np.cos(half))
    q = np.concatenate([qw[..., None], k[..., None] * w], axis=-1)
    q = quat_normalize(q)
    wv = np.cross(w, v)
    t = v + a[..., None] * wv + b[..., None] * np.cross(w, wv)
    return q, t


def rotation_angle(q):
    qw = np.abs(q[..., 0])
    n = np.linalg.norm(q[..., 1:], axis=-1)
    return 2.0 * np.arctan2(n, qw)


def check_log_domain(q, limit=LOG_CUT):
    """Raise LogDomainError naming the first element whose angle reaches ``limit``."""
    angle = rotation_angle(q)
    bad = angle >= limit
    if np.any(bad):
        idx = tuple(int(i) for i in np.argwhere(bad)[0])
        pixel = idx[:2] if len(idx) >= 2 else None
        raise LogDomainError(f"rotation angle {float(angle[bad].flat[0]):.9f} too close to pi", pixel=pixel)


def log_batch(q, t, limit=LOG_CUT):
    """Logarithm map ``(q, t)`` -> twists (..., 6)."""
    q = np.asarray(q, dtype=float)
    t = np.asarray(t, dtype=float)
    check_log_domain(q, limit)
    q = np.where(q[..., :1] < 0, -q, q)
    qw = q[..., 0]
    qv = q[..., 1:]
    n = np.linalg.norm(qv, axis=-1)
    theta = 2.0 * np.arctan2(n, qw)
    small = theta < SMALL_ANGLE
    ns = np.where(small, 1.0, n)
    scale = np.where(small, 2.0 / qw, theta / ns)
    w = scale[..., None] * qv
    half = 0.5 * theta
    th2 = theta * theta
    thq = np.where(small, 1.0, th2)
    # (1 - (theta/2) cot(theta/2)) / theta^2, with cot expressed via the quaternion
    c = np.where(small, 1.0 / 12.0 + th2 / 720.0, (1.0 - half * qw / ns) / thq)
    wt = np.cross(w, t)
    v = t - 0.5 * wt + c[..., None] * np.cross(w, wt)
    return np.concatenate([v, w], axis=-1)


def compose_batch(qa, ta, qb, tb):
    q = quat_normalize(quat_multiply(qa, qb))
    t = quat_rotate(qa, tb) + ta
    return q, t


def inverse_batch(q, t):
    qi = quat_conjugate(q)
    return qi, -quat_rotate(qi, t)


def apply_batch(q, t, p):
    return quat_rotate(q, p) + t


# -- scalar value types ------------------------------------------------------


@dataclass(frozen=True)
class Twist:
    v: np.ndarray
    w: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "v", np.asarray(self.v, dtype=float).reshape(3))
        object.__setattr__(self, "w", np.asarray(self.w, dtype=float).reshape(3))

    @classmethod
    def from_vector(cls, xi):
        xi = np.asarray(xi, dtype=float).reshape(6)
        return cls(xi[:3], xi[3:])

    def as_vector(self):
        return np.concatenate([self.v, self.w])


@dataclass(frozen=True)
class SE3Transform:
    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.q, dtype=float).reshape(4)
        t = np.asarray(self.t, dtype=float).reshape(3)
        if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
            raise InvalidArgumentError("transform has non-finite components")
        n = np.linalg.norm(q)
        if abs(n - 1.0) > 1e-12:
            q = q / n
        object.__setattr__(self, "q", q)
        object.__setattr__(self, "t", t)

    @classmethod
    def identity(cls):
        return cls(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    @classmethod
    def from_matrix(cls, M):
        M = np.asarray(M, dtype=float)
        return cls(matrix_to_quat(M[:3, :3]), M[:3, 3])

    def rotation_matrix(self):
        return quat_to_matrix(self.q)

    def matrix(self):
        M = np.eye(4)
        M[:3, :3] = self.rotation_matrix()
        M[:3, 3] = self.t
        return M

    def __matmul__(self, other):
        return se3_compose(self, other)


@dataclass(frozen=True)
class PinholeCamera:
    fx: float
    fy: float
    cx: float
    cy: float

    def __post_init__(self):
        if not (self.fx > 0 and self.fy > 0):
            raise InvalidArgumentError(f"focal lengths must be positive, got fx={self.fx}, fy={self.fy}")

    def scaled(self, factor):
        """Intrinsics for an image downsampled by ``factor`` (pixel-centre convention)."""
        f = float(factor)
        return PinholeCamera(
            self.fx / f, self.fy / f, (self.cx + 0.5) / f - 0.5, (self.cy + 0.5) / f - 0.5
        )

    def shifted(self, dx, dy):
        return PinholeCamera(self.fx, self.fy, self.cx + dx, self.cy + dy)

    def as_tuple(self):
        return (float(self.fx), float(self.fy), float(self.cx), float(self.cy))


# -- scalar operations -------------------------------------------------------


def se3_exp(xi: Twist) -> SE3Transform:
    q, t = exp_batch(xi.as_vector())
    return SE3Transform(q, t)


def se3_log(T: SE3Transform) -> Twist:
    return Twist.from_vector(log_batch(T.q, T.t))


def se3_compose(A: SE3Transform, B: SE3Transform) -> SE3Transform:
    q, t = compose_batch(A.q, A.t, B.q, B.t)
    return SE3Transform(q, t)


def se3_inverse(T: SE3Transform) -> SE3Transform:
    q, t = inverse_batch(T.q, T.t)
    return SE3Transform(q, t)


def se3_apply(T: SE3Transform, p) -> np.ndarray:
    p = np.asarray(p, dtype=float)
    if not np.all(np.isfinite(p)):
        raise InvalidArgumentError("point has non-finite components")
    return apply_batch(T.q, T.t, p)


# -- projection --------------------------------------------------------------


def project_batch(cam: PinholeCamera, P, eps_z=EPS_Z):
    """Project points (..., 3) to map points (x, y, d); returns ``(m, valid)``.

    Invalid entries (Z <= eps_z) are filled with NaN.
    """
    P = np.asarray(P, dtype=float)
    Z = P[..., 2]
    valid = Z > eps_z
    iz = np.where(valid, 1.0 / np.where(valid, Z, 1.0), np.nan)
    m = np.stack(
        [cam.fx * P[..., 0] * iz + cam.cx, cam.fy * P[..., 1] * iz + cam.cy, iz], axis=-1
    )
    return m, valid


def backproject_batch(cam: PinholeCamera, m):
    """Inverse of :func:`project_batch`; entries with d <= 0 become NaN."""
    m = np.asarray(m, dtype=float)
    d = m[..., 2]
    valid = d > 0
    Z = np.where(valid, 1.0 / np.where(valid, d, 1.0), np.nan)
    return np.stack(
        [(m[..., 0] - cam.cx) * Z / cam.fx, (m[..., 1] - cam.cy) * Z / cam.fy, Z], axis=-1
    )


def project(cam: PinholeCamera, p, eps_z=EPS_Z) -> np.ndarray:
    p = np.asarray(p, dtype=float).reshape(3)
    if not p[2] > eps_z:
        raise ProjectionDomainError(f"cannot project point with Z={p[2]} <= {eps_z}")
    m, _ = project_batch(cam, p, eps_z)
    return m


def backproject(cam: PinholeCamera, m) -> np.ndarray:
    m = np.asarray(m, dtype=float).reshape(3)
    if not m[2] > 0:
        raise ProjectionDomainError(f"cannot backproject map point with inverse depth {m[2]} <= 0")
    return backproject_batch(cam, m)


def reprojection_jacobian(cam: PinholeCamera, T: SE3Transform, p, eps_z=EPS_Z) -> np.ndarray:
    """3x6 Jacobian of ``delta -> project(cam, exp(delta) T p)`` at ``delta = 0``."""
    P = se3_apply(T, p)
    X, Y, Z = P
    if not Z > eps_z:
        raise ProjectionDomainError(f"transformed point has Z={Z} <= {eps_z}")
    iz = 1.0 / Z
    Jp = np.array(
        [
            [cam.fx * iz, 0.0, -cam.fx * X * iz * iz],
            [0.0, cam.fy * iz, -cam.fy * Y * iz * iz],
            [0.0, 0.0, -iz * iz],
        ]
    )
    # d(exp(delta) P)/d(v, w) = [I | -[P]x]; row g of Jp maps rotation to P x g
    return np.hstack([Jp, np.cross(P, Jp)])


def hat(w):
    w = np.asarray(w, dtype=float)
    return np.array([[0.0, -w[2], w[1]], [w[2], 0.0, -w[0]], [-w[1], w[0], 0.0]])
