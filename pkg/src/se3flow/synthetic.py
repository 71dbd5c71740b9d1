"""Procedural piecewise-rigid RGB-D scenes with exact ground truth.

Surfaces are ray-cast analytically (planes, rectangular patches, boxes), so
depth, flow and occlusion are exact. Texture is band-limited solid value
noise evaluated in each surface's own frame, which makes it move rigidly with
the surface.
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import geometry as geo
from .errors import InvalidArgumentError
from .field import FlowField, SE3Field, induced_flow, pixel_grid

NEAR = 0.05
PLANE = "plane"
BOX = "box"


@dataclass
class RGBDFrame:
    rgb: np.ndarray
    inv_depth: np.ndarray
    name: str = "frame"

    @property
    def shape(self):
        return self.inv_depth.shape


@dataclass
class RigidObject:
    """A plane patch (half sizes ``(a, b)``, local z = 0) or box (half sizes ``(a, b, c)``)."""

    shape: str
    half_size: tuple
    pose: geo.SE3Transform
    motion: geo.SE3Transform = dc_field(default_factory=geo.SE3Transform.identity)
    texture_seed: int = 0
    texture_cell: float | None = None


@dataclass
class BackgroundPlane:
    depth: float = 8.0
    tilt: float = 0.0
    motion: geo.SE3Transform = dc_field(default_factory=geo.SE3Transform.identity)
    texture_seed: int = 0
    texture_cell: float | None = None

    def pose(self):
        R = geo.se3_exp(geo.Twist(np.zeros(3), [self.tilt, 0.0, 0.0]))
        return geo.SE3Transform(R.q, [0.0, 0.0, self.depth])


@dataclass
class SceneSpec:
    camera: geo.PinholeCamera
    width: int
    height: int
    background: BackgroundPlane = dc_field(default_factory=BackgroundPlane)
    objects: list = dc_field(default_factory=list)
    seed: int = 0
    texture_cell: float = 0.08


@dataclass
class SyntheticScene:
    spec: SceneSpec
    frame1: RGBDFrame
    frame2: RGBDFrame
    gt_field: SE3Field
    gt_flow: FlowField
    gt_valid: np.ndarray
    object_mask: np.ndarray
    occlusion_mask: np.ndarray

    @property
    def camera(self):
        return self.spec.camera

    @property
    def eval_mask(self):
        """Valid, non-occluded pixels."""
        return self.gt_valid & ~self.occlusion_mask


# -- value-noise texture -----------------------------------------------------


def _lattice(seed, ix, iy, iz):
    """Deterministic pseudo-random values in [0, 1) on an integer lattice."""
    h = (
        ix.astype(np.uint64) * np.uint64(0x9E3779B97F4A7C15)
        ^ iy.astype(np.uint64) * np.uint64(0xC2B2AE3D27D4EB4F)
        ^ iz.astype(np.uint64) * np.uint64(0x165667B19E3779F9)
        ^ np.uint64(seed & 0xFFFFFFFFFFFFFFFF) * np.uint64(0x27D4EB2F165667C5)
    )
    h ^= h >> np.uint64(31)
    h *= np.uint64(0xBF58476D1CE4E5B9)
    h ^= h >> np.uint64(29)
    return (h >> np.uint64(11)).astype(np.float64) / float(1 << 53)


def value_noise(seed, p, cell):
    """Smooth (quintic-interpolated) value noise at points ``p`` (..., 3)."""
    s = p / cell
    i0 = np.floor(s)
    f = s - i0
    u = f * f * f * (f * (f * 6.0 - 15.0) + 10.0)
    i0 = i0.astype(np.int64)
    out = np.zeros(p.shape[:-1])
    with np.errstate(over="ignore"):
        for dz in (0, 1):
            for dy in (0, 1):
                for dx in (0, 1):
                    w = (
                        (u[..., 0] if dx else 1 - u[..., 0])
                        * (u[..., 1] if dy else 1 - u[..., 1])
                        * (u[..., 2] if dz else 1 - u[..., 2])
                    )
                    out += w * _lattice(seed, i0[..., 0] + dx, i0[..., 1] + dy, i0[..., 2] + dz)
    return out


def texture_rgb(seed, p, cell):
    chans = []
    for c in range(3):
        base = 0.65 * value_noise(seed * 7 + c, p, cell) + 0.35 * value_noise(seed * 7 + c + 101, p, cell * 0.55)
        chans.append(base)
    return np.clip(np.stack(chans, axis=-1), 0.0, 1.0)


# -- ray casting -------------------------------------------------------------


def _rays(cam, xs, ys):
    return np.stack([(xs - cam.cx) / cam.fx, (ys - cam.cy) / cam.fy, np.ones_like(xs)], axis=-1)


def _intersect(shape, half_size, pose: geo.SE3Transform, rays):
    """Ray parameter (= camera depth Z) of the first hit and the local hit point."""
    qi, ti = geo.inverse_batch(pose.q, pose.t)
    o = ti  # camera centre in the surface frame
    d = geo.quat_rotate(np.broadcast_to(qi, rays.shape[:-1] + (4,)), rays)
    if shape == PLANE:
        with np.errstate(divide="ignore", invalid="ignore"):
            s = -o[2] / d[..., 2]
        local = o + s[..., None] * d
        hit = np.isfinite(s) & (s > NEAR)
        if half_size is not None:
            hit &= (np.abs(local[..., 0]) <= half_size[0]) & (np.abs(local[..., 1]) <= half_size[1])
        return np.where(hit, s, np.inf), local
    if shape == BOX:
        h = np.asarray(half_size, dtype=float)
        with np.errstate(divide="ignore", invalid="ignore"):
            t1 = (-h - o) / d
            t2 = (h - o) / d
        tmin = np.nanmax(np.minimum(t1, t2), axis=-1)
        tmax = np.nanmin(np.maximum(t1, t2), axis=-1)
        hit = (tmin <= tmax) & (tmin > NEAR)
        s = np.where(hit, tmin, np.inf)
        local = o + np.where(hit, s, 0.0)[..., None] * d
        return s, local
    raise InvalidArgumentError(f"unknown shape {shape!r}")


def _surfaces(spec: SceneSpec, frame):
    """(label, shape, half_size, pose, texture_seed, texture_cell) for frame 1 or 2."""
    bg = spec.background
    pose = bg.pose()
    if frame == 2:
        pose = bg.motion @ pose
    out = [(0, PLANE, None, pose, bg.texture_seed, bg.texture_cell or spec.texture_cell)]
    for k, obj in enumerate(spec.objects, start=1):
        pose = obj.pose if frame == 1 else obj.motion @ obj.pose
        out.append((k, obj.shape, obj.half_size, pose, obj.texture_seed, obj.texture_cell or spec.texture_cell))
    return out


def raycast(spec: SceneSpec, frame, xs, ys):
    """Depth, label, rgb at arbitrary pixel positions; misses give depth inf, label -1."""
    rays = _rays(spec.camera, xs, ys)
    depth = np.full(xs.shape, np.inf)
    label = np.full(xs.shape, -1, dtype=np.int64)
    rgb = np.zeros(xs.shape + (3,))
    for lab, shape, half, pose, tseed, cell in _surfaces(spec, frame):
        s, local = _intersect(shape, half, pose, rays)
        closer = s < depth
        if np.any(closer):
            depth = np.where(closer, s, depth)
            label = np.where(closer, lab, label)
            tex = texture_rgb(tseed, local[closer], cell)
            rgb[closer] = tex
    return depth, label, rgb


def _object_corners(obj: RigidObject):
    a = np.asarray(obj.half_size, dtype=float)
    if obj.shape == PLANE:
        signs = np.array([[sx, sy, 0.0] for sx in (-1, 1) for sy in (-1, 1)])
        return signs * np.array([a[0], a[1], 0.0])
    signs = np.array([[sx, sy, sz] for sx in (-1, 1) for sy in (-1, 1) for sz in (-1, 1)])
    return signs * a


def validate(spec: SceneSpec):
    if spec.width <= 0 or spec.height <= 0:
        raise InvalidArgumentError("image size must be positive")
    bg = spec.background
    if not bg.depth > NEAR:
        raise InvalidArgumentError(f"background plane depth {bg.depth} is behind the camera")
    for k, obj in enumerate(spec.objects, start=1):
        if obj.shape not in (PLANE, BOX):
            raise InvalidArgumentError(f"object {k}: unknown shape {obj.shape!r}")
        corners = _object_corners(obj)
        for frame, pose in ((1, obj.pose), (2, obj.motion @ obj.pose)):
            Z = geo.apply_batch(pose.q, pose.t, corners)[:, 2]
            if np.any(Z <= NEAR):
                raise InvalidArgumentError(f"object {k} reaches behind the camera in frame {frame}")


def generate(spec: SceneSpec) -> SyntheticScene:
    validate(spec)
    H, W = spec.height, spec.width
    xs, ys = pixel_grid(H, W)
    depth1, label1, rgb1 = raycast(spec, 1, xs, ys)
    depth2, _, rgb2 = raycast(spec, 2, xs, ys)
    inv1 = np.where(np.isfinite(depth1), 1.0 / depth1, 0.0)
    inv2 = np.where(np.isfinite(depth2), 1.0 / depth2, 0.0)

    motions = [spec.background.motion] + [o.motion for o in spec.objects]
    mq = np.stack([m.q for m in motions])
    mt = np.stack([m.t for m in motions])
    lab = np.where(label1 >= 0, label1, 0)
    q = np.where((label1 >= 0)[..., None], mq[lab], [1.0, 0.0, 0.0, 0.0])
    t = np.where((label1 >= 0)[..., None], mt[lab], 0.0)
    gt_field = SE3Field(q, t)
    gt_flow, gt_valid = induced_flow(gt_field, inv1, spec.camera)

    # a target is visible iff the frame-2 ray through it first hits this very point
    x2 = xs + gt_flow.flow[..., 0]
    y2 = ys + gt_flow.flow[..., 1]
    z_target = np.where(gt_valid, 1.0 / np.where(gt_valid, inv1 + gt_flow.dchange, 1.0), np.inf)
    inside = gt_valid & (x2 >= -0.5) & (x2 <= W - 0.5) & (y2 >= -0.5) & (y2 <= H - 0.5)
    z_vis, _, _ = raycast(spec, 2, np.where(inside, x2, 0.0), np.where(inside, y2, 0.0))
    occluded = ~inside | (z_target > z_vis * (1 + 1e-7) + 1e-9)
    occluded &= gt_valid | (label1 >= 0)

    return SyntheticScene(
        spec=spec,
        frame1=RGBDFrame(rgb1, inv1, "frame1"),
        frame2=RGBDFrame(rgb2, inv2, "frame2"),
        gt_field=gt_field,
        gt_flow=gt_flow,
        gt_valid=gt_valid,
        object_mask=label1,
        occlusion_mask=occluded,
    )


def _random_motion(rng, trans, rot):
    xi = np.concatenate([rng.uniform(-trans, trans, 3), rng.uniform(-rot, rot, 3)])
    return geo.se3_exp(geo.Twist.from_vector(xi))


def random_scene(seed=0, width=256, height=256, num_objects=2, static=False) -> SceneSpec:
    """Background plane plus ``num_objects`` boxes/patches with random rigid motions."""
    rng = np.random.default_rng(seed)
    f = 0.85 * width
    # texture cells of roughly 10 px at every surface's depth
    px_cell = 10.0 / f
    cam = geo.PinholeCamera(f, f, (width - 1) / 2.0, (height - 1) / 2.0)
    ident = geo.SE3Transform.identity()
    bg = BackgroundPlane(
        depth=float(rng.uniform(7.0, 9.0)),
        tilt=float(rng.uniform(-0.15, 0.15)),
        motion=ident if static else _random_motion(rng, 0.08, 0.01),
        texture_seed=int(rng.integers(1 << 30)),
    )
    bg.texture_cell = px_cell * bg.depth
    objects = []
    for k in range(num_objects):
        Z = float(rng.uniform(3.0, 5.0))
        # keep objects clear of each other and of the image border
        u = (k + 0.5) / num_objects
        X = (u - 0.5) * 0.8 * Z * width / f + float(rng.uniform(-0.1, 0.1))
        Y = float(rng.uniform(-0.25, 0.25)) * Z * height / f
        half = 0.16 * Z * width / f / max(num_objects, 1) ** 0.5
        rot = geo.se3_exp(geo.Twist(np.zeros(3), rng.uniform(-0.3, 0.3, 3)))
        pose = geo.SE3Transform(rot.q, [X, Y, Z])
        shape = BOX if k % 2 == 0 else PLANE
        size = (half, half, half * 0.6) if shape == BOX else (half, half * 0.8)
        objects.append(
            RigidObject(
                shape=shape,
                half_size=size,
                pose=pose,
                motion=ident if static else _random_motion(rng, 0.15, 0.05),
                texture_seed=int(rng.integers(1 << 30)),
                texture_cell=px_cell * Z,
            )
        )
    return SceneSpec(cam, width, height, bg, objects, seed, texture_cell=px_cell * 4.0)
