"""All-pairs correlation pyramid with windowed bilinear lookup.

Two modes produce the same costs:

``materialized``
    the level-0 volume ``<f1_i, f2_j> / sqrt(D)`` is computed once and the
    coarser level is a 2x2 average pool over the frame-2 dimensions;
``on-demand``
    only the feature maps are kept and costs are evaluated at lookup time
    (cost is linear in the frame-2 features, so pooling and bilinear
    sampling move onto the features).
"""

from __future__ import annotations

import numpy as np

from . import _backend
from .errors import InvalidArgumentError

MATERIALIZED = "materialized"
ON_DEMAND = "on-demand"
NUM_LEVELS = 2


def avg_pool2(arr, axes=(0, 1)):
    """2x2 average pool over two adjacent axes, truncating odd sizes."""
    a0, a1 = axes
    h = arr.shape[a0] // 2
    w = arr.shape[a1] // 2
    sl = [slice(None)] * arr.ndim
    sl[a0] = slice(0, 2 * h)
    sl[a1] = slice(0, 2 * w)
    arr = arr[tuple(sl)]
    shape = arr.shape[:a0] + (h, 2, w, 2) + arr.shape[a1 + 1 :]
    return arr.reshape(shape).mean(axis=(a0 + 1, a0 + 3))


class CorrelationPyramid:
    def __init__(self, f1, f2, mode=MATERIALIZED, num_levels=NUM_LEVELS):
        f1 = np.ascontiguousarray(f1, dtype=float)
        f2 = np.ascontiguousarray(f2, dtype=float)
        if f1.ndim != 3 or f2.ndim != 3:
            raise InvalidArgumentError("feature maps must be (H, W, D)")
        if f1.shape[2] != f2.shape[2]:
            raise InvalidArgumentError(f"channel mismatch: {f1.shape[2]} vs {f2.shape[2]}")
        if mode not in (MATERIALIZED, ON_DEMAND):
            raise InvalidArgumentError(f"unknown correlation mode {mode!r}")
        if not (np.all(np.isfinite(f1)) and np.all(np.isfinite(f2))):
            raise InvalidArgumentError("feature maps must be finite")
        self.mode = mode
        self.num_levels = num_levels
        self.norm = 1.0 / np.sqrt(f1.shape[2])
        self.f1 = f1
        self.f2 = f2
        self.shape1 = f1.shape[:2]
        self.shape2 = f2.shape[:2]
        if mode == MATERIALIZED:
            self._volumes = self._compute_volumes()
        else:
            self._volumes = None
            levels = [f2]
            for _ in range(num_levels - 1):
                levels.append(np.ascontiguousarray(avg_pool2(levels[-1])))
            self._f2_levels = levels

    def _compute_volumes(self):
        H1, W1, D = self.f1.shape
        H2, W2, _ = self.f2.shape
        vol = (self.f1.reshape(H1 * W1, D) @ self.f2.reshape(H2 * W2, D).T) * self.norm
        vols = [vol.reshape(H1 * W1, H2, W2)]
        for _ in range(self.num_levels - 1):
            vols.append(avg_pool2(vols[-1], axes=(1, 2)))
        return vols

    def volume(self, level=0):
        """The (H1*W1, H2_l, W2_l) cost volume at ``level``; computed on request in on-demand mode."""
        if self._volumes is not None:
            return self._volumes[level]
        return self._compute_volumes()[level]

    def lookup(self, coords, radius=4):
        return lookup(self, coords, radius)


def build_pyramid(f1, f2, mode=MATERIALIZED, num_levels=NUM_LEVELS):
    return CorrelationPyramid(f1, f2, mode, num_levels)


def lookup(pyr: CorrelationPyramid, coords, radius=4):
    """Sample (2r+1)^2 costs per level around ``coords`` (H, W, 2) given as ``(x, y)``.

    Output channels are ordered level-major, then row offset, then column
    offset. Samples falling outside frame 2 contribute zero.
    """
    if radius < 1:
        raise InvalidArgumentError(f"lookup radius must be >= 1, got {radius}")
    coords = np.ascontiguousarray(coords, dtype=float)
    if coords.shape != pyr.shape1 + (2,):
        raise InvalidArgumentError(f"coords {coords.shape} do not match frame-1 size {pyr.shape1}")
    if pyr.mode == MATERIALIZED:
        return _backend.lookup_volume(pyr._volumes, coords, radius)
    return _backend.kernels.lookup_on_demand(pyr.f1, pyr._f2_levels, coords, radius, pyr.norm)
