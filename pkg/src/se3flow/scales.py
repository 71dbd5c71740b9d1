"""Resampling of inputs onto the coarse working grids.

A coarse pixel at downsampling factor ``f`` covers the ``f x f`` block of
full-resolution pixels; its centre sits at ``f * (x + 0.5) - 0.5``.
"""

import numpy as np

from .errors import InvalidArgumentError
from .field import SE3Field


def _blocks(arr, factor):
    H, W = arr.shape[:2]
    if H % factor or W % factor:
        raise InvalidArgumentError(f"size {(H, W)} is not divisible by {factor}")
    return arr.reshape((H // factor, factor, W // factor, factor) + arr.shape[2:])


def downsample_mean(arr, factor):
    if factor == 1:
        return np.array(arr, dtype=float)
    return _blocks(np.asarray(arr, dtype=float), factor).mean(axis=(1, 3))


def downsample_inverse_depth(inv_depth, factor):
    """Block mean over valid (positive, finite) entries; empty blocks become 0.

    Inverse depth of a plane is affine in pixel coordinates, so fully valid
    blocks on a plane give the exact inverse depth at the coarse pixel centre.
    """
    d = np.asarray(inv_depth, dtype=float)
    if factor == 1:
        return np.where(np.isfinite(d) & (d > 0), d, 0.0)
    ok = np.isfinite(d) & (d > 0)
    s = _blocks(np.where(ok, d, 0.0), factor).sum(axis=(1, 3))
    n = _blocks(ok.astype(float), factor).sum(axis=(1, 3))
    return np.where(n > 0, s / np.where(n > 0, n, 1.0), 0.0)


def subsample(arr, factor):
    """Pick one representative full-resolution pixel per block."""
    if factor == 1:
        return np.array(arr)
    o = factor // 2
    return np.array(arr[o::factor, o::factor])


def subsample_field(field: SE3Field, factor):
    if factor == 1:
        return field
    return SE3Field(subsample(field.q, factor), subsample(field.t, factor), check=False)
