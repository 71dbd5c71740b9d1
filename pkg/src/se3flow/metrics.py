"""Optical flow, scene flow and KITTI-style outlier metrics."""

from __future__ import annotations

from collections import OrderedDict

import numpy as np

from . import geometry as geo
from .errors import FormatError, InvalidArgumentError
from .field import map_points

KEYS = (
    "n_valid",
    "epe2d",
    "outlier_1px",
    "epe3d",
    "outlier_0.05",
    "outlier_0.1",
    "d2",
    "fl",
    "sf",
)


class MetricReport:
    """Ordered key/value metrics; rates are percentages in [0, 100]."""

    def __init__(self, values):
        self.values = OrderedDict(values)

    def __getitem__(self, key):
        return self.values[key]

    def __contains__(self, key):
        return key in self.values

    def keys(self):
        return self.values.keys()

    def to_text(self):
        lines = []
        for k, v in self.values.items():
            lines.append(f"{k}: {int(v)}" if k.endswith("n_valid") else f"{k}: {v:.6f}")
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text):
        values = OrderedDict()
        for n, line in enumerate(text.splitlines(), start=1):
            if not line.strip():
                continue
            if ":" not in line:
                raise FormatError(f"metric report line {n} is not 'key: value'")
            k, v = line.split(":", 1)
            values[k.strip()] = float(v)
        return cls(values)

    def __repr__(self):
        return "MetricReport(" + ", ".join(f"{k}={v:.4g}" for k, v in self.values.items()) + ")"


def scene_flow_3d(cam: geo.PinholeCamera, inv_depth1, flow, dchange):
    """3D displacement between back-projected source and target correspondences."""
    x = map_points(np.asarray(inv_depth1, float))
    tgt = x.copy()
    tgt[..., :2] += flow
    tgt[..., 2] += dchange
    return geo.backproject_batch(cam, tgt) - geo.backproject_batch(cam, x)


def _rate(bad, mask):
    return 100.0 * float(np.count_nonzero(bad & mask)) / float(np.count_nonzero(mask))


def _kitti(err, mag):
    return (err > 3.0) & (err > 0.05 * mag)


def metrics(
    f_est,
    d_est,
    f_gt,
    d_gt,
    sf_est,
    sf_gt,
    mask,
    inv_depth1=None,
    disp_scale=1.0,
    object_mask=None,
):
    """Evaluate an estimate against ground truth on ``mask``.

    D2 compares frame-2 disparities ``disp_scale * (d1 + d)`` (``disp_scale`` is
    focal length times baseline); with ``inv_depth1`` absent, ``d1 = 0``.
    SF counts a pixel as an outlier when D2 or Fl does (frame-1 depth is an
    input, so D1 never fails). With ``object_mask`` (labels, > 0 foreground)
    the KITTI rates are repeated with ``fg_`` / ``bg_`` prefixes.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise InvalidArgumentError("metric mask is empty")
    f_est, f_gt = np.asarray(f_est, float), np.asarray(f_gt, float)
    d_est, d_gt = np.asarray(d_est, float), np.asarray(d_gt, float)
    epe = np.linalg.norm(f_est - f_gt, axis=-1)
    epe3 = np.linalg.norm(np.asarray(sf_est, float) - np.asarray(sf_gt, float), axis=-1)
    epe3 = np.where(np.isfinite(epe3), epe3, np.inf)
    d1 = np.zeros_like(d_gt) if inv_depth1 is None else np.asarray(inv_depth1, float)
    derr = np.abs(disp_scale * (d_est - d_gt))
    dmag = np.abs(disp_scale * (d1 + d_gt))
    fl = _kitti(epe, np.linalg.norm(f_gt, axis=-1))
    d2 = _kitti(derr, dmag)
    sf = fl | d2
    vals = OrderedDict()
    vals["n_valid"] = float(np.count_nonzero(mask))
    vals["epe2d"] = float(epe[mask].mean())
    vals["outlier_1px"] = _rate(epe > 1.0, mask)
    vals["epe3d"] = float(epe3[mask].mean())
    vals["outlier_0.05"] = _rate(epe3 > 0.05, mask)
    vals["outlier_0.1"] = _rate(epe3 > 0.1, mask)
    vals["d2"] = _rate(d2, mask)
    vals["fl"] = _rate(fl, mask)
    vals["sf"] = _rate(sf, mask)
    if object_mask is not None:
        fg = np.asarray(object_mask) > 0
        for prefix, sub in (("fg_", mask & fg), ("bg_", mask & ~fg)):
            if sub.any():
                vals[prefix + "n_valid"] = float(np.count_nonzero(sub))
                vals[prefix + "d2"] = _rate(d2, sub)
                vals[prefix + "fl"] = _rate(fl, sub)
                vals[prefix + "sf"] = _rate(sf, sub)
    return MetricReport(vals)
