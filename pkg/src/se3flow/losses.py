"""Multi-scale multi-iteration scene flow loss."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class LossWeights:
    w_d: float = 250.0
    w_rev: float = 0.2
    gamma: float = 0.8
    reduction: str = "mean"

    def __post_init__(self):
        if self.w_d < 0 or self.w_rev < 0:
            raise InvalidArgumentError("loss weights must be nonnegative")
        if not 0 < self.gamma <= 1:
            raise InvalidArgumentError(f"gamma must lie in (0, 1], got {self.gamma}")
        if self.reduction not in ("mean", "sum"):
            raise InvalidArgumentError(f"unknown reduction {self.reduction!r}")


def _l1(a, b, mask, reduction):
    diff = np.abs(np.asarray(a, float) - np.asarray(b, float))
    if diff.ndim == 3:
        diff = diff.sum(axis=-1)
    vals = diff[mask]
    return float(vals.mean() if reduction == "mean" else vals.sum())


def per_iteration_loss(f_est, d_est, f_rev, f_gt, d_gt, valid_mask, w: LossWeights = LossWeights()):
    """L1 flow term + ``w_d`` * inverse-depth-change term + ``w_rev`` * revised-flow term.

    Flow L1 is summed over both components per pixel; every term is reduced
    over ``valid_mask`` (mean by default).
    """
    mask = np.asarray(valid_mask, dtype=bool)
    if not mask.any():
        raise InvalidArgumentError("loss mask is empty")
    return (
        _l1(f_est, f_gt, mask, w.reduction)
        + w.w_d * _l1(d_est, d_gt, mask, w.reduction)
        + w.w_rev * _l1(f_rev, f_gt, mask, w.reduction)
    )


def remaining_iterations(s, i, schedule):
    """Iterations left after iteration ``i`` of scale ``s`` (both 1-based)."""
    n = len(schedule)
    if not 1 <= s <= n:
        raise InvalidArgumentError(f"scale index {s} outside 1..{n}")
    if not 1 <= i <= schedule[s - 1]:
        raise InvalidArgumentError(f"iteration {i} outside 1..{schedule[s - 1]} at scale {s}")
    return schedule[s - 1] - i + sum(schedule[s:])


def loss_weight(s, i, schedule, gamma=0.8):
    return gamma ** remaining_iterations(s, i, schedule)


def total_loss(trace, gt_flow, gt_dchange, gt_mask, w: LossWeights = LossWeights(), schedule=None):
    """Sum of ``gamma**R * L`` over every traced (scale, iteration).

    ``trace`` is an iterable of records with ``scale``, ``iteration`` (1-based),
    ``flow`` (a FlowField), ``revision`` and ``valid``; or an object with a
    ``records`` attribute and a ``schedule``.
    """
    records = list(getattr(trace, "records", trace))
    if schedule is None:
        schedule = getattr(trace, "schedule", None)
    if schedule is None:
        raise InvalidArgumentError("total_loss needs the iteration schedule")
    expected = [(s, i) for s, n in enumerate(schedule, start=1) for i in range(1, n + 1)]
    got = sorted((r.scale, r.iteration) for r in records)
    if got != expected:
        raise InvalidArgumentError(f"incomplete trace: {len(got)} records, schedule needs {len(expected)}")
    total = 0.0
    for r in records:
        mask = np.asarray(gt_mask, bool) & np.asarray(r.valid, bool)
        L = per_iteration_loss(r.flow.flow, r.flow.dchange, r.revision, gt_flow, gt_dchange, mask, w)
        total += w.gamma ** remaining_iterations(r.scale, r.iteration, schedule) * L
    return total
