"""Coarse-to-fine driver.

Each scale runs ``N_iter(s)`` refinement iterations::

    correlation lookup -> update operator -> embedding smoothing
        -> revised targets -> one Dense-SE3 Gauss-Newton step

Between scales the SE(3) field (and, depending on the strategy, the
embeddings) is convex-upsampled x2 with the last iteration's mask. After every
iteration the field is brought to full resolution (convex x2, then bilinear)
and recorded in the trace for the multi-iteration loss.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field as dc_field, replace

import numpy as np

from . import correlation as corr
from . import dense_se3 as dse3
from .errors import InvalidArgumentError, PipelineError, Se3FlowError
from .field import (
    ConvexUpsampleMask,
    FlowField,
    SE3Field,
    bilinear_upsample,
    bilinear_upsample_se3,
    convex_upsample,
    convex_upsample_se3,
    induced_flow,
    inverse_depth_residual,
    pixel_grid,
)
from .scales import downsample_inverse_depth
from .smoothing import smooth_embeddings
from .update import EMBED_DIM, init_hidden

log = logging.getLogger(__name__)

REINIT_HS_UPSAMPLE_EMB = "reinit-hs+upsample-emb"
REINIT_HS_REINIT_EMB = "reinit-hs+reinit-emb"
UPSAMPLE_HS_REINIT_EMB = "upsample-hs+reinit-emb"
UPSAMPLE_HS_UPSAMPLE_EMB = "upsample-hs+upsample-emb"
SCALE_INIT_STRATEGIES = (
    REINIT_HS_UPSAMPLE_EMB,
    REINIT_HS_REINIT_EMB,
    UPSAMPLE_HS_REINIT_EMB,
    UPSAMPLE_HS_UPSAMPLE_EMB,
)


@dataclass
class PipelineConfig:
    """Scales are given as downsampling factors, coarsest first."""

    factors: tuple = (16, 8, 4)
    iterations: tuple = (4, 6, 8)
    radius: tuple = (32, 32, 32)
    damping: float = dse3.DEFAULT_DAMPING
    corr_radius: int = 4
    corr_mode: str = corr.MATERIALIZED
    scale_init: str = REINIT_HS_UPSAMPLE_EMB
    smoothing: bool = True
    neighborhood: str = "fixed"
    embed_dim: int = EMBED_DIM
    smoothing_tol: float = 1e-8
    smoothing_max_iter: int = 500

    def __post_init__(self):
        self.factors = tuple(int(f) for f in self.factors)
        self.iterations = tuple(int(n) for n in self.iterations)
        self.radius = tuple(int(r) for r in self.radius)
        self.validate()

    def validate(self):
        if not self.factors:
            raise InvalidArgumentError("at least one scale is required")
        if len(self.iterations) != len(self.factors) or len(self.radius) != len(self.factors):
            raise InvalidArgumentError("factors, iterations and radius must have one entry per scale")
        for a, b in zip(self.factors, self.factors[1:]):
            if a != 2 * b:
                raise InvalidArgumentError(f"each scale must double the resolution: {self.factors}")
        if self.factors[-1] < 2:
            raise InvalidArgumentError("the finest working scale must be at most half resolution")
        if any(n < 1 for n in self.iterations):
            raise InvalidArgumentError("iteration counts must be >= 1")
        if any(r < 1 for r in self.radius):
            raise InvalidArgumentError("Dense-SE3 radii must be >= 1")
        if not self.damping > 0:
            raise InvalidArgumentError("damping must be positive")
        if self.scale_init not in SCALE_INIT_STRATEGIES:
            raise InvalidArgumentError(f"unknown scale-init strategy {self.scale_init!r}")
        if self.corr_mode not in (corr.MATERIALIZED, corr.ON_DEMAND):
            raise InvalidArgumentError(f"unknown correlation mode {self.corr_mode!r}")
        if self.neighborhood not in ("fixed", "area"):
            raise InvalidArgumentError(f"unknown neighbourhood mode {self.neighborhood!r}")

    @classmethod
    def three_scale(cls, **kw):
        return cls(**{"factors": (16, 8, 4), "iterations": (4, 6, 8), "radius": (32, 32, 32), **kw})

    @classmethod
    def four_scale(cls, **kw):
        base = {
            "factors": (16, 8, 4, 2),
            "iterations": (4, 5, 5, 6),
            "radius": (64, 64, 64, 64),
            "damping": dse3.DEFAULT_DAMPING_4SCALE,
        }
        return cls(**{**base, **kw})

    @property
    def schedule(self):
        return list(self.iterations)

    @property
    def total_iterations(self):
        return sum(self.iterations)

    def radius_for(self, s):
        if self.neighborhood == "area":
            return dse3.area_preserving_radius(self.factors[s])
        return self.radius[s]

    def with_options(self, **kw):
        return replace(self, **kw)


@dataclass
class IterationRecord:
    scale: int  # 1-based
    iteration: int  # 1-based
    factor: int
    working_shape: tuple
    field: SE3Field  # full resolution
    flow: FlowField  # full resolution
    valid: np.ndarray
    revision: np.ndarray  # revised 2D flow, full resolution px
    operator_fingerprint: str


@dataclass
class IterationTrace:
    schedule: list
    factors: list
    records: list = dc_field(default_factory=list)

    def __len__(self):
        return len(self.records)

    def __iter__(self):
        return iter(self.records)

    def resolutions(self):
        return [r.working_shape for r in self.records]


@dataclass
class EstimateResult:
    field: SE3Field
    flow: FlowField
    valid: np.ndarray
    trace: IterationTrace


def _to_full_res(field_s, mask, factor):
    up = convex_upsample_se3(field_s, mask)
    return bilinear_upsample_se3(up, factor // 2)


def _flow_to_full_res(flow_s, mask, factor):
    up = convex_upsample(flow_s, mask) * 2.0
    rest = factor // 2
    return bilinear_upsample(up, rest) * rest


def estimate(frame1, frame2, cam, feature_provider, context_provider, update_op, cfg: PipelineConfig = None, keep_fields=True):
    """Run the full coarse-to-fine schedule; returns an :class:`EstimateResult`."""
    cfg = cfg or PipelineConfig()
    cfg.validate()
    H, W = frame1.inv_depth.shape
    if frame2.inv_depth.shape != (H, W):
        raise InvalidArgumentError("frames differ in size")
    coarsest = cfg.factors[0]
    if H % coarsest or W % coarsest:
        raise InvalidArgumentError(f"image size {(H, W)} must be divisible by {coarsest}")
    d1_full = np.asarray(frame1.inv_depth, dtype=float)
    if not np.any(np.isfinite(d1_full) & (d1_full > 0)):
        raise InvalidArgumentError("frame 1 has no valid inverse depth")

    fingerprint = update_op.fingerprint() if hasattr(update_op, "fingerprint") else str(id(update_op))
    trace = IterationTrace(schedule=cfg.schedule, factors=list(cfg.factors))
    field_s = emb = hidden = mask = None
    full_field = full_flow = full_valid = None

    for s, factor in enumerate(cfg.factors):
        cam_s = cam.scaled(factor)
        d1 = downsample_inverse_depth(frame1.inv_depth, factor)
        d2 = downsample_inverse_depth(frame2.inv_depth, factor)
        hs, ws = d1.shape
        xs, ys = pixel_grid(hs, ws)
        try:
            f1 = feature_provider.provide(frame1, factor)
            f2 = feature_provider.provide(frame2, factor)
            pyr = corr.build_pyramid(f1, f2, cfg.corr_mode)
            ctx = context_provider.provide(frame1, factor)
        except Se3FlowError as exc:
            raise PipelineError(s + 1, 0, exc) from exc

        if s == 0:
            field_s = SE3Field.identity(hs, ws)
            emb = np.zeros((hs, ws, cfg.embed_dim))
            hidden = init_hidden(ctx.con1)
        else:
            field_s = convex_upsample_se3(field_s, mask)
            up_emb = cfg.scale_init.endswith("upsample-emb")
            emb = convex_upsample(emb, mask) if up_emb else np.zeros((hs, ws, cfg.embed_dim))
            if cfg.scale_init.startswith("upsample-hs"):
                hidden = bilinear_upsample(hidden, 2)
            else:
                hidden = init_hidden(ctx.con1)
        radius = cfg.radius_for(s)

        for it in range(cfg.iterations[s]):
            try:
                flow_s, _ = induced_flow(field_s, d1, cam_s)
                coords = np.stack([xs + flow_s.flow[..., 0], ys + flow_s.flow[..., 1]], axis=-1)
                cost = pyr.lookup(coords, cfg.corr_radius)
                resid, _ = inverse_depth_residual(field_s, d1, d2, cam_s)
                hidden, out = update_op.update(
                    hidden, ctx.con2, cost, flow_s.flow, resid, field_s.twists(), emb
                )
                out.check(hs, ws, cfg.embed_dim)
                if cfg.smoothing:
                    emb = smooth_embeddings(
                        out.embeddings, out.edge_weights, cfg.smoothing_tol, cfg.smoothing_max_iter
                    )
                else:
                    emb = np.array(out.embeddings, dtype=float)
                targets = dse3.build_targets(d1, flow_s, out.revision)
                field_s = dse3.dense_se3_step(
                    field_s, emb, out.confidence, targets, cam_s, d1, radius, cfg.damping
                )
                mask = ConvexUpsampleMask.from_logits(out.mask_logits)

                full_field = _to_full_res(field_s, mask, factor)
                full_flow, full_valid = induced_flow(full_field, d1_full, cam)
                revision = _flow_to_full_res(flow_s.flow + out.revision[..., :2], mask, factor)
            except Se3FlowError as exc:
                raise PipelineError(s + 1, it + 1, exc) from exc
            trace.records.append(
                IterationRecord(
                    scale=s + 1,
                    iteration=it + 1,
                    factor=factor,
                    working_shape=(hs, ws),
                    field=full_field if keep_fields else None,
                    flow=full_flow,
                    valid=full_valid,
                    revision=revision,
                    operator_fingerprint=fingerprint,
                )
            )
            log.debug("scale %d (1/%d) iteration %d done", s + 1, factor, it + 1)

    return EstimateResult(full_field, full_flow, full_valid, trace)
