"""Feature and context providers standing in for learned encoders.

A provider is any object with ``provide(frame, factor)``; feature providers
return an (H/f, W/f, D) feature map, context providers a :class:`ContextPair`.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .scales import downsample_inverse_depth, downsample_mean
from .update import CONTEXT_DIM, HIDDEN_DIM, ContextPair

_CENSUS_OFFSETS = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


def handcrafted_features(rgb, factor):
    """Downsampled colour, gradients and a soft census signature (13 channels)."""
    color = downsample_mean(rgb, factor)
    gray = color.mean(axis=-1)
    gp = np.pad(gray, 1, mode="edge")
    gx = 0.5 * (gp[1:-1, 2:] - gp[1:-1, :-2])
    gy = 0.5 * (gp[2:, 1:-1] - gp[:-2, 1:-1])
    census = []
    H, W = gray.shape
    for dy, dx in _CENSUS_OFFSETS:
        nb = gp[1 + dy : 1 + dy + H, 1 + dx : 1 + dx + W]
        census.append(np.tanh(8.0 * (nb - gray)))
    feats = np.concatenate(
        [color - 0.5, 4.0 * gx[..., None], 4.0 * gy[..., None], np.stack(census, axis=-1)], axis=-1
    )
    return np.ascontiguousarray(feats)


class ReferenceFeatureProvider:
    channels = 13

    def provide(self, frame, factor):
        return handcrafted_features(frame.rgb, factor)


class ReferenceContextProvider:
    """Fixed seeded projection of 3x3 neighbourhoods of hand-crafted features.

    The same projection is used at every scale, so channel counts agree
    across scales.
    """

    def __init__(self, hidden_dim=HIDDEN_DIM, context_dim=CONTEXT_DIM, seed=0):
        self.hidden_dim = hidden_dim
        self.context_dim = context_dim
        self.seed = seed
        rng = np.random.default_rng(np.random.SeedSequence([seed, 7919]))
        n_in = 9 * (ReferenceFeatureProvider.channels + 1)
        self.projection = rng.standard_normal((n_in, hidden_dim + context_dim)) / np.sqrt(n_in)

    def provide(self, frame, factor):
        feats = handcrafted_features(frame.rgb, factor)
        d = downsample_inverse_depth(frame.inv_depth, factor)
        scale = np.median(d[d > 0]) if np.any(d > 0) else 1.0
        base = np.concatenate([feats, (d / scale - 1.0)[..., None]], axis=-1)
        H, W, C = base.shape
        bp = np.pad(base, ((1, 1), (1, 1), (0, 0)), mode="edge")
        stack = np.concatenate([bp[dy : dy + H, dx : dx + W] for dy in range(3) for dx in range(3)], axis=-1)
        ctx = (stack.reshape(H * W, -1) @ self.projection).reshape(H, W, -1)
        return ContextPair(
            con1=np.ascontiguousarray(ctx[..., : self.hidden_dim]),
            con2=np.ascontiguousarray(np.maximum(ctx[..., self.hidden_dim :], 0.0)),
        )


def feature_path(directory, frame_name, factor):
    return Path(directory) / f"{frame_name}_features_s{factor}.sfr"


def context_paths(directory, frame_name, factor):
    d = Path(directory)
    return d / f"{frame_name}_con1_s{factor}.sfr", d / f"{frame_name}_con2_s{factor}.sfr"


class FileFeatureProvider:
    """Loads precomputed rasters named ``<frame>_features_s<factor>.sfr``."""

    def __init__(self, directory):
        self.directory = Path(directory)

    def provide(self, frame, factor):
        from .io import read_raster

        path = feature_path(self.directory, frame.name, factor)
        if not path.exists():
            raise FileNotFoundError(f"missing precomputed feature raster {path}")
        return np.ascontiguousarray(read_raster(path), dtype=float)


class FileContextProvider:
    def __init__(self, directory):
        self.directory = Path(directory)

    def provide(self, frame, factor):
        from .io import read_raster

        p1, p2 = context_paths(self.directory, frame.name, factor)
        for p in (p1, p2):
            if not p.exists():
                raise FileNotFoundError(f"missing precomputed context raster {p}")
        return ContextPair(read_raster(p1).astype(float), read_raster(p2).astype(float))


def export_provider_rasters(directory, frames, factors, feature_provider, context_provider=None, dtype=np.float64):
    """Write the rasters a file-backed provider needs for ``frames`` at ``factors``."""
    from .io import write_raster

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    for frame in frames:
        for f in factors:
            write_raster(feature_path(directory, frame.name, f), feature_provider.provide(frame, f), dtype=dtype)
    if context_provider is not None:
        frame = frames[0]
        for f in factors:
            ctx = context_provider.provide(frame, f)
            p1, p2 = context_paths(directory, frame.name, f)
            write_raster(p1, ctx.con1, dtype=dtype)
            write_raster(p2, ctx.con2, dtype=dtype)
