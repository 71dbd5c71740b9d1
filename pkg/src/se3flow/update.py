"""Recurrent update operators.

An operator maps the current state of one refinement iteration to a new hidden
state and an :class:`UpdateOutputs` bundle. Two implementations ship:

:class:`ReferenceGRU`
    a forward-only convolutional GRU with seeded (or file-loaded) weights;
:class:`OracleOperator`
    emits ground-truth revisions, labels-derived embeddings and edge weights,
    making every numerical stage downstream testable end to end.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import geometry as geo
from .errors import FormatError, InvalidArgumentError
from .field import SE3Field, induced_flow
from .scales import downsample_inverse_depth, subsample, subsample_field
from .smoothing import EdgeWeightField

EMBED_DIM = 16
HIDDEN_DIM = 128
CONTEXT_DIM = 384


@dataclass
class ContextPair:
    con1: np.ndarray
    con2: np.ndarray


@dataclass
class UpdateOutputs:
    revision: np.ndarray
    confidence: np.ndarray
    embeddings: np.ndarray
    edge_weights: EdgeWeightField
    mask_logits: np.ndarray

    def check(self, height, width, embed_dim):
        expect = {
            "revision": (height, width, 3),
            "confidence": (height, width, 3),
            "embeddings": (height, width, embed_dim),
            "mask_logits": (2 * height, 2 * width, 9),
        }
        for name, shape in expect.items():
            got = getattr(self, name).shape
            if got != shape:
                raise InvalidArgumentError(f"update output {name} has shape {got}, expected {shape}")
        if self.edge_weights.wx.shape != (height, width):
            raise InvalidArgumentError("update output edge weights have the wrong shape")
        if np.any(self.confidence < 0):
            raise InvalidArgumentError("update output confidence is negative")


def init_hidden(con1):
    return np.tanh(np.asarray(con1, dtype=float))


# -- reference convolutional GRU ---------------------------------------------


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softplus(x):
    return np.logaddexp(0.0, x)


def conv3x3(x, weight, bias):
    """Same-size 3x3 convolution, zero padding. ``weight`` is (9, Cin, Cout)."""
    H, W, _ = x.shape
    xp = np.pad(x, ((1, 1), (1, 1), (0, 0)))
    out = np.broadcast_to(bias, (H * W, weight.shape[2])).copy()
    for k in range(9):
        dy, dx = divmod(k, 3)
        out += xp[dy : dy + H, dx : dx + W].reshape(H * W, -1) @ weight[k]
    return out.reshape(H, W, -1)


def mask_channels_to_grid(m):
    """(H, W, 9*4) channels ``k*4 + 2a + b`` -> (2H, 2W, 9) with fine pixel (2i+a, 2j+b)."""
    H, W, _ = m.shape
    m = m.reshape(H, W, 9, 2, 2)
    return m.transpose(0, 3, 1, 4, 2).reshape(2 * H, 2 * W, 9)


class ReferenceGRU:
    """Motion encoder (two conv+ReLU) -> ConvGRU -> per-output conv heads.

    All layers are 3x3 convolutions. Weights are float32 (so that saved and
    reloaded operators match bit for bit) and applied in float64.
    """

    HEADS = {"revision": 3, "confidence": 3, "edge": 2, "mask": 36}

    def __init__(
        self,
        seed=42,
        cost_channels=2 * 81,
        hidden_dim=HIDDEN_DIM,
        context_dim=CONTEXT_DIM,
        embed_dim=EMBED_DIM,
        motion_dim=128,
        weights=None,
    ):
        self.seed = seed
        self.cost_channels = cost_channels
        self.hidden_dim = hidden_dim
        self.context_dim = context_dim
        self.embed_dim = embed_dim
        self.motion_dim = motion_dim
        shapes = self.layer_shapes()
        if weights is None:
            weights = self._init_weights(shapes, seed)
        for name, shape in shapes.items():
            if name not in weights or tuple(weights[name].shape) != shape:
                raise FormatError(f"weights for layer {name} missing or not of shape {shape}")
        self.weights = {k: np.asarray(v, dtype=np.float32) for k, v in weights.items()}
        self._w64 = {k: v.astype(np.float64) for k, v in self.weights.items()}
        for w in self._w64.values():
            w.setflags(write=False)
        self._fingerprint = None

    def layer_shapes(self):
        motion_in = self.cost_channels + 2 + 1 + 6 + self.embed_dim
        gru_in = self.hidden_dim + self.motion_dim + self.context_dim
        layers = {
            "enc1": (motion_in, self.motion_dim),
            "enc2": (self.motion_dim, self.motion_dim),
            "gru_z": (gru_in, self.hidden_dim),
            "gru_r": (gru_in, self.hidden_dim),
            "gru_q": (gru_in, self.hidden_dim),
            "head_revision": (self.hidden_dim, 3),
            "head_confidence": (self.hidden_dim, 3),
            "head_embedding": (self.hidden_dim, self.embed_dim),
            "head_edge": (self.hidden_dim, 2),
            "head_mask": (self.hidden_dim, 36),
        }
        shapes = {}
        for name, (cin, cout) in layers.items():
            shapes[name + ".weight"] = (9, cin, cout)
            shapes[name + ".bias"] = (cout,)
        return shapes

    @staticmethod
    def _init_weights(shapes, seed):
        rng = np.random.default_rng(np.random.SeedSequence(seed))
        out = {}
        for name, shape in shapes.items():
            if name.endswith(".weight"):
                fan_in = shape[0] * shape[1]
                gain = 0.1 if name.startswith("head_") else 1.0
                out[name] = (rng.standard_normal(shape) * gain / np.sqrt(fan_in)).astype(np.float32)
            else:
                out[name] = np.zeros(shape, dtype=np.float32)
        return out

    def fingerprint(self):
        if self._fingerprint is None:
            h = hashlib.sha256()
            for name in sorted(self.weights):
                h.update(name.encode())
                h.update(np.ascontiguousarray(self.weights[name]).tobytes())
            self._fingerprint = h.hexdigest()
        return self._fingerprint

    def _conv(self, name, x):
        return conv3x3(x, self._w64[name + ".weight"], self._w64[name + ".bias"])

    def update(self, state, con2, cost, flow2d, inv_depth_residual, twist_field, emb):
        H, W = state.shape[:2]
        parts = [cost, flow2d, inv_depth_residual[..., None], twist_field, emb]
        for p in parts + [con2]:
            if p.shape[:2] != (H, W):
                raise InvalidArgumentError(f"update input of shape {p.shape} does not match {(H, W)}")
        x = np.concatenate(parts, axis=-1)
        if x.shape[-1] != self.cost_channels + 9 + self.embed_dim:
            raise InvalidArgumentError(
                f"motion input has {x.shape[-1]} channels, operator expects {self.cost_channels + 9 + self.embed_dim}"
            )
        m = np.maximum(self._conv("enc1", x), 0.0)
        m = np.maximum(self._conv("enc2", m), 0.0)
        inp = np.concatenate([m, con2], axis=-1)
        hx = np.concatenate([state, inp], axis=-1)
        z = sigmoid(self._conv("gru_z", hx))
        r = sigmoid(self._conv("gru_r", hx))
        q = np.tanh(self._conv("gru_q", np.concatenate([r * state, inp], axis=-1)))
        h = (1.0 - z) * state + z * q
        edge = softplus(self._conv("head_edge", h))
        out = UpdateOutputs(
            revision=self._conv("head_revision", h),
            confidence=sigmoid(self._conv("head_confidence", h)),
            embeddings=self._conv("head_embedding", h),
            edge_weights=EdgeWeightField(edge[..., 0], edge[..., 1]),
            mask_logits=mask_channels_to_grid(0.25 * self._conv("head_mask", h)),
        )
        return h, out

    # -- weights files -------------------------------------------------------

    def save_weights(self, directory):
        """Write one raster per tensor plus ``manifest.json`` into ``directory``."""
        from .io import write_raster

        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        layers = []
        for name in sorted(self.weights):
            arr = self.weights[name]
            fname = name.replace(".", "_") + ".sfr"
            write_raster(directory / fname, arr.reshape(arr.shape[0], -1, 1) if arr.ndim == 3 else arr.reshape(1, -1, 1))
            layers.append({"name": name, "shape": list(arr.shape), "file": fname})
        manifest = {
            "format": "se3flow-reference-gru",
            "seed": self.seed,
            "config": {
                "cost_channels": self.cost_channels,
                "hidden_dim": self.hidden_dim,
                "context_dim": self.context_dim,
                "embed_dim": self.embed_dim,
                "motion_dim": self.motion_dim,
            },
            "layers": layers,
        }
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        return directory / "manifest.json"

    @classmethod
    def from_weights(cls, path):
        from .io import read_raster

        path = Path(path)
        manifest_path = path / "manifest.json" if path.is_dir() else path
        try:
            manifest = json.loads(manifest_path.read_text())
        except FileNotFoundError:
            raise
        except (OSError, ValueError) as exc:
            raise FormatError(f"{manifest_path}: cannot read weights manifest: {exc}") from exc
        if manifest.get("format") != "se3flow-reference-gru":
            raise FormatError(f"{manifest_path}: not a reference GRU weights manifest")
        weights = {}
        for layer in manifest["layers"]:
            arr = read_raster(manifest_path.parent / layer["file"]).astype(np.float32)
            weights[layer["name"]] = arr.reshape(layer["shape"])
        return cls(seed=manifest.get("seed"), weights=weights, **manifest["config"])


# -- ground-truth oracle -----------------------------------------------------


class OracleOperator:
    """Update operator that knows the ground truth.

    Works at any working resolution that evenly divides the full-resolution
    ground truth it is constructed with; the downsampling factor is inferred
    from the raster size passed to :meth:`update`.

    ``mask="labels"`` gives each fine pixel equal weight over the coarse
    neighbours that share its label, so upsampling never mixes objects;
    ``mask="uniform"`` weights all nine neighbours equally.
    """

    def __init__(
        self,
        gt_field: SE3Field,
        labels,
        inv_depth1,
        camera: geo.PinholeCamera,
        embed_dim=EMBED_DIM,
        separation=4.0,
        edge_weight=10.0,
        mask="labels",
    ):
        self.gt_field = gt_field
        self.labels = np.asarray(labels).astype(np.int64)
        self.inv_depth1 = np.asarray(inv_depth1, dtype=float)
        self.camera = camera
        self.embed_dim = embed_dim
        self.separation = separation
        self.edge_weight = edge_weight
        if mask not in ("uniform", "labels"):
            raise InvalidArgumentError(f"unknown oracle mask mode {mask!r}")
        self.mask = mask
        self._cache = {}

    @classmethod
    def from_scene(cls, scene, **kw):
        """Build from a generated synthetic scene."""
        return cls(scene.gt_field, scene.object_mask, scene.frame1.inv_depth, scene.camera, **kw)

    def fingerprint(self):
        h = hashlib.sha256(b"oracle")
        h.update(self.gt_field.to_array().tobytes())
        h.update(self.labels.tobytes())
        return h.hexdigest()

    def _factor(self, height, width):
        H, W = self.labels.shape
        if H % height or W % width or H // height != W // width:
            raise InvalidArgumentError(f"working size {(height, width)} does not divide ground truth {(H, W)}")
        return H // height

    def _at_scale(self, factor):
        if factor not in self._cache:
            cam = self.camera.scaled(factor)
            d1 = downsample_inverse_depth(self.inv_depth1, factor)
            gt = subsample_field(self.gt_field, factor)
            labels = subsample(self.labels, factor)
            flow, valid = induced_flow(gt, d1, cam)
            fine_labels = subsample(self.labels, factor // 2) if factor > 1 else None
            self._cache[factor] = (cam, d1, flow, valid, labels, fine_labels)
        return self._cache[factor]

    def embeddings_for(self, labels):
        onehot = np.zeros(labels.shape + (self.embed_dim,))
        idx = np.mod(np.maximum(labels, 0), self.embed_dim)
        np.put_along_axis(onehot, idx[..., None], self.separation, axis=-1)
        return onehot

    def edge_weights_for(self, labels):
        wx = np.zeros(labels.shape)
        wy = np.zeros(labels.shape)
        wx[:, :-1] = np.where(labels[:, 1:] == labels[:, :-1], self.edge_weight, 0.0)
        wy[:-1, :] = np.where(labels[1:, :] == labels[:-1, :], self.edge_weight, 0.0)
        return EdgeWeightField(wx, wy)

    def _mask_logits(self, labels, fine_labels):
        H, W = labels.shape
        if self.mask == "uniform" or fine_labels is None:
            return np.zeros((2 * H, 2 * W, 9))
        padded = np.pad(labels, 1, mode="edge")
        logits = np.full((2 * H, 2 * W, 9), -30.0)
        for k in range(9):
            di, dj = divmod(k, 3)
            nb = np.repeat(np.repeat(padded[di : di + H, dj : dj + W], 2, 0), 2, 1)
            logits[..., k] = np.where(nb == fine_labels, 0.0, -30.0)
        return logits

    def update(self, state, con2, cost, flow2d, inv_depth_residual, twist_field, emb):
        H, W = state.shape[:2]
        factor = self._factor(H, W)
        cam, d1, gt_flow, gt_valid, labels, fine_labels = self._at_scale(factor)
        current, cur_valid = induced_flow(SE3Field.from_twists(twist_field), d1, cam)
        valid = gt_valid & cur_valid
        revision = np.where(valid[..., None], gt_flow.stacked() - current.stacked(), 0.0)
        confidence = np.repeat(valid[..., None].astype(float), 3, axis=-1)
        out = UpdateOutputs(
            revision=revision,
            confidence=confidence,
            embeddings=self.embeddings_for(labels),
            edge_weights=self.edge_weights_for(labels),
            mask_logits=self._mask_logits(labels, fine_labels),
        )
        return state, out
