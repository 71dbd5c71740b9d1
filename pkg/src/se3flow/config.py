"""Run configuration: one flat JSON document per run, schema-checked up front."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field as dc_field
from pathlib import Path

import jsonschema

from . import correlation as corr
from .errors import ConfigError, Se3FlowError
from .pipeline import SCALE_INIT_STRATEGIES, PipelineConfig

_INT_LIST = {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 1}

PIPELINE_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "factors": _INT_LIST,
        "iterations": _INT_LIST,
        "radius": _INT_LIST,
        "damping": {"type": "number", "exclusiveMinimum": 0},
        "corr_radius": {"type": "integer", "minimum": 1},
        "corr_mode": {"enum": [corr.MATERIALIZED, corr.ON_DEMAND]},
        "scale_init": {"enum": list(SCALE_INIT_STRATEGIES)},
        "smoothing": {"type": "boolean"},
        "neighborhood": {"enum": ["fixed", "area"]},
        "embed_dim": {"type": "integer", "minimum": 1},
        "smoothing_tol": {"type": "number", "exclusiveMinimum": 0},
        "smoothing_max_iter": {"type": "integer", "minimum": 1},
    },
}

_PATH = {"type": "string", "minLength": 1}

RUN_SCHEMA = {
    "type": "object",
    "additionalProperties": False,
    "properties": {
        "scales": {"enum": [3, 4]},
        "pipeline": PIPELINE_SCHEMA,
        "seed": {"type": "integer", "minimum": 0},
        "camera": {
            "type": "object",
            "additionalProperties": False,
            "required": ["fx", "fy", "cx", "cy"],
            "properties": {k: {"type": "number"} for k in ("fx", "fy", "cx", "cy")},
        },
        "provider": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["reference", "files"]},
                "directory": _PATH,
                "seed": {"type": "integer", "minimum": 0},
            },
            "if": {"properties": {"kind": {"const": "files"}}},
            "then": {"required": ["kind", "directory"]},
        },
        "operator": {
            "type": "object",
            "additionalProperties": False,
            "required": ["kind"],
            "properties": {
                "kind": {"enum": ["reference", "weights", "oracle"]},
                "seed": {"type": "integer", "minimum": 0},
                "path": _PATH,
                "mask": {"enum": ["labels", "uniform"]},
            },
            "if": {"properties": {"kind": {"const": "weights"}}},
            "then": {"required": ["kind", "path"]},
        },
        "inputs": {
            "type": "object",
            "additionalProperties": False,
            "properties": {
                k: _PATH
                for k in (
                    "scene",
                    "frame1_rgb",
                    "frame1_inv_depth",
                    "frame2_rgb",
                    "frame2_inv_depth",
                    "camera",
                    "gt_field",
                    "labels",
                )
            },
        },
        "output": _PATH,
        "baseline": {"type": "number", "exclusiveMinimum": 0},
    },
}

# standard file names inside a scene directory
SCENE_FILES = {
    "frame1_rgb": "frame1_rgb.sfr",
    "frame1_inv_depth": "frame1_invdepth.pfm",
    "frame2_rgb": "frame2_rgb.sfr",
    "frame2_inv_depth": "frame2_invdepth.pfm",
    "camera": "camera.json",
    "gt_field": "gt_field.sfr",
    "labels": "object_mask.sfr",
    "gt_flow": "gt_flow.flo",
    "gt_dchange": "gt_dchange.pfm",
    "valid": "valid.sfr",
    "occlusion": "occlusion.sfr",
    "scene": "scene.json",
}


@dataclass
class RunConfig:
    scales: int = 3
    pipeline: dict = dc_field(default_factory=dict)
    seed: int = 0
    camera: dict | None = None
    provider: dict = dc_field(default_factory=lambda: {"kind": "reference"})
    operator: dict = dc_field(default_factory=lambda: {"kind": "reference"})
    inputs: dict = dc_field(default_factory=dict)
    output: str | None = None
    baseline: float = 0.5

    def __post_init__(self):
        validate_document(self.to_dict(skip_none=True))
        try:
            self.pipeline_config()
        except Se3FlowError as exc:
            raise ConfigError(f"pipeline: {exc}") from exc

    def pipeline_config(self) -> PipelineConfig:
        preset = PipelineConfig.three_scale if self.scales == 3 else PipelineConfig.four_scale
        return preset(**self.pipeline)

    def input_path(self, key):
        if key in self.inputs:
            return Path(self.inputs[key])
        if "scene" in self.inputs:
            return Path(self.inputs["scene"]) / SCENE_FILES[key]
        raise ConfigError(f"inputs: no path for {key!r} and no scene directory given")

    def to_dict(self, skip_none=False):
        d = asdict(self)
        if skip_none:
            d = {k: v for k, v in d.items() if v is not None}
        return d

    def to_json(self):
        return json.dumps(self.to_dict(skip_none=True), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc):
        validate_document(doc)
        return cls(**doc)

    @classmethod
    def load(cls, path):
        path = Path(path)
        try:
            doc = json.loads(path.read_text())
        except FileNotFoundError:
            raise ConfigError(f"{path}: config file not found") from None
        except ValueError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
        try:
            return cls.from_dict(doc)
        except ConfigError as exc:
            raise ConfigError(f"{path}: {exc}") from exc


def validate_document(doc):
    try:
        jsonschema.validate(doc, RUN_SCHEMA)
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "<root>"
        raise ConfigError(f"config field {where}: {exc.message}") from None
