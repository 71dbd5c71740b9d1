"""``se3flow`` command line: synth, run, eval, selfcheck."""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import __version__
from . import _backend
from . import io as sfio
from . import metrics as M
from . import synthetic as S
from .config import SCENE_FILES, RunConfig
from .errors import ConfigError, Se3FlowError
from .field import SE3Field, induced_flow
from .geometry import PinholeCamera
from .pipeline import SCALE_INIT_STRATEGIES, estimate
from .providers import (
    FileContextProvider,
    FileFeatureProvider,
    ReferenceContextProvider,
    ReferenceFeatureProvider,
)
from .update import OracleOperator, ReferenceGRU

log = logging.getLogger("se3flow")

PAD_MULTIPLE = 16


# -- scene files -------------------------------------------------------------


def write_camera(path, cam: PinholeCamera):
    doc = {"fx": cam.fx, "fy": cam.fy, "cx": cam.cx, "cy": cam.cy}
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def read_camera(path):
    path = Path(path)
    try:
        doc = json.loads(path.read_text())
        return PinholeCamera(float(doc["fx"]), float(doc["fy"]), float(doc["cx"]), float(doc["cy"]))
    except FileNotFoundError:
        raise
    except (ValueError, KeyError, TypeError) as exc:
        raise ConfigError(f"{path}: bad camera file: {exc}") from exc


def write_scene(directory, scene: S.SyntheticScene, params):
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    for name, frame in (("frame1", scene.frame1), ("frame2", scene.frame2)):
        sfio.write_raster(d / SCENE_FILES[f"{name}_rgb"], frame.rgb, dtype=np.float32)
        sfio.write_pfm(d / SCENE_FILES[f"{name}_inv_depth"], frame.inv_depth)
    write_camera(d / SCENE_FILES["camera"], scene.camera)
    sfio.write_raster(d / SCENE_FILES["gt_field"], scene.gt_field.to_array(), dtype=np.float64)
    sfio.write_flo(d / SCENE_FILES["gt_flow"], scene.gt_flow.flow)
    sfio.write_pfm(d / SCENE_FILES["gt_dchange"], scene.gt_flow.dchange)
    sfio.write_raster(d / SCENE_FILES["labels"], scene.object_mask.astype(np.float32))
    sfio.write_raster(d / SCENE_FILES["valid"], scene.gt_valid.astype(np.float32))
    sfio.write_raster(d / SCENE_FILES["occlusion"], scene.occlusion_mask.astype(np.float32))
    (d / SCENE_FILES["scene"]).write_text(json.dumps(params, indent=2, sort_keys=True) + "\n")


def _read_mask(path):
    return sfio.read_raster(path)[..., 0] > 0.5


def load_frames(cfg: RunConfig):
    frames = []
    for name in ("frame1", "frame2"):
        rgb = sfio.read_raster(cfg.input_path(f"{name}_rgb")).astype(float)
        inv = sfio.read_pfm(cfg.input_path(f"{name}_inv_depth")).astype(float)
        if rgb.shape[:2] != inv.shape:
            raise ConfigError(f"{name}: colour is {rgb.shape[:2]} but inverse depth is {inv.shape}")
        frames.append(S.RGBDFrame(rgb, inv, name))
    if frames[0].shape != frames[1].shape:
        raise ConfigError(f"frames differ in size: {frames[0].shape} vs {frames[1].shape}")
    if cfg.camera is not None:
        cam = PinholeCamera(**{k: float(v) for k, v in cfg.camera.items()})
    else:
        cam = read_camera(cfg.input_path("camera"))
    return frames[0], frames[1], cam


# -- padding -----------------------------------------------------------------


def pad_amount(n, extra=0):
    return (-n) % PAD_MULTIPLE + PAD_MULTIPLE * extra


def _pad(arr, pb, pr):
    widths = ((0, pb), (0, pr)) + ((0, 0),) * (arr.ndim - 2)
    return np.pad(arr, widths, mode="reflect") if (pb or pr) else arr


def pad_frame(frame, pb, pr):
    return S.RGBDFrame(_pad(frame.rgb, pb, pr), _pad(frame.inv_depth, pb, pr), frame.name)


# -- builders ----------------------------------------------------------------


def build_providers(cfg: RunConfig):
    p = cfg.provider
    if p["kind"] == "files":
        return FileFeatureProvider(p["directory"]), FileContextProvider(p["directory"])
    return ReferenceFeatureProvider(), ReferenceContextProvider(seed=p.get("seed", 0))


def build_operator(cfg: RunConfig, frame1, cam, pb, pr):
    op = cfg.operator
    pcfg = cfg.pipeline_config()
    cost_channels = 2 * (2 * pcfg.corr_radius + 1) ** 2
    if op["kind"] == "weights":
        gru = ReferenceGRU.from_weights(op["path"])
        if gru.cost_channels != cost_channels or gru.embed_dim != pcfg.embed_dim:
            raise ConfigError(f"operator weights {op['path']} do not match the correlation radius or embedding size")
        return gru
    if op["kind"] == "reference":
        return ReferenceGRU(seed=op.get("seed", cfg.seed), cost_channels=cost_channels, embed_dim=pcfg.embed_dim)
    gt = SE3Field.from_array(sfio.read_raster(cfg.input_path("gt_field")))
    labels = np.rint(sfio.read_raster(cfg.input_path("labels"))[..., 0]).astype(np.int64)
    size = (frame1.shape[0] - pb, frame1.shape[1] - pr)
    if gt.shape != size or labels.shape != size:
        raise ConfigError(f"oracle ground truth is {gt.shape}, frames are {size}")
    return OracleOperator(
        gt.pad_reflect(pb, pr),
        _pad(labels, pb, pr),
        frame1.inv_depth,
        cam,
        embed_dim=pcfg.embed_dim,
        mask=op.get("mask", "labels"),
    )


def parse_operator(text):
    if text in ("reference", "oracle"):
        return {"kind": text}
    if text.startswith("weights:") and len(text) > len("weights:"):
        return {"kind": "weights", "path": text[len("weights:") :]}
    raise argparse.ArgumentTypeError(f"expected reference, oracle or weights:<path>, got {text!r}")


def parse_provider(text):
    if text == "reference":
        return {"kind": "reference"}
    if text.startswith("files:") and len(text) > len("files:"):
        return {"kind": "files", "directory": text[len("files:") :]}
    raise argparse.ArgumentTypeError(f"expected reference or files:<dir>, got {text!r}")


def resolve_config(args) -> RunConfig:
    doc = RunConfig.load(args.config).to_dict(skip_none=True) if args.config else {}
    if getattr(args, "seed", None) is not None:
        doc["seed"] = args.seed
    if getattr(args, "scales", None) is not None:
        doc["scales"] = args.scales
    if getattr(args, "operator", None) is not None:
        doc["operator"] = args.operator
    if getattr(args, "provider", None) is not None:
        doc["provider"] = args.provider
    pipeline = dict(doc.get("pipeline", {}))
    if getattr(args, "no_smoothing", False):
        pipeline["smoothing"] = False
    if getattr(args, "scale_init", None) is not None:
        pipeline["scale_init"] = args.scale_init
    if getattr(args, "corr_mode", None) is not None:
        pipeline["corr_mode"] = args.corr_mode
    doc["pipeline"] = pipeline
    inputs = dict(doc.get("inputs", {}))
    if getattr(args, "scene", None) is not None:
        inputs["scene"] = str(args.scene)
    doc["inputs"] = inputs
    if getattr(args, "out", None) is not None:
        doc["output"] = str(args.out)
    return RunConfig.from_dict(doc)


def _digest(arr):
    return hashlib.sha256(np.ascontiguousarray(arr, dtype=np.float64).tobytes()).hexdigest()


# -- subcommands -------------------------------------------------------------


def cmd_synth(args):
    spec = S.random_scene(args.seed, args.width, args.height, args.objects, args.static)
    scene = S.generate(spec)
    params = {
        "seed": args.seed,
        "width": args.width,
        "height": args.height,
        "objects": args.objects,
        "static": bool(args.static),
        "occluded_fraction": float(scene.occlusion_mask.mean()),
    }
    write_scene(args.out, scene, params)
    print(f"wrote scene {args.width}x{args.height} seed {args.seed} to {args.out}")
    return 0


def cmd_run(args):
    cfg = resolve_config(args)
    if cfg.output is None:
        raise ConfigError("no output directory: pass --out or set 'output' in the config")
    out = Path(cfg.output)
    frame1, frame2, cam = load_frames(cfg)
    H, W = frame1.shape
    pb, pr = pad_amount(H, args.extra_pad), pad_amount(W, args.extra_pad)
    f1p, f2p = pad_frame(frame1, pb, pr), pad_frame(frame2, pb, pr)
    feat, ctx = build_providers(cfg)
    op = build_operator(cfg, f1p, cam, pb, pr)
    pcfg = cfg.pipeline_config()
    res = estimate(f1p, f2p, cam, feat, ctx, op, pcfg, keep_fields=False)

    field = res.field.crop(H, W)
    flow, valid = induced_flow(field, frame1.inv_depth, cam)
    out.mkdir(parents=True, exist_ok=True)
    sfio.write_raster(out / "field.sfr", field.to_array(), dtype=np.float64)
    sfio.write_flo(out / "flow.flo", flow.flow)
    sfio.write_pfm(out / "dchange.pfm", flow.dchange)
    sfio.write_raster(out / "valid.sfr", valid.astype(np.float32))
    trace = {
        "backend": _backend.name,
        "schedule": res.trace.schedule,
        "factors": res.trace.factors,
        "padding": [pb, pr],
        "operator": res.trace.records[-1].operator_fingerprint,
        "iterations": [
            {
                "scale": r.scale,
                "iteration": r.iteration,
                "factor": r.factor,
                "working_shape": list(r.working_shape),
                "flow_sha256": _digest(r.flow.flow[:H, :W]),
            }
            for r in res.trace
        ],
    }
    (out / "trace.json").write_text(json.dumps(trace, indent=2) + "\n")
    (out / "config.json").write_text(cfg.to_json())
    print(f"{len(res.trace)} iterations over scales {list(pcfg.factors)}; outputs in {out}")
    return 0


def cmd_eval(args):
    cfg = resolve_config(args)
    pred = Path(args.pred or cfg.output or "")
    if not str(pred):
        raise ConfigError("no prediction directory: pass --pred")
    cam = read_camera(cfg.input_path("camera")) if cfg.camera is None else PinholeCamera(**cfg.camera)
    d1 = sfio.read_pfm(cfg.input_path("frame1_inv_depth")).astype(float)
    scene = Path(cfg.inputs.get("scene", ""))
    gt_flow = sfio.read_flo(scene / SCENE_FILES["gt_flow"]).astype(float)
    gt_d = sfio.read_pfm(scene / SCENE_FILES["gt_dchange"]).astype(float)
    mask = _read_mask(scene / SCENE_FILES["valid"]) & ~_read_mask(scene / SCENE_FILES["occlusion"])
    labels = sfio.read_raster(scene / SCENE_FILES["labels"])[..., 0]
    f_est = sfio.read_flo(pred / "flow.flo").astype(float)
    d_est = sfio.read_pfm(pred / "dchange.pfm").astype(float)
    if (pred / "valid.sfr").exists():
        mask &= _read_mask(pred / "valid.sfr")
    if f_est.shape != gt_flow.shape:
        raise ConfigError(f"prediction is {f_est.shape[:2]} but ground truth is {gt_flow.shape[:2]}")
    sf_est = M.scene_flow_3d(cam, d1, f_est, d_est)
    sf_gt = M.scene_flow_3d(cam, d1, gt_flow, gt_d)
    report = M.metrics(f_est, d_est, gt_flow, gt_d, sf_est, sf_gt, mask, d1, cam.fx * cfg.baseline, labels)
    text = report.to_text()
    target = Path(args.report) if args.report else pred / "metrics.txt"
    target.write_text(text)
    sys.stdout.write(text)
    return 0


def cmd_selfcheck(args):
    from .selfcheck import run_selfcheck

    results = run_selfcheck(seed=args.seed or 0)
    for name, ok, detail in results:
        print(f"{'PASS' if ok else 'FAIL'} {name}: {detail}")
    failed = [r for r in results if not r[1]]
    print(f"{len(results) - len(failed)}/{len(results)} checks passed (backend {_backend.name})")
    return 1 if failed else 0


# -- entry point -------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="se3flow", description="Dense SE(3) scene flow from RGB-D pairs.")
    p.add_argument("--version", action="version", version=f"se3flow {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("synth", help="generate a synthetic rigid scene")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--width", type=int, default=256)
    sp.add_argument("--height", type=int, default=256)
    sp.add_argument("--objects", type=int, default=2)
    sp.add_argument("--static", action="store_true", help="no motion anywhere")
    sp.add_argument("--out", type=Path, required=True)
    sp.set_defaults(func=cmd_synth)

    def common(q):
        q.add_argument("--config", type=Path)
        q.add_argument("--scene", type=Path, help="scene directory with the standard file names")
        q.add_argument("--seed", type=int)

    rp = sub.add_parser("run", help="estimate scene flow and write outputs")
    common(rp)
    rp.add_argument("--scales", type=int, choices=(3, 4))
    rp.add_argument("--operator", type=parse_operator, help="reference | oracle | weights:<path>")
    rp.add_argument("--provider", type=parse_provider, help="reference | files:<dir>")
    rp.add_argument("--no-smoothing", action="store_true")
    rp.add_argument("--scale-init", choices=SCALE_INIT_STRATEGIES)
    rp.add_argument("--corr-mode", choices=("materialized", "on-demand"))
    rp.add_argument("--extra-pad", type=int, default=0, help="extra padding in blocks of 16 pixels")
    rp.add_argument("--out", type=Path)
    rp.set_defaults(func=cmd_run)

    ep = sub.add_parser("eval", help="compare a run against scene ground truth")
    common(ep)
    ep.add_argument("--pred", type=Path, help="run output directory")
    ep.add_argument("--report", type=Path, help="where to write the report (default <pred>/metrics.txt)")
    ep.set_defaults(func=cmd_eval)

    cp = sub.add_parser("selfcheck", help="run the numerical invariant suite")
    cp.add_argument("--seed", type=int, default=0)
    cp.set_defaults(func=cmd_selfcheck)
    return p


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING, format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except (Se3FlowError, OSError, ValueError) as exc:
        print(f"se3flow: error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
