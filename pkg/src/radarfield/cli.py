"""Command line entry point: ``radarfield <subcommand>``."""
from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from .decoder import decode, emit_deterministic, emit_probabilistic
from .experiment import (ConfigError, ExperimentConfig, build_dataset, derive_seed,
                         fit_and_evaluate, gate_label, load_config)
from .geometry import RadarConfig, SensorPose, build_ray_grid, desk_config, vod_config, zod_config
from .io import ScanFormatError, fmt_float, load_weights, save_weights, write_curve_csv
from .matching import chamfer, emd, gospa
from .rendering import OpacityParams, render_bundle, stack_renders
from .rfs import read_cloud, write_cloud_csv, write_cloud_jsonl
from .scene import load_scene, save_scene
from .simulate import benchmark_scene
from .training import TrainConfig, fit_arrays

EXIT_OK, EXIT_CONFIG, EXIT_DATA, EXIT_NUMERIC = 0, 2, 3, 4
PRESETS = {"desk": desk_config, "zod": zod_config, "vod": vod_config}

log = logging.getLogger("radarfield")


def _pose(text, time):
    try:
        vals = [float(v) for v in text.split(",")]
    except ValueError:
        raise ConfigError(f"bad pose {text!r}; expected x,y,z[,yaw]") from None
    if len(vals) not in (3, 4):
        raise ConfigError(f"bad pose {text!r}; expected x,y,z[,yaw]")
    return SensorPose.from_xyz_yaw(*vals[:3], vals[3] if len(vals) == 4 else 0.0, time=time)


def _radar(args):
    if getattr(args, "radar_config", None):
        with open(args.radar_config) as fh:
            d = json.load(fh)
        unknown = set(d) - {f.name for f in fields(RadarConfig)}
        if unknown:
            raise ConfigError(f"unknown radar keys: {sorted(unknown)}")
        return RadarConfig(**d)
    return PRESETS[args.preset]()


def cmd_gen_scene(args):
    save_scene(benchmark_scene(args.feature_seed), args.out)


def cmd_render_depth(args):
    scene = load_scene(args.scene)
    cfg = _radar(args)
    bundle = build_ray_grid(_pose(args.pose, args.time), cfg)
    renders = render_bundle(scene, bundle, cfg, OpacityParams(args.beta), args.seed)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["azimuth_rad", "elevation_rad", "expected_depth_m", "weight_sum"])
        for r in renders:
            w.writerow([fmt_float(r.azimuth), fmt_float(r.elevation),
                        fmt_float(r.expected_depth), fmt_float(r.opacity_sum)])


def cmd_fit(args):
    cfg = load_config(args.config)
    data = build_dataset(cfg)
    tr, _ = data.split()
    tcfg = TrainConfig(**{**cfg.train.to_dict(), "seed": derive_seed(cfg.seed, "init")})
    weights, curve = fit_arrays(data.features[tr], data.positions[tr], data.truths[tr],
                                cfg.decoder, tcfg, cfg.radar.density_family)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    save_weights(weights, out / "weights.nrdr")
    write_curve_csv(curve, out / "loss_curve.csv")


def cmd_sample(args):
    cfg = load_config(args.config)
    weights = load_weights(args.weights)
    scene = load_scene(cfg.scene) if cfg.scene else benchmark_scene()
    bundle = build_ray_grid(_pose(args.pose, args.time), cfg.radar)
    f, p = stack_renders(render_bundle(scene, bundle, cfg.radar, OpacityParams(), args.seed))
    params = decode(f, p, weights)
    if weights.config.probabilistic and not args.threshold:
        cloud = emit_probabilistic(params, cfg.radar.density_family, args.seed)
    else:
        cloud = emit_deterministic(params, cfg.radar.confidence_threshold)
    (write_cloud_jsonl if args.out.endswith(".jsonl") else write_cloud_csv)(cloud, args.out)


def cmd_eval(args):
    pred, truth = read_cloud(args.pred), read_cloud(args.truth)
    result = {}
    gates = [math.inf] if not args.gate else sorted(args.gate) + [math.inf]
    for g in gates:
        p, t = pred.within_range(g), truth.within_range(g)
        m = gospa(p, t, c=args.c, alpha=args.alpha, p=args.p).as_dict()
        if len(p) and len(t):
            m["chamfer"], m["emd"] = chamfer(p, t), emd(p, t)
        else:
            m["chamfer"] = m["emd"] = None
        result[gate_label(g)] = m
    json.dump(result, sys.stdout, indent=2, sort_keys=True)
    sys.stdout.write("\n")


def cmd_run(args):
    cfg = load_config(args.config)
    if args.out:
        cfg.output_dir = args.out
    if not cfg.output_dir:
        raise ConfigError("run needs an output directory (--out or output_dir)")
    fit_and_evaluate(cfg, write=True)


def build_parser():
    ap = argparse.ArgumentParser(prog="radarfield", description=__doc__)
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-scene", help="write the benchmark scene JSON")
    p.add_argument("--out", required=True)
    p.add_argument("--feature-seed", type=int, default=7)
    p.set_defaults(func=cmd_gen_scene)

    p = sub.add_parser("render-depth", help="per-ray expected depth as CSV")
    p.add_argument("--scene", required=True)
    p.add_argument("--preset", choices=sorted(PRESETS), default="desk")
    p.add_argument("--radar-config")
    p.add_argument("--pose", default="0,0,0.7,0")
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--beta", type=float, default=20.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_render_depth)

    p = sub.add_parser("fit", help="fit a decoder on the training split of a config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fit)

    p = sub.add_parser("sample", help="emit one point cloud from fitted weights")
    p.add_argument("--config", required=True)
    p.add_argument("--weights", required=True)
    p.add_argument("--pose", default="0,0,0.7,0")
    p.add_argument("--time", type=float, default=0.0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threshold", action="store_true",
                   help="threshold confidences even for probabilistic weights")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sample)

    p = sub.add_parser("eval", help="CD, EMD and GOSPA between two point clouds")
    p.add_argument("pred")
    p.add_argument("truth")
    p.add_argument("--gate", type=float, action="append")
    p.add_argument("--c", type=float, default=1.0)
    p.add_argument("--alpha", type=float, default=2.0)
    p.add_argument("--p", type=float, default=1.0)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("run", help="simulate, fit, evaluate and write a report")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_run)
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FloatingPointError as exc:
        print(f"numeric failure [{getattr(exc, 'stage', args.command)}]: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (ScanFormatError, ValueError, OSError, KeyError) as exc:
        print(f"data error [{getattr(exc, 'stage', args.command)}]: {exc}", file=sys.stderr)
        return EXIT_DATA
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
