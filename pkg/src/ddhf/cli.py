"""Command-line surface: scene generation, pipeline runs, evaluation, oracles."""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import jsonio, oracles
from .config import PipelineConfig, load_config
from .core import load_tensor, save_tensor
from .evalmetrics import eval_detections
from .pipeline import detections_to_dicts, run_pipeline
from .scene import gen_scene, load_scene, load_spec

ORACLE_COMMANDS = (
    "ssm-dense",
    "nms",
    "fps",
    "height-compress",
    "hilbert-walk",
    "mix-scalar",
    "splat",
)


def _cmd_gen_scene(args) -> int:
    spec = load_spec(args.spec)
    out = gen_scene(spec, args.out)
    names = sorted(p.name for p in Path(out).iterdir())
    print(f"wrote {len(names)} files to {out}: {', '.join(names)}")
    return 0


def _cmd_run(args) -> int:
    cfg = load_config(args.config) if args.config else PipelineConfig()
    if args.seed is not None:
        cfg = replace(cfg, global_seed=args.seed)
    points, images, cameras, _gt = load_scene(args.scene)
    dets, log = run_pipeline(points, images, cameras, cfg)
    jsonio.dump(detections_to_dicts(dets), args.out)
    for line in log.lines():
        print(line)
    print(f"{len(dets)} detections -> {args.out}")
    return 0


def _cmd_eval(args) -> int:
    dets = jsonio.load(args.det)
    gt = jsonio.load(args.gt)["objects"]
    result = eval_detections(dets, gt)
    report = {
        "ap": [
            {"class": cls, "threshold": thr, "ap": val}
            for (cls, thr), val in sorted(result.ap.items())
        ],
        "map": result.m_ap,
    }
    print(jsonio.dumps(report))
    return 0


def _parse_pair(text: str) -> tuple[float, float]:
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 2:
        raise ValueError(f"expected two comma-separated values, got {text!r}")
    return parts[0], parts[1]


def _cmd_oracle(args) -> int:
    cmd = args.oracle_cmd
    if cmd == "ssm-dense":
        out = oracles.ssm_dense(
            load_tensor(args.x),
            load_tensor(args.a),
            load_tensor(args.b),
            load_tensor(args.c),
            load_tensor(args.delta),
        )
        save_tensor(args.out, out.astype(np.float32))
        print(f"ssm-dense: {out.shape} -> {args.out}")
    elif cmd == "nms":
        heat = load_tensor(args.heat)
        pos, classes, scores = oracles.nms_topk(heat, args.k)
        jsonio.dump(
            {
                "positions": pos.tolist(),
                "classes": classes.tolist(),
                "scores": [float(s) for s in scores],
            },
            args.out,
        )
        print(f"nms: {pos.shape[0]} picks -> {args.out}")
    elif cmd == "fps":
        pts = load_tensor(args.points)
        idx = oracles.fps(pts, args.n)
        jsonio.dump({"indices": idx.tolist()}, args.out)
        print(f"fps: {idx.size} picks -> {args.out}")
    elif cmd == "height-compress":
        coords = load_tensor(args.coords).astype(np.int64)
        feats = load_tensor(args.feats)
        extents = tuple(int(v) for v in args.extents.split(","))
        if len(extents) != 3:
            raise ValueError("--extents must be nx,ny,nz")
        save_tensor(args.out, oracles.height_compress(coords, feats, extents))
        print(f"height-compress: {extents} -> {args.out}")
    elif cmd == "hilbert-walk":
        lines = [
            f"{h} {x} {y} {z} {step}"
            for h, x, y, z, step in oracles.hilbert_walk(args.bits)
        ]
        if args.out:
            Path(args.out).write_text("\n".join(lines) + "\n", encoding="utf-8")
        else:
            print("\n".join(lines))
    elif cmd == "mix-scalar":
        d = Path(args.inputs)
        t = lambda name: load_tensor(d / f"{name}.bin")
        out = oracles.mmvfm_mix(
            t("q"), t("feats"), t("offsets"),
            t("off_w"), t("off_b"), t("cw"), t("cb"),
            t("sw"), t("sb"), t("down_w"), t("down_b"),
        )
        save_tensor(args.out, out)
        print(f"mix-scalar: ({out.size},) -> {args.out}")
    elif cmd == "splat":
        d = Path(args.inputs)
        t = lambda name: load_tensor(d / f"{name}.bin")
        out = oracles.lss_splat(
            t("feats"), t("depth"),
            t("intrinsics").astype(np.float64), t("extrinsics").astype(np.float64),
            args.stride, t("bins").astype(np.float64),
            _parse_pair(args.origin), _parse_pair(args.cell), args.nx, args.ny,
        )
        save_tensor(args.out, out)
        print(f"splat: {out.shape} -> {args.out}")
    else:  # argparse choices should prevent this
        raise ValueError(f"unknown oracle {cmd!r}; valid: {', '.join(ORACLE_COMMANDS)}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ddhf",
        description="Dual-domain LiDAR/camera fusion pipeline on synthetic scenes.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-scene", help="generate a synthetic scene directory")
    gen.add_argument("--spec", required=True, help="scene spec JSON")
    gen.add_argument("--out", required=True, help="output scene directory")
    gen.set_defaults(func=_cmd_gen_scene)

    run = sub.add_parser("run", help="run the full pipeline on a scene")
    run.add_argument("--scene", required=True, help="scene directory")
    run.add_argument("--config", default=None, help="pipeline config JSON")
    run.add_argument("--seed", type=int, default=None, help="override weight seed")
    run.add_argument("--out", required=True, help="detections JSON output")
    run.set_defaults(func=_cmd_run)

    ev = sub.add_parser("eval", help="score detections against ground truth")
    ev.add_argument("--det", required=True, help="detections JSON")
    ev.add_argument("--gt", required=True, help="ground-truth JSON")
    ev.set_defaults(func=_cmd_eval)

    orc = sub.add_parser("oracle", help="run a brute-force reference computation")
    osub = orc.add_subparsers(dest="oracle_cmd", required=True)

    ssm = osub.add_parser("ssm-dense", help="dense-unrolled selective scan")
    for name in ("x", "a", "b", "c", "delta"):
        ssm.add_argument(f"--{name}", required=True)
    ssm.add_argument("--out", required=True)

    nms = osub.add_parser("nms", help="brute-force heatmap NMS + top-k")
    nms.add_argument("--heat", required=True)
    nms.add_argument("--k", type=int, required=True)
    nms.add_argument("--out", required=True)

    fps_p = osub.add_parser("fps", help="greedy farthest point sampling")
    fps_p.add_argument("--points", required=True)
    fps_p.add_argument("--n", type=int, required=True)
    fps_p.add_argument("--out", required=True)

    hc = osub.add_parser("height-compress", help="pillar channelwise max")
    hc.add_argument("--coords", required=True)
    hc.add_argument("--feats", required=True)
    hc.add_argument("--extents", required=True, help="nx,ny,nz")
    hc.add_argument("--out", required=True)

    walk = osub.add_parser("hilbert-walk", help="curve order adjacency trace")
    walk.add_argument("--bits", type=int, required=True)
    walk.add_argument("--out", default=None)

    mix = osub.add_parser("mix-scalar", help="scalar grid-mixing readout")
    mix.add_argument("--inputs", required=True, help="directory of named .bin inputs")
    mix.add_argument("--out", required=True)

    splat = osub.add_parser("splat", help="scalar depth-bin BEV splat")
    splat.add_argument("--inputs", required=True, help="directory of named .bin inputs")
    splat.add_argument("--stride", type=int, default=4)
    splat.add_argument("--origin", required=True, help="x0,y0")
    splat.add_argument("--cell", required=True, help="dx,dy")
    splat.add_argument("--nx", type=int, required=True)
    splat.add_argument("--ny", type=int, required=True)
    splat.add_argument("--out", required=True)

    orc.set_defaults(func=_cmd_oracle)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, OSError, KeyError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
