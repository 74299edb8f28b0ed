"""Command-line entry point.

Exit codes: 0 success (per-sample failures are counted, not fatal),
2 configuration error, 3 unrecoverable I/O error.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import body_model as bm
from .config import ConfigError, RunConfig, default_config, load_config
from .dataset import ManifestError, merge, stats, verify

log = logging.getLogger("humansynth")

EXIT_OK, EXIT_CONFIG, EXIT_IO = 0, 2, 3


def _add_run_args(p):
    p.add_argument("--config", help="TOML run configuration (defaults built in)")
    p.add_argument("--output", "-o", help="output directory")
    p.add_argument("--samples", "-n", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--workers", "-j", type=int)
    p.add_argument("--width", type=int)
    p.add_argument("--height", type=int)
    p.add_argument("--model", help='body model .npz, or "toy"')
    p.add_argument("--motion", help='"procedural", "procedural:asymmetric" or a JSONL file')
    p.add_argument("--scene", help="labeled scene OBJ (enables placement and scene cameras)")
    p.add_argument("--generator", help='generation endpoint, e.g. "mock:echo" or http://host:port')
    p.add_argument("--segmenter", help="segmentation endpoint")
    p.add_argument("--text", help="optional text endpoint for environment phrases")
    p.add_argument("--steps", type=int)
    p.add_argument("--control-scale", type=float)
    p.add_argument("--threshold", type=float)
    p.add_argument("--retries", type=int)
    p.add_argument("--timeout", type=float)
    p.add_argument("--allow-deviation", action="store_true", default=None,
                   help="accept camera ranges wider than the defaults")
    p.add_argument("--force", action="store_true", help="redo a stage even when its output is complete")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="humansynth", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    for name, help_text in (
        ("render-conditions", "pose bodies, sample cameras, write normal/mask/depth conditions"),
        ("generate", "request images for rendered conditions"),
        ("filter", "segment generated images and drop low-IoU samples"),
        ("run-all", "all three stages in sequence"),
    ):
        _add_run_args(sub.add_parser(name, help=help_text))

    p = sub.add_parser("stats", help="summarize a manifest")
    p.add_argument("manifest")
    p.add_argument("--json", action="store_true", help="print machine-readable JSON")

    p = sub.add_parser("merge", help="merge part manifests in sample-index order")
    p.add_argument("parts", nargs="+")
    p.add_argument("--out", "-o", required=True)
    p.add_argument("--overwrite", action="store_true")

    p = sub.add_parser("verify", help="check that referenced files exist")
    p.add_argument("manifest")
    p.add_argument("--root", help="dataset root (default: manifest directory)")
    p.add_argument("--all", action="store_true", help="check every record, not only kept ones")

    p = sub.add_parser("evaluate", help="metric table for prediction vs ground-truth manifests")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--model", default="toy", help='body model .npz, or "toy"')
    p.add_argument("--joint-map", help="JSON list mapping each gt joint to a pred joint index")
    p.add_argument("--out", help="write the metrics as JSON here")

    p = sub.add_parser("serve-mock", help="serve the mock services over HTTP")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8765)
    p.add_argument("--generator", default="echo", choices=("echo", "mirror"))
    p.add_argument("--segmenter", default="silhouette", choices=("silhouette",))

    p = sub.add_parser("convert-smplx", help="convert a SMPL-X .npz archive to the body-model format")
    p.add_argument("input")
    p.add_argument("output")
    p.add_argument("--num-betas", type=int, default=10)
    p.add_argument("--num-expr", type=int, default=10)
    p.add_argument("--expr-offset", type=int, default=300)
    p.add_argument("--joint-names", help="comma-separated names for non-SMPL-X joint layouts")

    sub.add_parser("print-config", help="print the default TOML configuration")
    return parser


def _config_from_args(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else default_config()
    cfg = cfg.with_overrides(
        output=args.output, samples=args.samples, seed=args.seed, workers=args.workers,
        width=args.width, height=args.height, model=args.model, motion=args.motion,
        scene=args.scene, generator=args.generator, segmenter=args.segmenter, text=args.text,
        steps=args.steps, control_scale=args.control_scale, threshold=args.threshold,
        retries=args.retries, timeout=args.timeout, allow_deviation=args.allow_deviation,
    )
    return cfg.validate()


def _run(args) -> int:
    from . import pipeline
    cfg = _config_from_args(args)
    stages = {
        "render-conditions": ["conditions"],
        "generate": ["generated"],
        "filter": ["filtered"],
        "run-all": list(pipeline.STAGES),
    }[args.command]
    ctx = pipeline.Context(cfg)
    for stage in stages:
        report = pipeline.run_stage(cfg, stage, force=args.force, ctx=ctx)
        print(report.summary())
    return EXIT_OK


def _stats(args) -> int:
    s = stats(args.manifest)
    if args.json:
        print(json.dumps(s, indent=2))
        return EXIT_OK
    print(f"total={s['total']} kept={s['kept']} dropped={s['dropped']} failed={s['failed']}")
    h = s["iou_histogram"]
    print("iou:  " + " ".join(str(c) for c in h["counts"]))
    h = s["fov_histogram"]
    print("fov:  " + " ".join(str(c) for c in h["counts"]))
    for env, n in s["environments"].items():
        print(f"  {n:6d}  {env}")
    for c in s["corrupt_lines"]:
        print(f"corrupt line {c['line']}: {c['reason']}")
    return EXIT_OK


def _verify(args) -> int:
    problems = verify(args.manifest, args.root, kept_only=not args.all)
    for p in problems:
        print(p)
    print("ok" if not problems else f"{len(problems)} problem(s)")
    return EXIT_OK if not problems else 1


def _evaluate(args) -> int:
    from .evaluation import evaluate_manifests, format_table
    from .pipeline import load_body
    model = load_body(args.model)
    joint_map = None
    if args.joint_map:
        joint_map = json.loads(Path(args.joint_map).read_text(encoding="utf-8"))
    result = evaluate_manifests(args.pred, args.gt, model, joint_map)
    print(format_table(result))
    if args.out:
        Path(args.out).write_text(json.dumps(result, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return EXIT_OK


def _serve(args) -> int:
    from .services import GENERATORS, SEGMENTERS, ServiceHandler, make_server
    server = make_server(args.host, args.port,
                         ServiceHandler(GENERATORS[args.generator](), SEGMENTERS[args.segmenter]()))
    host, port = server.server_address[:2]
    print(f"serving mock services on http://{host}:{port}", flush=True)
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
    return EXIT_OK


def _convert(args) -> int:
    try:
        with np.load(args.input, allow_pickle=False) as data:
            arrays = {k: data[k] for k in data.files}
    except ValueError as exc:
        raise ConfigError(f"{args.input}: {exc}") from exc
    names = [n.strip() for n in args.joint_names.split(",")] if args.joint_names else None
    model = bm.from_smplx_arrays(arrays, args.num_betas, args.num_expr, args.expr_offset, names)
    bm.save_model(model, args.output)
    print(f"wrote {args.output}: {model.num_vertices} vertices, {model.num_joints} joints")
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s %(message)s")
    handlers = {
        "stats": _stats, "verify": _verify, "evaluate": _evaluate,
        "serve-mock": _serve, "convert-smplx": _convert,
    }
    try:
        if args.command == "merge":
            n = merge(args.parts, args.out, overwrite=args.overwrite)
            print(f"merged {n} records into {args.out}")
            return EXIT_OK
        if args.command == "print-config":
            from .config import default_config_text
            sys.stdout.write(default_config_text())
            return EXIT_OK
        if args.command in handlers:
            return handlers[args.command](args)
        return _run(args)
    except (ConfigError, bm.ModelFormatError) as exc:
        log.error("config error: %s", exc)
        return EXIT_CONFIG
    except FileExistsError as exc:
        log.error("%s (use --overwrite)", exc)
        return EXIT_IO
    except (OSError, ManifestError) as exc:
        log.error("I/O error: %s", exc)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
