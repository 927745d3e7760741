"""Command-line entry point.

Subcommands: anonymize (run the pipeline over a dataset), evaluate (score
prediction boxes against truth), quality (SSIM of face crops), synth
(generate a synthetic dataset), register (align two point clouds).

Exit codes: 0 success, 1 bad input, 2 internal failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .pipeline import (
    InputError,
    PipelineConfig,
    results_document,
    run_anonymize,
    run_evaluate,
    run_quality,
)
from .register import (
    GmmEmConfig,
    IcpConfig,
    NoCorrespondences,
    NumericalFailure,
    register_coarse_to_fine,
    register_gmm_em,
    register_icp,
)


class _Parser(argparse.ArgumentParser):
    # Usage mistakes are input errors (exit 1), not internal failures.
    def error(self, message):
        raise InputError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="mvanon", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("anonymize", help="anonymize every face in a dataset")
    p.add_argument("--input", help="dataset directory (required unless set in --config)")
    p.add_argument("--output", help="output directory (required unless set in --config)")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--jobs", type=int, default=None, help="parallel frame workers")
    p.add_argument(
        "--method",
        choices=("blend", "blackout", "pixelize", "blur"),
        default=None,
        help="face replacement method (default blend)",
    )
    p.add_argument("--kernel", type=int, default=None, help="pixelize/blur kernel size")
    p.add_argument("--skeletons", default=None, help="skeleton JSON path")
    p.add_argument("--calibration", default=None, help="calibration JSON path")
    p.add_argument("--head-model", default=None, help="head template OBJ path")
    p.add_argument("--textures", default=None, help="directory of face textures (round-robin)")
    p.add_argument(
        "--texture-per-person",
        action="append",
        default=None,
        metavar="ID=PATH",
        help="assign a texture to one person id (repeatable)",
    )
    p.add_argument("--visibility-threshold", type=float, default=None, help="mm")
    p.add_argument("--half-extent", type=float, default=None, help="crop half extent, mm")
    p.add_argument("--frames", type=int, nargs="+", default=None, help="frame subset")
    p.set_defaults(func=_cmd_anonymize)

    p = sub.add_parser("evaluate", help="score prediction boxes against ground truth")
    p.add_argument("--pred", required=True, help="prediction box JSON")
    p.add_argument("--truth", required=True, help="ground-truth box JSON")
    p.add_argument("--iou-threshold", type=float, default=0.4)
    p.add_argument("--out", default=None, help="also write the report as JSON here")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("quality", help="SSIM between original and anonymized face crops")
    p.add_argument("--original", required=True, help="original dataset directory")
    p.add_argument("--anonymized", required=True, help="anonymized output directory")
    p.add_argument("--boxes", required=True, help="box JSON naming the crops")
    p.add_argument("--external", default=None, help="JSON with externally computed fid/lpips")
    p.add_argument("--out", default=None, help="also write the report as JSON here")
    p.set_defaults(func=_cmd_quality)

    p = sub.add_parser("synth", help="generate a synthetic multi-camera dataset")
    p.add_argument("--output", required=True, help="dataset directory to create")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--frames", type=int, default=3)
    p.add_argument("--persons", type=int, default=2)
    p.add_argument("--occluders", type=int, default=1)
    p.add_argument("--noise-sigma", type=float, default=5.0, help="depth noise, mm")
    p.add_argument("--width", type=int, default=384)
    p.add_argument("--height", type=int, default=288)
    p.set_defaults(func=_cmd_synth)

    p = sub.add_parser("register", help="rigidly align two point clouds")
    p.add_argument("--moving", required=True, help="text file, one 'x y z' per line (mm)")
    p.add_argument("--fixed", required=True, help="text file, one 'x y z' per line (mm)")
    p.add_argument(
        "--mode", choices=("em", "icp", "coarse-to-fine"), default="coarse-to-fine"
    )
    p.add_argument("--outlier-weight", type=float, default=0.2)
    p.add_argument("--em-iterations", type=int, default=50)
    p.add_argument("--icp-iterations", type=int, default=250)
    p.add_argument("--max-corr-dist", type=float, default=100.0)
    p.set_defaults(func=_cmd_register)

    return parser


def _cmd_anonymize(args) -> int:
    overrides = {
        "input_dir": args.input,
        "output_dir": args.output,
        "seed": args.seed,
        "jobs": args.jobs,
        "method": args.method,
        "kernel": args.kernel,
        "skeleton_file": args.skeletons,
        "calibration_file": args.calibration,
        "head_model": args.head_model,
        "texture_dir": args.textures,
        "visibility_threshold": args.visibility_threshold,
        "half_extent": args.half_extent,
        "frames": args.frames,
    }
    if args.texture_per_person:
        tpp = {}
        for item in args.texture_per_person:
            pid, sep, path = item.partition("=")
            if not sep or not path:
                raise InputError(f"--texture-per-person expects ID=PATH, got {item!r}")
            try:
                tpp[int(pid)] = path
            except ValueError:
                raise InputError(f"--texture-per-person id must be an integer: {item!r}") from None
        overrides["texture_per_person"] = tpp

    if args.config:
        cfg = PipelineConfig.from_json(args.config, **overrides)
    else:
        if args.input is None or args.output is None:
            raise InputError("--input and --output are required when no --config is given")
        cfg = PipelineConfig(**{k: v for k, v in overrides.items() if v is not None})

    results = run_anonymize(cfg)
    s = results_document(cfg, results)["summary"]
    print(
        f"{s['frames']} frames, {s['people']} people: "
        f"{s['registered']} registered, {s['fallback_pose']} fallback, {s['skipped']} skipped"
    )
    if results:
        print(f"mean frame time {np.mean([r.elapsed for r in results]):.2f}s")
    print(f"wrote {cfg.output_dir}/boxes.json and results.json")
    return 0


def _cmd_evaluate(args) -> int:
    report = run_evaluate(args.pred, args.truth, iou_threshold=args.iou_threshold)
    print(report.table())
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if args.out:
        Path(args.out).write_text(json.dumps(report.to_dict(), indent=2))
        print(f"wrote {args.out}")
    return 0


def _cmd_quality(args) -> int:
    external = None
    if args.external:
        try:
            external = json.loads(Path(args.external).read_text())
        except FileNotFoundError:
            raise InputError(f"external metrics file not found: {args.external}") from None
        except json.JSONDecodeError as e:
            raise InputError(f"bad external metrics file: {e}") from None
        if not isinstance(external, dict):
            raise InputError("external metrics file must hold a JSON object")
    report = run_quality(args.original, args.anonymized, args.boxes, external=external)
    print(json.dumps(report, indent=2))
    if args.out:
        Path(args.out).write_text(json.dumps(report, indent=2))
    return 0


def _cmd_synth(args) -> int:
    from .synth import generate_frames, sample_scene_config, write_dataset

    if args.frames < 1:
        raise InputError("--frames must be >= 1")
    if args.persons < 0 or args.occluders < 0:
        raise InputError("--persons and --occluders must be >= 0")
    try:
        cfg = sample_scene_config(
            seed=args.seed,
            n_persons=args.persons,
            n_occluders=args.occluders,
            noise_sigma=args.noise_sigma,
            width=args.width,
            height=args.height,
        )
        truths = generate_frames(cfg, args.frames)
    except ValueError as e:
        raise InputError(str(e)) from None
    write_dataset(truths, args.output)
    n_cams = len(truths[0].cameras)
    print(f"wrote {len(truths)} frames x {n_cams} cameras to {args.output}")
    return 0


def _load_xyz(path) -> np.ndarray:
    try:
        pts = np.loadtxt(path, dtype=float, ndmin=2)
    except FileNotFoundError:
        raise InputError(f"point file not found: {path}") from None
    except ValueError as e:
        raise InputError(f"bad point file {path}: {e}") from None
    if pts.size == 0:
        raise InputError(f"point file is empty: {path}")
    if pts.shape[1] != 3:
        raise InputError(f"{path}: expected 3 columns (x y z), got {pts.shape[1]}")
    return pts


def _cmd_register(args) -> int:
    moving = _load_xyz(args.moving)
    fixed = _load_xyz(args.fixed)
    try:
        gmm_cfg = GmmEmConfig(max_iterations=args.em_iterations, outlier_weight=args.outlier_weight)
        icp_cfg = IcpConfig(iterations=args.icp_iterations, max_corr_dist=args.max_corr_dist)
        if args.mode == "em":
            result = register_gmm_em(moving, fixed, gmm_cfg)
        elif args.mode == "icp":
            result = register_icp(moving, fixed, cfg=icp_cfg)
        else:
            result = register_coarse_to_fine(moving, fixed, gmm_cfg=gmm_cfg, icp_cfg=icp_cfg)
    except (NoCorrespondences, NumericalFailure, ValueError) as e:
        raise InputError(str(e)) from None
    print(
        json.dumps(
            {
                "transform": [[float(x) for x in row] for row in result.transform.matrix()],
                "mse": float(result.final_mse),
                "iterations": result.iterations_used,
                "converged": result.converged,
            },
            indent=2,
        )
    )
    return 0


def main(argv=None) -> int:
    try:
        args = _build_parser().parse_args(argv)
        return args.func(args)
    except InputError as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception as e:  # pragma: no cover - defensive
        print(f"internal error: {type(e).__name__}: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
