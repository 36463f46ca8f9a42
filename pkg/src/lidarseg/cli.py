"""Command-line front end for the pipeline stages and the HTTP service.

Every command prints a one-object JSON summary on success. Failures print
a one-object JSON error to stderr and exit nonzero, so scripts can parse
either stream without scraping prose.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import sys

from .config import ConfigError, PipelineConfig, load_config
from .scene import ScenePlacementError
from .training import TrainingModeError


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lidarseg",
        description="Synthetic-scene LiDAR segmentation and semi-supervised "
                    "classifier training pipeline.",
    )
    parser.add_argument("--config", required=True,
                        help="pipeline config JSON")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="generate a scene and simulate frames")
    synth.add_argument("--seed", type=int, default=None,
                       help="override the scene seed")

    proj = sub.add_parser("project", help="project one frame to a range image")
    proj.add_argument("--frame", type=int, default=0)
    proj.add_argument("--pgm", default=None, help="write the range image here")

    sub.add_parser("segment", help="grow segments over every frame")

    samples = sub.add_parser("samples", help="rasterize valid segments")
    samples.add_argument("--truth", action="store_true",
                         help="also emit per-sample ground-truth labels")

    sub.add_parser("track", help="associate segments across frames")

    cons = sub.add_parser("constraints",
                          help="emit must-link constraints from decided tracks")
    cons.add_argument("--truth", action="store_true",
                      help="auto-decide pending tracks from ground truth")

    tr = sub.add_parser("train", help="train the classifier")
    tr.add_argument("--mode", choices=("supervised", "semi", "unsupervised",
                                       "fine_tune"), default=None)
    tr.add_argument("--initial", default=None,
                    help="starting parameter file (unsupervised/fine_tune)")

    ev = sub.add_parser("eval", help="score a parameter file on sample truth")
    ev.add_argument("--params", default=None,
                    help="parameter file (default: the configured path)")

    serve = sub.add_parser("serve", help="run the annotation HTTP service")
    serve.add_argument("--host", default="127.0.0.1")
    serve.add_argument("--port", type=int, default=8000)
    return parser


def _fail(kind: str, detail: str, code: int = 2) -> int:
    sys.stderr.write(json.dumps({"error": kind, "detail": detail}) + "\n")
    return code


def _run(args: argparse.Namespace, cfg: PipelineConfig) -> dict:
    from . import pipeline

    if args.command == "synth":
        if args.seed is not None:
            cfg.scene = dataclasses.replace(cfg.scene, seed=args.seed)
        return pipeline.run_synth(cfg)
    if args.command == "project":
        return pipeline.run_project(cfg, args.frame, args.pgm)
    if args.command == "segment":
        return pipeline.run_segment(cfg)
    if args.command == "samples":
        return pipeline.run_samples(cfg, with_truth=args.truth)
    if args.command == "track":
        return pipeline.run_track(cfg)
    if args.command == "constraints":
        return pipeline.run_constraints(cfg, use_truth=args.truth)
    if args.command == "train":
        return pipeline.run_train(cfg, args.mode, args.initial)
    if args.command == "eval":
        return pipeline.run_eval(cfg, args.params)
    if args.command == "serve":
        import uvicorn

        from .service import build_state, create_app

        app = create_app(build_state(cfg))
        uvicorn.run(app, host=args.host, port=args.port)
        return {"served": True}
    raise AssertionError(f"unhandled command {args.command}")


def main(argv: list[str] | None = None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
    except ConfigError as exc:
        return _fail("config", str(exc))
    try:
        summary = _run(args, cfg)
    except ConfigError as exc:
        return _fail("config", str(exc))
    except TrainingModeError as exc:
        return _fail("mode_mismatch", str(exc))
    except ScenePlacementError as exc:
        return _fail("placement", str(exc))
    except FileNotFoundError as exc:
        return _fail("missing_input", str(exc))
    except ValueError as exc:
        return _fail("invalid_input", str(exc))
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
