"""Command-line front end: extract, synthesize and evaluate.

Solver settings resolve as: flags > config file > defaults.
"""
import argparse
import logging
import sys
from typing import List, Optional

from core.config import config
from core.errors import BlurClipError
from extraction.orchestrator import ExtractionOrchestrator
from services.evaluation import run_evaluation
from services.run_store import load_solver_config
from services.synthesis import run_sequence_synthesis, run_synthesis

logging.basicConfig(level=config.LOG_LEVEL)
logger = logging.getLogger(__name__)

PRECEDENCE = (
    "Solver settings resolve as: flags > config file > defaults. "
    "The config file is flat KEY=VALUE text (or JSON, including a previous "
    "manifest_extract.json) using the solver field names, e.g. "
    "iterations_per_scale=50,100,150."
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="blurclip",
        description="Extract a short video clip from a single motion-blurred image.",
        epilog=PRECEDENCE,
    )
    sub = parser.add_subparsers(dest="command", required=True)

    extract = sub.add_parser("extract", help="recover frames from a blurred image", epilog=PRECEDENCE)
    extract.add_argument("--blurred", required=True, help="motion-blurred image (PNG/PPM/PGM)")
    extract.add_argument("--alpha", required=True, action="append",
                         help="alpha map of one object; repeat for several objects (composited in this order)")
    extract.add_argument("--config", help="solver config file")
    extract.add_argument("--frames", type=int, help="number of frames N (odd)")
    extract.add_argument("--seed", type=int,
                         help="seed of the affine initialization (default: config file, then DEFAULT_SEED)")
    extract.add_argument("--out", required=True, help="output directory")

    synthesize = sub.add_parser("synthesize", help="build a synthetic blurred test case")
    synthesize.add_argument("--sharp", help="sharp middle frame")
    synthesize.add_argument("--alpha", help="object coverage in the sharp frame")
    synthesize.add_argument("--motion",
                            help='"translate dx [dy]", "rotate r", "zoom s" or "matrix t11 t12 t13 t21 t22 t23"')
    synthesize.add_argument("--sequence", help="directory of frame_N.png to average instead of --sharp/--alpha/--motion")
    synthesize.add_argument("--masks", help="with --sequence: per-frame object masks named like the frames")
    synthesize.add_argument("--frames", type=int, default=7, help="number of frames N (odd, default 7)")
    synthesize.add_argument("--noise", type=float, default=0.01, help="Gaussian noise sigma (default 0.01)")
    synthesize.add_argument("--seed", type=int, default=config.DEFAULT_SEED, help="noise seed")
    synthesize.add_argument("--out", required=True, help="output directory")

    evaluate = sub.add_parser("evaluate", help="compare recovered frames with ground truth")
    evaluate.add_argument("--result", required=True, help="directory holding recovered frames")
    evaluate.add_argument("--truth", required=True, help="directory holding truth frames")
    return parser


def cmd_extract(args: argparse.Namespace) -> int:
    cfg = load_solver_config(args.config, {"n_frames": args.frames, "seed": args.seed})
    orchestrator = ExtractionOrchestrator(cfg)
    result = orchestrator.run_all(args.blurred, args.alpha, args.out)
    print(f"extracted {cfg.n_frames} frames for {result['objects']} object(s) into {result['output_dir']}")
    return 0


def cmd_synthesize(args: argparse.Namespace) -> int:
    if args.noise < 0:
        raise BlurClipError(f"--noise must be >= 0, got {args.noise}")
    if args.sequence:
        if args.sharp or args.alpha or args.motion:
            raise BlurClipError("--sequence cannot be combined with --sharp, --alpha or --motion")
        result = run_sequence_synthesis(args.sequence, args.out, args.masks, args.noise, args.seed)
        print(f"averaged {result['n_frames']} frames into {result['output_dir']}")
        return 0
    if not (args.sharp and args.alpha and args.motion):
        raise BlurClipError("synthesize needs --sharp, --alpha and --motion, or --sequence")
    if args.masks:
        raise BlurClipError("--masks only applies with --sequence")
    if args.frames < 1 or args.frames % 2 == 0:
        raise BlurClipError(f"--frames must be a positive odd number, got {args.frames}")
    result = run_synthesis(
        args.sharp, args.alpha, args.motion, args.frames, args.noise, args.seed, args.out
    )
    print(f"synthesized case in {result['output_dir']}")
    return 0


def cmd_evaluate(args: argparse.Namespace) -> int:
    report = run_evaluation(args.result, args.truth)
    print(f"mean PSNR {report.mean_psnr:.2f} dB, mean SSIM {report.mean_ssim:.4f}")
    return 0


COMMANDS = {
    "extract": cmd_extract,
    "synthesize": cmd_synthesize,
    "evaluate": cmd_evaluate,
}


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return COMMANDS[args.command](args)
    except (BlurClipError, OSError) as e:
        logger.error(f"❌ {args.command} failed: {e}")
        print(f"error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
