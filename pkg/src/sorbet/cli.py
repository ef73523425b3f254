"""``sorbet`` command-line entry point.

Subcommands::

    sorbet perturb --config run.json [--frames 000001,000002] [--workers N]
    sorbet mock-detect --config run.json (--baseline | --variant NAME) --out dets.jsonl
    sorbet evaluate --config run.json --baseline base.jsonl --perturbed 'dets/*.jsonl' [--out DIR]
    sorbet cascade --tracks tracks.csv --deviations plot_data.csv --patterns interval,all,remove-once
    sorbet report --input report.json --format csv|json

Exit status is 0 on success, 1 when some frames failed (a JSON error summary
goes to stderr) and 2 on a fatal error.
"""
from __future__ import annotations

import argparse
import glob
import json
import logging
import sys
from pathlib import Path

from .cascade import parse_patterns
from .errors import SorbetError
from .pipeline import RunConfig, cmd_cascade, cmd_evaluate, cmd_mock_detect, cmd_perturb, cmd_report


def _frames(text):
    return [f.strip() for f in text.split(",") if f.strip()] if text else None


def _fail(exc: Exception, code: int = 2) -> int:
    print(json.dumps({"errors": [{"error": type(exc).__name__, "message": str(exc)}]}), file=sys.stderr)
    return code


def _run_perturb(args) -> int:
    res = cmd_perturb(RunConfig.load(args.config), _frames(args.frames), args.workers)
    done = len(res.manifest["frames"])
    print(f"perturbed {done} frame(s), {len(res.skipped)} resumed, {len(res.errors)} failed")
    if res.errors:
        print(json.dumps({"errors": res.errors}), file=sys.stderr)
        return 1
    return 0


def _run_mock_detect(args) -> int:
    cfg = RunConfig.load(args.config)
    cloud_dir = cfg.dataset_root / "velodyne" if args.baseline else cfg.output_root / args.variant
    n = cmd_mock_detect(cfg, cloud_dir, Path(args.out), args.min_points, _frames(args.frames))
    print(f"wrote {n} detection(s) to {args.out}")
    return 0


def _run_evaluate(args) -> int:
    cfg = RunConfig.load(args.config)
    paths = sorted({p for pattern in args.perturbed for p in glob.glob(pattern)})
    if not paths:
        raise SorbetError(f"no perturbed detection files match {args.perturbed}")
    reports = cmd_evaluate(cfg, args.baseline, paths, args.out, _frames(args.frames))
    for rep in reports:
        print(f"{rep.variant}: LDC {rep.ldc_count} ({100 * rep.ldc_fraction:.1f}%), DIFF {rep.diff_count} ({100 * rep.diff_fraction:.1f}%)")
    return 0


def _run_cascade(args) -> int:
    source = RunConfig.load(args.config) if args.config else args.range_filter
    table = cmd_cascade(
        source, args.tracks, args.deviations, parse_patterns(args.patterns), args.out, args.horizon, args.dt, args.variant
    )
    if args.out is None:
        sys.stdout.write(table.to_csv())
    return 0


def _run_report(args) -> int:
    sys.stdout.write(cmd_report(args.input, args.format))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sorbet", description="LiDAR perturbation robustness toolkit")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("perturb", help="write perturbed point clouds for a dataset")
    p.add_argument("--config", required=True)
    p.add_argument("--frames", help="comma-separated frame ids (default: all)")
    p.add_argument("--workers", type=int)
    p.set_defaults(func=_run_perturb)

    p = sub.add_parser("mock-detect", help="run the deterministic mock detector")
    p.add_argument("--config", required=True)
    which = p.add_mutually_exclusive_group(required=True)
    which.add_argument("--baseline", action="store_true", help="detect on the original clouds")
    which.add_argument("--variant", help="detect on a perturbed variant")
    p.add_argument("--out", required=True)
    p.add_argument("--min-points", type=int, default=20)
    p.add_argument("--frames")
    p.set_defaults(func=_run_mock_detect)

    p = sub.add_parser("evaluate", help="compare perturbed detections with the baseline")
    p.add_argument("--config", required=True)
    p.add_argument("--baseline", required=True)
    p.add_argument("--perturbed", required=True, nargs="+", help="files or glob patterns, one per variant")
    p.add_argument("--out", help="report directory (default: output_root)")
    p.add_argument("--frames")
    p.set_defaults(func=_run_evaluate)

    p = sub.add_parser("cascade", help="propagate deviations into trajectory prediction")
    p.add_argument("--tracks", required=True)
    p.add_argument("--deviations", required=True)
    p.add_argument("--patterns", default="interval,all,remove-once")
    p.add_argument("--config", help="run config supplying range_filter")
    p.add_argument("--range-filter", type=float, default=10.0)
    p.add_argument("--variant", help="only use deviations of this variant")
    p.add_argument("--horizon", type=float, default=1.0)
    p.add_argument("--dt", type=float, default=0.1)
    p.add_argument("--out")
    p.set_defaults(func=_run_cascade)

    p = sub.add_parser("report", help="render a report.json")
    p.add_argument("--input", default="report.json")
    p.add_argument("--format", choices=("csv", "json"), default="csv")
    p.set_defaults(func=_run_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (SorbetError, OSError, ValueError) as exc:
        return _fail(exc)


if __name__ == "__main__":
    sys.exit(main())
