"""Command-line entry point for the batch pipeline and the reader service.

Exit codes: 0 on success, 1 when any case failed at run time, 2 for
invalid configuration or unusable inputs.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import logging
import sys

from .pipeline import (
    collect_failures,
    load_config,
    load_manifest,
    run_metrics,
    run_preprocess,
    run_segment,
)
from .report import build_report, write_report

logger = logging.getLogger(__name__)


def _add_batch_args(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--manifest", required=True, help="JSON case manifest")
    parser.add_argument("--config", required=True, help="JSON pipeline config")
    parser.add_argument("--out", required=True, help="output directory")
    parser.add_argument("--jobs", type=int, default=1, help="parallel case workers")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="bpequant",
        description="Quantify background parenchymal enhancement from DCE-MRI exams.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_pre = sub.add_parser("preprocess", help="register S1 to S0 and resample both")
    _add_batch_args(p_pre)

    p_seg = sub.add_parser("segment", help="segment breast and FGT for every case")
    _add_batch_args(p_seg)
    p_seg.add_argument("--method", required=True, choices=("fcm", "dl"))
    p_seg.add_argument(
        "--operator",
        default="",
        help="operator label namespacing the outputs (required for fcm)",
    )

    p_met = sub.add_parser("metrics", help="compute enhancement metrics into metrics.csv")
    _add_batch_args(p_met)
    p_met.add_argument(
        "--methods",
        default=None,
        help="comma-separated mask namespaces (default: all present)",
    )

    p_rep = sub.add_parser("report", help="agreement report from metrics CSVs")
    p_rep.add_argument(
        "--metrics",
        action="append",
        required=True,
        help="metrics CSV path (repeatable)",
    )
    p_rep.add_argument("--labels", default=None, help="qualitative labels CSV")
    p_rep.add_argument("--scores", default=None, help="reader score export CSV")
    p_rep.add_argument("--out", required=True, help="directory for report.json/report.txt")
    p_rep.add_argument("--config", default=None, help="pipeline config supplying the seed")
    p_rep.add_argument("--seed", type=int, default=None, help="override the seed")
    p_rep.add_argument("--resamples", type=int, default=2000)
    p_rep.add_argument(
        "--failures-from",
        default=None,
        help="pipeline output directory to scan for per-case failures",
    )

    p_srv = sub.add_parser("reader-serve", help="serve the blinded reader study")
    p_srv.add_argument("--out", required=True, help="pipeline output directory to serve")
    p_srv.add_argument(
        "--methods", required=True, help="the two mask namespaces, comma-separated"
    )
    p_srv.add_argument("--seed", type=int, required=True, help="study seed")
    p_srv.add_argument("--token", required=True, help="export token")
    p_srv.add_argument("--records", default=None, help="JSONL record store path")
    p_srv.add_argument("--host", default="127.0.0.1")
    p_srv.add_argument("--port", type=int, default=8000)

    return parser


def _fail_count(statuses) -> int:
    return sum(1 for s in statuses if not s.ok)


def _load_inputs(args):
    manifest = load_manifest(args.manifest)
    config = load_config(args.config)
    if args.seed is not None:
        config = dataclasses.replace(config, seed=args.seed)
    return manifest, config


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")

    if args.command in ("preprocess", "segment", "metrics"):
        try:
            manifest, config = _load_inputs(args)
        except (ValueError, OSError, json.JSONDecodeError, TypeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        if args.command == "segment" and args.method == "fcm" and not args.operator:
            parser.error("--operator is required for --method fcm")
        try:
            if args.command == "preprocess":
                statuses = run_preprocess(manifest, config, args.out, jobs=args.jobs)
            elif args.command == "segment":
                statuses = run_segment(
                    manifest, config, args.out, args.method, args.operator, jobs=args.jobs
                )
            else:
                namespaces = args.methods.split(",") if args.methods else None
                statuses = run_metrics(manifest, config, args.out, namespaces)
        except (ValueError, OSError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 1
        failed = _fail_count(statuses)
        if failed:
            print(f"{failed} of {len(statuses)} case runs failed", file=sys.stderr)
            return 1
        return 0

    if args.command == "report":
        seed = args.seed
        try:
            if seed is None and args.config is not None:
                seed = load_config(args.config).seed
            if seed is None:
                seed = 0
            failures = (
                collect_failures(args.failures_from) if args.failures_from else []
            )
            report = build_report(
                args.metrics,
                labels_path=args.labels,
                scores_path=args.scores,
                seed=seed,
                resamples=args.resamples,
                failures=failures,
            )
            json_path, text_path = write_report(report, args.out)
        except (ValueError, OSError, json.JSONDecodeError) as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        print(f"wrote {json_path} and {text_path}")
        return 1 if failures else 0

    if args.command == "reader-serve":
        from .reader.service import create_app
        from .reader.study import StudyConfig

        methods = [m for m in args.methods.split(",") if m]
        if len(methods) != 2:
            print("error: --methods needs exactly two namespaces", file=sys.stderr)
            return 2
        records = args.records or f"{args.out}/reader_records.jsonl"
        try:
            config = StudyConfig(
                data_dir=args.out,
                method_a=methods[0],
                method_b=methods[1],
                seed=args.seed,
                token=args.token,
                records_path=records,
            )
            app = create_app(config)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return 2
        import uvicorn

        uvicorn.run(app, host=args.host, port=args.port, log_level="info")
        return 0

    parser.error(f"unknown command {args.command!r}")
    return 2


def run() -> None:
    sys.exit(main())


if __name__ == "__main__":
    run()
