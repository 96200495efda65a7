"""Command-line front end.

Exit codes: 0 ok, 2 input error, 3 evaluation mismatch, 4 internal error.
Failures print one JSON line to stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path

from eventgeo.gazetteer import load_gazetteer
from eventgeo.metrics import EvaluationError
from eventgeo.pipeline import (
    InputError,
    PipelineConfig,
    format_report,
    run_detect,
    run_eval,
    run_geolocate,
)

EXIT_OK, EXIT_INPUT, EXIT_EVAL, EXIT_INTERNAL = 0, 2, 3, 4

logger = logging.getLogger("eventgeo")


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, type=Path, help="YAML pipeline config")
    p.add_argument("--seed", type=int, help="override config seed")
    p.add_argument("--jobs", type=int, help="parallel geolocation workers")
    p.add_argument("--output", type=Path, help="override output directory")
    p.add_argument("-v", "--verbose", action="store_true")


def _geoloc_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--no-fit", action="store_true", help="skip pseudo-toponym generation")
    p.add_argument("--no-hist", action="store_true", help="skip hierarchical noise filtering")
    p.add_argument("--ablation", choices=("gtop", "gtop--"), help="gtop-- disables filtering and pseudo-toponyms")
    p.add_argument("--match-depth", type=int, help="hierarchy levels compared when filtering")


def _eval_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--locations", type=Path, help="per-event JSONL or GeoJSON (default: output dir)")
    p.add_argument("--truth", type=Path, help="truth JSONL of {event_id, lat, lon} (default: dataset labels)")
    p.add_argument("--thresholds", type=float, nargs="+", help="ACC thresholds in km")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="eventgeo", description="Detect and geolocate events in social messages.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("detect", help="train the detector and write event clusters")
    _common(p)

    p = sub.add_parser("geolocate", help="locate each event cluster")
    _common(p)
    _geoloc_flags(p)
    p.add_argument("--clusters", type=Path, help="clusters JSONL (default: output dir)")

    p = sub.add_parser("eval", help="score locations against ground truth")
    _common(p)
    _eval_flags(p)

    p = sub.add_parser("pipeline", help="detect, geolocate and eval in sequence")
    _common(p)
    _geoloc_flags(p)
    _eval_flags(p)

    p = sub.add_parser("gazetteer-validate", help="check a gazetteer file against the schema")
    _common(p)
    p.add_argument("--gazetteer", type=Path, help="gazetteer file (default: from config)")
    return parser


def apply_overrides(cfg: PipelineConfig, args: argparse.Namespace) -> PipelineConfig:
    if args.seed is not None:
        cfg.seed = args.seed
        cfg.train = replace(cfg.train, seed=args.seed)
    if args.jobs is not None:
        if args.jobs < 1:
            raise InputError("--jobs must be >= 1")
        cfg.jobs = args.jobs
    if args.output is not None:
        cfg.output_dir = args.output
    geoloc = cfg.geoloc
    try:
        if getattr(args, "ablation", None) == "gtop--":
            geoloc = replace(geoloc, enable_hist=False, enable_fit=False)
        elif getattr(args, "ablation", None) == "gtop":
            geoloc = replace(geoloc, enable_hist=True, enable_fit=True)
        if getattr(args, "no_fit", False):
            geoloc = replace(geoloc, enable_fit=False)
        if getattr(args, "no_hist", False):
            geoloc = replace(geoloc, enable_hist=False)
        if getattr(args, "match_depth", None) is not None:
            geoloc = replace(geoloc, match_depth=args.match_depth)
    except ValueError as exc:
        raise InputError(str(exc)) from None
    cfg.geoloc = geoloc
    return cfg


def _cmd_eval(cfg: PipelineConfig, args) -> None:
    report = run_eval(cfg, args.locations, args.truth, args.thresholds)
    sys.stdout.write(format_report(report))


def _run(args: argparse.Namespace) -> None:
    cfg = apply_overrides(PipelineConfig.load(args.config), args)
    if args.command == "gazetteer-validate":
        path = args.gazetteer or cfg.gazetteer_path
        if not path.exists():
            raise InputError("gazetteer: not found")
        try:
            g = load_gazetteer(path)
        except ValueError as exc:
            raise InputError(f"gazetteer: {exc}") from None
        sys.stdout.write(f"{path}: {len(g)} entries, {len(g.names())} names\n")
    elif args.command == "detect":
        run_detect(cfg)
    elif args.command == "geolocate":
        run_geolocate(cfg, args.clusters)
    elif args.command == "eval":
        _cmd_eval(cfg, args)
    elif args.command == "pipeline":
        run_detect(cfg)
        run_geolocate(cfg)
        _cmd_eval(cfg, args)


def _fail(code: int, message: str) -> int:
    sys.stderr.write(json.dumps({"error": message, "exit_code": code}, ensure_ascii=False) + "\n")
    return code


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        _run(args)
    except InputError as exc:
        return _fail(EXIT_INPUT, str(exc))
    except EvaluationError as exc:
        return _fail(EXIT_EVAL, f"eval: {exc}")
    except Exception as exc:  # noqa: BLE001
        logger.debug("internal error", exc_info=True)
        return _fail(EXIT_INTERNAL, f"internal: {type(exc).__name__}: {exc}")
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
