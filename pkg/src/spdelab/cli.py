"""Command-line front end.

Every subcommand resolves to the same pipeline: load a configuration
(preset name or JSON file), apply overrides, run, print the band checks.
Exit status: 0 all bands pass, 1 a band failed, 2 bad configuration.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .harness import (
    ConfigError,
    ExperimentAbortedError,
    build_config,
    preset_document,
    preset_names,
    run_experiment,
)

_FILTERED = {
    "hoelder": "hoelder",
    "besov": "besov",
    "smoothing": "smoothing",
    "aux-error": "aux-error",
    "kernel-check": "kernel-check",
}


def _load_document(ref: str) -> dict:
    path = Path(ref)
    if path.suffix == ".json" or path.exists():
        return json.loads(path.read_text())
    return preset_document(ref)


def _add_common(sub):
    sub.add_argument("--seed", type=int, default=None, help="override the master seed")
    sub.add_argument("--replicas", type=int, default=None, help="override the replica count")
    sub.add_argument("--workers", type=int, default=1, help="worker processes (result-neutral)")
    sub.add_argument("--out", default=None, help="report directory")
    sub.add_argument(
        "--dump-snapshots",
        action="store_true",
        help="also write full spatial profiles of replica 0 at the probe times",
    )


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="spdelab",
        description="simulate rough-noise parabolic dynamics and probe the law of the solution",
    )
    subs = parser.add_subparsers(dest="command", required=True)

    p_preset = subs.add_parser("preset", help="inspect shipped scenarios")
    p_preset.add_argument("action", choices=["list"])

    p_run = subs.add_parser("run", help="run a configuration file or preset end to end")
    p_run.add_argument("config", help="path to a JSON configuration, or a preset name")
    _add_common(p_run)

    p_sim = subs.add_parser("simulate", help="run the replicas and report probe statistics only")
    p_sim.add_argument("config")
    _add_common(p_sim)

    for name, kind in _FILTERED.items():
        p = subs.add_parser(name, help=f"run only the {kind} analyses of a configuration")
        p.add_argument(
            "config",
            nargs="?" if name == "kernel-check" else None,
            default="kernel-lemma21" if name == "kernel-check" else None,
        )
        _add_common(p)
    return parser


def _execute(doc: dict, args) -> int:
    if args.seed is not None:
        doc["seed"] = args.seed
    if args.replicas is not None:
        doc["replicas"] = args.replicas
    config = build_config(doc)
    report = run_experiment(
        config,
        workers=args.workers,
        dump_snapshots=args.dump_snapshots,
        output_dir=args.out,
    )
    for check in report.summary["checks"]:
        if check["pass"] is None:
            verdict = "  --  "
        else:
            verdict = " PASS " if check["pass"] else " FAIL "
        est = check["estimate"]
        est_txt = "nan" if est is None else f"{est:.6g}"
        band = check["band"]
        band_txt = "" if band is None else f"  band [{band[0]:g}, {band[1]:g}]"
        print(f"[{verdict}] {check['quantity']}: {est_txt}{band_txt}")
    print(f"report: {report.output_dir}")
    return 0 if report.overall_pass else 1


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if args.command == "preset":
        for name in preset_names():
            print(name)
        return 0
    try:
        doc = _load_document(args.config)
    except FileNotFoundError:
        print(f"error: no such file: {args.config}", file=sys.stderr)
        return 2
    except (ValueError, json.JSONDecodeError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2

    if args.command == "simulate":
        doc["analyses"] = []
    elif args.command in _FILTERED:
        kind = _FILTERED[args.command]
        kept = [a for a in doc.get("analyses", []) if a.get("kind") == kind]
        if not kept:
            print(f"error: configuration has no {kind} analysis", file=sys.stderr)
            return 2
        doc["analyses"] = kept

    try:
        return _execute(doc, args)
    except ConfigError as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except ExperimentAbortedError as e:
        print(f"aborted: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
