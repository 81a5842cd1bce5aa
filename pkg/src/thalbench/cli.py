"""Command-line entry point.

Exit status: 0 when every output was written, 2 for usage or input errors,
1 for unexpected internal errors.
"""
from __future__ import annotations

import argparse
import csv
import json
import logging
import os
import sys
from pathlib import Path

import jsonschema

from . import __version__
from .bench import RunConfig, load_manifest, run_benchmark, run_clinical
from .cohort import read_cohort_csv, write_cohort_csv
from .harmonize import load_label_map, remap
from .phantom import CohortSpec, PhantomSpec, gen_benchmark_set, gen_cohort, gen_phantom_volume
from .report import emit_report, load_schema
from .stats import DEFAULT_MC_DRAWS, DEFAULT_MC_SEED
from .volgrid import read_volume, write_volume

WORKERS_ENV = "THALBENCH_WORKERS"
EXIT_OK, EXIT_INTERNAL, EXIT_INPUT = 0, 1, 2

log = logging.getLogger("thalbench")


class InputError(Exception):
    """Bad user input detected by the CLI itself."""


def _default_workers() -> int:
    raw = os.environ.get(WORKERS_ENV, "1")
    try:
        value = int(raw)
    except ValueError:
        raise InputError(f"{WORKERS_ENV} must be an integer, got {raw!r}") from None
    if value < 1:
        raise InputError(f"{WORKERS_ENV} must be >= 1")
    return value


def _run_config(args) -> RunConfig:
    workers = args.workers if args.workers is not None else _default_workers()
    return RunConfig(threshold=getattr(args, "threshold", 0.25), alpha=args.alpha,
                     family_size=getattr(args, "family_size", 6), seed=args.seed,
                     workers=workers, mc_draws=args.mc_draws,
                     physical_distances=getattr(args, "physical", False))


def cmd_harmonize(args) -> int:
    label_map = load_label_map(args.label_map)
    out = Path(args.out)
    names = [Path(p).name for p in args.inputs]
    if len(set(names)) != len(names):
        raise InputError("input files must have distinct file names")
    volumes = [(name, read_volume(p)) for name, p in zip(names, args.inputs)]
    out.mkdir(parents=True, exist_ok=True)
    tally_rows = []
    for name, vol in volumes:
        harmonized, tally = remap(vol, label_map)
        write_volume(harmonized, out / name)
        for status, counts in (("dropped", tally.dropped), ("unmapped", tally.unmapped)):
            for label in sorted(counts):
                tally_rows.append((name, label, status, counts[label]))
    with open(out / "drop_tally.csv", "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("input", "source_label", "status", "voxels"))
        writer.writerows(tally_rows)
    print(f"harmonized {len(volumes)} volume(s) with map '{label_map.name}' into {out}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    config = _run_config(args)
    manifest = load_manifest(args.manifest)
    report = run_benchmark(manifest, config)
    files = emit_report(report, args.out)
    for note in report.notes:
        log.warning(note)
    print(f"wrote {len(files)} file(s) to {args.out}")
    return EXIT_OK


def _parse_cohort_arg(value: str):
    name, sep, path = value.partition("=")
    if not sep:
        path, name = value, Path(value).stem
    if not name:
        raise InputError(f"empty method name in --cohort {value!r}")
    return name, path


def cmd_clinical(args) -> int:
    config = _run_config(args)
    cohorts = {}
    for item in args.cohort:
        name, path = _parse_cohort_arg(item)
        if name in cohorts:
            raise InputError(f"duplicate cohort name {name!r}")
        cohorts[name] = read_cohort_csv(path)
    report = run_clinical(cohorts, config, control=args.control, d_mode=args.d_mode)
    files = emit_report(report, args.out)
    print(f"wrote {len(files)} file(s) to {args.out}")
    return EXIT_OK


def cmd_phantom(args) -> int:
    try:
        with open(args.spec, encoding="utf-8") as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise InputError(f"{args.spec}: invalid JSON: {exc}") from None
    if args.seed is not None and isinstance(doc, dict):
        doc["seed"] = args.seed
    jsonschema.validate(doc, load_schema("phantom.schema.json"))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    kind = doc["kind"]
    if kind == "volume":
        write_volume(gen_phantom_volume(PhantomSpec.from_dict(doc)), out / "phantom.nii")
    elif kind == "cohort":
        write_cohort_csv(gen_cohort(CohortSpec.from_dict(doc)), out / "cohort.csv")
    else:
        gen_benchmark_set(doc, out)
    print(f"generated {kind} phantom in {out}")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="thalbench",
        description="Benchmark thalamic nucleus segmentations under a unified nomenclature.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, stats=True):
        p.add_argument("--out", required=True, help="output directory")
        p.add_argument("--workers", type=int, default=None,
                       help=f"worker threads (default: ${WORKERS_ENV} or 1)")
        if stats:
            p.add_argument("--alpha", type=float, default=0.05)
            p.add_argument("--seed", type=int, default=DEFAULT_MC_SEED,
                           help="seed for Monte Carlo steps")
            p.add_argument("--mc-draws", type=int, default=DEFAULT_MC_DRAWS,
                           help="Monte Carlo draws for Dunnett p-values")

    p = sub.add_parser("harmonize", help="remap label volumes onto the unified 20-label scheme")
    p.add_argument("inputs", nargs="+", help="NIfTI label volumes")
    p.add_argument("--label-map", required=True,
                   help="label map TSV or builtin name (freesurfer, krauth, unified)")
    common(p, stats=False)
    p.set_defaults(func=cmd_harmonize)

    p = sub.add_parser("evaluate", help="segmentation benchmark against a reference")
    p.add_argument("--manifest", required=True, help="JSON manifest of methods and subjects")
    p.add_argument("--threshold", type=float, default=0.25,
                   help="group atlas binarization threshold")
    p.add_argument("--family-size", type=int, default=6,
                   help="Bonferroni family size for pairwise method tests")
    p.add_argument("--physical", action="store_true",
                   help="report distances in mm instead of voxels")
    common(p)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("clinical", help="group effects and discrimination on cohort tables")
    p.add_argument("--cohort", action="append", required=True, metavar="[NAME=]PATH",
                   help="cohort CSV, one per method (repeatable)")
    p.add_argument("--control", default="HC")
    p.add_argument("--d-mode", choices=("adjusted", "raw"), default="adjusted",
                   help="volumes used for Cohen's d")
    common(p)
    p.set_defaults(func=cmd_clinical)

    p = sub.add_parser("phantom", help="generate phantom volumes, cohorts or benchmark sets")
    p.add_argument("spec", help="phantom spec JSON (kind: volume, cohort or benchmark)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the spec seed")
    p.set_defaults(func=cmd_phantom)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s: %(message)s")
    try:
        return args.func(args)
    except jsonschema.ValidationError as exc:
        print(f"thalbench: invalid spec: {exc.message}", file=sys.stderr)
    except (InputError, ValueError, FileNotFoundError, IsADirectoryError) as exc:
        print(f"thalbench: error: {exc}", file=sys.stderr)
    except Exception:
        log.exception("internal error")
        return EXIT_INTERNAL
    return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
