"""Command-line entry point: ``gvhd generate|crossval|gradcheck|report``.

Exit codes: 0 success, 1 a check failed (gradcheck), 2 bad config, refused
output directory or corrupt input.
"""

from __future__ import annotations

import argparse
import logging
import sys
import time
from pathlib import Path

from .autodiff import BACKEND_NAME
from .config import RunConfig
from .errors import GVHDError

log = logging.getLogger("gvhd")


class CommandError(GVHDError):
    """Refusals raised by the CLI itself (e.g. non-empty output directory)."""


def _load_config(args) -> RunConfig:
    cfg = RunConfig.load(args.config) if args.config else RunConfig()
    return cfg


def _ensure_writable(path: Path, force: bool) -> None:
    if path.exists() and not path.is_dir():
        raise CommandError(f"{path} exists and is not a directory")
    if path.is_dir() and any(path.iterdir()) and not force:
        raise CommandError(f"refusing to write into non-empty directory {path} (use --force)")
    path.mkdir(parents=True, exist_ok=True)


def cmd_generate(args) -> int:
    from .cohort import generate_cohort, save_cohort

    cfg = _load_config(args)
    if args.seed is not None:
        cfg.generator.seed = args.seed
    cfg.generator.validate()
    out = cfg.paths.cohort_dir()
    _ensure_writable(out, args.force)
    cohort = generate_cohort(cfg.generator)
    manifest_path, data_path = save_cohort(cohort, out)
    man = cohort.manifest
    print(f"wrote {data_path} and {manifest_path}")
    print(f"patients {man.n_patients}  positives {man.n_positive}  "
          f"prevalence {man.realized['prevalence']:.4f}  lab missingness {man.realized['missing_ratio']:.4f}")
    return 0


def cmd_crossval(args) -> int:
    from .cohort import load_cohort
    from .evaluation import cross_validate, write_report

    cfg = _load_config(args)
    if args.seed is not None:
        cfg.training.seeds = [args.seed]
    cfg.validate()
    cohort = load_cohort(cfg.paths.cohort_dir())  # integrity errors stop here, before any training
    out = cfg.paths.report_dir()
    _ensure_writable(out, args.force)
    t0 = time.perf_counter()
    report = cross_validate(cohort, cfg, jobs=args.jobs)
    write_report(report, out)
    print(report.summary())
    print(f"report written to {out}  ({time.perf_counter() - t0:.1f}s, kernels: {BACKEND_NAME})")
    return 0


def cmd_gradcheck(args) -> int:
    from .diagnostics import format_table, run_suite

    t0 = time.perf_counter()
    results = run_suite(seed=args.seed or 0)
    print(format_table(results))
    failed = [r.name for r in results if not r.passed]
    print(f"{len(results) - len(failed)}/{len(results)} ops pass in {time.perf_counter() - t0:.1f}s "
          f"(kernels: {BACKEND_NAME})")
    if failed:
        print("gradient check failed for: " + ", ".join(failed), file=sys.stderr)
        return 1
    return 0


def cmd_report(args) -> int:
    from .evaluation import load_report

    cfg = _load_config(args)
    path = cfg.paths.report_dir() / "report.json"
    if not path.exists():
        raise CommandError(f"no report at {path}; run crossval first")
    report = load_report(path)
    print(f"{'seed':>4} {'fold':>4} {'auc':>7} {'auprc':>7} {'recall':>7} {'spec':>7} {'thresh':>8}")
    for r in report.runs:
        print(f"{r.seed:>4} {r.fold:>4} {r.auc:7.4f} {r.auprc:7.4f} {r.recall:7.4f} {r.specificity:7.4f} "
              f"{r.threshold:8.4f}")
    print(report.summary())
    return 0


COMMANDS = {"generate": cmd_generate, "crossval": cmd_crossval, "gradcheck": cmd_gradcheck, "report": cmd_report}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="gvhd", description="Multi-modal GVHD risk modelling on synthetic cohorts.")
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", help="JSON run configuration (defaults apply when omitted)")
    parser.add_argument("--seed", type=int, help="generator seed (generate) or single training seed (crossval)")
    parser.add_argument("--jobs", type=int, default=1, help="worker processes for crossval")
    parser.add_argument("--force", action="store_true", help="allow writing into a non-empty output directory")
    parser.add_argument("-v", "--verbose", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return COMMANDS[args.command](args)
    except GVHDError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
