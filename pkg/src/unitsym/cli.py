"""Command-line front end.

    unitsym PATH... [--class all] [--report out.txt] [--dump-tree]

PATH is a mini-IR file or a directory searched recursively for ``*.mir``.
Labels are read from ``<name>.labels`` next to each program (or ``--labels``
for a single file); the class of unlabeled lines defaults to the name of the
directory holding the program when that is a class name.
"""

from __future__ import annotations

import argparse
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Sequence

from . import __version__, cover, ir, learning, specs
from .pipeline import AnalysisConfig, analyze_program
from .report import LabelMismatch, MetricCounters, check_labels, compute_metrics, format_metrics, format_result, load_labels

EXIT_OK, EXIT_USAGE, EXIT_INTERNAL = 0, 1, 2
CLASS_CHOICES = ("heap", "stack", "uaf", "df", "all")


class _Parser(argparse.ArgumentParser):
    def error(self, message: str) -> None:  # usage errors exit with 1
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="unitsym", description="Detect memory-corruption bugs in mini-IR programs.")
    ap.add_argument("paths", nargs="+", help="mini-IR files or directories")
    ap.add_argument("--class", dest="vclass", choices=CLASS_CHOICES, default="all")
    ap.add_argument("--timeout-secs", type=float, default=cover.DEFAULT_TIMEOUT_SECS)
    ap.add_argument("--mc-runs-cap", type=int, default=learning.DEFAULT_RUNS_CAP)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--threshold", type=int, default=learning.DEFAULT_THRESHOLD)
    ap.add_argument("--dump-tree", action="store_true")
    ap.add_argument("--labels", help="labels file (single program only)")
    ap.add_argument("--jobs", type=int, default=1)
    ap.add_argument("--report", help="write the report here instead of stdout")
    ap.add_argument("-v", "--verbose", action="store_true")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    return ap


def _discover(paths: Sequence[str]) -> list[Path]:
    out: list[Path] = []
    for raw in paths:
        path = Path(raw)
        if path.is_dir():
            out.extend(sorted(path.rglob("*.mir")))
        elif path.is_file():
            out.append(path)
        else:
            raise FileNotFoundError(raw)
    return out


def _default_class(path: Path) -> str | None:
    return specs.CLASS_ALIASES.get(path.parent.name)


def _job(args: tuple) -> tuple[list[str], dict[str, MetricCounters], bool]:
    path, labels_path, config, dump_tree = args
    p = ir.load_program(path)
    labels = load_labels(labels_path, _default_class(path)) if labels_path else []
    check_labels(p, labels)
    result = analyze_program(p, config, name=str(path))
    per_class = {}
    if labels:
        for vclass in config.classes:
            per_class[vclass] = compute_metrics(result.findings, labels, vclass, result.timed_out)
    return format_result(result, dump_tree=dump_tree), per_class, bool(labels)


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    ns = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if ns.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    if ns.timeout_secs <= 0 or ns.mc_runs_cap <= 0 or ns.threshold <= 0 or ns.jobs <= 0:
        ap.error("numeric options must be positive")
    classes = specs.CLASSES if ns.vclass == "all" else (specs.CLASS_ALIASES[ns.vclass],)
    config = AnalysisConfig(classes=classes, seed=ns.seed, timeout_secs=ns.timeout_secs,
                            runs_cap=ns.mc_runs_cap, threshold=ns.threshold)
    try:
        programs = _discover(ns.paths)
    except FileNotFoundError as exc:
        ap.error(f"no such file or directory: {exc}")
    if ns.labels and len(programs) != 1:
        ap.error("--labels needs exactly one program")
    jobs = []
    for path in programs:
        labels_path = Path(ns.labels) if ns.labels else path.with_suffix(".labels")
        jobs.append((path, labels_path if labels_path.exists() else None, config, ns.dump_tree))
    try:
        for path, _, _, _ in jobs:
            ir.load_program(path)  # report parse errors before any analysis
    except ir.IRError as exc:
        for d in exc.diagnostics:
            print(f"{path}: {d}", file=sys.stderr)
        return EXIT_USAGE
    try:
        if ns.jobs > 1 and len(jobs) > 1:
            with ProcessPoolExecutor(max_workers=ns.jobs) as pool:
                results = list(pool.map(_job, jobs))
        else:
            results = [_job(j) for j in jobs]
    except (LabelMismatch, ValueError) as exc:
        print(f"unitsym: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except Exception as exc:  # noqa: BLE001 - report and signal an internal failure
        logging.exception("internal error")
        print(f"unitsym: internal error: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    lines: list[str] = []
    totals: dict[str, MetricCounters] = {}
    any_labels = False
    for prog_lines, per_class, labeled in results:
        lines.extend(prog_lines)
        lines.append("")
        any_labels |= labeled
        for vclass, c in per_class.items():
            totals[vclass] = totals.get(vclass, MetricCounters()) + c
    if any_labels:
        lines.extend(format_metrics(totals))
    text = "\n".join(lines).rstrip() + "\n"
    if ns.report:
        Path(ns.report).write_text(text)
    else:
        sys.stdout.write(text)
    return EXIT_OK


if __name__ == "__main__":
    raise SystemExit(main())
