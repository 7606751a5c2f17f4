"""Ground-truth labels, metric counters and the text report."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

from . import ir, specs
from .cover import Finding
from .pipeline import ProgramResult


class LabelMismatch(Exception):
    pass


@dataclass(frozen=True)
class Label:
    site: ir.Site
    bad: bool
    vclass: str | None = None

    @property
    def verdict(self) -> str:
        return "bad" if self.bad else "good"


def parse_labels(text: str, default_class: str | None = None) -> list[Label]:
    """Lines ``site <function> <block> <index> {bad|good} [class]``; ``#`` starts a comment."""
    out = []
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if parts[0] != "site" or len(parts) not in (5, 6) or parts[4] not in ("bad", "good"):
            raise ValueError(f"line {lineno}: expected 'site <function> <block> <index> bad|good [class]'")
        try:
            index = int(parts[3])
        except ValueError:
            raise ValueError(f"line {lineno}: statement index must be an integer") from None
        vclass = parts[5] if len(parts) == 6 else default_class
        if vclass is not None:
            vclass = specs.CLASS_ALIASES.get(vclass, vclass)
            if vclass not in specs.CLASSES:
                raise ValueError(f"line {lineno}: unknown class {parts[5]}")
        out.append(Label((parts[1], parts[2], index), parts[4] == "bad", vclass))
    return out


def load_labels(path: str | Path, default_class: str | None = None) -> list[Label]:
    return parse_labels(Path(path).read_text(), default_class)


def check_labels(p: ir.Program, labels: Iterable[Label]) -> None:
    for lab in labels:
        fname, block, idx = lab.site
        fn = p.functions.get(fname)
        if fn is None or block not in fn.blocks or not 0 <= idx < len(fn.blocks[block].stmts):
            raise LabelMismatch(f"label refers to unknown site {fname} {block} {idx}")


@dataclass
class MetricCounters:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def __add__(self, other: "MetricCounters") -> "MetricCounters":
        return MetricCounters(self.tp + other.tp, self.fp + other.fp, self.tn + other.tn, self.fn + other.fn)

    @property
    def precision(self) -> float | None:
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self) -> float | None:
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def accuracy(self) -> float | None:
        d = self.tp + self.tn + self.fp + self.fn
        return (self.tp + self.tn) / d if d else None


def fmt_metric(x: float | None) -> str:
    return "n/a" if x is None else f"{x:.2f}"


def compute_metrics(
    findings: Sequence[Finding],
    labels: Sequence[Label],
    vclass: str | None = None,
    timed_out: bool = False,
) -> MetricCounters:
    """Counters from replay-confirmed findings against labeled sites.

    A timed-out analysis counts every labeled vulnerable site as missed.
    """
    if vclass is not None:
        labels = [lab for lab in labels if lab.vclass in (None, vclass)]
        findings = [f for f in findings if f.vclass == vclass]
    hits = set() if timed_out else {f.site for f in findings if f.confirmed}
    labeled = {lab.site: lab for lab in labels}
    c = MetricCounters()
    for lab in labeled.values():
        if lab.bad:
            if lab.site in hits:
                c.tp += 1
            else:
                c.fn += 1
        elif lab.site in hits:
            c.fp += 1
        else:
            c.tn += 1
    c.fp += sum(1 for s in hits if s not in labeled)
    return c


def _site(s: ir.Site) -> str:
    return f"{s[0]} {s[1]} {s[2]}"


def _value(v: object) -> str:
    if isinstance(v, bytes):
        return f"str[{len(v)}]"
    return str(v)


def format_result(r: ProgramResult, *, dump_tree: bool = False) -> list[str]:
    lines = [f"program: {r.name}", f"runs: {r.runs}", f"seconds: {r.seconds:.3f}",
             f"timed_out: {'yes' if r.timed_out else 'no'}"]
    if r.error:
        lines.append(f"error: {r.error}")
    for note in r.notes:
        lines.append(f"note: {note}")
    for u in r.units:
        lines.append("")
        lines.append(f"unit: {u.unit.function}")
        lines.append(f"class: {u.unit.vclass}")
        lines.append(f"sites: {', '.join(_site(s.site) for s in u.unit.sites)}")
        lines.append(f"nodes: {len(u.tree.nodes)}")
        lines.append(f"seconds: {u.seconds:.3f}")
        for note in u.tree.notes:
            lines.append(f"note: {note}")
        if dump_tree:
            lines.append("tree:")
            lines.extend("  " + t for t in u.tree.dump().splitlines())
        for f in u.findings:
            lines.append("")
            lines.append("finding:")
            lines.append(f"  class: {f.vclass}")
            lines.append(f"  unit: {f.unit}")
            lines.append(f"  site: {_site(f.site)}")
            lines.append(f"  node: {f.node}")
            lines.append(f"  confirmation: {f.confirmation}")
            lines.append(f"  mode: {f.mode}")
            lines.append(f"  attempts: {f.attempts}")
            lines.append("  unit_witness: " + ", ".join(f"{k}={v}" for k, v in sorted(f.unit_witness.items())))
            if f.system_witness is not None:
                lines.append("  system_witness: " + ", ".join(_value(v) for v in f.system_witness))
            for note in f.notes:
                lines.append(f"  note: {note}")
    return lines


def format_metrics(per_class: dict[str, MetricCounters]) -> list[str]:
    lines = ["metrics:"]
    for vclass, c in per_class.items():
        lines.append(f"  {vclass}: TP={c.tp} FP={c.fp} TN={c.tn} FN={c.fn} "
                     f"precision={fmt_metric(c.precision)} recall={fmt_metric(c.recall)} "
                     f"accuracy={fmt_metric(c.accuracy)}")
    return lines
