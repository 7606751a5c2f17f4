"""End-to-end analysis of one program: units, trees, simulation, cover."""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Sequence

from . import cover, interp, ir, learning, specs, symexec
from .cover import CoverConfig, Finding

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class AnalysisConfig:
    classes: tuple[str, ...] = specs.CLASSES
    seed: int = 0
    timeout_secs: float = cover.DEFAULT_TIMEOUT_SECS
    runs_cap: int = learning.DEFAULT_RUNS_CAP
    strength: int = learning.DEFAULT_STRENGTH
    threshold: int = learning.DEFAULT_THRESHOLD
    retries: int = cover.DEFAULT_RETRIES
    bounds: symexec.Bounds = symexec.Bounds()
    sim_box: tuple[int, int] = learning.DEFAULT_INT_BOX


@dataclass
class UnitResult:
    unit: specs.TestUnit
    tree: symexec.ConstraintTree
    findings: list[Finding]
    seconds: float


@dataclass
class ProgramResult:
    name: str
    program: ir.Program
    units: list[UnitResult] = field(default_factory=list)
    runs: int = 0
    seconds: float = 0.0
    timed_out: bool = False
    error: str | None = None
    notes: list[str] = field(default_factory=list)

    @property
    def findings(self) -> list[Finding]:
        return [f for u in self.units for f in u.findings]


def analyze_program(p: ir.Program, config: AnalysisConfig = AnalysisConfig(), name: str = "<program>") -> ProgramResult:
    start = time.monotonic()
    deadline = start + config.timeout_secs
    result = ProgramResult(name, p)
    try:
        _analyze(p, config, result, deadline)
    except cover.AnalysisTimeout:
        result.timed_out = True
        result.notes.append(f"timeout after {config.timeout_secs:g} s")
    result.seconds = time.monotonic() - start
    return result


def _analyze(p: ir.Program, config: AnalysisConfig, result: ProgramResult, deadline: float) -> None:
    work: list[tuple[specs.TestUnit, symexec.ConstraintTree]] = []
    caps: set[int] = set()
    for vclass in config.classes:
        spec = specs.spec_for(vclass)
        for unit in specs.extract_test_units(p, spec):
            tree = symexec.symbolic_execute(p, unit, config.bounds)
            work.append((unit, tree))
            caps.update(f.capacity for f in unit.facts if f.capacity is not None)
            caps.update(f.capacity for f in unit.param_facts.values() if f.capacity is not None)
            if time.monotonic() > deadline:
                raise cover.AnalysisTimeout()
    if not work:
        return
    kinds = interp.input_signature(p)
    levels = learning.level_sets(kinds, caps, config.sim_box)
    max_len = 2 * max(caps) + 2 if caps else 16
    sim = learning.monte_carlo(
        p, kinds, levels, config.strength,
        watch={u.function for u, _ in work}, runs_cap=config.runs_cap,
        random_fill=True, seed=config.seed, box=config.sim_box, max_len=max_len,
    )
    result.runs = len(sim)
    cc = CoverConfig(seed=config.seed, retries=config.retries, threshold=config.threshold, deadline=deadline)
    for unit, tree in work:
        t0 = time.monotonic()
        findings = cover.cover(p, unit, tree, sim, cc)
        result.units.append(UnitResult(unit, tree, findings, time.monotonic() - t0))


def load_and_analyze(path: str, config: AnalysisConfig = AnalysisConfig()) -> ProgramResult:
    p = ir.load_program(path)
    return analyze_program(p, config, name=str(path))


def predicted_events_for_run(
    trees: Sequence[symexec.ConstraintTree], trace: interp.ExecutionTrace
) -> set[tuple[str, ir.Site]]:
    """Events the trees predict for a concrete run, from the unit calls it made."""
    out: set[tuple[str, ir.Site]] = set()
    for tree in trees:
        for call in trace.unit_entries:
            if call.function != tree.unit.function:
                continue
            vec = tree.unit_vector(call.args)
            if vec is not None:
                out |= symexec.predicted_events(tree, call.blocks, vec)
    return out
