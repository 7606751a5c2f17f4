from __future__ import annotations

import numpy as np
import pytest

from unitsym import cover, interp, ir, learning, pipeline, specs, symexec
from unitsym.learning import FittedMap, MapResult, OutputFit, Treatment
from unitsym.constraints import Constraint

from conftest import load


def _setup(p: ir.Program, vclass: str = "heap") -> tuple[symexec.ConstraintTree, learning.SimulationSet]:
    unit = specs.extract_test_units(p, specs.spec_for(vclass))[0]
    tree = symexec.symbolic_execute(p, unit)
    kinds = interp.input_signature(p)
    sim = learning.monte_carlo(p, kinds, learning.level_sets(kinds, {10}), 2, watch={unit.function})
    return tree, sim


def test_unit_tree_possibly_vulnerable(unit_tree: ir.Program) -> None:
    tree, _ = _setup(unit_tree)
    labels = {tree.nodes[i].label for i in cover.possibly_vulnerable(tree)}
    assert labels == {"root", "node1", "node2", "node4"}


def test_unit_tree_node2_witness_constraint(unit_tree: ir.Program) -> None:
    tree, _ = _setup(unit_tree)
    node2 = next(n for n in tree.nodes if n.label == "node2")
    cn = node2.const.conj(node2.vul_const)
    assert str(cn) == "{x >= 10 ∧ x - y == 5 ∧ len(str) > 10}"


def test_ranges_mode_midpoint(unit_tree: ir.Program) -> None:
    tree, sim = _setup(unit_tree)
    t = Treatment((0,), ((10.0, 20.0),), 3.0, True)
    vec = cover.generate_system_witness({"x": 0, "y": 0, "len(str)": 0}, "ranges", sim, tree,
                                        treatment=t, base=(0, 0, b""))
    assert vec[0] == 15


def test_ranges_mode_empty_range(unit_tree: ir.Program) -> None:
    tree, sim = _setup(unit_tree)
    t = Treatment((0,), ((20.0, 10.0),), 3.0, True)
    with pytest.raises(cover.EmptyRange):
        cover.generate_system_witness({}, "ranges", sim, tree, treatment=t, base=(0, 0, b""))


def _identity(dim: int, var: str) -> MapResult:
    fit = OutputFit(dim, 1, ((0,), (1,)), (0.0, 1.0), 0.0)
    return MapResult((var,), (dim,), FittedMap((var,), (dim,), (fit,)), Constraint(), None, True, ())


def test_map_mode_identity(unit_tree: ir.Program) -> None:
    tree, sim = _setup(unit_tree)
    vec = cover.generate_system_witness({"x": 10, "y": 0, "len(str)": 0}, "map", sim, tree,
                                        mapping=_identity(0, "x"), base=(0, 0, b""))
    assert vec[0] == 10


def test_map_output_out_of_box(unit_tree: ir.Program) -> None:
    tree, sim = _setup(unit_tree)
    with pytest.raises(cover.MapOutputOutOfBox):
        cover.generate_system_witness({"x": -(2**30), "y": 0, "len(str)": 0}, "map", sim, tree,
                                      mapping=_identity(0, "x"), base=(0, 0, b""))


def test_passthrough_sets_string_length(unit_tree: ir.Program) -> None:
    tree, sim = _setup(unit_tree)
    vec = cover.generate_system_witness({"x": 10, "y": 5, "len(str)": 11}, "ranges", sim, tree,
                                        base=(0, 0, b""), passthrough={2: 2})
    assert isinstance(vec[2], bytes) and len(vec[2]) == 11


def test_statically_safe_unit_has_no_findings() -> None:
    p = ir.parse_program("""
func f() {
b0:
  m = CALL malloc(CONST 10)
  CALL strcpy(m, STR "short")
  RET
}

func main() {
b0:
  CALL f()
  RET
}
""")
    tree, sim = _setup(p)
    assert cover.cover(p, tree.unit, tree, sim) == []


def test_unit_tree_findings_confirmed(unit_tree: ir.Program) -> None:
    tree, sim = _setup(unit_tree)
    findings = cover.cover(unit_tree, tree.unit, tree, sim)
    assert {f.site for f in findings} == {("unit", "node2", 0), ("unit", "node4", 0)}
    for f in findings:
        assert f.confirmed
        trace = interp.run(unit_tree, f.system_witness)
        assert ("HeapOverflow", f.site) in trace.event_sites()


def test_deterministic_findings() -> None:
    p = load("complex/auth_heap.mir")
    a = pipeline.analyze_program(p, pipeline.AnalysisConfig(classes=(specs.HEAP,), seed=3))
    b = pipeline.analyze_program(p, pipeline.AnalysisConfig(classes=(specs.HEAP,), seed=3))
    key = lambda r: [(f.site, f.confirmation, f.system_witness, f.unit_witness) for f in r.findings]
    assert key(a) == key(b)


def test_unit_only_when_system_cannot_reach() -> None:
    # the unit is never called with a large enough count from main
    p = ir.parse_program("""
func fill(k: int) {
b0:
  b = CALL malloc(CONST 8)
  s = STR "0123456789abcdef"
  CALL memcpy(b, s, k)
  RET
}

func main(a: int) {
b0:
  CALL fill(CONST 4)
  RET
}
""")
    tree, sim = _setup(p)
    (f,) = cover.cover(p, tree.unit, tree, sim)
    assert f.confirmation == cover.UNIT_ONLY
    assert not f.confirmed


def test_timeout_raises() -> None:
    p = load("figures/unit_tree.mir")
    tree, sim = _setup(p)
    with pytest.raises(cover.AnalysisTimeout):
        cover.cover(p, tree.unit, tree, sim, cover.CoverConfig(deadline=0.0))


def test_pipeline_timeout_discards_findings() -> None:
    r = pipeline.analyze_program(load("figures/unit_tree.mir"), pipeline.AnalysisConfig(timeout_secs=1e-9))
    assert r.timed_out
