from __future__ import annotations

import logging
from pathlib import Path

import pytest

from unitsym import interp, ir, specs

from conftest import CLASS_DIRS, corpus_programs, load


def test_builtin_specs_shapes() -> None:
    by_class = {s.vclass: s for s in specs.builtin_specs()}
    assert set(by_class) == set(specs.CLASSES)
    assert [e.kind for e in by_class[specs.HEAP].events] == ["malloc", "store"]
    assert [e.kind for e in by_class[specs.STACK].events] == ["get_fb", "add_fb", "store"]
    assert [e.kind for e in by_class[specs.DF].events] == ["malloc", "free", "free"]
    assert [e.kind for e in by_class[specs.UAF].events] == ["malloc", "free", "use"]


def test_rules_bind_only_earlier_containers() -> None:
    for spec in specs.builtin_specs():
        bound: set[str] = set()
        for ev in spec.events:
            bound |= set(ev.binds)
            if ev.rule is not None:
                mentioned = {w.strip("(),|") for w in ev.rule.text.split() if w.strip("(),|").startswith("CONT")}
                mentioned |= {w[4:-1] for w in ev.rule.text.split() if w.startswith("len(")}
                assert {m for m in mentioned if m.startswith("CONT")} <= bound


def test_heap_rule_capacity_10_source_11() -> None:
    rule = specs.spec_for("heap").rules["Rule1"]
    assert rule.holds({"CONT1": 4096, "CONT2": 10, "CONT3": 4096, "CONT4": b"A" * 11})
    assert not rule.holds({"CONT1": 4096, "CONT2": 10, "CONT3": 4096, "CONT4": b"A" * 10})


def test_stack_rule_offset_32() -> None:
    spec = specs.spec_for("stack")
    base = 0x7000
    assert spec.rules["Rule1"].holds({"CONT1": base, "CONT2": base, "CONT3": -32})
    bound = {"CONT1": base, "CONT2": base, "CONT3": -32, "CONT4": base - 32, "CONT5": base - 32}
    assert spec.rules["Rule2"].holds({**bound, "CONT6": b"A" * 33})
    assert not spec.rules["Rule2"].holds({**bound, "CONT6": b"A" * 32})


def test_double_free_needs_two_frees() -> None:
    spec = specs.spec_for("df")
    once = [("malloc", {"CONT1": 64, "CONT2": 8}), ("free", {"CONT3": 64})]
    assert spec.match_sequence(once) is None
    twice = once + [("free", {"CONT4": 64})]
    assert spec.match_sequence(twice) == {"CONT1": 64, "CONT2": 8, "CONT3": 64, "CONT4": 64}


def test_double_free_of_other_buffer_no_match() -> None:
    spec = specs.spec_for("df")
    seq = [("malloc", {"CONT1": 64, "CONT2": 8}), ("free", {"CONT3": 64}), ("free", {"CONT4": 128})]
    assert spec.match_sequence(seq) is None


def test_use_after_free_accepts_load_or_store() -> None:
    spec = specs.spec_for("uaf")
    head = [("malloc", {"CONT1": 64, "CONT2": 8}), ("free", {"CONT3": 64})]
    assert spec.match_sequence(head + [("load", {"CONT4": 68})]) is not None
    assert spec.match_sequence(head + [("store", {"CONT5": 64})]) is not None
    assert spec.match_sequence([head[0], ("load", {"CONT4": 64}), head[1]]) is None


def test_free_chain_unit_is_parent(free_chain: ir.Program) -> None:
    units = specs.extract_test_units(free_chain, specs.spec_for("df"))
    assert [u.function for u in units] == ["parent"]
    assert units[0].site_set == {("parent", "entry", 2)}


def test_free_chain_carriers_span_three_functions(free_chain: ir.Program) -> None:
    fact = specs.trace_buffer(free_chain, ("child1", "entry", 0))
    assert fact.capacity == 10
    assert {f for f, _ in fact.carriers} == {"child1", "child2", "parent"}


def test_local_buffer_single_carrier() -> None:
    p = ir.parse_program("""
func main() {
b0:
  b = CALL malloc(CONST 4)
  STORE(b, CONST 1, 1)
  RET
}
""")
    fact = specs.trace_buffer(p, ("main", "b0", 0))
    assert fact.carriers == frozenset({("main", "b")})


def test_unknown_capacity_is_skipped(caplog: pytest.LogCaptureFixture) -> None:
    p = ir.parse_program("""
func main(n: int) {
b0:
  b = CALL malloc(n)
  STORE(b, CONST 1, 8)
  RET
}
""")
    with pytest.raises(specs.UnknownCapacity):
        specs.trace_buffer(p, ("main", "b0", 0))
    with caplog.at_level(logging.WARNING, logger="unitsym.specs"):
        assert specs.heap_facts(p) == []
    assert "non-constant length" in caplog.text


def test_unit_tree_two_suspicious_sites(unit_tree: ir.Program) -> None:
    units = specs.extract_test_units(unit_tree, specs.spec_for("heap"))
    assert len(units) == 1
    assert units[0].function == "unit"
    assert units[0].site_set == {("unit", "node2", 0), ("unit", "node4", 0)}


def test_no_buffers_no_units() -> None:
    p = ir.parse_program("func main(x: int) {\nb0:\n  y = Add64(x, CONST 1)\n  RET y\n}")
    for spec in specs.builtin_specs():
        assert specs.extract_test_units(p, spec) == []


def test_frame_offset_32(frame_program: ir.Program) -> None:
    (fact,) = specs.estimate_stack_buffer(frame_program, "copy")
    assert fact.frame_offset == -32
    assert fact.max_len == 32


def test_two_locals() -> None:
    p = ir.parse_program("""
func f(s: str) frame 48 {
b0:
  fb = GET(20)
  a = Add64(fb, CONST -32)
  b = Add64(fb, CONST -48)
  CALL strcpy(a, s)
  STORE(b, CONST 0, 8)
  RET
}
""")
    facts = specs.estimate_stack_buffer(p, "f")
    assert [(f.frame_offset, f.max_len) for f in facts] == [(-32, 32), (-48, 48)]


def test_no_frame_addressing() -> None:
    p = ir.parse_program("func main() { b0: RET }")
    assert specs.estimate_stack_buffer(p, "main") == []


@pytest.mark.parametrize("path", corpus_programs(), ids=lambda p: f"{p.parent.name}/{p.stem}")
def test_stack_length_rule(path: Path) -> None:
    p = ir.load_program(path)
    for fact in specs.stack_facts(p):
        assert fact.max_len == -fact.frame_offset > 0


def test_caller_buffer_written_by_callee() -> None:
    p = load("stack/callee_copy.mir")
    units = {u.function: u for u in specs.extract_test_units(p, specs.spec_for("stack"))}
    assert set(units) == {"put_user", "put_const"}
    assert units["put_user"].param_facts["dst"].frame_offset == -16


def test_order_respected() -> None:
    # the second free precedes the first on every path: not a double free sequence
    p = ir.parse_program("""
func main() {
b0:
  p = CALL malloc(CONST 8)
  CALL free(p)
  RET
}
""")
    assert specs.extract_test_units(p, specs.spec_for("df")) == []


def test_use_before_free_only() -> None:
    p = ir.parse_program("""
func main() {
b0:
  p = CALL malloc(CONST 8)
  w = LOAD(p, 8)
  CALL free(p)
  RET
}
""")
    assert specs.extract_test_units(p, specs.spec_for("uaf")) == []


@pytest.mark.parametrize("path", corpus_programs(*CLASS_DIRS, "complex", "figures"), ids=lambda p: f"{p.parent.name}/{p.stem}")
def test_oracle_sites_inside_units(path: Path) -> None:
    """Every event the interpreter raises on a small grid lies at an extracted suspicious site."""
    p = ir.load_program(path)
    sites: dict[str, set[ir.Site]] = {}
    for spec in specs.builtin_specs():
        kind = specs.ORACLE_KIND[spec.vclass]
        sites[kind] = set().union(*(u.site_set for u in specs.extract_test_units(p, spec)), set())
    kinds = interp.input_signature(p)
    ints = [-300, -64, 0, 3, 7, 12, 42, 64, 256, 400]
    lens = [0, 4, 5, 11, 17, 33, 49, 70]
    for k in range(60):
        vec = [ints[(k * (i + 3)) % len(ints)] if kind == "int" else b"A" * lens[(k * (i + 1)) % len(lens)]
               for i, kind in enumerate(kinds)]
        trace, _ = interp.run_lenient(p, vec)
        for kind, site in trace.event_sites():
            assert site in sites[kind], (vec, kind, site)


def test_format_units(unit_tree: ir.Program) -> None:
    text = specs.format_units(specs.extract_test_units(unit_tree, specs.spec_for("heap")))
    assert "unit: unit" in text and "site: unit node2 0" in text
