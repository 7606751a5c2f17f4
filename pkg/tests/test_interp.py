from __future__ import annotations

import pytest
from hypothesis import given, settings, strategies as st

from unitsym import interp, ir

from conftest import load


def _program(body: str) -> ir.Program:
    return ir.parse_program(body)


def test_unit_tree_heap_overflow_at_node2(unit_tree: ir.Program) -> None:
    trace = interp.run(unit_tree, [10, 5, b"A" * 11])
    assert trace.event_sites() == {("HeapOverflow", ("unit", "node2", 0))}
    (ev,) = trace.oracle_events
    assert (ev.capacity, ev.length) == (10, 11)


def test_unit_tree_exact_fit_is_clean(unit_tree: ir.Program) -> None:
    assert interp.run(unit_tree, [10, 5, b"A" * 10]).oracle_events == []


def test_unit_tree_constant_message_overflows(unit_tree: ir.Program) -> None:
    trace = interp.run(unit_tree, [3, 0, b""])
    assert trace.event_sites() == {("HeapOverflow", ("unit", "node4", 0))}


def test_frame_base_reached_only_past_buffer(frame_program: ir.Program) -> None:
    assert interp.run(frame_program, [b"A" * 32]).oracle_events == []
    trace = interp.run(frame_program, [b"A" * 33])
    assert trace.event_sites() == {("StackFrameClobber", ("copy", "entry", 2))}


def test_double_free_at_second_release(free_chain: ir.Program) -> None:
    trace = interp.run(free_chain, [])
    assert trace.event_sites() == {("DoubleFree", ("parent", "entry", 2))}


def test_use_after_free_on_load_and_store() -> None:
    p = _program("""
func main(v: int) {
b0:
  p = CALL malloc(CONST 8)
  CALL free(p)
  w = LOAD(p, 8)
  STORE(p, v, 8)
  RET
}
""")
    trace = interp.run(p, [1])
    assert trace.event_sites() == {("UseAfterFree", ("main", "b0", 2)), ("UseAfterFree", ("main", "b0", 3))}


def test_free_of_null_is_noop() -> None:
    p = _program("func main() {\nb0:\n  CALL free(CONST 0)\n  CALL free(CONST 0)\n  RET\n}")
    assert interp.run(p, []).oracle_events == []


def test_allocations_are_aligned_and_disjoint() -> None:
    p = _program("""
func main() {
b0:
  a = CALL malloc(CONST 5)
  b = CALL malloc(CONST 17)
  c = CALL malloc(CONST 0)
  CALL print(a)
  CALL print(b)
  CALL print(c)
  RET
}
""")
    a, b, c = interp.run(p, []).output
    assert all(x % 16 == 0 for x in (a, b, c))
    assert a + 5 <= b and b + 17 <= c


def test_step_budget() -> None:
    p = _program("func main() {\nb0:\n  JMP b0\n}")
    with pytest.raises(interp.StepBudgetExceeded):
        interp.run(p, [], step_budget=1000)


def test_input_exhausted(unit_tree: ir.Program) -> None:
    with pytest.raises(interp.InputExhausted):
        interp.run(unit_tree, [1])


def test_lenient_run_reports_error(unit_tree: ir.Program) -> None:
    trace, err = interp.run_lenient(unit_tree, [1])
    assert err is not None and err.startswith("InputExhausted")


def test_monitor_unit_outer_guard_fails() -> None:
    p = load("complex/auth_heap.mir")
    args, blocks = interp.monitor_unit(p, "signup", [b"ab", b"secret", 5, 0])
    assert args is None and blocks == []


def test_monitor_unit_guard_holds() -> None:
    p = load("complex/auth_heap.mir")
    args, blocks = interp.monitor_unit(p, "signup", [b"alice", b"secret", 5, 0])
    assert args == (b"alice", b"secret", 5)
    assert blocks[0] == ("signup", "entry")


def test_monitor_unit_entry_function(unit_tree: ir.Program) -> None:
    args, _ = interp.monitor_unit(unit_tree, "main", [4, 9, b"xy"])
    assert args == (4, 9, b"xy")


def test_input_signature(unit_tree: ir.Program) -> None:
    assert interp.input_signature(unit_tree) == ["int", "int", "str"]
    assert interp.input_signature(load("complex/auth_uaf.mir")) == ["str", "str", "int", "int"]


def test_wrap64() -> None:
    assert interp.wrap64(2**63) == -(2**63)
    assert interp.wrap64(-1) == -1


@settings(max_examples=60, deadline=None)
@given(st.integers(-100, 100), st.integers(-100, 100), st.binary(max_size=30))
def test_runs_are_deterministic(x: int, y: int, s: bytes) -> None:
    p = load("figures/unit_tree.mir")
    a = interp.run(p, [x, y, s], watch={"unit"})
    b = interp.run(p, [x, y, s], watch={"unit"})
    assert a == b


@settings(max_examples=60, deadline=None)
@given(st.integers(-100, 100), st.integers(-100, 100), st.integers(0, 30))
def test_heap_event_iff_overflowing_copy(x: int, y: int, n: int) -> None:
    p = load("figures/unit_tree.mir")
    trace = interp.run(p, [x, y, b"B" * n])
    expected = set()
    if x < 10:
        expected.add(("HeapOverflow", ("unit", "node4", 0)))
    elif x - y == 5 and n > 10:
        expected.add(("HeapOverflow", ("unit", "node2", 0)))
    assert trace.event_sites() == expected
