"""Deterministic whole-program interpreter with a memory-safety oracle.

The interpreter runs a mini-IR program on concrete system inputs and records
the four memory-corruption events exactly when their runtime condition holds:

* ``HeapOverflow``: a write starting inside a live heap allocation runs past
  its capacity.
* ``StackFrameClobber``: a write starting inside a frame's local area reaches
  that frame's saved frame-base slot.
* ``DoubleFree``: ``free`` on an address whose allocation is no longer live.
* ``UseAfterFree``: a load or store touching a freed allocation.

Heap memory comes from a bump allocator (16-byte aligned, never reused), so
every event is attributable to one allocation.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence, Union

from . import ir

Value = Union[int, bytes]

HEAP_BASE = 0x1000_0000
GLOBAL_BASE = 0x0060_0000
STACK_TOP = 0x7FFF_0000_0000
SAVED_SLOT = 16  # saved frame base + return address above each frame

DEFAULT_STEP_BUDGET = 1_000_000
DEFAULT_CALL_DEPTH = 64
MAX_CSTRING = 4096

EVENT_KINDS = ("HeapOverflow", "StackFrameClobber", "DoubleFree", "UseAfterFree")

_MASK = (1 << 64) - 1


def wrap64(x: int) -> int:
    x &= _MASK
    return x - (1 << 64) if x >> 63 else x


class InterpError(Exception):
    """Runtime failure; ``trace`` holds what was observed before it."""

    def __init__(self, message: str, trace: "ExecutionTrace | None" = None):
        super().__init__(message)
        self.trace = trace


class StepBudgetExceeded(InterpError):
    pass


class InputExhausted(InterpError):
    pass


class CallDepthExceeded(InterpError):
    pass


@dataclass(frozen=True)
class OracleEvent:
    kind: str
    site: ir.Site
    base: int = 0
    capacity: int = 0
    length: int = 0
    address: int = 0


@dataclass
class UnitCall:
    function: str
    args: tuple[Value, ...]
    blocks: list[tuple[str, str]] = field(default_factory=list)


@dataclass
class ExecutionTrace:
    covered_blocks: set[tuple[str, str]] = field(default_factory=set)
    unit_entries: list[UnitCall] = field(default_factory=list)
    oracle_events: list[OracleEvent] = field(default_factory=list)
    output: list[Value] = field(default_factory=list)
    exit_status: str = "ok"
    steps: int = 0

    def event_sites(self, kind: str | None = None) -> set[tuple[str, ir.Site]]:
        return {(e.kind, e.site) for e in self.oracle_events if kind is None or e.kind == kind}

    def first_call(self, function: str) -> UnitCall | None:
        for call in self.unit_entries:
            if call.function == function:
                return call
        return None


@dataclass
class Allocation:
    base: int
    capacity: int
    live: bool = True


@dataclass
class Frame:
    function: ir.Function
    base: int
    temps: dict[str, Value] = field(default_factory=dict)

    @property
    def low(self) -> int:
        return self.base - self.function.frame_size


@dataclass
class MachineState:
    memory: dict[int, int] = field(default_factory=dict)
    heap: dict[int, Allocation] = field(default_factory=dict)
    heap_top: int = HEAP_BASE
    frames: list[Frame] = field(default_factory=list)
    registers: dict[int, int] = field(default_factory=dict)
    globals: dict[str, int] = field(default_factory=dict)

    def find_alloc(self, addr: int) -> Allocation | None:
        # allocations never overlap and are never reused; scan newest first
        for alloc in reversed(self.heap.values()):
            if alloc.base <= addr < alloc.base + max(alloc.capacity, 1):
                return alloc
        return None

    def find_frame(self, addr: int) -> Frame | None:
        for frame in reversed(self.frames):
            if frame.low <= addr < frame.base:
                return frame
        return None


class Interpreter:
    def __init__(
        self,
        program: ir.Program,
        inputs: Sequence[Value],
        *,
        step_budget: int = DEFAULT_STEP_BUDGET,
        max_depth: int = DEFAULT_CALL_DEPTH,
        watch: frozenset[str] | set[str] = frozenset(),
        max_watched_calls: int = 64,
        on_input=None,
    ):
        self.program = program
        self.inputs = list(inputs)
        self.input_pos = 0
        self.step_budget = step_budget
        self.max_depth = max_depth
        self.watch = watch
        self.max_watched_calls = max_watched_calls
        self.on_input = on_input
        self.state = MachineState()
        self.trace = ExecutionTrace()
        self._active: list[UnitCall] = []
        self._site: ir.Site = ("", "", 0)
        for i, (name, value) in enumerate(program.globals):
            addr = GLOBAL_BASE + 8 * i
            self.state.globals[name] = addr
            self._write_bytes(addr, wrap64(value).to_bytes(8, "little", signed=True))

    # -- inputs -------------------------------------------------------------

    def _next_input(self, kind: str) -> Value:
        if self.input_pos >= len(self.inputs):
            if self.on_input is None:
                raise InputExhausted(f"program requested input #{self.input_pos + 1} ({kind})")
            value = self.on_input(kind, self.input_pos)
        else:
            value = self.inputs[self.input_pos]
            if self.on_input is not None:
                self.on_input(kind, self.input_pos)
        self.input_pos += 1
        if kind == "int":
            if not isinstance(value, int):
                raise InterpError(f"input #{self.input_pos} must be an int")
            return wrap64(value)
        if isinstance(value, str):
            value = value.encode()
        if not isinstance(value, bytes):
            raise InterpError(f"input #{self.input_pos} must be a string")
        return value

    # -- memory -------------------------------------------------------------

    def _event(self, kind: str, **details) -> None:
        self.trace.oracle_events.append(OracleEvent(kind, self._site, **details))

    def _check_access(self, addr: int, length: int, is_write: bool) -> None:
        if length <= 0:
            return
        alloc = self.state.find_alloc(addr)
        if alloc is not None:
            if not alloc.live:
                self._event("UseAfterFree", base=alloc.base, capacity=alloc.capacity, length=length, address=addr)
            elif is_write and addr + length > alloc.base + alloc.capacity:
                self._event("HeapOverflow", base=alloc.base, capacity=alloc.capacity, length=length, address=addr)
            return
        if is_write:
            frame = self.state.find_frame(addr)
            if frame is not None and addr + length > frame.base:
                self._event(
                    "StackFrameClobber",
                    base=frame.base,
                    capacity=frame.base - addr,
                    length=length,
                    address=addr,
                )

    def _write_bytes(self, addr: int, data: bytes) -> None:
        mem = self.state.memory
        for i, b in enumerate(data):
            mem[(addr + i) & _MASK] = b

    def _read_bytes(self, addr: int, n: int) -> bytes:
        mem = self.state.memory
        return bytes(mem.get((addr + i) & _MASK, 0) for i in range(n))

    def store(self, addr: int, data: bytes) -> None:
        self._check_access(addr, len(data), True)
        self._write_bytes(addr, data)

    def load(self, addr: int, size: int) -> int:
        self._check_access(addr, size, False)
        return int.from_bytes(self._read_bytes(addr, size), "little", signed=(size == 8))

    def read_cstring(self, addr: int) -> bytes:
        out = bytearray()
        while len(out) < MAX_CSTRING:
            b = self.state.memory.get((addr + len(out)) & _MASK, 0)
            if b == 0:
                break
            out.append(b)
        self._check_access(addr, len(out) + 1, False)
        return bytes(out)

    # -- evaluation ---------------------------------------------------------

    def eval(self, e: ir.Expr, frame: Frame) -> Value:
        if isinstance(e, ir.Const):
            return wrap64(e.value)
        if isinstance(e, ir.ConstStr):
            return e.data
        if isinstance(e, ir.Tmp):
            try:
                return frame.temps[e.name]
            except KeyError:
                raise InterpError(f"read of unassigned temporary {e.name}", self.trace) from None
        if isinstance(e, ir.Get):
            return self.state.registers.get(e.reg, 0)
        if isinstance(e, ir.GlobalAddr):
            return self.state.globals[e.name]
        if isinstance(e, ir.Load):
            return self.load(self._int(self.eval(e.addr, frame)), e.size)
        if isinstance(e, ir.StrLen):
            v = self.eval(e.arg, frame)
            return len(v) if isinstance(v, bytes) else len(self.read_cstring(v))
        if isinstance(e, ir.Unop):
            a = self._int(self.eval(e.arg, frame))
            return int(a == 0) if e.op == "Not1" else wrap64(-a)
        if isinstance(e, ir.Binop):
            a = self._int(self.eval(e.lhs, frame))
            b = self._int(self.eval(e.rhs, frame))
            op = e.op
            if op == "Add64":
                return wrap64(a + b)
            if op == "Sub64":
                return wrap64(a - b)
            if op == "Mul64":
                return wrap64(a * b)
            if op == "CmpEQ64":
                return int(a == b)
            if op == "CmpNE64":
                return int(a != b)
            if op == "CmpLT64s":
                return int(a < b)
            if op == "CmpLE64s":
                return int(a <= b)
        raise InterpError(f"cannot evaluate {e!r}", self.trace)

    def _int(self, v: Value) -> int:
        if not isinstance(v, int):
            raise InterpError("expected a 64-bit word, got a string", self.trace)
        return v

    # -- execution ----------------------------------------------------------

    def run(self) -> ExecutionTrace:
        entry = self.program.functions[self.program.entry]
        args = [self._next_input(kind) for _, kind in entry.params]
        try:
            self.call(entry, args, depth=0)
        except InterpError as exc:
            exc.trace = self.trace
            self.trace.exit_status = type(exc).__name__
            raise
        return self.trace

    def call(self, fn: ir.Function, args: Sequence[Value], depth: int) -> Value | None:
        if depth >= self.max_depth:
            raise CallDepthExceeded(f"call depth {self.max_depth} exceeded in {fn.name}")
        st = self.state
        caller_low = st.frames[-1].low if st.frames else STACK_TOP
        base = caller_low - SAVED_SLOT
        frame = Frame(fn, base, dict(zip(fn.param_names, args)))
        saved_fb = st.registers.get(ir.FRAME_REG, 0)
        st.registers[ir.FRAME_REG] = base
        st.frames.append(frame)
        record = None
        if fn.name in self.watch:
            n_calls = sum(1 for c in self.trace.unit_entries if c.function == fn.name)
            if n_calls < self.max_watched_calls:
                record = UnitCall(fn.name, tuple(args))
                self.trace.unit_entries.append(record)
                self._active.append(record)
        try:
            return self._exec_body(fn, frame, depth)
        finally:
            if record is not None:
                self._active.remove(record)
            st.frames.pop()
            st.registers[ir.FRAME_REG] = saved_fb

    def _exec_body(self, fn: ir.Function, frame: Frame, depth: int) -> Value | None:
        label = fn.entry_block
        trace = self.trace
        while True:
            trace.covered_blocks.add((fn.name, label))
            for rec in self._active:
                rec.blocks.append((fn.name, label))
            block = fn.blocks[label]
            for idx, s in enumerate(block.stmts):
                trace.steps += 1
                if trace.steps > self.step_budget:
                    raise StepBudgetExceeded(f"step budget {self.step_budget} exhausted")
                self._site = (fn.name, label, idx)
                if isinstance(s, ir.WrTmp):
                    frame.temps[s.tmp] = self.eval(s.expr, frame)
                elif isinstance(s, ir.Store):
                    addr = self._int(self.eval(s.addr, frame))
                    data = self.eval(s.data, frame)
                    if s.size is ir.LEN:
                        if not isinstance(data, bytes):
                            raise InterpError("STORE with LEN needs a string value", trace)
                        self.store(addr, data)
                    else:
                        word = self._int(data)
                        self.store(addr, (word & ((1 << (8 * s.size)) - 1)).to_bytes(s.size, "little"))
                elif isinstance(s, ir.Put):
                    st_val = self._int(self.eval(s.expr, frame))
                    self.state.registers[s.reg] = st_val
                elif isinstance(s, ir.Call):
                    args = [self.eval(a, frame) for a in s.args]
                    if s.target in ir.INTRINSICS:
                        result = self.intrinsic(s.target, args)
                    else:
                        result = self.call(self.program.functions[s.target], args, depth + 1)
                        self._site = (fn.name, label, idx)
                    if s.result is not None:
                        frame.temps[s.result] = 0 if result is None else result
                elif isinstance(s, ir.Branch):
                    cond = self._int(self.eval(s.cond, frame))
                    label = s.then if cond != 0 else s.orelse
                    break
                elif isinstance(s, ir.Jump):
                    label = s.target
                    break
                elif isinstance(s, ir.Ret):
                    return None if s.value is None else self.eval(s.value, frame)
            else:
                raise InterpError(f"fell off the end of block {fn.name}:{label}", trace)

    def intrinsic(self, name: str, args: list[Value]) -> Value | None:
        st = self.state
        if name == "malloc":
            size = self._int(args[0])
            if size < 0:
                raise InterpError("malloc with negative size", self.trace)
            base = st.heap_top
            st.heap[base] = Allocation(base, size)
            st.heap_top += max(16, (size + 15) // 16 * 16)
            return base
        if name == "free":
            addr = self._int(args[0])
            if addr == 0:
                return None
            alloc = st.find_alloc(addr)
            if alloc is None:
                raise InterpError(f"free of unallocated address {addr:#x}", self.trace)
            if not alloc.live:
                self._event("DoubleFree", base=alloc.base, capacity=alloc.capacity, address=addr)
            alloc.live = False
            return None
        if name == "memcpy":
            dst, src, n = self._int(args[0]), args[1], self._int(args[2])
            if n < 0:
                raise InterpError("memcpy with negative length", self.trace)
            if isinstance(src, bytes):
                data = (src + bytes(max(0, n - len(src))))[:n]
            else:
                self._check_access(src, n, False)
                data = self._read_bytes(src, n)
            self.store(dst, data)
            return None
        if name == "strcpy":
            dst, src = self._int(args[0]), args[1]
            data = src if isinstance(src, bytes) else self.read_cstring(src)
            self.store(dst, data)
            return None
        if name == "strlen":
            src = args[0]
            return len(src) if isinstance(src, bytes) else len(self.read_cstring(src))
        if name == "input_int":
            return self._next_input("int")
        if name == "input_str":
            return self._next_input("str")
        if name == "print":
            self.trace.output.append(args[0])
            return None
        raise InterpError(f"unknown intrinsic {name}", self.trace)


def run(
    program: ir.Program,
    inputs: Sequence[Value],
    *,
    step_budget: int = DEFAULT_STEP_BUDGET,
    max_depth: int = DEFAULT_CALL_DEPTH,
    watch: set[str] | frozenset[str] = frozenset(),
) -> ExecutionTrace:
    """Execute ``program`` from its entry on ``inputs``; raise InterpError subclasses on failure."""
    return Interpreter(program, inputs, step_budget=step_budget, max_depth=max_depth, watch=watch).run()


def run_lenient(program: ir.Program, inputs: Sequence[Value], **kw) -> tuple[ExecutionTrace, str | None]:
    """Like :func:`run` but return the partial trace and an error name instead of raising."""
    try:
        return run(program, inputs, **kw), None
    except InterpError as exc:
        trace = exc.trace or ExecutionTrace(exit_status=type(exc).__name__)
        return trace, f"{type(exc).__name__}: {exc}"


def monitor_unit(
    program: ir.Program, unit: str, inputs: Sequence[Value], **kw
) -> tuple[tuple[Value, ...] | None, list[tuple[str, str]]]:
    """Argument vector and block trace of the first dynamic call to ``unit``."""
    if unit not in program.functions:
        raise KeyError(unit)
    trace = run(program, inputs, watch={unit}, **kw)
    call = trace.first_call(unit)
    if call is None:
        return None, []
    return call.args, list(call.blocks)


def input_signature(program: ir.Program, *, probes: int = 3) -> list[str]:
    """Kinds ('int' / 'str') of the system inputs the program consumes, in order.

    Found by running the program with on-demand default inputs; the longest
    observed consumption across a few probe values wins.
    """
    best: list[str] = []
    defaults = [(0, b""), (1, b"a"), (64, b"a" * 64)]
    for int_val, str_val in defaults[:probes]:
        kinds: list[str] = []

        def provide(kind: str, pos: int, kinds=kinds, iv=int_val, sv=str_val) -> Value:
            kinds.append(kind)
            return iv if kind == "int" else sv

        interp = Interpreter(program, [], on_input=provide, step_budget=100_000)
        try:
            interp.run()
        except InterpError:
            pass
        if len(kinds) > len(best):
            best = kinds
    return best
