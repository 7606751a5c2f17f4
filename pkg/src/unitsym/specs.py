"""Vulnerability specifications and static test-unit extraction.

Each vulnerability class is an ordered sequence of events.  An event names a
statement shape, binds containers (``CONT1``, ``CONT2``, ...) to locations in
that statement, and may carry a rule over the containers bound so far.

Test units are found statically.  A flow-insensitive, context-insensitive
pointer analysis follows buffer addresses through temporaries, frame slots,
globals, call arguments and return values; buffers are either heap
allocations with a constant size or frame-relative stack areas
``GET(20) + x`` with ``x < 0`` whose maximum length is ``|x|``.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, Iterable, Mapping, Sequence

from . import ir

log = logging.getLogger(__name__)

HEAP, STACK, DF, UAF = "HeapOverflow", "StackOverflow", "DoubleFree", "UseAfterFree"
CLASSES = (HEAP, STACK, UAF, DF)
CLASS_ALIASES = {"heap": HEAP, "stack": STACK, "uaf": UAF, "df": DF}
ORACLE_KIND = {HEAP: "HeapOverflow", STACK: "StackFrameClobber", DF: "DoubleFree", UAF: "UseAfterFree"}

COPY_INTRINSICS = ("strcpy", "memcpy")


class UnknownCapacity(Exception):
    pass


# --------------------------------------------------------------------------
# Specifications


@dataclass(frozen=True)
class Rule:
    name: str
    text: str
    predicate: Callable[[Mapping[str, object]], bool] = field(compare=False)

    def holds(self, bindings: Mapping[str, object]) -> bool:
        return bool(self.predicate(bindings))


def _len(v: object) -> int:
    return len(v) if isinstance(v, (bytes, str)) else int(v)  # type: ignore[arg-type]


@dataclass(frozen=True)
class Event:
    kind: str  # malloc | free | store | load | use | get_fb | add_fb
    pattern: str
    binds: tuple[str, ...]
    rule: Rule | None = None


@dataclass(frozen=True)
class VulnSpec:
    vclass: str
    events: tuple[Event, ...]

    @property
    def rules(self) -> dict[str, Rule]:
        return {e.rule.name: e.rule for e in self.events if e.rule is not None}

    @property
    def final_event(self) -> Event:
        return self.events[-1]

    def match_sequence(self, observed: Sequence[tuple[str, Mapping[str, object]]]) -> dict[str, object] | None:
        """Match concrete (kind, bindings) observations against the ordered events.

        Events are matched as an ordered subsequence; a later observation only
        matches when its rule holds over all containers bound so far.  Returns
        the final container bindings, or None when the sequence is incomplete.
        """
        return _match_from(self.events, 0, observed, 0, {})


def _kind_matches(event_kind: str, observed_kind: str) -> bool:
    if event_kind == "use":
        return observed_kind in ("load", "store")
    return event_kind == observed_kind


def _match_from(events, ei, observed, oi, bound):
    if ei == len(events):
        return bound
    ev = events[ei]
    for j in range(oi, len(observed)):
        kind, values = observed[j]
        if not _kind_matches(ev.kind, kind):
            continue
        names = ev.binds if ev.kind != "use" else (("CONT4",) if kind == "load" else ("CONT5",))
        if not all(n in values for n in names):
            continue
        trial = dict(bound)
        trial.update({n: values[n] for n in names})
        rule = ev.rule
        if ev.kind == "use":
            rule = _uaf_rules()[0 if kind == "load" else 1]
        if rule is not None and not rule.holds(trial):
            continue
        result = _match_from(events, ei + 1, observed, j + 1, trial)
        if result is not None:
            return result
    return None


def _in_buffer(ptr: str) -> Callable[[Mapping[str, object]], bool]:
    def pred(c: Mapping[str, object]) -> bool:
        base, size, p = int(c["CONT1"]), int(c["CONT2"]), int(c[ptr])  # type: ignore[arg-type]
        return base <= p < base + size
    return pred


def _uaf_rules() -> tuple[Rule, Rule]:
    return (
        Rule("Rule2", "CONT1 <= CONT4 < CONT1 + CONT2", _in_buffer("CONT4")),
        Rule("Rule3", "CONT1 <= CONT5 < CONT1 + CONT2", _in_buffer("CONT5")),
    )


def builtin_specs() -> list[VulnSpec]:
    malloc = Event("malloc", "CONT1 = malloc(CONT2)", ("CONT1", "CONT2"))
    heap = VulnSpec(HEAP, (
        malloc,
        Event(
            "store", "STle(CONT3) = CONT4", ("CONT3", "CONT4"),
            Rule(
                "Rule1", "CONT1 <= CONT3 < CONT1 + CONT2 ∧ len(CONT4) > CONT2",
                lambda c: _in_buffer("CONT3")(c) and _len(c["CONT4"]) > int(c["CONT2"]),  # type: ignore[arg-type]
            ),
        ),
    ))
    stack = VulnSpec(STACK, (
        Event("get_fb", "CONT1 = GET:I64(20)", ("CONT1",)),
        Event(
            "add_fb", "CONT4 = Add64(CONT2, CONT3)", ("CONT2", "CONT3", "CONT4"),
            Rule("Rule1", "CONT1 == CONT2 ∧ CONT3 < 0",
                 lambda c: c["CONT1"] == c["CONT2"] and int(c["CONT3"]) < 0),  # type: ignore[arg-type]
        ),
        Event(
            "store", "STle(CONT5) = CONT6", ("CONT5", "CONT6"),
            Rule(
                "Rule2", "CONT4 <= CONT5 < CONT2 ∧ len(CONT6) > |CONT3|",
                lambda c: int(c["CONT4"]) <= int(c["CONT5"]) < int(c["CONT2"])  # type: ignore[arg-type]
                and _len(c["CONT6"]) > abs(int(c["CONT3"])),  # type: ignore[arg-type]
            ),
        ),
    ))
    df = VulnSpec(DF, (
        malloc,
        Event("free", "free(CONT3)", ("CONT3",), Rule("Rule1", "CONT1 <= CONT3 < CONT1 + CONT2", _in_buffer("CONT3"))),
        Event("free", "free(CONT4)", ("CONT4",), Rule("Rule2", "CONT1 <= CONT4 < CONT1 + CONT2", _in_buffer("CONT4"))),
    ))
    uaf = VulnSpec(UAF, (
        malloc,
        Event("free", "free(CONT3)", ("CONT3",), Rule("Rule1", "CONT1 <= CONT3 < CONT1 + CONT2", _in_buffer("CONT3"))),
        Event("use", "Not_Imp = LDle:I64(CONT4) | STle(CONT5) = Not_Imp", ("CONT4", "CONT5")),
    ))
    return [heap, stack, df, uaf]


def spec_for(vclass: str) -> VulnSpec:
    vclass = CLASS_ALIASES.get(vclass, vclass)
    for spec in builtin_specs():
        if spec.vclass == vclass:
            return spec
    raise KeyError(vclass)


# --------------------------------------------------------------------------
# Pointer analysis
#
# Abstract values: ("int", c) for a known constant, ("ptr", key, delta) for an
# address ``delta`` bytes into the object named by key.  Keys:
#   ("heap", site)        malloc result
#   ("stack", fn, x)      frame buffer starting at GET(20) + x, x < 0
#   ("fb", fn)            raw frame base of fn
#   ("global", name)      global cell
# delta None means unknown offset.

_WIDEN = 16


def _shift(v: tuple, c: int | None) -> tuple | None:
    if v[0] == "int":
        if v[1] is None or c is None:
            return ("int", None)
        return ("int", v[1] + c)
    key, delta = v[1], v[2]
    if delta is None or c is None:
        return ("ptr", key, None)
    if key[0] == "fb":
        off = delta + c
        if off < 0:
            return ("ptr", ("stack", key[1], off), 0)
        return ("ptr", key, off)
    return ("ptr", key, delta + c)


def _cell(v: tuple) -> tuple | None:
    """Memory cell addressed by an abstract pointer."""
    if v[0] != "ptr" or v[2] is None:
        return None
    key, delta = v[1], v[2]
    if key[0] == "stack":
        return ("frame", key[1], key[2] + delta)
    if key[0] == "fb":
        return ("frame", key[1], delta)
    return (key, delta)


class PointerAnalysis:
    def __init__(self, program: ir.Program):
        self.p = program
        self.tmps: dict[tuple[str, str], set[tuple]] = {}
        self.cells: dict[tuple, set[tuple]] = {}
        self.rets: dict[str, set[tuple]] = {}
        self.malloc_sites: list[ir.Site] = []
        for fname, fn in program.functions.items():
            for label, idx, s in fn.statements():
                if isinstance(s, ir.Call) and s.target == "malloc":
                    self.malloc_sites.append((fname, label, idx))
        self._solve()

    def _add(self, table: dict, key, values: Iterable[tuple]) -> bool:
        cur = table.setdefault(key, set())
        before = set(cur)
        cur.update(values)
        if len(cur) > _WIDEN:
            cur.update(("int", None) if v[0] == "int" else ("ptr", v[1], None) for v in list(cur))
        # values subsumed by a widened entry are dropped so the set cannot regrow
        wide = {v[:-1] for v in cur if v[-1] is None}
        if wide:
            cur.difference_update([v for v in cur if v[-1] is not None and v[:-1] in wide])
        return cur != before

    def eval(self, fname: str, e: ir.Expr) -> set[tuple]:
        if isinstance(e, ir.Const):
            return {("int", e.value)}
        if isinstance(e, ir.Tmp):
            return set(self.tmps.get((fname, e.name), ()))
        if isinstance(e, ir.Get):
            return {("ptr", ("fb", fname), 0)} if e.reg == ir.FRAME_REG else set()
        if isinstance(e, ir.GlobalAddr):
            return {("ptr", ("global", e.name), 0)}
        if isinstance(e, ir.Load):
            out: set[tuple] = set()
            for v in self.eval(fname, e.addr):
                cell = _cell(v)
                if cell is not None:
                    out |= self.cells.get(cell, set())
            return out
        if isinstance(e, ir.Binop) and e.op in ("Add64", "Sub64"):
            lhs, rhs = self.eval(fname, e.lhs), self.eval(fname, e.rhs)
            sign = 1 if e.op == "Add64" else -1
            out = set()
            for a in lhs:
                for b in rhs:
                    if a[0] == "ptr" and b[0] == "int":
                        r = _shift(a, None if b[1] is None else sign * b[1])
                    elif a[0] == "int" and b[0] == "ptr" and sign == 1:
                        r = _shift(b, a[1])
                    elif a[0] == "int" and b[0] == "int":
                        r = _shift(a, None if b[1] is None else sign * b[1])
                    else:
                        r = None
                    if r is not None:
                        out.add(r)
            return out
        return set()

    def _solve(self) -> None:
        changed = True
        p = self.p
        while changed:
            changed = False
            for fname, fn in p.functions.items():
                for label, idx, s in fn.statements():
                    if isinstance(s, ir.WrTmp):
                        changed |= self._add(self.tmps, (fname, s.tmp), self.eval(fname, s.expr))
                    elif isinstance(s, ir.Store) and s.size == 8:
                        data = self.eval(fname, s.data)
                        for v in self.eval(fname, s.addr):
                            cell = _cell(v)
                            if cell is not None and data:
                                changed |= self._add(self.cells, cell, data)
                    elif isinstance(s, ir.Call):
                        if s.target == "malloc" and s.result:
                            changed |= self._add(self.tmps, (fname, s.result), {("ptr", ("heap", (fname, label, idx)), 0)})
                        elif s.target in p.functions:
                            callee = p.functions[s.target]
                            for (pname, _), arg in zip(callee.params, s.args):
                                changed |= self._add(self.tmps, (s.target, pname), self.eval(fname, arg))
                            if s.result:
                                changed |= self._add(self.tmps, (fname, s.result), self.rets.get(s.target, set()))
                    elif isinstance(s, ir.Ret) and s.value is not None:
                        changed |= self._add(self.rets, fname, self.eval(fname, s.value))

    # -- queries --------------------------------------------------------------

    def pointer_keys(self, fname: str, e: ir.Expr) -> set[tuple]:
        return {v[1] for v in self.eval(fname, e) if v[0] == "ptr"}

    def constant(self, fname: str, e: ir.Expr) -> int | None:
        vals = self.eval(fname, e)
        if len(vals) == 1:
            (v,) = vals
            if v[0] == "int" and v[1] is not None:
                return v[1]
        return None

    def carriers(self, key: tuple) -> set[tuple[str, str]]:
        out: set[tuple[str, str]] = set()
        for (fname, tmp), vals in self.tmps.items():
            if any(v[0] == "ptr" and v[1] == key for v in vals):
                out.add((fname, tmp))
        for cell, vals in self.cells.items():
            if any(v[0] == "ptr" and v[1] == key for v in vals):
                if cell[0] == "frame":
                    out.add((cell[1], f"frame[{cell[2]}]"))
                else:
                    out.add(("<memory>", f"{cell[0][0]}:{cell[0][1]}+{cell[1]}"))
        return out


# --------------------------------------------------------------------------
# Buffer facts and test units


@dataclass(frozen=True)
class BufferFact:
    kind: str  # "heap" or "stack"
    key: tuple
    capacity: int | None  # heap: malloc size; stack: max length |x|
    carriers: frozenset[tuple[str, str]] = frozenset()

    @property
    def site(self) -> ir.Site | None:
        return self.key[1] if self.kind == "heap" else None

    @property
    def frame_offset(self) -> int | None:
        return self.key[2] if self.kind == "stack" else None

    @property
    def function(self) -> str:
        return self.key[1][0] if self.kind == "heap" else self.key[1]

    @property
    def max_len(self) -> int | None:
        return self.capacity

    def describe(self) -> str:
        if self.kind == "heap":
            f, b, i = self.key[1]
            return f"heap@{f}:{b}:{i}[{self.capacity}]"
        return f"stack@{self.key[1]}{self.key[2]:+d}[{self.capacity}]"


@dataclass(frozen=True)
class SuspiciousSite:
    site: ir.Site
    bindings: tuple[tuple[str, str], ...] = ()
    facts: tuple[BufferFact, ...] = ()


@dataclass
class TestUnit:
    __test__ = False  # not a pytest class

    function: str
    vclass: str
    sites: list[SuspiciousSite]
    facts: list[BufferFact] = field(default_factory=list)
    param_facts: dict[str, BufferFact] = field(default_factory=dict)

    @property
    def site_set(self) -> set[ir.Site]:
        return {s.site for s in self.sites}


_ANALYSES: dict[int, tuple[ir.Program, PointerAnalysis]] = {}


def analysis(p: ir.Program) -> PointerAnalysis:
    cached = _ANALYSES.get(id(p))
    if cached is not None and cached[0] is p:
        return cached[1]
    pa = PointerAnalysis(p)
    if len(_ANALYSES) > 64:
        _ANALYSES.clear()
    _ANALYSES[id(p)] = (p, pa)
    return pa


def trace_buffer(p: ir.Program, site: ir.Site | tuple) -> BufferFact:
    """Buffer fact for a malloc site ``(fn, block, idx)`` or a stack area ``("stack", fn, x)``."""
    pa = analysis(p)
    if site and site[0] == "stack":
        _, fname, x = site
        key = ("stack", fname, x)
        return BufferFact("stack", key, -x, frozenset(pa.carriers(key)))
    fname, label, idx = site  # type: ignore[misc]
    stmt = p.functions[fname].blocks[label].stmts[idx]
    if not (isinstance(stmt, ir.Call) and stmt.target == "malloc"):
        raise ValueError(f"{site} is not a malloc call")
    key = ("heap", (fname, label, idx))
    cap = pa.constant(fname, stmt.args[0])
    if cap is None:
        raise UnknownCapacity(f"malloc at {fname}:{label}:{idx} has a non-constant length")
    return BufferFact("heap", key, cap, frozenset(pa.carriers(key)))


def heap_facts(p: ir.Program) -> list[BufferFact]:
    out = []
    for site in analysis(p).malloc_sites:
        try:
            out.append(trace_buffer(p, site))
        except UnknownCapacity as exc:
            log.warning("skipping allocation: %s", exc)
    return out


def estimate_stack_buffer(p: ir.Program, fname: str) -> list[BufferFact]:
    """Stack buffers of ``fname``: frame offsets ``x < 0`` reaching a store address or call argument."""
    pa = analysis(p)
    found: set[int] = set()
    for g, gfn in p.functions.items():
        for _, _, s in gfn.statements():
            exprs: tuple[ir.Expr, ...] = ()
            if isinstance(s, ir.Store):
                exprs = (s.addr,)
            elif isinstance(s, ir.Call):
                exprs = s.args
            for e in exprs:
                for key in pa.pointer_keys(g, e):
                    if key[0] == "stack" and key[1] == fname and (g == fname or isinstance(s, ir.Store)):
                        found.add(key[2])
    return [trace_buffer(p, ("stack", fname, x)) for x in sorted(found, reverse=True)]


def stack_facts(p: ir.Program) -> list[BufferFact]:
    return [f for fname in p.functions for f in estimate_stack_buffer(p, fname)]


def _write_dest(s: ir.Stmt) -> tuple[ir.Expr, ir.Expr, str] | None:
    """(destination, source, length description) of a store-like statement."""
    if isinstance(s, ir.Store):
        return s.addr, s.data, "LEN" if s.size is ir.LEN else str(s.size)
    if isinstance(s, ir.Call) and s.target == "strcpy":
        return s.args[0], s.args[1], "len"
    if isinstance(s, ir.Call) and s.target == "memcpy":
        return s.args[0], s.args[1], ir.format_expr(s.args[2])
    return None


def _use_addrs(s: ir.Stmt) -> list[ir.Expr]:
    addrs = [e.addr for top in ir.stmt_exprs(s) for e in ir.sub_exprs(top) if isinstance(e, ir.Load)]
    dest = _write_dest(s)
    if dest is not None:
        addrs.append(dest[0])
    if isinstance(s, ir.Call) and s.target in COPY_INTRINSICS + ("strlen",):
        src = s.args[0] if s.target == "strlen" else s.args[1]
        addrs.append(src)
    return addrs


def _param_facts(p: ir.Program, fname: str, facts: list[BufferFact]) -> dict[str, BufferFact]:
    pa = analysis(p)
    by_key = {f.key: f for f in facts}
    out: dict[str, BufferFact] = {}
    for pname in p.functions[fname].param_names:
        cands = [by_key[v[1]] for v in pa.tmps.get((fname, pname), ()) if v[0] == "ptr" and v[1] in by_key]
        if cands:
            out[pname] = min(cands, key=lambda f: (f.capacity if f.capacity is not None else 1 << 62, f.describe()))
    return out


def _overflow_units(p: ir.Program, vclass: str) -> list[TestUnit]:
    pa = analysis(p)
    facts = heap_facts(p) if vclass == HEAP else stack_facts(p)
    by_key = {f.key: f for f in facts}
    units: dict[str, TestUnit] = {}
    for fname, fn in p.functions.items():
        for label, idx, s in fn.statements():
            dest = _write_dest(s)
            if dest is None:
                continue
            addr, data, length = dest
            hit = tuple(by_key[k] for k in sorted(pa.pointer_keys(fname, addr), key=repr) if k in by_key)
            if not hit:
                continue
            if vclass == HEAP:
                bindings = (("CONT1", hit[0].describe()), ("CONT2", str(hit[0].capacity)),
                            ("CONT3", ir.format_expr(addr)), ("CONT4", ir.format_expr(data)))
            else:
                bindings = (("CONT1", "GET(20)"), ("CONT3", str(hit[0].frame_offset)),
                            ("CONT5", ir.format_expr(addr)), ("CONT6", ir.format_expr(data)))
            unit = units.setdefault(fname, TestUnit(fname, vclass, []))
            unit.sites.append(SuspiciousSite((fname, label, idx), bindings + (("length", length),), hit))
    for unit in units.values():
        seen: dict[tuple, BufferFact] = {}
        for site in unit.sites:
            for f in site.facts:
                seen[f.key] = f
        unit.facts = list(seen.values())
        unit.param_facts = _param_facts(p, unit.function, facts)
    return list(units.values())


# -- multi-event (double free, use after free) ------------------------------


def _reaches_fn(cg: Mapping[str, set[str]], src: str) -> set[str]:
    seen = {src}
    stack = [src]
    while stack:
        for nxt in cg[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return seen


def _sequence_units(p: ir.Program, vclass: str) -> list[TestUnit]:
    pa = analysis(p)
    cg = p.call_graph()
    extent = {f: _reaches_fn(cg, f) for f in p.functions}
    cfgs = {f: ir.control_flow_graph(fn) for f, fn in p.functions.items()}
    candidates: dict[str, set[ir.Site]] = {}
    facts_of: dict[str, list[BufferFact]] = {}

    for msite in pa.malloc_sites:
        key = ("heap", msite)
        frees: list[ir.Site] = []
        uses: list[ir.Site] = []
        for fname, fn in p.functions.items():
            for label, idx, s in fn.statements():
                if isinstance(s, ir.Call) and s.target == "free" and key in pa.pointer_keys(fname, s.args[0]):
                    frees.append((fname, label, idx))
                elif vclass == UAF and any(key in pa.pointer_keys(fname, a) for a in _use_addrs(s)):
                    uses.append((fname, label, idx))
        finals = frees if vclass == DF else uses
        if not frees or not finals:
            continue
        for fname, fn in p.functions.items():
            hit = _sequence_in(p, fname, cfgs[fname], extent, msite, frees, finals, vclass)
            if hit:
                candidates.setdefault(fname, set()).update(hit)
                cap = pa.constant(msite[0], p.functions[msite[0]].blocks[msite[1]].stmts[msite[2]].args[0])
                facts_of.setdefault(fname, []).append(BufferFact("heap", key, cap, frozenset(pa.carriers(key))))
    # keep the deepest functions: drop any candidate that calls another candidate
    units = []
    for fname in p.functions:
        if fname not in candidates:
            continue
        if any(g != fname and g in candidates for g in extent[fname]):
            continue
        sites = [SuspiciousSite(s) for s in sorted(candidates[fname])]
        units.append(TestUnit(fname, vclass, sites, facts_of[fname]))
    return units


def _leads_to(p: ir.Program, fname: str, extent: Mapping[str, set[str]], event: ir.Site) -> list[tuple[str, int]]:
    """Statements of ``fname`` through which ``event`` can execute."""
    out = []
    fn = p.functions[fname]
    for label, idx, s in fn.statements():
        if (fname, label, idx) == event:
            out.append((label, idx))
        elif isinstance(s, ir.Call) and s.target in p.functions and event[0] in extent[s.target]:
            out.append((label, idx))
    return out


def _sequence_in(p, fname, cfg, extent, msite, frees, finals, vclass) -> set[ir.Site]:
    def ok(a, b, same_event: bool) -> bool:
        if a == b:
            # one statement carries both events: only a call (or a looping statement) can
            return not same_event and p.functions[fname].blocks[a[0]].stmts[a[1]].__class__ is ir.Call \
                and p.functions[fname].blocks[a[0]].stmts[a[1]].target in p.functions or ir.statement_precedes(cfg, a, a)
        return ir.statement_precedes(cfg, a, b)

    m_stmts = _leads_to(p, fname, extent, msite)
    if not m_stmts:
        return set()
    hits: set[ir.Site] = set()
    for free in frees:
        f_stmts = _leads_to(p, fname, extent, free)
        for final in finals:
            same = final == free
            if vclass == UAF and same:
                continue
            l_stmts = _leads_to(p, fname, extent, final)
            for m in m_stmts:
                for a in f_stmts:
                    if not ok(m, a, False):
                        continue
                    for b in l_stmts:
                        if m == a == b:
                            continue
                        if ok(a, b, same):
                            hits.add(final)
    return hits


def extract_test_units(p: ir.Program, spec: VulnSpec) -> list[TestUnit]:
    if spec.vclass in (HEAP, STACK):
        return _overflow_units(p, spec.vclass)
    return _sequence_units(p, spec.vclass)


def format_units(units: Iterable[TestUnit]) -> str:
    lines = []
    for u in units:
        lines.append(f"unit: {u.function}")
        lines.append(f"  class: {u.vclass}")
        for f in u.facts:
            lines.append(f"  buffer: {f.describe()}")
        for s in u.sites:
            f, b, i = s.site
            lines.append(f"  site: {f} {b} {i}")
    return "\n".join(lines)
