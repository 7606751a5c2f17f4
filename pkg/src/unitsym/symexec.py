"""Unit-level symbolic execution producing a constraint tree.

A test unit is executed with its parameters as symbols: integer parameters
become variables named after the parameter, string parameters become strings
whose length variable is ``len(<param>)``.  Every basic-block entry (including
blocks of inlined callees) creates a tree node carrying

* ``term``: the branch condition that led into the node,
* ``const``: the conjunction of terms from the root,
* ``vulns``: one vulnerability constraint per suspicious site executed in it.

The symbolic domain is linear integer arithmetic plus string lengths.  A branch
on a value outside that domain is left unexplored and recorded as a note.
"""

from __future__ import annotations

import copy
import logging
from collections import Counter, deque
from dataclasses import dataclass, field
from typing import Iterator, Mapping, Sequence

from . import interp, ir, solver, specs
from .constraints import Atom, Constraint, LinExpr, length_var

log = logging.getLogger(__name__)

DEFAULT_MAX_DEPTH = 64
DEFAULT_MAX_UNROLLS = 8
DEFAULT_INLINE_DEPTH = 4
DEFAULT_MAX_NODES = 4096


class BoundExceeded(Exception):
    pass


class UnresolvedDestination(Exception):
    pass


@dataclass(frozen=True)
class Bounds:
    max_depth: int = DEFAULT_MAX_DEPTH
    max_unrolls: int = DEFAULT_MAX_UNROLLS
    inline_depth: int = DEFAULT_INLINE_DEPTH
    max_nodes: int = DEFAULT_MAX_NODES


# -- symbolic values ---------------------------------------------------------


@dataclass(frozen=True)
class SymStr:
    data: bytes | None  # concrete contents, or None when only the length is known
    length: LinExpr


@dataclass(frozen=True)
class SymPtr:
    obj: int
    off: LinExpr


@dataclass(frozen=True)
class SymCond:
    atom: Atom | None
    value: bool | None = None

    def negate(self) -> "SymCond":
        if self.atom is None:
            return SymCond(None, not self.value)
        return SymCond(self.atom.negate())


@dataclass(frozen=True)
class Opaque:
    reason: str


SymVal = LinExpr | SymStr | SymPtr | SymCond | Opaque


def _cond_of(atom: Atom) -> SymCond:
    truth = atom.constant_truth
    return SymCond(None, truth) if truth is not None else SymCond(atom)


# -- tree ----------------------------------------------------------------------


@dataclass
class VulnSite:
    site: ir.Site
    vclass: str
    constraint: Constraint

    @property
    def statically_safe(self) -> bool:
        return self.constraint.is_trivially_false


@dataclass
class TreeNode:
    id: int
    block: tuple[str, str]
    term: Constraint
    const: Constraint
    parent: "TreeNode | None" = None
    children: list["TreeNode"] = field(default_factory=list)
    vulns: list[VulnSite] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    annotations: list[tuple[int, tuple[int, ...]]] = field(default_factory=list)  # (run index, unit vector)

    @property
    def vul_const(self) -> Constraint | None:
        return self.vulns[0].constraint if self.vulns else None

    @property
    def depth(self) -> int:
        d, n = 0, self
        while n.parent is not None:
            d, n = d + 1, n.parent
        return d

    def ancestors(self) -> list["TreeNode"]:
        out, n = [], self.parent
        while n is not None:
            out.append(n)
            n = n.parent
        return out

    def path(self) -> list["TreeNode"]:
        return list(reversed(self.ancestors())) + [self]

    @property
    def siblings(self) -> list["TreeNode"]:
        if self.parent is None:
            return []
        return [c for c in self.parent.children if c is not self]

    @property
    def covered(self) -> bool:
        return bool(self.annotations)

    @property
    def label(self) -> str:
        return self.block[1]

    @property
    def truncated(self) -> bool:
        return bool(self.notes) and not self.children


@dataclass(frozen=True)
class UnitVar:
    index: int  # parameter position
    param: str
    kind: str  # "int" or "str"

    @property
    def name(self) -> str:
        return self.param if self.kind == "int" else length_var(self.param)


@dataclass
class ConstraintTree:
    unit: specs.TestUnit
    root: TreeNode
    nodes: list[TreeNode]
    unit_vars: list[UnitVar]
    notes: list[str] = field(default_factory=list)

    @property
    def var_names(self) -> list[str]:
        return [v.name for v in self.unit_vars]

    def bfs(self) -> Iterator[TreeNode]:
        queue = deque([self.root])
        while queue:
            n = queue.popleft()
            yield n
            queue.extend(n.children)

    def leaves(self) -> list[TreeNode]:
        return [n for n in self.nodes if not n.children]

    def vuln_nodes(self) -> list[TreeNode]:
        return [n for n in self.nodes if n.vulns]

    def unit_vector(self, args: Sequence[interp.Value]) -> tuple[int, ...] | None:
        """Unit-level vector (ints and string lengths) of a concrete call."""
        out = []
        for v in self.unit_vars:
            if v.index >= len(args):
                return None
            a = args[v.index]
            if v.kind == "int":
                if not isinstance(a, int):
                    return None
                out.append(interp.wrap64(a))
            else:
                if not isinstance(a, bytes):
                    return None
                out.append(len(a))
        return tuple(out)

    def model_of(self, unit_vec: Sequence[int]) -> dict[str, int]:
        return {v.name: int(x) for v, x in zip(self.unit_vars, unit_vec)}

    def match_path(self, blocks: Sequence[tuple[str, str]]) -> list[TreeNode]:
        """Tree nodes visited by a concrete block sequence of one unit call.

        Blocks of callees that were not inlined have no node and are skipped.
        """
        if not blocks or blocks[0] != self.root.block:
            return []
        path = [self.root]
        node = self.root
        unit_fn = self.root.block[0]
        for b in blocks[1:]:
            nxt = [c for c in node.children if c.block == b]
            if len(nxt) == 1:
                node = nxt[0]
                path.append(node)
                continue
            if nxt or b[0] == unit_fn or node.truncated:
                break  # ambiguous, infeasible in the tree, or beyond a truncation
            # otherwise a block of a callee that was not inlined
        return path

    def dump(self) -> str:
        lines: list[str] = []

        def emit(n: TreeNode, indent: int) -> None:
            pad = "  " * indent
            fn, label = n.block
            lines.append(f"{pad}Node({n.id}) {fn}:{label}")
            lines.append(f"{pad}  Term: {n.term}")
            lines.append(f"{pad}  Const: {n.const}")
            for v in n.vulns:
                f, b, i = v.site
                lines.append(f"{pad}  VulConst: {v.constraint} @ {f}:{b}:{i} [{v.vclass}]")
            for note in n.notes:
                lines.append(f"{pad}  Note: {note}")
            for c in n.children:
                emit(c, indent + 1)

        emit(self.root, 0)
        for note in self.notes:
            lines.append(f"note: {note}")
        return "\n".join(lines)


# -- execution state -------------------------------------------------------------


@dataclass
class _Obj:
    kind: str  # heap | stack | global
    cap: int | None = None  # heap capacity, or frame size for stack objects
    freed: bool = False
    external: bool = False
    cells: dict[int, SymVal] = field(default_factory=dict)


@dataclass
class _Frame:
    fn: ir.Function
    label: str
    idx: int
    env: dict[str, SymVal]
    frame_obj: int
    result: str | None = None
    saved_fb: SymVal | None = None


@dataclass
class _State:
    frames: list[_Frame]
    objs: dict[int, _Obj]
    regs: dict[int, SymVal]
    visits: Counter
    ext: dict[tuple, int]

    def clone(self) -> "_State":
        return copy.deepcopy(self)


class _Executor:
    def __init__(self, p: ir.Program, unit: specs.TestUnit, bounds: Bounds, solv: solver.Solver):
        self.p = p
        self.unit = unit
        self.bounds = bounds
        self.solver = solv
        self.pa = specs.analysis(p)
        self.sites = unit.site_set
        self.facts = {f.key: f for f in unit.facts}
        for f in unit.param_facts.values():
            self.facts[f.key] = f
        self.fresh = 0
        self.next_obj = 0
        self.nodes: list[TreeNode] = []
        self.notes: list[str] = []
        self.queue: deque[tuple[TreeNode, _State]] = deque()

    # -- helpers --------------------------------------------------------------

    def _new_obj(self, st: _State, obj: _Obj) -> int:
        self.next_obj += 1
        st.objs[self.next_obj] = obj
        return self.next_obj

    def _fresh(self, prefix: str) -> LinExpr:
        self.fresh += 1
        return LinExpr.var(f"{prefix}#{self.fresh}")

    def _ext_pointer(self, st: _State, key: tuple, delta: int) -> SymPtr | None:
        fact = self.facts.get(key)
        if fact is None:
            if key[0] == "heap":
                try:
                    fact = specs.trace_buffer(self.p, key[1])
                except specs.UnknownCapacity:
                    fact = specs.BufferFact("heap", key, None)
            elif key[0] == "stack":
                fact = specs.trace_buffer(self.p, key)
            else:
                return None
        oid = st.ext.get(key)
        if oid is None:
            if fact.kind == "heap":
                obj = _Obj("heap", fact.capacity, external=True)
            else:
                obj = _Obj("stack", self.p.functions[fact.function].frame_size, external=True)
            oid = self._new_obj(st, obj)
            st.ext[key] = oid
        base = fact.frame_offset if fact.kind == "stack" else 0
        return SymPtr(oid, LinExpr.of(base + delta))

    def _static_pointer(self, st: _State, fname: str, e: ir.Expr) -> SymPtr | None:
        vals = self.pa.eval(fname, e)
        if len(vals) != 1:
            return None
        (v,) = vals
        if v[0] != "ptr" or v[2] is None or v[1][0] not in ("heap", "stack"):
            return None
        return self._ext_pointer(st, v[1], v[2])

    # -- evaluation -----------------------------------------------------------

    def eval(self, st: _State, e: ir.Expr) -> SymVal:
        fr = st.frames[-1]
        if isinstance(e, ir.Const):
            return LinExpr.of(interp.wrap64(e.value))
        if isinstance(e, ir.ConstStr):
            return SymStr(e.data, LinExpr.of(len(e.data)))
        if isinstance(e, ir.Tmp):
            return fr.env.get(e.name, Opaque(f"unassigned {e.name}"))
        if isinstance(e, ir.Get):
            return st.regs.get(e.reg, LinExpr.of(0))
        if isinstance(e, ir.GlobalAddr):
            key = ("global", e.name)
            oid = st.ext.get(key)
            if oid is None:
                oid = self._new_obj(st, _Obj("global", 8, external=True))
                st.ext[key] = oid
            return SymPtr(oid, LinExpr.of(0))
        if isinstance(e, ir.Load):
            addr = self.eval(st, e.addr)
            if isinstance(addr, SymPtr):
                obj = st.objs[addr.obj]
                self._use(st, addr, LinExpr.of(e.size))
                if addr.off.is_const and e.size == 8 and addr.off.const in obj.cells:
                    return obj.cells[addr.off.const]
            ptr = self._static_pointer(st, fr.fn.name, e) if e.size == 8 else None
            if ptr is not None:
                return ptr
            return self._fresh("mem")
        if isinstance(e, ir.StrLen):
            return self._strlen(self.eval(st, e.arg))
        if isinstance(e, ir.Unop):
            a = self.eval(st, e.arg)
            if e.op == "Not1":
                if isinstance(a, SymCond):
                    return a.negate()
                if isinstance(a, LinExpr):
                    return _cond_of(Atom(a, "=="))
                if isinstance(a, SymPtr):
                    return SymCond(None, False)
                return Opaque("Not1 of non-integer")
            return -a if isinstance(a, LinExpr) else Opaque("Neg64 of non-integer")
        if isinstance(e, ir.Binop):
            return self._binop(e.op, self.eval(st, e.lhs), self.eval(st, e.rhs))
        return Opaque(f"unsupported expression {type(e).__name__}")

    def _strlen(self, v: SymVal) -> SymVal:
        if isinstance(v, SymStr):
            return v.length
        return self._fresh("strlen")

    def _binop(self, op: str, a: SymVal, b: SymVal) -> SymVal:
        if isinstance(a, SymCond) and a.atom is None:
            a = LinExpr.of(int(bool(a.value)))
        if isinstance(b, SymCond) and b.atom is None:
            b = LinExpr.of(int(bool(b.value)))
        if op == "Add64":
            if isinstance(a, LinExpr) and isinstance(b, LinExpr):
                return a + b
            if isinstance(a, SymPtr) and isinstance(b, LinExpr):
                return SymPtr(a.obj, a.off + b)
            if isinstance(a, LinExpr) and isinstance(b, SymPtr):
                return SymPtr(b.obj, b.off + a)
            return Opaque("Add64 outside the linear domain")
        if op == "Sub64":
            if isinstance(a, LinExpr) and isinstance(b, LinExpr):
                return a - b
            if isinstance(a, SymPtr) and isinstance(b, LinExpr):
                return SymPtr(a.obj, a.off - b)
            if isinstance(a, SymPtr) and isinstance(b, SymPtr) and a.obj == b.obj:
                return a.off - b.off
            return Opaque("Sub64 outside the linear domain")
        if op == "Mul64":
            if isinstance(a, LinExpr) and isinstance(b, LinExpr):
                if a.is_const:
                    return b.scale(a.const)
                if b.is_const:
                    return a.scale(b.const)
            return Opaque("nonlinear Mul64")
        # comparisons
        if isinstance(a, SymCond) and isinstance(b, LinExpr) and b.is_const and op in ("CmpEQ64", "CmpNE64"):
            if b.const == 0:
                return a.negate() if op == "CmpEQ64" else a
            if b.const == 1:
                return a if op == "CmpEQ64" else a.negate()
        if isinstance(a, SymPtr) and isinstance(b, SymPtr):
            if a.obj != b.obj:
                if op in ("CmpEQ64", "CmpNE64"):
                    return SymCond(None, op == "CmpNE64")
                return Opaque("ordering of unrelated pointers")
            a, b = a.off, b.off
        elif isinstance(a, SymPtr) or isinstance(b, SymPtr):
            other = b if isinstance(a, SymPtr) else a
            if isinstance(other, LinExpr) and other.is_const and other.const == 0 and op in ("CmpEQ64", "CmpNE64"):
                return SymCond(None, op == "CmpNE64")
            return Opaque("pointer compared with an integer")
        if not (isinstance(a, LinExpr) and isinstance(b, LinExpr)):
            return Opaque(f"{op} outside the linear domain")
        rel = {"CmpEQ64": "==", "CmpNE64": "!=", "CmpLT64s": "<", "CmpLE64s": "<="}[op]
        return _cond_of(Atom.compare(a, rel, b))

    # -- memory events -----------------------------------------------------------

    def _site(self, st: _State) -> ir.Site:
        fr = st.frames[-1]
        return (fr.fn.name, fr.label, fr.idx)

    def _use(self, st: _State, ptr: SymPtr, length: LinExpr) -> None:
        """Record a use-after-free constraint for an access through ``ptr``."""
        if self.unit.vclass != specs.UAF:
            return
        site = self._site(st)
        if site not in self.sites:
            return
        obj = st.objs[ptr.obj]
        if obj.kind != "heap" or obj.external:
            return
        c = Constraint.of(Atom.compare(length, ">", LinExpr.of(0))) if obj.freed else Constraint.false()
        self._attach(site, specs.UAF, c)

    def _write(self, st: _State, dst: SymVal, length: SymVal, data: SymVal | None) -> None:
        site = self._site(st)
        if isinstance(dst, SymPtr) and isinstance(length, LinExpr):
            self._use(st, dst, length)
            obj = st.objs[dst.obj]
            if data is not None and dst.off.is_const:
                obj.cells[dst.off.const] = data
        if site not in self.sites or self.unit.vclass not in (specs.HEAP, specs.STACK):
            return
        if not isinstance(dst, SymPtr):
            self.notes.append(f"unresolved destination at {site[0]}:{site[1]}:{site[2]}; site dropped")
            log.warning("unresolved destination at %s", site)
            return
        if not isinstance(length, LinExpr):
            self.notes.append(f"write length outside the linear domain at {site[0]}:{site[1]}:{site[2]}")
            return
        obj = st.objs[dst.obj]
        off = dst.off
        if self.unit.vclass == specs.HEAP and obj.kind == "heap":
            if obj.cap is None:
                self.notes.append(f"unknown capacity at {site[0]}:{site[1]}:{site[2]}")
                return
            if obj.freed:
                c = Constraint.false()
            else:
                c = Constraint.of(
                    Atom.compare(off, ">=", LinExpr.of(0)),
                    Atom.compare(off, "<", LinExpr.of(max(obj.cap, 1))),
                    Atom.compare(off + length, ">", LinExpr.of(obj.cap)),
                )
            self._attach(site, specs.HEAP, c)
        elif self.unit.vclass == specs.STACK and obj.kind == "stack":
            c = Constraint.of(
                Atom.compare(off, ">=", LinExpr.of(-(obj.cap or 0))),
                Atom.compare(off, "<", LinExpr.of(0)),
                Atom.compare(off + length, ">", LinExpr.of(0)),
            )
            self._attach(site, specs.STACK, c)

    def _free(self, st: _State, arg: SymVal) -> None:
        site = self._site(st)
        if isinstance(arg, LinExpr) and arg.is_const and arg.const == 0:
            return
        if not isinstance(arg, SymPtr):
            return
        obj = st.objs[arg.obj]
        if self.unit.vclass == specs.DF and site in self.sites and obj.kind == "heap" and not obj.external:
            self._attach(site, specs.DF, Constraint() if obj.freed else Constraint.false())
        obj.freed = True

    def _attach(self, site: ir.Site, vclass: str, c: Constraint) -> None:
        node = self.current
        for v in node.vulns:
            if v.site == site:
                return  # first execution of the site on this path decides
        node.vulns.append(VulnSite(site, vclass, c))

    # -- driver --------------------------------------------------------------------

    def build(self) -> ConstraintTree:
        fn = self.p.functions[self.unit.function]
        st = _State([], {}, {}, Counter(), {})
        unit_vars: list[UnitVar] = []
        env: dict[str, SymVal] = {}
        for i, (pname, kind) in enumerate(fn.params):
            fact = self.unit.param_facts.get(pname)
            if fact is not None:
                deltas = [v[2] for v in self.pa.tmps.get((fn.name, pname), ()) if v[0] == "ptr" and v[1] == fact.key]
                delta = deltas[0] if len(deltas) == 1 and deltas[0] is not None else 0
                env[pname] = self._ext_pointer(st, fact.key, delta)  # type: ignore[assignment]
            elif kind == "str":
                unit_vars.append(UnitVar(i, pname, "str"))
                env[pname] = SymStr(None, LinExpr.var(length_var(pname)))
            else:
                unit_vars.append(UnitVar(i, pname, "int"))
                env[pname] = LinExpr.var(pname)
        fobj = self._new_obj(st, _Obj("stack", fn.frame_size))
        st.frames.append(_Frame(fn, fn.entry_block, 0, env, fobj))
        st.regs[ir.FRAME_REG] = SymPtr(fobj, LinExpr.of(0))
        root = self._node(None, (fn.name, fn.entry_block), Constraint())
        st.visits[root.block] += 1
        self.queue.append((root, st))
        while self.queue:
            node, state = self.queue.popleft()
            self.current = node
            self._run_node(node, state)
        tree = ConstraintTree(self.unit, root, self.nodes, unit_vars, self.notes)
        return tree

    def _node(self, parent: TreeNode | None, block: tuple[str, str], term: Constraint) -> TreeNode:
        const = term if parent is None else parent.const.conj(term)
        n = TreeNode(len(self.nodes), block, term, const, parent)
        self.nodes.append(n)
        if parent is not None:
            parent.children.append(n)
        return n

    def _enter(self, parent: TreeNode, st: _State, label: str, term: Constraint) -> None:
        fr = st.frames[-1]
        block = (fr.fn.name, label)
        if not term.is_true:
            if term.is_trivially_false:
                return
            try:
                if self.solver.solve(parent.const.conj(term)) is None:
                    return
            except solver.SolverUnknown:
                parent.notes.append(f"solver gave up on branch into {block[0]}:{block[1]}")
                return
        if st.visits[block] >= self.bounds.max_unrolls:
            parent.notes.append(f"loop bound {self.bounds.max_unrolls} reached at {block[0]}:{block[1]}")
            self.notes.append(f"truncated: loop bound at {block[0]}:{block[1]}")
            return
        if parent.depth + 1 >= self.bounds.max_depth:
            parent.notes.append(f"depth bound {self.bounds.max_depth} reached")
            self.notes.append(f"truncated: depth bound below node {parent.id}")
            return
        if len(self.nodes) >= self.bounds.max_nodes:
            parent.notes.append("node budget exhausted")
            self.notes.append(f"truncated: node budget {self.bounds.max_nodes}")
            return
        fr.label, fr.idx = label, 0
        st.visits[block] += 1
        child = self._node(parent, block, term)
        self.queue.append((child, st))

    def _run_node(self, node: TreeNode, st: _State) -> None:
        while True:
            fr = st.frames[-1]
            stmts = fr.fn.blocks[fr.label].stmts
            s = stmts[fr.idx]
            if isinstance(s, ir.WrTmp):
                fr.env[s.tmp] = self.eval(st, s.expr)
            elif isinstance(s, ir.Put):
                st.regs[s.reg] = self.eval(st, s.expr)
            elif isinstance(s, ir.Store):
                dst = self.eval(st, s.addr)
                data = self.eval(st, s.data)
                if s.size is ir.LEN:
                    length = data.length if isinstance(data, SymStr) else Opaque("LEN of non-string")
                else:
                    length = LinExpr.of(s.size)
                self._write(st, dst, length, data if s.size == 8 else None)
            elif isinstance(s, ir.Call):
                args = [self.eval(st, a) for a in s.args]
                if s.target in ir.INTRINSICS:
                    result = self._intrinsic(st, s.target, args)
                    if s.result is not None:
                        fr.env[s.result] = result if result is not None else LinExpr.of(0)
                elif len(st.frames) <= self.bounds.inline_depth:
                    callee = self.p.functions[s.target]
                    fr.idx += 1
                    fobj = self._new_obj(st, _Obj("stack", callee.frame_size))
                    saved = st.regs.get(ir.FRAME_REG)
                    st.regs[ir.FRAME_REG] = SymPtr(fobj, LinExpr.of(0))
                    st.frames.append(_Frame(callee, callee.entry_block, 0, dict(zip(callee.param_names, args)),
                                            fobj, s.result, saved))
                    self._enter(node, st, callee.entry_block, Constraint())
                    return
                else:
                    node.notes.append(f"call to {s.target} not inlined (depth bound)")
                    if s.result is not None:
                        ptr = self._static_pointer(st, fr.fn.name, ir.Tmp(s.result))
                        fr.env[s.result] = ptr if ptr is not None else self._fresh("ret")
                fr.idx += 1
                continue
            elif isinstance(s, ir.Jump):
                self._enter(node, st, s.target, Constraint())
                return
            elif isinstance(s, ir.Branch):
                cond = self.eval(st, s.cond)
                self._branch(node, st, cond, s)
                return
            elif isinstance(s, ir.Ret):
                value = self.eval(st, s.value) if s.value is not None else None
                if len(st.frames) == 1:
                    return
                done = st.frames.pop()
                st.regs[ir.FRAME_REG] = done.saved_fb if done.saved_fb is not None else LinExpr.of(0)
                caller = st.frames[-1]
                if done.result is not None:
                    caller.env[done.result] = value if value is not None else LinExpr.of(0)
                continue  # the caller resumes inside the current node
            fr.idx += 1

    def _branch(self, node: TreeNode, st: _State, cond: SymVal, s: ir.Branch) -> None:
        if isinstance(cond, LinExpr):
            cond = _cond_of(Atom(cond, "!="))
        elif isinstance(cond, SymPtr):
            cond = SymCond(None, True)
        if not isinstance(cond, SymCond):
            reason = cond.reason if isinstance(cond, Opaque) else "non-integer condition"
            node.notes.append(f"branch not explored: {reason}")
            self.notes.append(f"unexplored branch at {st.frames[-1].fn.name}:{st.frames[-1].label}: {reason}")
            return
        if cond.atom is None:
            self._enter(node, st, s.then if cond.value else s.orelse, Constraint())
            return
        if s.then == s.orelse:
            self._enter(node, st, s.then, Constraint())
            return
        other = st.clone()
        self._enter(node, st, s.then, Constraint.of(cond.atom))
        self._enter(node, other, s.orelse, Constraint.of(cond.atom.negate()))

    def _intrinsic(self, st: _State, name: str, args: list[SymVal]) -> SymVal | None:
        if name == "malloc":
            size = args[0]
            cap = size.const if isinstance(size, LinExpr) and size.is_const else None
            oid = self._new_obj(st, _Obj("heap", cap))
            return SymPtr(oid, LinExpr.of(0))
        if name == "free":
            self._free(st, args[0])
            return None
        if name == "memcpy":
            src = args[1]
            if isinstance(src, SymPtr) and isinstance(args[2], LinExpr):
                self._use(st, src, args[2])
            self._write(st, args[0], args[2], None)
            return None
        if name == "strcpy":
            src = args[1]
            if isinstance(src, SymStr):
                length: SymVal = src.length
            else:
                if isinstance(src, SymPtr):
                    self._use(st, src, LinExpr.of(1))
                length = self._fresh("strlen")
            self._write(st, args[0], length, None)
            return None
        if name == "strlen":
            if isinstance(args[0], SymPtr):
                self._use(st, args[0], LinExpr.of(1))
            return self._strlen(args[0])
        if name == "input_int":
            return self._fresh("in")
        if name == "input_str":
            return SymStr(None, self._fresh("len(in)"))
        return None


def symbolic_execute(
    p: ir.Program,
    unit: specs.TestUnit,
    bounds: Bounds | None = None,
    solv: solver.Solver | None = None,
) -> ConstraintTree:
    """Build the constraint tree of ``unit``."""
    return _Executor(p, unit, bounds or Bounds(), solv or solver.Solver()).build()


def vuln_constraint(node: TreeNode, site: ir.Site) -> Constraint | None:
    for v in node.vulns:
        if v.site == site:
            return v.constraint
    return None


def replay_unit(
    p: ir.Program, tree: ConstraintTree, model: Mapping[str, int], seed: int = 0
) -> interp.ExecutionTrace:
    """Run the unit in isolation with argument values taken from ``model``."""
    fn = p.functions[tree.unit.function]
    args: list[interp.Value] = [0] * len(fn.params)
    for v in tree.unit_vars:
        val = int(model.get(v.name, 0))
        args[v.index] = val if v.kind == "int" else solver.materialize_string(val, seed)
    it = interp.Interpreter(p, [], watch={fn.name})
    try:
        it.call(fn, args, depth=0)
    except interp.InterpError as exc:
        it.trace.exit_status = type(exc).__name__
    return it.trace


def predicted_events(tree: ConstraintTree, blocks: Sequence[tuple[str, str]], unit_vec: Sequence[int]) -> set[tuple[str, ir.Site]]:
    """(oracle kind, site) pairs the tree predicts for one concrete unit call."""
    model = tree.model_of(unit_vec)
    out: set[tuple[str, ir.Site]] = set()
    for n in tree.match_path(blocks):
        if not n.const.holds(model):
            continue
        for v in n.vulns:
            if set(v.constraint.vars) <= set(model) and v.constraint.holds(model):
                out.add((specs.ORACLE_KIND[v.vclass], v.site))
    return out
