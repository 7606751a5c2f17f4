"""Mini-IR: a small VEX-shaped intermediate representation.

Programs are made of functions, functions of labelled basic blocks, blocks of
statements.  The statement and expression vocabulary follows VEX (WrTmp,
Store, Put, Get, Load, Binop, ...) so vulnerability patterns written against
VEX carry over unchanged.  Register offset 20 is the frame-base register.

Textual form::

    global counter = 0

    func main() frame 48 {
    b0:
      t0 = CALL input_str()
      t1 = GET(20)
      t2 = Add64(t1, CONST -32)
      STORE(t2, t0, LEN)
      RET
    }
"""

from __future__ import annotations

import re
from dataclasses import dataclass, field
from typing import Iterator, Union

FRAME_REG = 20

BINOPS = ("Add64", "Sub64", "Mul64", "CmpEQ64", "CmpNE64", "CmpLT64s", "CmpLE64s")
UNOPS = ("Not1", "Neg64")
COMPARISONS = ("CmpEQ64", "CmpNE64", "CmpLT64s", "CmpLE64s")

# name -> (arity, returns a value)
INTRINSICS: dict[str, tuple[int, bool]] = {
    "malloc": (1, True),
    "free": (1, False),
    "memcpy": (3, False),
    "strcpy": (2, False),
    "strlen": (1, True),
    "input_int": (0, True),
    "input_str": (0, True),
    "print": (1, False),
}

PARAM_KINDS = {"int": "int", "int64": "int", "str": "str", "string": "str"}


# --------------------------------------------------------------------------
# Expressions


@dataclass(frozen=True)
class Const:
    value: int


@dataclass(frozen=True)
class ConstStr:
    data: bytes


@dataclass(frozen=True)
class Tmp:
    name: str


@dataclass(frozen=True)
class Get:
    reg: int


@dataclass(frozen=True)
class Load:
    addr: "Expr"
    size: int


@dataclass(frozen=True)
class Binop:
    op: str
    lhs: "Expr"
    rhs: "Expr"


@dataclass(frozen=True)
class Unop:
    op: str
    arg: "Expr"


@dataclass(frozen=True)
class StrLen:
    arg: "Expr"


@dataclass(frozen=True)
class GlobalAddr:
    name: str


Expr = Union[Const, ConstStr, Tmp, Get, Load, Binop, Unop, StrLen, GlobalAddr]


# --------------------------------------------------------------------------
# Statements.  ``line`` is excluded from equality so parse/print round trips
# compare structurally.

LEN = None  # Store size marker: write the full length of a string value


@dataclass(frozen=True)
class WrTmp:
    tmp: str
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Store:
    addr: Expr
    data: Expr
    size: int | None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Put:
    reg: int
    expr: Expr
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Call:
    target: str
    args: tuple[Expr, ...]
    result: str | None = None
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Branch:
    cond: Expr
    then: str
    orelse: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Jump:
    target: str
    line: int = field(default=0, compare=False)


@dataclass(frozen=True)
class Ret:
    value: Expr | None = None
    line: int = field(default=0, compare=False)


Stmt = Union[WrTmp, Store, Put, Call, Branch, Jump, Ret]
TERMINATORS = (Branch, Jump, Ret)


@dataclass(frozen=True)
class Block:
    label: str
    stmts: tuple[Stmt, ...]


@dataclass(frozen=True)
class Function:
    name: str
    params: tuple[tuple[str, str], ...]
    blocks: dict[str, Block]
    frame_size: int = 0
    line: int = field(default=0, compare=False)

    @property
    def entry_block(self) -> str:
        return next(iter(self.blocks))

    @property
    def param_names(self) -> tuple[str, ...]:
        return tuple(name for name, _ in self.params)

    def statements(self) -> Iterator[tuple[str, int, Stmt]]:
        for label, block in self.blocks.items():
            for idx, stmt in enumerate(block.stmts):
                yield label, idx, stmt

    def __hash__(self) -> int:
        return hash(self.name)


@dataclass(frozen=True)
class Program:
    functions: dict[str, Function]
    entry: str
    globals: tuple[tuple[str, int], ...] = ()

    def __hash__(self) -> int:
        return hash((tuple(self.functions), self.entry))

    def call_graph(self) -> dict[str, set[str]]:
        graph: dict[str, set[str]] = {}
        for name, fn in self.functions.items():
            graph[name] = {
                s.target for _, _, s in fn.statements()
                if isinstance(s, Call) and s.target in self.functions
            }
        return graph


Site = tuple[str, str, int]  # (function, block, statement index)


# --------------------------------------------------------------------------
# Diagnostics


@dataclass(frozen=True)
class Diagnostic:
    message: str
    line: int = 0
    col: int = 0
    where: str = ""

    def __str__(self) -> str:
        loc = f"{self.line}:{self.col}" if self.line else self.where
        return f"{loc}: {self.message}" if loc else self.message


class IRError(Exception):
    def __init__(self, diagnostics: list[Diagnostic]):
        self.diagnostics = diagnostics
        super().__init__("; ".join(str(d) for d in diagnostics))


class ParseError(IRError):
    pass


class SemanticError(IRError):
    pass


# --------------------------------------------------------------------------
# Tokenizer

_TOKEN_RE = re.compile(
    r"""
    (?P<ws>[ \t\r]+)
  | (?P<nl>\n)
  | (?P<comment>\#[^\n]*)
  | (?P<string>"(?:[^"\\\n]|\\.)*")
  | (?P<int>-?(?:0x[0-9a-fA-F]+|\d+))
  | (?P<ident>[A-Za-z_][A-Za-z0-9_.]*)
  | (?P<punct>[(){},:=?])
    """,
    re.VERBOSE,
)


@dataclass(frozen=True)
class Token:
    kind: str
    text: str
    line: int
    col: int


def tokenize(text: str) -> list[Token]:
    tokens: list[Token] = []
    line, line_start, pos = 1, 0, 0
    while pos < len(text):
        m = _TOKEN_RE.match(text, pos)
        if m is None:
            raise ParseError([Diagnostic(f"unexpected character {text[pos]!r}", line, pos - line_start + 1)])
        kind = m.lastgroup
        assert kind is not None
        if kind == "nl":
            line += 1
            line_start = m.end()
        elif kind not in ("ws", "comment"):
            tokens.append(Token(kind, m.group(), line, m.start() - line_start + 1))
        pos = m.end()
    tokens.append(Token("eof", "", line, pos - line_start + 1))
    return tokens


def _unescape(literal: str) -> bytes:
    body = literal[1:-1]
    out = bytearray()
    i = 0
    while i < len(body):
        ch = body[i]
        if ch == "\\" and i + 1 < len(body):
            nxt = body[i + 1]
            if nxt == "x" and i + 3 < len(body):
                out.append(int(body[i + 2:i + 4], 16))
                i += 4
                continue
            out.extend({"n": b"\n", "t": b"\t", "0": b"\0"}.get(nxt, nxt.encode()))
            i += 2
            continue
        out.extend(ch.encode("utf-8"))
        i += 1
    return bytes(out)


def _escape(data: bytes) -> str:
    parts = []
    for b in data:
        ch = chr(b)
        if ch == '"' or ch == "\\":
            parts.append("\\" + ch)
        elif 32 <= b < 127:
            parts.append(ch)
        else:
            parts.append(f"\\x{b:02x}")
    return '"' + "".join(parts) + '"'


# --------------------------------------------------------------------------
# Parser

_STMT_KEYWORDS = {"STORE", "PUT", "CALL", "BR", "JMP", "RET"}
_EXPR_KEYWORDS = {"CONST", "STR", "GET", "LOAD", "STRLEN", "GLOBAL", "LEN"}
RESERVED = _STMT_KEYWORDS | _EXPR_KEYWORDS | set(BINOPS) | set(UNOPS) | {"func", "frame", "global"}


class _Parser:
    def __init__(self, text: str):
        self.toks = tokenize(text)
        self.i = 0

    @property
    def tok(self) -> Token:
        return self.toks[self.i]

    def peek(self, k: int = 1) -> Token:
        return self.toks[min(self.i + k, len(self.toks) - 1)]

    def fail(self, expected: str, tok: Token | None = None) -> ParseError:
        tok = tok or self.tok
        found = "end of input" if tok.kind == "eof" else repr(tok.text)
        return ParseError([Diagnostic(f"expected {expected}, found {found}", tok.line, tok.col)])

    def expect(self, text: str) -> Token:
        if self.tok.text != text or self.tok.kind == "string":
            raise self.fail(f"'{text}'")
        tok = self.tok
        self.i += 1
        return tok

    def accept(self, text: str) -> bool:
        if self.tok.text == text and self.tok.kind != "string":
            self.i += 1
            return True
        return False

    def ident(self, what: str = "identifier") -> str:
        if self.tok.kind != "ident" or self.tok.text in RESERVED:
            raise self.fail(what)
        name = self.tok.text
        self.i += 1
        return name

    def integer(self) -> int:
        if self.tok.kind != "int":
            raise self.fail("integer")
        value = int(self.tok.text, 0)
        self.i += 1
        return value

    # program := {global} func {func}
    def program(self) -> Program:
        globals_: list[tuple[str, int]] = []
        while self.tok.text == "global":
            self.i += 1
            name = self.ident("global name")
            self.expect("=")
            globals_.append((name, self.integer()))
        if self.tok.text != "func":
            tok = self.tok
            msg = "expected 'func'"
            raise ParseError([Diagnostic(msg, tok.line, tok.col)])
        functions: dict[str, Function] = {}
        while self.tok.text == "func":
            start = self.tok
            fn = self.function()
            if fn.name in functions:
                raise ParseError([Diagnostic(f"duplicate function {fn.name}", start.line, start.col)])
            functions[fn.name] = fn
        if self.tok.kind != "eof":
            raise self.fail("'func' or end of input")
        entry = "main" if "main" in functions else next(iter(functions))
        return Program(functions, entry, tuple(globals_))

    def function(self) -> Function:
        start = self.expect("func")
        name = self.ident("function name")
        self.expect("(")
        params: list[tuple[str, str]] = []
        if not self.accept(")"):
            while True:
                pname = self.ident("parameter name")
                self.expect(":")
                kind_tok = self.tok
                kind = PARAM_KINDS.get(kind_tok.text)
                if kind is None:
                    raise self.fail("parameter kind (int or str)")
                self.i += 1
                params.append((pname, kind))
                if self.accept(")"):
                    break
                self.expect(",")
        frame = 0
        if self.accept("frame"):
            frame = self.integer()
            if frame < 0:
                raise ParseError([Diagnostic("frame size must be non-negative", start.line, start.col)])
        self.expect("{")
        blocks: dict[str, Block] = {}
        while not self.accept("}"):
            label_tok = self.tok
            label = self.ident("block label")
            self.expect(":")
            stmts: list[Stmt] = []
            while not (self.tok.text == "}" or (self.tok.kind == "ident" and self.peek().text == ":")):
                if self.tok.kind == "eof":
                    raise self.fail("'}'")
                stmts.append(self.statement())
            if label in blocks:
                raise ParseError([Diagnostic(f"duplicate block {label}", label_tok.line, label_tok.col)])
            blocks[label] = Block(label, tuple(stmts))
        if not blocks:
            raise ParseError([Diagnostic(f"function {name} has no blocks", start.line, start.col)])
        return Function(name, tuple(params), blocks, frame, start.line)

    def call_args(self) -> tuple[Expr, ...]:
        self.expect("(")
        args: list[Expr] = []
        if not self.accept(")"):
            while True:
                args.append(self.expr())
                if self.accept(")"):
                    break
                self.expect(",")
        return tuple(args)

    def statement(self) -> Stmt:
        tok = self.tok
        line = tok.line
        if tok.kind == "ident" and tok.text not in RESERVED and self.peek().text == "=":
            tmp = self.ident()
            self.expect("=")
            if self.accept("CALL"):
                target = self.ident("call target")
                return Call(target, self.call_args(), tmp, line)
            return WrTmp(tmp, self.expr(), line)
        if self.accept("CALL"):
            target = self.ident("call target")
            return Call(target, self.call_args(), None, line)
        if self.accept("STORE"):
            self.expect("(")
            addr = self.expr()
            self.expect(",")
            data = self.expr()
            self.expect(",")
            size: int | None
            if self.accept("LEN"):
                size = LEN
            else:
                size = self.integer()
            self.expect(")")
            return Store(addr, data, size, line)
        if self.accept("PUT"):
            self.expect("(")
            reg = self.integer()
            self.expect(",")
            value = self.expr()
            self.expect(")")
            return Put(reg, value, line)
        if self.accept("BR"):
            cond = self.expr()
            self.expect("?")
            then = self.ident("block label")
            self.expect(":")
            orelse = self.ident("block label")
            return Branch(cond, then, orelse, line)
        if self.accept("JMP"):
            return Jump(self.ident("block label"), line)
        if self.accept("RET"):
            nxt = self.tok
            if nxt.line == line and nxt.kind != "eof" and nxt.text != "}":
                return Ret(self.expr(), line)
            return Ret(None, line)
        raise self.fail("statement")

    def expr(self) -> Expr:
        tok = self.tok
        if self.accept("CONST"):
            return Const(self.integer())
        if self.accept("STR"):
            if self.tok.kind != "string":
                raise self.fail("string literal")
            data = _unescape(self.tok.text)
            self.i += 1
            return ConstStr(data)
        if self.accept("GET"):
            self.expect("(")
            reg = self.integer()
            self.expect(")")
            return Get(reg)
        if self.accept("GLOBAL"):
            self.expect("(")
            name = self.ident("global name")
            self.expect(")")
            return GlobalAddr(name)
        if self.accept("LOAD"):
            self.expect("(")
            addr = self.expr()
            self.expect(",")
            size = self.integer()
            self.expect(")")
            return Load(addr, size)
        if self.accept("STRLEN"):
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return StrLen(arg)
        if tok.kind == "ident" and tok.text in BINOPS:
            self.i += 1
            self.expect("(")
            lhs = self.expr()
            self.expect(",")
            rhs = self.expr()
            self.expect(")")
            return Binop(tok.text, lhs, rhs)
        if tok.kind == "ident" and tok.text in UNOPS:
            self.i += 1
            self.expect("(")
            arg = self.expr()
            self.expect(")")
            return Unop(tok.text, arg)
        if tok.kind == "ident" and tok.text not in RESERVED:
            self.i += 1
            return Tmp(tok.text)
        raise self.fail("expression")


def parse_program(text: str, *, check: bool = True) -> Program:
    """Parse mini-IR text; raise ParseError / SemanticError with positions."""
    program = _Parser(text).program()
    if check:
        diags = validate(program)
        if diags:
            raise SemanticError(diags)
    return program


def load_program(path) -> Program:
    with open(path, encoding="utf-8") as fh:
        return parse_program(fh.read())


# --------------------------------------------------------------------------
# Printer


def format_expr(e: Expr) -> str:
    if isinstance(e, Const):
        return f"CONST {e.value}"
    if isinstance(e, ConstStr):
        return f"STR {_escape(e.data)}"
    if isinstance(e, Tmp):
        return e.name
    if isinstance(e, Get):
        return f"GET({e.reg})"
    if isinstance(e, GlobalAddr):
        return f"GLOBAL({e.name})"
    if isinstance(e, Load):
        return f"LOAD({format_expr(e.addr)}, {e.size})"
    if isinstance(e, Binop):
        return f"{e.op}({format_expr(e.lhs)}, {format_expr(e.rhs)})"
    if isinstance(e, Unop):
        return f"{e.op}({format_expr(e.arg)})"
    if isinstance(e, StrLen):
        return f"STRLEN({format_expr(e.arg)})"
    raise TypeError(e)


def format_stmt(s: Stmt) -> str:
    if isinstance(s, WrTmp):
        return f"{s.tmp} = {format_expr(s.expr)}"
    if isinstance(s, Store):
        size = "LEN" if s.size is LEN else str(s.size)
        return f"STORE({format_expr(s.addr)}, {format_expr(s.data)}, {size})"
    if isinstance(s, Put):
        return f"PUT({s.reg}, {format_expr(s.expr)})"
    if isinstance(s, Call):
        call = f"CALL {s.target}({', '.join(format_expr(a) for a in s.args)})"
        return f"{s.result} = {call}" if s.result else call
    if isinstance(s, Branch):
        return f"BR {format_expr(s.cond)} ? {s.then} : {s.orelse}"
    if isinstance(s, Jump):
        return f"JMP {s.target}"
    if isinstance(s, Ret):
        return "RET" if s.value is None else f"RET {format_expr(s.value)}"
    raise TypeError(s)


def print_program(p: Program) -> str:
    lines: list[str] = []
    for name, value in p.globals:
        lines.append(f"global {name} = {value}")
    if p.globals:
        lines.append("")
    for fn in p.functions.values():
        params = ", ".join(f"{n}: {k}" for n, k in fn.params)
        lines.append(f"func {fn.name}({params}) frame {fn.frame_size} {{")
        for block in fn.blocks.values():
            lines.append(f"{block.label}:")
            lines.extend(f"  {format_stmt(s)}" for s in block.stmts)
        lines.append("}")
        lines.append("")
    return "\n".join(lines)


# --------------------------------------------------------------------------
# Validation


def sub_exprs(e: Expr) -> Iterator[Expr]:
    yield e
    if isinstance(e, Load):
        yield from sub_exprs(e.addr)
    elif isinstance(e, Binop):
        yield from sub_exprs(e.lhs)
        yield from sub_exprs(e.rhs)
    elif isinstance(e, (Unop, StrLen)):
        yield from sub_exprs(e.arg)


def stmt_exprs(s: Stmt) -> tuple[Expr, ...]:
    if isinstance(s, WrTmp):
        return (s.expr,)
    if isinstance(s, Store):
        return (s.addr, s.data)
    if isinstance(s, Put):
        return (s.expr,)
    if isinstance(s, Call):
        return s.args
    if isinstance(s, Branch):
        return (s.cond,)
    if isinstance(s, Ret):
        return () if s.value is None else (s.value,)
    return ()


def assigned_tmp(s: Stmt) -> str | None:
    if isinstance(s, WrTmp):
        return s.tmp
    if isinstance(s, Call):
        return s.result
    return None


def validate(p: Program) -> list[Diagnostic]:
    diags: list[Diagnostic] = []
    if p.entry not in p.functions:
        diags.append(Diagnostic(f"entry function {p.entry} is not defined"))
    global_names = [g for g, _ in p.globals]
    if len(set(global_names)) != len(global_names):
        diags.append(Diagnostic("duplicate global name"))
    for fn in p.functions.values():
        if fn.name in INTRINSICS:
            diags.append(Diagnostic(f"function {fn.name} shadows an intrinsic", fn.line))
        pnames = fn.param_names
        if len(set(pnames)) != len(pnames):
            diags.append(Diagnostic(f"duplicate parameter in {fn.name}", fn.line))
        defined = set(pnames) | {t for _, _, s in fn.statements() if (t := assigned_tmp(s))}
        for label, block in fn.blocks.items():
            where = f"{fn.name}:{label}"
            seen: set[str] = set()
            if not block.stmts or not isinstance(block.stmts[-1], TERMINATORS):
                line = block.stmts[-1].line if block.stmts else fn.line
                diags.append(Diagnostic(f"block {label} does not end with BR, JMP or RET", line, where=where))
            for idx, s in enumerate(block.stmts):
                if isinstance(s, TERMINATORS) and idx != len(block.stmts) - 1:
                    diags.append(Diagnostic(f"terminator in the middle of block {label}", s.line, where=where))
                tmp = assigned_tmp(s)
                if tmp is not None:
                    if tmp in seen:
                        diags.append(Diagnostic(f"duplicate temporary {tmp} in block {label}", s.line, where=where))
                    seen.add(tmp)
                    if tmp in pnames:
                        diags.append(Diagnostic(f"assignment to parameter {tmp}", s.line, where=where))
                for target in _branch_targets(s):
                    if target not in fn.blocks:
                        diags.append(Diagnostic(f"undefined block {target}", s.line, where=where))
                if isinstance(s, Store) and s.size not in (LEN, 1, 8):
                    diags.append(Diagnostic(f"store size must be 1, 8 or LEN, got {s.size}", s.line, where=where))
                if isinstance(s, Call):
                    diags.extend(_check_call(p, s, where))
                for top in stmt_exprs(s):
                    for e in sub_exprs(top):
                        if isinstance(e, Tmp) and e.name not in defined:
                            diags.append(Diagnostic(f"undefined temporary {e.name}", s.line, where=where))
                        elif isinstance(e, Load) and e.size not in (1, 8):
                            diags.append(Diagnostic(f"load size must be 1 or 8, got {e.size}", s.line, where=where))
                        elif isinstance(e, GlobalAddr) and e.name not in global_names:
                            diags.append(Diagnostic(f"undefined global {e.name}", s.line, where=where))
    return diags


def _branch_targets(s: Stmt) -> tuple[str, ...]:
    if isinstance(s, Branch):
        return (s.then, s.orelse)
    if isinstance(s, Jump):
        return (s.target,)
    return ()


def _check_call(p: Program, s: Call, where: str) -> list[Diagnostic]:
    if s.target in INTRINSICS:
        arity, returns = INTRINSICS[s.target]
        if len(s.args) != arity:
            return [Diagnostic(f"{s.target} takes {arity} argument(s), got {len(s.args)}", s.line, where=where)]
        if s.result and not returns:
            return [Diagnostic(f"{s.target} returns no value", s.line, where=where)]
        return []
    callee = p.functions.get(s.target)
    if callee is None:
        return [Diagnostic(f"call to undefined function {s.target}", s.line, where=where)]
    if len(s.args) != len(callee.params):
        return [Diagnostic(f"{s.target} takes {len(callee.params)} argument(s), got {len(s.args)}", s.line, where=where)]
    return []


# --------------------------------------------------------------------------
# Control flow


@dataclass(frozen=True)
class CFG:
    entry: str
    succ: dict[str, tuple[str, ...]]

    @property
    def nodes(self) -> tuple[str, ...]:
        return tuple(self.succ)

    @property
    def edges(self) -> list[tuple[str, str]]:
        return [(a, b) for a, bs in self.succ.items() for b in bs]

    def reachable(self, start: str | None = None) -> set[str]:
        seen: set[str] = set()
        stack = [start or self.entry]
        while stack:
            node = stack.pop()
            if node in seen:
                continue
            seen.add(node)
            stack.extend(self.succ[node])
        return seen

    def reaches(self, src: str, dst: str) -> bool:
        """True when ``dst`` is reachable from ``src`` through at least one edge."""
        seen: set[str] = set()
        stack = list(self.succ[src])
        while stack:
            node = stack.pop()
            if node == dst:
                return True
            if node in seen:
                continue
            seen.add(node)
            stack.extend(self.succ[node])
        return False


def control_flow_graph(fn: Function) -> CFG:
    succ: dict[str, tuple[str, ...]] = {}
    for label, block in fn.blocks.items():
        targets: list[str] = []
        for t in _branch_targets(block.stmts[-1]) if block.stmts else ():
            if t not in targets:
                targets.append(t)
        succ[label] = tuple(targets)
    return CFG(fn.entry_block, succ)


def statement_precedes(cfg: CFG, a: tuple[str, int], b: tuple[str, int]) -> bool:
    """Whether statement ``b`` can execute after statement ``a`` in one activation."""
    (ba, ia), (bb, ib) = a, b
    if ba == bb and ia < ib:
        return True
    return cfg.reaches(ba, bb)
