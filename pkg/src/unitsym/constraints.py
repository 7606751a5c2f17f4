"""Linear integer constraints over unit variables and string lengths.

An :class:`Atom` is ``sum(coef * var) + const  OP  0`` with OP one of
``<``, ``<=``, ``==``, ``!=``.  A :class:`Constraint` is a conjunction of
atoms; the empty conjunction is ``true``.  String-length variables are named
``len(<param>)`` and live in ``[0, max string length]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable, Mapping

OPS = ("<", "<=", "==", "!=")
_NEGATE = {"==": "!=", "!=": "=="}
_FLIP = {"<": ">", "<=": ">=", "==": "==", "!=": "!="}


def is_length_var(name: str) -> bool:
    return name.startswith("len(")


def length_var(param: str) -> str:
    return f"len({param})"


@dataclass(frozen=True)
class LinExpr:
    """Affine integer expression ``sum(coef * var) + const``."""

    coeffs: tuple[tuple[str, int], ...] = ()
    const: int = 0

    @staticmethod
    def var(name: str, coef: int = 1) -> "LinExpr":
        return LinExpr(((name, coef),), 0)

    @staticmethod
    def of(value: int) -> "LinExpr":
        return LinExpr((), value)

    @staticmethod
    def _make(terms: Mapping[str, int], const: int) -> "LinExpr":
        return LinExpr(tuple(sorted((v, c) for v, c in terms.items() if c != 0)), const)

    @property
    def is_const(self) -> bool:
        return not self.coeffs

    @property
    def vars(self) -> frozenset[str]:
        return frozenset(v for v, _ in self.coeffs)

    def __add__(self, other: "LinExpr | int") -> "LinExpr":
        if isinstance(other, int):
            return LinExpr(self.coeffs, self.const + other)
        terms = dict(self.coeffs)
        for v, c in other.coeffs:
            terms[v] = terms.get(v, 0) + c
        return LinExpr._make(terms, self.const + other.const)

    def __neg__(self) -> "LinExpr":
        return LinExpr(tuple((v, -c) for v, c in self.coeffs), -self.const)

    def __sub__(self, other: "LinExpr | int") -> "LinExpr":
        return self + (-other)

    def scale(self, k: int) -> "LinExpr":
        if k == 0:
            return LinExpr.of(0)
        return LinExpr(tuple((v, c * k) for v, c in self.coeffs), self.const * k)

    def evaluate(self, model: Mapping[str, int]) -> int:
        return self.const + sum(c * model[v] for v, c in self.coeffs)

    def __str__(self) -> str:
        return _format_terms(self.coeffs, self.const)


def _format_terms(coeffs: Iterable[tuple[str, int]], const: int = 0) -> str:
    parts: list[str] = []
    for v, c in coeffs:
        mag = abs(c)
        term = v if mag == 1 else f"{mag}*{v}"
        if not parts:
            parts.append(term if c > 0 else f"-{term}")
        else:
            parts.append(f"+ {term}" if c > 0 else f"- {term}")
    if const or not parts:
        if not parts:
            parts.append(str(const))
        else:
            parts.append(f"+ {const}" if const > 0 else f"- {-const}")
    return " ".join(parts)


@dataclass(frozen=True)
class Atom:
    expr: LinExpr
    op: str

    def __post_init__(self) -> None:
        if self.op not in OPS:
            raise ValueError(f"unknown operator {self.op}")

    @staticmethod
    def compare(lhs: LinExpr, op: str, rhs: LinExpr) -> "Atom":
        """Build ``lhs op rhs`` for op in <, <=, ==, !=, >, >=."""
        if op == ">":
            return Atom(rhs - lhs, "<")
        if op == ">=":
            return Atom(rhs - lhs, "<=")
        return Atom(lhs - rhs, op)

    @property
    def vars(self) -> frozenset[str]:
        return self.expr.vars

    def negate(self) -> "Atom":
        if self.op == "<":
            return Atom(-self.expr, "<=")
        if self.op == "<=":
            return Atom(-self.expr, "<")
        return Atom(self.expr, _NEGATE[self.op])

    def holds(self, model: Mapping[str, int]) -> bool:
        return _test(self.expr.evaluate(model), self.op)

    def violation(self, model: Mapping[str, int]) -> int:
        """Distance from satisfaction, 0 iff the atom holds."""
        val = self.expr.evaluate(model)
        if self.op == "<":
            return max(0, val + 1)
        if self.op == "<=":
            return max(0, val)
        if self.op == "==":
            return abs(val)
        return 1 if val == 0 else 0

    @property
    def constant_truth(self) -> bool | None:
        if not self.expr.is_const:
            return None
        return _test(self.expr.const, self.op)

    def __str__(self) -> str:
        coeffs = list(self.expr.coeffs)
        rhs = -self.expr.const
        op = self.op
        if coeffs and all(c < 0 for _, c in coeffs):
            coeffs = [(v, -c) for v, c in coeffs]
            rhs = -rhs
            op = _FLIP[op]
        if not coeffs:
            return f"{self.expr.const} {op} 0"
        return f"{_format_terms(coeffs)} {op} {rhs}"


def _test(val: int, op: str) -> bool:
    if op == "<":
        return val < 0
    if op == "<=":
        return val <= 0
    if op == "==":
        return val == 0
    return val != 0


@dataclass(frozen=True)
class Constraint:
    """Conjunction of atoms.  ``Constraint()`` is true."""

    atoms: tuple[Atom, ...] = ()

    @staticmethod
    def of(*atoms: Atom) -> "Constraint":
        return Constraint(()).conj(*atoms)

    @staticmethod
    def false() -> "Constraint":
        return Constraint((Atom(LinExpr.of(1), "<="),))

    def conj(self, *others: "Atom | Constraint") -> "Constraint":
        atoms = list(self.atoms)
        for other in others:
            new = other.atoms if isinstance(other, Constraint) else (other,)
            for a in new:
                if a.constant_truth is True or a in atoms:
                    continue
                atoms.append(a)
        return Constraint(tuple(atoms))

    __and__ = conj

    @property
    def vars(self) -> frozenset[str]:
        out: set[str] = set()
        for a in self.atoms:
            out |= a.vars
        return frozenset(out)

    @property
    def is_true(self) -> bool:
        return not self.atoms

    @property
    def is_trivially_false(self) -> bool:
        return any(a.constant_truth is False for a in self.atoms)

    def holds(self, model: Mapping[str, int]) -> bool:
        return all(a.holds(model) for a in self.atoms)

    def __str__(self) -> str:
        if not self.atoms:
            return "true"
        return "{" + " ∧ ".join(str(a) for a in self.atoms) + "}"
