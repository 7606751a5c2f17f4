"""Bounded integer solver for conjunctions of linear atoms.

The search is a depth-first branch-and-prune over variable boxes:

* bounds propagation on every ``<``, ``<=`` and ``==`` atom,
* ``!=`` atoms pruned once all but one of their variables are fixed,
* an LP-relaxation feasibility check whenever propagation stalls,
* value enumeration on small domains, bisection on large ones.

Boxes are searched with growing radius around a preferred point (0 by
default), so the first model found has small magnitude.  A search that
exhausts the full box proves unsatisfiability.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.optimize import linprog

from .constraints import Atom, Constraint, is_length_var

INT_BOX = (-(1 << 20), 1 << 20)
MAX_STRING_LEN = 4096
_RADII = (4, 64, 4096)
_ENUM_LIMIT = 16
_PROPAGATION_ROUNDS = 40


class DomainExceeded(Exception):
    """Constraint outside the linear integer + length domain."""


class SolverUnknown(Exception):
    """Search budget exhausted before a verdict."""


class LengthOutOfRange(ValueError):
    pass


@dataclass(frozen=True)
class _Row:
    coefs: tuple[tuple[int, int], ...]  # (var index, coefficient)
    const: int
    op: str  # "<=", "==" or "!="


class _Budget(Exception):
    pass


class Solver:
    def __init__(
        self,
        int_box: tuple[int, int] = INT_BOX,
        max_len: int = MAX_STRING_LEN,
        node_budget: int = 100_000,
    ):
        self.int_box = int_box
        self.max_len = max_len
        self.node_budget = node_budget

    # -- public -------------------------------------------------------------

    def solve(self, c: Constraint, prefer: Mapping[str, int] | None = None) -> dict[str, int] | None:
        """Return a model of ``c`` or None when unsatisfiable."""
        names = sorted(c.vars)
        index = {v: i for i, v in enumerate(names)}
        rows: list[_Row] = []
        for atom in c.atoms:
            row = self._row(atom, index)
            if row is None:
                continue
            if row == "false":
                return None
            rows.append(row)
        if not names:
            return {}
        if _grouped_conflict(c.atoms) or _equalities_unsolvable(rows):
            return None
        box_lo = [0 if is_length_var(v) else self.int_box[0] for v in names]
        box_hi = [self.max_len if is_length_var(v) else self.int_box[1] for v in names]
        prefer = prefer or {}
        center = [min(max(int(prefer.get(v, 0)), box_lo[i]), box_hi[i]) for i, v in enumerate(names)]
        if not self._lp_feasible(rows, box_lo, box_hi, len(names)):
            return None
        radii = [r for r in _RADII if r < max(h - l for l, h in zip(box_lo, box_hi))] + [None]
        for radius in radii:
            if radius is None:
                lo, hi = list(box_lo), list(box_hi)
            else:
                lo = [max(box_lo[i], center[i] - radius) for i in range(len(names))]
                hi = [min(box_hi[i], center[i] + radius) for i in range(len(names))]
            self._nodes = 0
            try:
                found = self._search(rows, lo, hi, center)
            except _Budget:
                if radius is None:
                    raise SolverUnknown(f"node budget {self.node_budget} exhausted") from None
                continue
            if found is not None:
                model = {v: found[i] for i, v in enumerate(names)}
                assert c.holds(model), "solver produced an invalid model"
                return model
        return None

    def satisfiable(self, c: Constraint, prefer: Mapping[str, int] | None = None) -> bool:
        return self.solve(c, prefer) is not None

    # -- internals ----------------------------------------------------------

    def _row(self, atom: Atom, index: Mapping[str, int]):
        coefs = tuple((index[v], k) for v, k in atom.expr.coeffs)
        const = atom.expr.const
        for _, k in coefs:
            if not isinstance(k, int):
                raise DomainExceeded(f"non-integer coefficient in {atom}")
        if not coefs:
            return None if atom.constant_truth else "false"
        op = atom.op
        if op == "<":
            op, const = "<=", const + 1
        if op == "==":
            g = math.gcd(*(abs(k) for _, k in coefs))
            if const % g:
                return "false"
        return _Row(coefs, const, op)

    def _lp_feasible(self, rows: list[_Row], lo: list[int], hi: list[int], n: int) -> bool:
        ub = [r for r in rows if r.op == "<="]
        eq = [r for r in rows if r.op == "=="]
        if not ub and not eq:
            return True

        def mat(rs):
            a = np.zeros((len(rs), n))
            b = np.zeros(len(rs))
            for i, r in enumerate(rs):
                for j, k in r.coefs:
                    a[i, j] = k
                b[i] = -r.const
            return a, b

        a_ub, b_ub = mat(ub) if ub else (None, None)
        a_eq, b_eq = mat(eq) if eq else (None, None)
        res = linprog(
            np.zeros(n), A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
            bounds=list(zip(lo, hi)), method="highs",
        )
        return res.status != 2

    def _propagate(self, rows: list[_Row], lo: list[int], hi: list[int]) -> str:
        """Tighten bounds in place.  Returns 'fail', 'fixpoint' or 'stalled'."""
        for _ in range(_PROPAGATION_ROUNDS):
            changed = False
            for r in rows:
                if r.op == "!=":
                    free = [(j, k) for j, k in r.coefs if lo[j] != hi[j]]
                    if len(free) > 1:
                        continue
                    fixed_sum = r.const + sum(k * lo[j] for j, k in r.coefs if lo[j] == hi[j])
                    if not free:
                        if fixed_sum == 0:
                            return "fail"
                        continue
                    j, k = free[0]
                    if fixed_sum % k:
                        continue
                    banned = -fixed_sum // k
                    if banned == lo[j]:
                        lo[j] += 1
                        changed = True
                    elif banned == hi[j]:
                        hi[j] -= 1
                        changed = True
                    if lo[j] > hi[j]:
                        return "fail"
                    continue
                if r.op == "==":
                    # integrality: the unfixed coefficients must divide what remains
                    free = [abs(k) for j, k in r.coefs if lo[j] != hi[j]]
                    if free:
                        rest = r.const + sum(k * lo[j] for j, k in r.coefs if lo[j] == hi[j])
                        if rest % math.gcd(*free):
                            return "fail"
                senses = (1,) if r.op == "<=" else (1, -1)
                for s in senses:
                    min_sum = s * r.const
                    for j, k in r.coefs:
                        k *= s
                        min_sum += k * (lo[j] if k > 0 else hi[j])
                    if min_sum > 0:
                        return "fail"
                    for j, k in r.coefs:
                        k *= s
                        rest = min_sum - k * (lo[j] if k > 0 else hi[j])
                        if k > 0:
                            bound = (-rest) // k
                            if bound < hi[j]:
                                hi[j] = bound
                                changed = True
                        else:
                            bound = _ceil_div(-rest, k)
                            if bound > lo[j]:
                                lo[j] = bound
                                changed = True
                        if lo[j] > hi[j]:
                            return "fail"
            if not changed:
                return "fixpoint"
        return "stalled"

    def _search(self, rows: list[_Row], lo: list[int], hi: list[int], center: list[int]) -> list[int] | None:
        self._nodes += 1
        if self._nodes > self.node_budget:
            raise _Budget()
        status = self._propagate(rows, lo, hi)
        if status == "fail":
            return None
        if status == "stalled" and not self._lp_feasible(
            [r for r in rows if r.op != "!="], lo, hi, len(lo)
        ):
            return None
        free = [j for j in range(len(lo)) if lo[j] != hi[j]]
        if not free:
            for r in rows:
                val = r.const + sum(k * lo[j] for j, k in r.coefs)
                if (r.op == "<=" and val > 0) or (r.op == "==" and val != 0) or (r.op == "!=" and val == 0):
                    return None
            return list(lo)
        j = min(free, key=lambda i: (hi[i] - lo[i], i))
        c = min(max(center[j], lo[j]), hi[j])
        if hi[j] - lo[j] < _ENUM_LIMIT:
            values = sorted(range(lo[j], hi[j] + 1), key=lambda v: (abs(v - c), v))
            branches = [(v, v) for v in values]
        else:
            mid = (lo[j] + hi[j]) // 2
            left, right = (lo[j], mid), (mid + 1, hi[j])
            near_left = abs(c - max(min(c, mid), lo[j])) <= abs(c - min(max(c, mid + 1), hi[j]))
            branches = [left, right] if near_left else [right, left]
        for b_lo, b_hi in branches:
            lo2, hi2 = list(lo), list(hi)
            lo2[j], hi2[j] = b_lo, b_hi
            found = self._search(rows, lo2, hi2, center)
            if found is not None:
                return found
        return None


def _grouped_conflict(atoms) -> bool:
    """Atoms sharing one linear part whose bounds and exclusions leave no value."""
    groups: dict[tuple, list] = {}
    for atom in atoms:
        if not atom.expr.coeffs:
            continue
        coeffs = atom.expr.coeffs
        sign = 1 if coeffs[0][1] > 0 else -1
        key = tuple((v, sign * k) for v, k in coeffs)
        groups.setdefault(key, []).append((sign, atom))
    for members in groups.values():
        if len(members) < 2:
            continue
        # the shared part t satisfies sign * (t_signed) + const op 0, with t = sign * expr - const
        lo, hi, excluded = -math.inf, math.inf, set()
        for sign, atom in members:
            c = atom.expr.const
            # atom: sign * t + c op 0  ->  bound on t
            if atom.op == "==":
                lo, hi = max(lo, -sign * c), min(hi, -sign * c)
            elif atom.op == "!=":
                excluded.add(-sign * c)
            else:
                strict = 1 if atom.op == "<" else 0
                if sign > 0:
                    hi = min(hi, -c - strict)
                else:
                    lo = max(lo, c + strict)
        while lo in excluded:
            lo += 1
        while hi in excluded:
            hi -= 1
        if lo > hi:
            return True
    return False


def _equalities_unsolvable(rows: list[_Row]) -> bool:
    """Integer infeasibility of the equalities alone, ignoring bounds.

    Each equality is divided by its coefficient gcd, then variables with a unit
    coefficient are substituted away one at a time.  An equality whose
    coefficient gcd does not divide its constant has no integer solution.
    """
    eqs = []
    for r in rows:
        if r.op == "==":
            g = math.gcd(*(k for _, k in r.coefs))
            eqs.append(({j: k // g for j, k in r.coefs}, r.const // g))
    while eqs:
        pick = next(((i, j) for i, (co, _) in enumerate(eqs) for j, k in co.items() if abs(k) == 1), None)
        if pick is None:
            break
        i, j = pick
        co, const = eqs.pop(i)
        k = co.pop(j)
        # x_j = -k * (const + sum co * x), valid since k = +-1
        out = []
        for co2, c2 in eqs:
            m = co2.pop(j, 0)
            if m:
                for v, a in co.items():
                    co2[v] = co2.get(v, 0) - m * k * a
                c2 -= m * k * const
            co2 = {v: a for v, a in co2.items() if a}
            if not co2:
                if c2:
                    return True
                continue
            g = math.gcd(*co2.values())
            if c2 % g:
                return True
            out.append(({v: a // g for v, a in co2.items()}, c2 // g))
        eqs = out
    return any(const % math.gcd(*co.values()) for co, const in eqs if co)


def _ceil_div(n: int, d: int) -> int:
    """ceil(n / d) for d != 0."""
    return -((-n) // d)


_DEFAULT = Solver()


def satisfiable(c: Constraint, prefer: Mapping[str, int] | None = None) -> dict[str, int] | None:
    """Model of ``c`` (possibly empty dict) or None when unsatisfiable."""
    return _DEFAULT.solve(c, prefer)


_PRINTABLE = b"ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789"


def materialize_string(length: int, seed: int = 0, max_len: int = MAX_STRING_LEN) -> bytes:
    """Deterministic printable string of exactly ``length`` bytes."""
    if not 0 <= length <= max_len:
        raise LengthOutOfRange(f"length {length} outside [0, {max_len}]")
    n = len(_PRINTABLE)
    return bytes(_PRINTABLE[(seed * 7 + i) % n] for i in range(length))
