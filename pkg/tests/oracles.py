"""Independent reference implementations used as test oracles."""

from __future__ import annotations

import itertools
import random
from fractions import Fraction
from typing import Sequence

import numpy as np

from unitsym.constraints import Atom, Constraint, LinExpr, is_length_var

_OPS = ("<", "<=", "==", "!=")


def random_system(rng: random.Random, max_vars: int = 8, max_atoms: int = 16) -> tuple[Constraint, list[str], int]:
    """Random linear system, its variables and the box radius for brute force.

    Most atoms are made true at a planted point inside the box.
    """
    n = rng.randint(1, max_vars)
    radius = 2 if n <= 6 else 1
    names = [f"v{i}" if rng.random() < 0.75 else f"len(s{i})" for i in range(n)]
    planted = {v: rng.randint(0, radius) if is_length_var(v) else rng.randint(-radius, radius) for v in names}
    atoms = []
    for _ in range(rng.randint(1, max_atoms)):
        chosen = rng.sample(names, rng.randint(1, min(3, n)))
        expr = LinExpr(tuple(sorted((v, rng.choice([-3, -2, -1, 1, 2, 3])) for v in chosen)), 0)
        op = rng.choice(_OPS)
        val = expr.evaluate(planted)
        if rng.random() < 0.9:
            shift = {"<": val + 1 + rng.randint(0, 2), "<=": val + rng.randint(0, 2), "==": val, "!=": val + rng.choice([-1, 1])}[op]
        else:
            shift = val + rng.randint(-3, 3)
        atoms.append(Atom(expr - shift, op))
    return Constraint.of(*atoms), names, radius


def brute_force_model(c: Constraint, names: Sequence[str], radius: int) -> dict[str, int] | None:
    """First model in the box [-radius, radius] (lengths [0, radius]) by exhaustive enumeration."""
    if not names:
        return {} if all(a.holds({}) for a in c.atoms) else None
    axes = [np.arange(0 if is_length_var(v) else -radius, radius + 1) for v in names]
    grid = np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1).reshape(-1, len(names))
    ok = np.ones(len(grid), dtype=bool)
    col = {v: i for i, v in enumerate(names)}
    for a in c.atoms:
        val = np.full(len(grid), a.expr.const, dtype=np.int64)
        for v, k in a.expr.coeffs:
            val += k * grid[:, col[v]]
        ok &= {"<": val < 0, "<=": val <= 0, "==": val == 0, "!=": val != 0}[a.op]
    hits = np.flatnonzero(ok)
    if not len(hits):
        return None
    return {v: int(grid[hits[0], i]) for i, v in enumerate(names)}


def lift_of(V: np.ndarray, positive: np.ndarray, dims: Sequence[int], ranges: Sequence[tuple[float, float]]) -> Fraction:
    mask = np.ones(len(V), dtype=bool)
    for d, (lo, hi) in zip(dims, ranges):
        mask &= (V[:, d] >= lo) & (V[:, d] <= hi)
    if not mask.any():
        return Fraction(0)
    base = Fraction(int(positive.sum()), len(V))
    return Fraction(int((positive & mask).sum()), int(mask.sum())) / base


def best_single_interval(V: np.ndarray, positive: np.ndarray, dim: int) -> tuple[int, int]:
    """Tightest value interval on one dimension holding every positive run."""
    vals = V[positive, dim]
    return int(vals.min()), int(vals.max())


def subsets(items: Sequence[int], max_size: int) -> list[tuple[int, ...]]:
    return [c for k in range(1, max_size + 1) for c in itertools.combinations(items, k)]


def bin_index(col: Sequence[float], bins: int) -> tuple[list[int], int]:
    """One bin per distinct value when there are at most ``bins`` of them, else equal-width bins."""
    uniq = sorted(set(col))
    if len(uniq) <= bins:
        pos = {v: i for i, v in enumerate(uniq)}
        return [pos[v] for v in col], len(uniq)
    lo, hi = uniq[0], uniq[-1]
    return [min(bins - 1, int((v - lo) / (hi - lo) * bins)) for v in col], bins


def best_lift_by_enumeration(rows: Sequence[Sequence[float]], positive: Sequence[bool], bins: int,
                             max_conjuncts: int, min_support: float) -> Fraction:
    """Highest lift over conjunctions of one proper bin range per dimension."""
    n, npos = len(rows), sum(positive)
    need = max(1, -(-int(min_support * npos * 10**9) // 10**9))
    d = len(rows[0])
    per_dim = []
    for j in range(d):
        idx, nb = bin_index([r[j] for r in rows], bins)
        opts = []
        for a in range(nb):
            for b in range(a, nb):
                if (a, b) != (0, nb - 1):
                    opts.append(frozenset(k for k in range(n) if a <= idx[k] <= b))
        per_dim.append(opts)
    best = Fraction(0)
    for combo in subsets(list(range(d)), max_conjuncts):
        for sets in itertools.product(*(per_dim[j] for j in combo)):
            members = frozenset.intersection(*sets)
            tp = sum(1 for k in members if positive[k])
            if members and tp >= need:
                best = max(best, Fraction(tp * n, len(members) * npos))
    return best
