"""Simulation and learning: covering arrays, Monte Carlo runs, TAR3, curve fitting.

The simulation executes the whole program on vectors from a covering array
and records, for every watched unit, the argument vector it was called with.
A constraint tree is annotated with the runs that reach each node.  The
learners then relate system inputs to unit inputs:

* :func:`run_tar3` selects system dimensions and ranges associated with a
  positive subset of runs,
* :func:`curve_fit` fits polynomial maps from unit variables to system
  dimensions,
* :func:`compute_map` combines both by walking up the constraint tree.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import interp, ir, solver
from .constraints import Constraint
from .symexec import ConstraintTree, TreeNode

DEFAULT_INT_BOX = (-1024, 1024)
DEFAULT_INT_LEVELS = 4
DEFAULT_STRENGTH = 2
DEFAULT_RUNS_CAP = 512
DEFAULT_BINS = 8
DEFAULT_MAX_CONJUNCTS = 3
DEFAULT_MIN_SUPPORT = 0.2
DEFAULT_LIFT_THRESHOLD = 2.0
DEFAULT_THRESHOLD = 30
DEFAULT_MAX_DEGREE = 3
CLOSEST_FRACTION = 0.2
_EXACT_RESIDUAL = 1e-9
_SEARCH_LIMIT = 400_000


class DegenerateSplit(Exception):
    pass


class InsufficientData(Exception):
    pass


class NoMapFound(Exception):
    pass


# --------------------------------------------------------------------------
# Level sets and covering arrays


def int_levels(box: tuple[int, int] = DEFAULT_INT_BOX, k: int = DEFAULT_INT_LEVELS) -> list[int]:
    """``k`` quantile midpoints of the box."""
    lo, hi = box
    return [lo + (hi - lo) * (2 * i + 1) // (2 * k) for i in range(k)]


def length_levels(caps: Iterable[int]) -> list[int]:
    """String-length levels {0, 1, cap/2, cap, cap+1, 2cap} over all capacities."""
    out = {0, 1}
    for cap in caps:
        out |= {cap // 2, cap, cap + 1, 2 * cap}
    return sorted(v for v in out if 0 <= v <= solver.MAX_STRING_LEN)


def covering_array(levels: Sequence[Sequence[object]], strength: int = DEFAULT_STRENGTH) -> list[tuple]:
    """Deterministic greedy covering array: every ``strength``-tuple of levels appears in some row."""
    d = len(levels)
    if d == 0:
        return [()]
    if any(len(lv) == 0 for lv in levels):
        raise ValueError("every dimension needs at least one level")
    if strength >= d:
        return [tuple(row) for row in itertools.product(*levels)]
    idx_levels = [range(len(lv)) for lv in levels]
    uncovered: set[tuple[tuple[int, ...], tuple[int, ...]]] = set()
    for dims in itertools.combinations(range(d), strength):
        for vals in itertools.product(*(idx_levels[j] for j in dims)):
            uncovered.add((dims, vals))
    rows: list[tuple[int, ...]] = []
    by_dims: dict[tuple[int, ...], list] = {}
    for dims in itertools.combinations(range(d), strength):
        by_dims[dims] = []
    while uncovered:
        dims, vals = min(uncovered)
        row: list[int | None] = [None] * d
        for j, v in zip(dims, vals):
            row[j] = v
        for j in range(d):
            if row[j] is not None:
                continue
            best, best_gain = 0, -1
            for v in idx_levels[j]:
                row[j] = v
                gain = sum(
                    1
                    for ds in by_dims
                    if j in ds and all(row[x] is not None for x in ds)
                    and (ds, tuple(row[x] for x in ds)) in uncovered  # type: ignore[misc]
                )
                if gain > best_gain:
                    best, best_gain = v, gain
            row[j] = best
        full = tuple(int(x) for x in row)  # type: ignore[arg-type]
        for ds in by_dims:
            uncovered.discard((ds, tuple(full[x] for x in ds)))
        rows.append(full)
    return [tuple(levels[j][i] for j, i in enumerate(r)) for r in rows]


# --------------------------------------------------------------------------
# Monte Carlo simulation


@dataclass
class SimulationSet:
    kinds: list[str]
    inputs: list[tuple]  # system vectors (int or bytes per dimension)
    V: np.ndarray  # numeric system vectors (string dims as lengths)
    calls: dict[str, list[list[interp.UnitCall]]]  # unit -> per run -> calls
    events: list[set[tuple[str, ir.Site]]]
    errors: list[str | None]
    levels: list[list[object]] = field(default_factory=list)

    @property
    def d(self) -> int:
        return len(self.kinds)

    def __len__(self) -> int:
        return len(self.inputs)

    def reached(self, unit: str) -> list[int]:
        return [k for k, calls in enumerate(self.calls.get(unit, [])) if calls]


def numeric(vec: Sequence[interp.Value]) -> list[int]:
    return [len(x) if isinstance(x, bytes) else int(x) for x in vec]


def level_sets(
    kinds: Sequence[str],
    caps: Iterable[int],
    box: tuple[int, int] = DEFAULT_INT_BOX,
    n_int_levels: int = DEFAULT_INT_LEVELS,
) -> list[list[object]]:
    ints = int_levels(box, n_int_levels)
    lens = length_levels(caps)
    return [list(ints) if k == "int" else [solver.materialize_string(n, seed=j) for n in lens]
            for j, k in enumerate(kinds)]


def monte_carlo(
    p: ir.Program,
    kinds: Sequence[str],
    levels: Sequence[Sequence[object]],
    strength: int = DEFAULT_STRENGTH,
    *,
    watch: Iterable[str] = (),
    runs_cap: int = DEFAULT_RUNS_CAP,
    random_fill: bool = False,
    seed: int = 0,
    box: tuple[int, int] = DEFAULT_INT_BOX,
    max_len: int | None = None,
    step_budget: int = 200_000,
) -> SimulationSet:
    """Run the program on a covering array of the level sets (plus optional random fill)."""
    if strength > max(len(kinds), 1) and kinds:
        strength = len(kinds)
    vectors = covering_array(levels, strength)[:runs_cap]
    if random_fill and kinds and len(vectors) < runs_cap:
        rng = np.random.default_rng(seed)
        if max_len is None:
            max_len = max((len(v) for lv in levels for v in lv if isinstance(v, bytes)), default=16)
        while len(vectors) < runs_cap:
            row: list[object] = []
            for j, k in enumerate(kinds):
                if k == "int":
                    row.append(int(rng.integers(box[0], box[1] + 1)))
                else:
                    row.append(solver.materialize_string(int(rng.integers(0, max_len + 1)), seed=j))
            vectors.append(tuple(row))
    watch = sorted(set(watch))
    calls: dict[str, list[list[interp.UnitCall]]] = {u: [] for u in watch}
    events, errors = [], []
    for vec in vectors:
        try:
            trace = interp.Interpreter(p, vec, watch=set(watch), step_budget=step_budget).run()
            err = None
        except interp.InterpError as exc:
            trace = exc.trace or interp.ExecutionTrace()
            err = f"{type(exc).__name__}: {exc}"
        for u in watch:
            calls[u].append([c for c in trace.unit_entries if c.function == u])
        events.append(trace.event_sites())
        errors.append(err)
    V = np.array([numeric(v) for v in vectors], dtype=float).reshape(len(vectors), len(kinds))
    return SimulationSet(list(kinds), list(vectors), V, calls, events, errors, [list(lv) for lv in levels])


def annotate(tree: ConstraintTree, sim: SimulationSet) -> None:
    """Attach (run index, unit vector) to every node a run's unit call reaches."""
    for n in tree.nodes:
        n.annotations.clear()
    for k, calls in enumerate(sim.calls.get(tree.unit.function, [])):
        for call in calls:
            vec = tree.unit_vector(call.args)
            if vec is None:
                continue
            for n in tree.match_path(call.blocks):
                if not n.annotations or n.annotations[-1][0] != k:
                    n.annotations.append((k, vec))


def unit_pairs(tree: ConstraintTree, sim: SimulationSet) -> list[list[tuple[int, ...]]]:
    """Per run, the unit vectors of all calls to the tree's unit."""
    out = []
    for calls in sim.calls.get(tree.unit.function, [[] for _ in range(len(sim))]):
        vecs = [tree.unit_vector(c.args) for c in calls]
        out.append([v for v in vecs if v is not None])
    return out


def passthrough_dims(tree: ConstraintTree, sim: SimulationSet, min_runs: int = 3) -> dict[int, int]:
    """Unit variable index -> system dim when the unit value always equals that input."""
    pairs = [(k, v) for k, vecs in enumerate(unit_pairs(tree, sim)) for v in vecs]
    out: dict[int, int] = {}
    if len(pairs) < min_runs:
        return out
    for i, uv in enumerate(tree.unit_vars):
        order = sorted(range(sim.d), key=lambda j: (sim.kinds[j] != uv.kind, j))
        for j in order:
            col = [sim.V[k, j] for k, _ in pairs]
            vals = [v[i] for _, v in pairs]
            if all(a == b for a, b in zip(col, vals)) and len(set(vals)) > 1:
                out[i] = j
                break
    return out


# --------------------------------------------------------------------------
# Treatment learning


@dataclass(frozen=True)
class Treatment:
    dims: tuple[int, ...]
    ranges: tuple[tuple[float, float], ...]
    lift: float
    smooth: bool
    support: int = 0
    precision: float = 0.0

    def contains(self, vec: Sequence[float]) -> bool:
        return all(lo <= vec[j] <= hi for j, (lo, hi) in zip(self.dims, self.ranges))

    def midpoint(self, dim: int) -> float:
        lo, hi = self.ranges[self.dims.index(dim)]
        return (lo + hi) / 2


def discretize(col: np.ndarray, bins: int = DEFAULT_BINS) -> tuple[np.ndarray, int]:
    """Bin index per value: one bin per distinct value when few, else equal width."""
    uniq = np.unique(col)
    if len(uniq) <= bins:
        return np.searchsorted(uniq, col), len(uniq)
    lo, hi = float(uniq[0]), float(uniq[-1])
    idx = np.floor((col - lo) / (hi - lo) * bins).astype(int)
    return np.clip(idx, 0, bins - 1), bins


def _bitset(mask: Iterable[bool]) -> int:
    out = 0
    for i, b in enumerate(mask):
        if b:
            out |= 1 << i
    return out


def _candidate_ranges(bin_idx: np.ndarray, nbins: int, pos_bits: int) -> list[tuple[int, int, int]]:
    """Contiguous bin ranges (a, b, member bitset), excluding the full range.

    Endpoints are restricted to bins holding at least one positive run: shrinking
    a range past an endpoint without positives never lowers support or lift.
    """
    bin_bits = [_bitset(bin_idx == b) for b in range(nbins)]
    useful = [b for b in range(nbins) if bin_bits[b] & pos_bits]
    out = []
    for ia, a in enumerate(useful):
        bits = 0
        prev = a
        bits = bin_bits[a]
        for b in useful[ia:]:
            for mid in range(prev + 1, b + 1):
                bits |= bin_bits[mid]
            prev = b
            if a == 0 and b == nbins - 1:
                continue
            out.append((a, b, bits))
    return out


def _score(tp: int, t: int, n: int, npos: int) -> Fraction:
    return Fraction(tp * n, t * npos)


def run_tar3(
    V: np.ndarray,
    positive: Sequence[bool],
    dims: Sequence[int] | None = None,
    *,
    bins: int = DEFAULT_BINS,
    max_conjuncts: int = DEFAULT_MAX_CONJUNCTS,
    min_support: float = DEFAULT_MIN_SUPPORT,
    lift_threshold: float = DEFAULT_LIFT_THRESHOLD,
) -> Treatment:
    """Best conjunction of per-dimension bin ranges for predicting ``positive``.

    lift = P(positive | treatment) / P(positive); a treatment must cover at
    least ``min_support`` of the positive runs.  Ties prefer larger support,
    then fewer dimensions.  The search is exhaustive over up to
    ``max_conjuncts`` dimensions when that is affordable and falls back to
    greedy growth otherwise.
    """
    V = np.asarray(V, dtype=float)
    pos = np.asarray(positive, dtype=bool)
    n = len(pos)
    npos = int(pos.sum())
    if npos == 0 or npos == n:
        raise DegenerateSplit("positive or negative set is empty")
    dims = list(range(V.shape[1])) if dims is None else list(dims)
    pos_bits = _bitset(pos)
    need = max(1, math.ceil(min_support * npos - 1e-12))
    binned = {j: discretize(V[:, j], bins) for j in dims}
    cands = {j: _candidate_ranges(binned[j][0], binned[j][1], pos_bits) for j in dims}

    best_key = None
    best: tuple = ()

    def consider(choice: tuple[tuple[int, tuple[int, int, int]], ...]) -> None:
        nonlocal best_key, best
        bits = (1 << n) - 1
        for _, (_, _, b) in choice:
            bits &= b
        tp = (bits & pos_bits).bit_count()
        if tp < need:
            return
        key = (_score(tp, bits.bit_count(), n, npos), tp, -len(choice))
        if best_key is None or key > best_key:
            best_key, best = key, choice

    total = sum(
        math.prod(len(cands[j]) for j in combo)
        for k in range(1, max_conjuncts + 1)
        for combo in itertools.combinations(dims, k)
    )
    if total <= _SEARCH_LIMIT:
        for k in range(1, max_conjuncts + 1):
            for combo in itertools.combinations(dims, k):
                for ranges in itertools.product(*(cands[j] for j in combo)):
                    consider(tuple(zip(combo, ranges)))
    else:
        chosen: tuple = ()
        for _ in range(max_conjuncts):
            before = best_key
            used = {j for j, _ in chosen}
            base = best
            for j in dims:
                if j in used:
                    continue
                for r in cands[j]:
                    consider(tuple(sorted(chosen + ((j, r),))))
            if best_key == before:
                break
            chosen = best if best is not base else chosen
    if best_key is None:
        return Treatment((), (), 1.0, False, npos, npos / n)
    lift_frac, tp, _ = best_key
    choice = best
    sel_dims = tuple(j for j, _ in choice)
    ranges = []
    for j, (a, b, _) in choice:
        col, idx = V[:, j], binned[j][0]
        in_range = (idx >= a) & (idx <= b)
        ranges.append((float(col[in_range].min()), float(col[in_range].max())))
    bits = (1 << n) - 1
    for _, (_, _, b) in choice:
        bits &= b
    precision = tp / bits.bit_count()
    lift = float(lift_frac)
    smooth = lift >= lift_threshold and all(
        _contiguous_high_bins(V, pos, binned, choice, j, precision) for j in sel_dims
    )
    return Treatment(sel_dims, tuple(ranges), lift, smooth, tp, precision)


def _contiguous_high_bins(V, pos, binned, choice, dim, precision) -> bool:
    """High-precision bins of ``dim`` (under the other conjuncts) form one interval."""
    mask = np.ones(len(pos), dtype=bool)
    for j, (a, b, _) in choice:
        if j != dim:
            idx = binned[j][0]
            mask &= (idx >= a) & (idx <= b)
    idx, nbins = binned[dim]
    high = []
    for b in range(nbins):
        sel = mask & (idx == b)
        tot = int(sel.sum())
        if tot == 0:
            continue
        high.append(pos[sel].sum() / tot >= 0.5 * precision)
    flags = "".join("1" if h else "0" for h in high).strip("0")
    return "0" not in flags


def brute_force_best_lift(
    V: np.ndarray, positive: Sequence[bool], *, bins: int = DEFAULT_BINS,
    max_conjuncts: int = DEFAULT_MAX_CONJUNCTS, min_support: float = DEFAULT_MIN_SUPPORT,
) -> float:
    """Best lift over every single-range-per-dimension treatment, by direct enumeration."""
    V = np.asarray(V, dtype=float)
    pos = np.asarray(positive, dtype=bool)
    n, npos = len(pos), int(pos.sum())
    need = max(1, math.ceil(min_support * npos - 1e-12))
    per_dim = []
    for j in range(V.shape[1]):
        idx, nb = discretize(V[:, j], bins)
        per_dim.append([(idx >= a) & (idx <= b) for a in range(nb) for b in range(a, nb)
                        if not (a == 0 and b == nb - 1)])
    best = Fraction(0)
    for k in range(1, max_conjuncts + 1):
        for combo in itertools.combinations(range(V.shape[1]), k):
            for masks in itertools.product(*(per_dim[j] for j in combo)):
                m = np.logical_and.reduce(masks)
                tp = int((m & pos).sum())
                if tp >= need:
                    best = max(best, Fraction(tp * n, int(m.sum()) * npos))
    return float(best)


# --------------------------------------------------------------------------
# Curve fitting


def _monomials(m: int, degree: int) -> list[tuple[int, ...]]:
    out = []
    for total in range(degree + 1):
        for combo in itertools.combinations_with_replacement(range(m), total):
            exps = [0] * m
            for i in combo:
                exps[i] += 1
            out.append(tuple(exps))
    return out


def _design(X: np.ndarray, exps: Sequence[tuple[int, ...]]) -> np.ndarray:
    cols = [np.prod([X[:, i] ** e for i, e in enumerate(ex)], axis=0) if any(ex) else np.ones(len(X))
            for ex in exps]
    return np.column_stack(cols)


@dataclass(frozen=True)
class OutputFit:
    dim: int
    degree: int
    exponents: tuple[tuple[int, ...], ...]
    coefficients: tuple[float, ...]
    residual: float

    def predict(self, x: Sequence[float]) -> float:
        total = 0.0
        for ex, c in zip(self.exponents, self.coefficients):
            term = c
            for xi, e in zip(x, ex):
                term *= float(xi) ** e
            total += term
        return total

    def coefficient(self, exps: tuple[int, ...]) -> float:
        return self.coefficients[self.exponents.index(exps)] if exps in self.exponents else 0.0


@dataclass(frozen=True)
class FittedMap:
    in_vars: tuple[str, ...]
    out_dims: tuple[int, ...]
    fits: tuple[OutputFit, ...]

    @property
    def residual(self) -> float:
        return max((f.residual for f in self.fits), default=0.0)

    def predict(self, unit_values: Mapping[str, int] | Sequence[float]) -> dict[int, float]:
        if isinstance(unit_values, Mapping):
            x = [float(unit_values.get(v, 0)) for v in self.in_vars]
        else:
            x = [float(v) for v in unit_values]
        return {f.dim: f.predict(x) for f in self.fits}


def _fit_degree(X: np.ndarray, y: np.ndarray, degree: int) -> tuple[list[tuple[int, ...]], np.ndarray, float]:
    exps = _monomials(X.shape[1], degree)
    A = _design(X, exps)
    norms = np.linalg.norm(A, axis=0)
    norms[norms == 0] = 1.0
    coef, *_ = np.linalg.lstsq(A / norms, y, rcond=None)
    coef = coef / norms
    resid = float(np.sqrt(np.mean((A @ coef - y) ** 2))) if len(y) else 0.0
    return exps, coef, resid


def curve_fit(
    pairs: Sequence[tuple[Sequence[float], Sequence[float]]],
    max_degree: int = DEFAULT_MAX_DEGREE,
    *,
    in_vars: Sequence[str] | None = None,
    out_dims: Sequence[int] | None = None,
) -> FittedMap:
    """Least-squares polynomial map from unit vectors to system vectors.

    Per output, the degree is the smallest one whose residual improves by
    less than 5% at the next degree (or is already exact).
    """
    if not pairs:
        raise InsufficientData("no pairs")
    X = np.array([[float(v) for v in u] for u, _ in pairs], dtype=float)
    Y = np.array([[float(v) for v in s] for _, s in pairs], dtype=float)
    if X.ndim != 2:
        X = X.reshape(len(pairs), -1)
    m, q = X.shape[1], Y.shape[1]
    in_vars = tuple(in_vars) if in_vars is not None else tuple(f"u{i}" for i in range(m))
    out_dims = tuple(out_dims) if out_dims is not None else tuple(range(q))
    distinct = len({tuple(r) for r in X})
    usable = [deg for deg in range(1, max_degree + 1) if distinct >= len(_monomials(m, deg))]
    if m == 0:
        usable = [0]
    if not usable:
        raise InsufficientData(f"{distinct} distinct point(s) cannot support a degree-1 fit in {m} variable(s)")
    fits = []
    for j in range(q):
        y = Y[:, j]
        scale = max(1.0, float(np.max(np.abs(y))) if len(y) else 1.0)
        results = {deg: _fit_degree(X, y, deg) for deg in usable}
        chosen = usable[-1]
        for a, b in zip(usable, usable[1:]):
            ra, rb = results[a][2], results[b][2]
            if ra <= _EXACT_RESIDUAL * scale or rb > 0.95 * ra:
                chosen = a
                break
        else:
            if len(usable) == 1:
                chosen = usable[0]
        exps, coef, resid = results[chosen]
        if not math.isfinite(resid):
            raise InsufficientData("non-finite residual")
        fits.append(OutputFit(out_dims[j], chosen, tuple(exps), tuple(float(c) for c in coef), resid))
    return FittedMap(in_vars, out_dims, tuple(fits))


# --------------------------------------------------------------------------
# ComputeMap


def closeness(c: Constraint, model: Mapping[str, int]) -> float:
    """Sum of normalized atom violations; 0 exactly when every atom holds."""
    total = 0.0
    for a in c.atoms:
        v = a.violation(model)
        if v:
            total += v / max(1, sum(abs(k) for _, k in a.expr.coeffs))
    return total


def _slack(c: Constraint, model: Mapping[str, int]) -> float:
    total = 0.0
    for a in c.atoms:
        if a.op in ("<", "<="):
            total += abs(a.expr.evaluate(model)) / max(1, sum(abs(k) for _, k in a.expr.coeffs))
    return total


@dataclass
class MapResult:
    in_vars: tuple[str, ...]
    dims: tuple[int, ...]
    fmap: FittedMap
    constraint: Constraint
    treatment: Treatment | None
    smooth: bool
    runs: tuple[int, ...]  # runs used for fitting


def _closest_runs(c: Constraint, tree: ConstraintTree, per_run: list[list[tuple[int, ...]]]) -> list[tuple[int, tuple[int, ...], tuple]]:
    """(run, best unit vector, sort key) for reached runs, closest first."""
    scored = []
    for k, vecs in enumerate(per_run):
        best = None
        for vec in vecs:
            model = tree.model_of(vec)
            key = (closeness(c, model), _slack(c, model), k)
            if best is None or key < best[2]:
                best = (k, vec, key)
        if best is not None:
            scored.append(best)
    scored.sort(key=lambda t: t[2])
    return scored


def _fit_pairs(tree, sim, runs_vecs, in_vars, dims, max_degree):
    idx = [tree.var_names.index(v) for v in in_vars]
    pairs = [([vec[i] for i in idx], [sim.V[k, j] for j in dims]) for k, vec in runs_vecs]
    return curve_fit(pairs, max_degree, in_vars=in_vars, out_dims=dims)


def compute_map(
    C: Constraint,
    tree: ConstraintTree,
    sim: SimulationSet,
    n: TreeNode,
    n_prime: TreeNode | None,
    *,
    threshold: int = DEFAULT_THRESHOLD,
    max_degree: int = DEFAULT_MAX_DEGREE,
    tar3_options: Mapping[str, object] | None = None,
) -> MapResult:
    """Map from the unit variables of ``C`` to the system dimensions that drive them."""
    opts = dict(tar3_options or {})
    per_run = unit_pairs(tree, sim)
    in_vars = tuple(v for v in tree.var_names if v in C.vars)
    scored = _closest_runs(C, tree, per_run)
    take = math.ceil(CLOSEST_FRACTION * len(sim))
    chosen = scored[:take]
    positive = np.zeros(len(sim), dtype=bool)
    for k, _, _ in chosen:
        positive[k] = True
    treatment = None
    try:
        treatment = run_tar3(sim.V, positive, **opts)  # type: ignore[arg-type]
    except DegenerateSplit:
        treatment = None
    if treatment is not None and treatment.smooth and in_vars:
        try:
            fmap = _fit_pairs(tree, sim, [(k, v) for k, v, _ in chosen], in_vars, treatment.dims, max_degree)
            return MapResult(in_vars, treatment.dims, fmap, C, treatment, True, tuple(k for k, _, _ in chosen))
        except InsufficientData:
            pass
    if n_prime is not None:
        return compute_map(C.conj(n_prime.term), tree, sim, n, n_prime.parent,
                           threshold=threshold, max_degree=max_degree, tar3_options=tar3_options)
    # walk up until an ancestor is covered by enough runs
    node = n
    covering: list[int] = sorted({k for k, _ in n.annotations})
    while node.parent is not None:
        C = C.conj(node.parent.term)
        node = node.parent
        covering = sorted({k for k, _ in node.annotations})
        if len(covering) >= threshold:
            break
    if len(covering) < threshold:
        raise NoMapFound(f"node {n.id}: only {len(covering)} covering run(s) even at the root")
    in_vars = tuple(v for v in tree.var_names if v in C.vars)
    positive = np.zeros(len(sim), dtype=bool)
    positive[covering] = True
    try:
        treatment = run_tar3(sim.V, positive, **opts)  # type: ignore[arg-type]
        dims = treatment.dims or tuple(range(sim.d))
    except DegenerateSplit:
        treatment, dims = None, tuple(range(sim.d))
    runs_vecs = []
    for k in covering:
        vecs = per_run[k]
        if vecs:
            model_best = min(vecs, key=lambda v: closeness(C, tree.model_of(v)))
            runs_vecs.append((k, model_best))
    if not in_vars or not runs_vecs:
        raise NoMapFound(f"no usable runs for node {n.id}")
    try:
        fmap = _fit_pairs(tree, sim, runs_vecs, in_vars, dims, max_degree)
    except InsufficientData as exc:
        raise NoMapFound(f"node {n.id}: {exc}") from None
    return MapResult(in_vars, tuple(dims), fmap, C, treatment, False, tuple(covering))
