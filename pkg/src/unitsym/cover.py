"""Witness generation for suspicious sites of one test unit.

For every node on a possibly vulnerable path the engine first acquires a way
to steer system inputs towards it: TAR3 ranges when the node and its siblings
are covered by the simulation, a fitted map from :func:`compute_map`
otherwise.  Each satisfiable node with a vulnerability constraint is then
solved for ``Const(n) ∧ VulConst(n)``; the model is turned into a system input
vector and replayed on the whole program.  Only replays that raise the
matching oracle event confirm a finding.
"""

from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import interp, ir, learning, solver, specs
from .constraints import Constraint
from .learning import MapResult, SimulationSet, Treatment
from .symexec import ConstraintTree, TreeNode, replay_unit

log = logging.getLogger(__name__)

REPLAY_CONFIRMED, UNIT_ONLY, UNCONFIRMED = "ReplayConfirmed", "UnitOnly", "Unconfirmed"
DEFAULT_RETRIES = 16
DEFAULT_TIMEOUT_SECS = 900.0


class EmptyRange(Exception):
    pass


class MapOutputOutOfBox(Exception):
    pass


class AnalysisTimeout(Exception):
    pass


@dataclass(frozen=True)
class CoverConfig:
    seed: int = 0
    retries: int = DEFAULT_RETRIES
    threshold: int = learning.DEFAULT_THRESHOLD
    max_degree: int = learning.DEFAULT_MAX_DEGREE
    int_box: tuple[int, int] = solver.INT_BOX
    max_len: int = solver.MAX_STRING_LEN
    deadline: float | None = None  # time.monotonic() value


@dataclass
class Finding:
    vclass: str
    unit: str
    site: ir.Site
    unit_witness: dict[str, int]
    system_witness: tuple | None
    confirmation: str
    mode: str
    node: int
    attempts: int = 0
    seconds: float = 0.0
    notes: list[str] = field(default_factory=list)

    @property
    def confirmed(self) -> bool:
        return self.confirmation == REPLAY_CONFIRMED


def _check_deadline(config: CoverConfig) -> None:
    if config.deadline is not None and time.monotonic() > config.deadline:
        raise AnalysisTimeout("analysis deadline reached")


def possibly_vulnerable(tree: ConstraintTree) -> set[int]:
    """Ids of nodes lying on a root-to-leaf path through a node with a live vulnerability constraint."""
    out: set[int] = set()
    for n in tree.nodes:
        if any(not v.statically_safe for v in n.vulns):
            out.update(a.id for a in n.ancestors())
            stack = [n]
            while stack:
                m = stack.pop()
                out.add(m.id)
                stack.extend(m.children)
    return out


def _sat(c: Constraint, prefer: Mapping[str, int] | None = None) -> dict[str, int] | None:
    try:
        return solver.satisfiable(c, prefer)
    except solver.SolverUnknown:
        return None


def _covered_anchor(n: TreeNode) -> TreeNode | None:
    node: TreeNode | None = n
    while node is not None:
        if node.covered:
            return node
        node = node.parent
    return None


def _ranked_annotations(node: TreeNode | None, c: Constraint, tree: ConstraintTree) -> list[tuple[int, tuple[int, ...]]]:
    if node is None:
        return []
    seen, out = set(), []
    for k, vec in sorted(node.annotations, key=lambda a: (learning.closeness(c, tree.model_of(a[1])), a[0])):
        if k not in seen:
            seen.add(k)
            out.append((k, vec))
    return out


def _as_value(kind: str, x: float, seed: int, config: CoverConfig, strict: bool) -> interp.Value:
    v = int(round(x))
    if kind == "int":
        lo, hi = config.int_box
        if not lo <= v <= hi:
            if strict:
                raise MapOutputOutOfBox(f"value {v} outside [{lo}, {hi}]")
            v = min(max(v, lo), hi)
        return v
    if not 0 <= v <= config.max_len:
        if strict:
            raise MapOutputOutOfBox(f"length {v} outside [0, {config.max_len}]")
        v = min(max(v, 0), config.max_len)
    return solver.materialize_string(v, seed=seed)


def generate_system_witness(
    model: Mapping[str, int],
    mode: str,
    sim: SimulationSet,
    tree: ConstraintTree,
    *,
    treatment: Treatment | None = None,
    mapping: MapResult | None = None,
    base: Sequence[interp.Value] | None = None,
    passthrough: Mapping[int, int] | None = None,
    config: CoverConfig = CoverConfig(),
) -> tuple:
    """System input vector for a unit model, using TAR3 ranges or a fitted map."""
    kinds = sim.kinds
    if base is None:
        base = [lv[0] if lv else (0 if k == "int" else b"") for k, lv in zip(kinds, sim.levels or [[]] * len(kinds))]
    vec = list(base)
    if mode == "ranges":
        if treatment is not None:
            for j, (lo, hi) in zip(treatment.dims, treatment.ranges):
                if lo > hi:
                    raise EmptyRange(f"empty range for dimension {j}")
                vec[j] = _as_value(kinds[j], (lo + hi) / 2, j, config, strict=False)
    elif mode == "map":
        if mapping is None:
            raise ValueError("map mode needs a fitted map")
        for j, val in mapping.fmap.predict(model).items():
            vec[j] = _as_value(kinds[j], val, j, config, strict=True)
    # an input observed to equal a unit argument in every run is set directly
    for i, j in (passthrough or {}).items():
        name = tree.unit_vars[i].name
        if name in model:
            vec[j] = _as_value(kinds[j], model[name], j, config, strict=False)
    return tuple(vec)


def _replay_hits(p: ir.Program, witness: Sequence[interp.Value], kind: str, site: ir.Site) -> bool:
    trace, _ = interp.run_lenient(p, witness)
    return (kind, site) in trace.event_sites()


def cover(
    p: ir.Program,
    unit: specs.TestUnit,
    tree: ConstraintTree,
    sim: SimulationSet,
    config: CoverConfig = CoverConfig(),
) -> list[Finding]:
    """Findings for every satisfiable, possibly vulnerable node of ``tree``."""
    learning.annotate(tree, sim)
    pv = possibly_vulnerable(tree)
    treatments: dict[int, Treatment | None] = {}
    maps: dict[int, MapResult | None] = {}
    notes: dict[int, list[str]] = {}

    for n in tree.bfs():
        _check_deadline(config)
        if n.id not in pv:
            continue
        if n.covered and all(s.covered for s in n.siblings):
            positive = np.zeros(len(sim), dtype=bool)
            positive[[k for k, _ in n.annotations]] = True
            try:
                treatments[n.id] = learning.run_tar3(sim.V, positive)
            except learning.DegenerateSplit:
                treatments[n.id] = None
        elif _sat(n.const) is not None:
            try:
                maps[n.id] = learning.compute_map(
                    n.term, tree, sim, n, n.parent, threshold=config.threshold, max_degree=config.max_degree
                )
            except learning.NoMapFound as exc:
                maps[n.id] = None
                notes.setdefault(n.id, []).append(f"no map: {exc}")

    passthrough = learning.passthrough_dims(tree, sim)
    findings: list[Finding] = []
    done: set[ir.Site] = set()
    for n in tree.bfs():
        if n.id not in pv or not n.vulns:
            continue
        for v in n.vulns:
            if v.statically_safe or v.site in done:
                continue
            _check_deadline(config)
            cn = n.const.conj(v.constraint)
            if _sat(cn) is None:
                continue
            f = _witness_for(p, tree, sim, n, v, cn, treatments, maps, passthrough, config)
            f.notes.extend(notes.get(n.id, []))
            findings.append(f)
            if f.confirmed:
                done.add(v.site)
    # keep the best finding per site
    best: dict[ir.Site, Finding] = {}
    rank = {REPLAY_CONFIRMED: 0, UNIT_ONLY: 1, UNCONFIRMED: 2}
    for f in findings:
        cur = best.get(f.site)
        if cur is None or rank[f.confirmation] < rank[cur.confirmation]:
            best[f.site] = f
    return [best[s] for s in sorted(best)]


def _witness_for(p, tree, sim, n, v, cn, treatments, maps, passthrough, config) -> Finding:
    start = time.monotonic()
    kind = specs.ORACLE_KIND[v.vclass]
    anchor = _covered_anchor(n)
    ranked = _ranked_annotations(anchor, cn, tree)
    if n.covered and n.id in treatments:
        mode = "ranges"
    elif maps.get(n.id) is not None:
        mode = "map"
    else:
        mode = "ranges"  # nearest covered ancestor fills everything
    treatment = treatments.get(n.id)
    mapping = maps.get(n.id)
    first_model = None
    attempts = 0
    for r in range(max(1, config.retries)):
        _check_deadline(config)
        attempts += 1
        observed = tree.model_of(ranked[r % len(ranked)][1]) if ranked else {}
        prefer = observed or None
        if r and prefer is not None and r >= len(ranked):
            prefer = {k: x + r for k, x in prefer.items()}
        model = _sat(cn, prefer)
        if model is None:
            break
        # unconstrained variables keep the value seen in the base run
        for name in tree.var_names:
            model.setdefault(name, observed.get(name, 0))
        if first_model is None:
            first_model = model
        base = sim.inputs[ranked[r % len(ranked)][0]] if ranked else None
        try:
            witness = generate_system_witness(
                model, mode, sim, tree, treatment=treatment, mapping=mapping,
                base=base, passthrough=passthrough, config=config,
            )
        except (EmptyRange, MapOutputOutOfBox) as exc:
            log.debug("retry %d at %s: %s", r, v.site, exc)
            continue
        if _replay_hits(p, witness, kind, v.site):
            return Finding(v.vclass, tree.unit.function, v.site, model, witness, REPLAY_CONFIRMED, mode, n.id,
                           attempts, time.monotonic() - start)
    model = first_model or {}
    confirmation = UNCONFIRMED
    if first_model is not None:
        trace = replay_unit(p, tree, first_model)
        if (kind, v.site) in trace.event_sites():
            confirmation = UNIT_ONLY
    return Finding(v.vclass, tree.unit.function, v.site, model, None, confirmation, mode, n.id,
                   attempts, time.monotonic() - start)
