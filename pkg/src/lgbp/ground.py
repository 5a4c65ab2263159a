"""Propositional ground-truth machinery.

Brute-force inference over the ground Markov network, explicit region
graphs, running-intersection validation, and the parent-to-child GBP scheme
that the lifted engine must simulate.  Single-threaded per run; inputs are
immutable, so independent runs can execute concurrently.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .mln import MLN, Atom, MLNError, OracleLimitError, format_atom, \
    ground_atoms, ground_formulas
from .tables import LOG_EPS, damp_log, logsumexp, marginalize, normalize_table

__all__ = [
    "FactorGraph", "GroundRegion", "GroundRegionGraph", "PropagationConfig",
    "BeliefResult", "ground_markov_network", "brute_force_z",
    "brute_force_marginal", "validate_running_intersection", "gbp_run",
    "bethe_region_graph", "region_graph_to_text",
]

BRUTE_FORCE_CAP = 25
_CHUNK = 1 << 20


@dataclass(frozen=True)
class FactorGraph:
    """Binary variables plus log-space factor tables.

    Table axis p corresponds to scope position p (index 0 = false); the
    flattened order used by the brute-force ops maps assignment bits b_p to
    flat index sum(b_p * 2^p).
    """
    variables: tuple[Atom, ...]
    factors: tuple[tuple[tuple[Atom, ...], np.ndarray], ...]


@dataclass(frozen=True)
class GroundRegion:
    atoms: tuple[Atom, ...]
    factor_ids: tuple[int, ...]


@dataclass(frozen=True)
class GroundRegionGraph:
    regions: tuple[GroundRegion, ...]
    edges: tuple[tuple[int, int], ...]          # (parent index, child index)
    factors: tuple[tuple[tuple[Atom, ...], np.ndarray], ...]

    def __post_init__(self):
        for p, c in self.edges:
            if not set(self.regions[c].atoms) <= set(self.regions[p].atoms):
                raise MLNError(f"edge ({p},{c}): child atoms not in parent")


@dataclass(frozen=True)
class PropagationConfig:
    max_iterations: int = 1000
    tolerance: float = 1e-7
    damping: float = 0.5
    schedule: str = "synchronous"

    def __post_init__(self):
        if self.tolerance <= 0:
            raise ValueError("tolerance must be positive")
        if not (0.0 <= self.damping < 1.0):
            raise ValueError("damping must lie in [0, 1)")
        if self.schedule != "synchronous":
            raise ValueError("only the synchronous schedule is supported")


@dataclass
class BeliefResult:
    beliefs: list[np.ndarray]            # normalized linear tables, per region
    marginals: dict[Atom, float]         # P(atom = true)
    iterations_used: int
    converged: bool
    residuals: list[float] = field(default_factory=list)
    messages: dict[tuple[int, int], np.ndarray] = field(default_factory=dict)


# ---------------------------------------------------------------------------
# Ground network and brute force
# ---------------------------------------------------------------------------

def ground_markov_network(mln: MLN) -> FactorGraph:
    """One binary variable per ground atom, one factor per ground clause."""
    variables = tuple(ground_atoms(mln))
    factors = []
    for g in ground_formulas(mln):
        scope = g.atoms()
        table = np.full((2,) * len(scope), g.weight)
        required: dict[Atom, set[bool]] = {}
        for pos, a in g.literals:
            required.setdefault(a, set()).add(not pos)  # falsifying value
        if all(len(v) == 1 for v in required.values()):
            cell = tuple(1 if next(iter(required[a])) else 0 for a in scope)
            table[cell] = 0.0
        # atoms appearing with both signs make the clause a tautology
        factors.append((scope, table))
    return FactorGraph(variables, tuple(factors))


def _factor_scores(fg: FactorGraph, cap: int):
    n = len(fg.variables)
    if n > cap:
        raise OracleLimitError(f"{n} variables exceeds brute-force cap {cap}")
    idx = {a: i for i, a in enumerate(fg.variables)}
    flats = [(scope, table.reshape(-1, order="F")) for scope, table in fg.factors]
    for start in range(0, 1 << n, _CHUNK):
        assign = np.arange(start, min(start + _CHUNK, 1 << n), dtype=np.uint64)
        scores = np.zeros(assign.size)
        for scope, flat in flats:
            key = np.zeros(assign.size, dtype=np.int64)
            for axis, a in enumerate(scope):
                bit = ((assign >> np.uint64(idx[a])) & np.uint64(1)).astype(np.int64)
                key += bit << axis
            scores += flat[key]
        yield assign, scores


def brute_force_z(fg: FactorGraph, cap: int = BRUTE_FORCE_CAP) -> float:
    """Exact log partition function by world enumeration."""
    parts = [logsumexp(scores) for _, scores in _factor_scores(fg, cap)]
    return logsumexp(np.array(parts))


def brute_force_marginal(fg: FactorGraph, atoms, cap: int = BRUTE_FORCE_CAP) -> np.ndarray:
    """Exact normalized joint over the given atoms (linear, axis i = atoms[i])."""
    atoms = tuple(atoms)
    idx = {a: i for i, a in enumerate(fg.variables)}
    for a in atoms:
        if a not in idx:
            raise MLNError(f"unknown atom {format_atom(a)}")
    m = max(float(np.max(s)) for _, s in _factor_scores(fg, cap))
    acc = np.zeros(1 << len(atoms))
    for assign, scores in _factor_scores(fg, cap):
        key = np.zeros(assign.size, dtype=np.int64)
        for axis, a in enumerate(atoms):
            bit = ((assign >> np.uint64(idx[a])) & np.uint64(1)).astype(np.int64)
            key += bit << axis
        np.add.at(acc, key, np.exp(scores - m))
    acc /= acc.sum()
    return acc.reshape((2,) * len(atoms), order="F")


# ---------------------------------------------------------------------------
# Region graphs
# ---------------------------------------------------------------------------

def _topological_order(rg: GroundRegionGraph) -> list[int]:
    children: dict[int, list[int]] = {i: [] for i in range(len(rg.regions))}
    indeg = [0] * len(rg.regions)
    for p, c in rg.edges:
        children[p].append(c)
        indeg[c] += 1
    queue = [i for i, d in enumerate(indeg) if d == 0]
    order = []
    while queue:
        v = queue.pop()
        order.append(v)
        for c in children[v]:
            indeg[c] -= 1
            if indeg[c] == 0:
                queue.append(c)
    if len(order) != len(rg.regions):
        raise MLNError("region graph contains a cycle")
    return order


def _descendant_sets(rg: GroundRegionGraph) -> list[set[int]]:
    children: dict[int, list[int]] = {i: [] for i in range(len(rg.regions))}
    for p, c in rg.edges:
        children[p].append(c)
    desc: list[set[int]] = [set() for _ in rg.regions]
    for v in reversed(_topological_order(rg)):
        for c in children[v]:
            desc[v].add(c)
            desc[v] |= desc[c]
    return desc


def validate_running_intersection(rg: GroundRegionGraph):
    """Check the running intersection property.

    Returns (True, None) or (False, (v1, v2, atom)) with the first violation
    in canonical order.  Raises on cyclic graphs.
    """
    desc = _descendant_sets(rg)
    closures = [d | {i} for i, d in enumerate(desc)]
    containing: dict[Atom, list[int]] = {}
    for i, region in enumerate(rg.regions):
        for a in region.atoms:
            containing.setdefault(a, []).append(i)
    for a in sorted(containing, key=format_atom):
        holders = containing[a]
        for v1, v2 in itertools.combinations(holders, 2):
            common = closures[v1] & closures[v2]
            if not any(a in rg.regions[v3].atoms for v3 in common):
                return False, (v1, v2, a)
    return True, None


def bethe_region_graph(fg: FactorGraph) -> GroundRegionGraph:
    """Factors as parents over their scopes, one child region per variable."""
    regions = [GroundRegion(scope, (i,)) for i, (scope, _) in enumerate(fg.factors)]
    var_region = {}
    for v in fg.variables:
        var_region[v] = len(regions)
        regions.append(GroundRegion((v,), ()))
    edges = []
    for i, (scope, _) in enumerate(fg.factors):
        for a in scope:
            edges.append((i, var_region[a]))
    return GroundRegionGraph(tuple(regions), tuple(edges), tuple(fg.factors))


def region_graph_to_text(rg: GroundRegionGraph) -> str:
    lines = []
    for i, r in enumerate(rg.regions):
        atoms = " ".join(format_atom(a) for a in r.atoms)
        lines.append(f"region {i}: atoms[{atoms}] factors{list(r.factor_ids)}")
    for p, c in sorted(rg.edges):
        lines.append(f"edge {p} -> {c}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# Parent-to-child GBP
# ---------------------------------------------------------------------------

def _embed(table: np.ndarray, sub_atoms, region_atoms) -> np.ndarray:
    axes = [region_atoms.index(a) for a in sub_atoms]
    order = np.argsort(axes)
    t = np.transpose(table, axes=order)
    shape = [1] * len(region_atoms)
    for a in axes:
        shape[a] = 2
    return t.reshape(shape)


def gbp_run(rg: GroundRegionGraph, config: PropagationConfig = PropagationConfig(),
            trace_hook=None) -> BeliefResult:
    """Synchronous parent-to-child propagation to a fixed point.

    Beliefs follow the region-graph belief equation (factors, parent
    messages, and descendants' external messages); the update rule for an
    edge divides the marginalized parent belief by every term of the child's
    belief except the message being updated.  Non-convergence is reported,
    never raised.
    """
    desc = _descendant_sets(rg)
    closures = [d | {i} for i, d in enumerate(desc)]
    parents_of: dict[int, list[int]] = {i: [] for i in range(len(rg.regions))}
    for e, (p, c) in enumerate(rg.edges):
        parents_of[c].append(e)

    base = []
    for region in rg.regions:
        table = np.zeros((2,) * len(region.atoms))
        for fid in region.factor_ids:
            scope, ftab = rg.factors[fid]
            table = table + _embed(ftab, scope, region.atoms)
        base.append(table)

    # per region: edges whose messages enter its belief
    belief_edges: list[list[int]] = [[] for _ in rg.regions]
    for r in range(len(rg.regions)):
        belief_edges[r].extend(parents_of[r])
        for d in sorted(desc[r]):
            for e in parents_of[d]:
                if rg.edges[e][0] not in closures[r]:
                    belief_edges[r].append(e)

    messages = [normalize_table(np.zeros((2,) * len(rg.regions[c].atoms)))
                for p, c in rg.edges]

    def belief_log(r: int, msgs) -> np.ndarray:
        table = base[r].copy()
        for e in belief_edges[r]:
            scope = rg.regions[rg.edges[e][1]].atoms
            table += _embed(msgs[e], scope, rg.regions[r].atoms)
        return table

    residuals = []
    converged = False
    iterations = 0
    for sweep in range(config.max_iterations):
        beliefs = [belief_log(r, messages) for r in range(len(rg.regions))]
        new_messages = []
        residual = 0.0
        for e, (p, c) in enumerate(rg.edges):
            axes = tuple(rg.regions[p].atoms.index(a) for a in rg.regions[c].atoms)
            num = marginalize(beliefs[p], axes)
            m_new = normalize_table(num - (beliefs[c] - messages[e]))
            m_new = normalize_table(damp_log(m_new, messages[e], config.damping))
            residual = max(residual, float(np.max(np.abs(
                np.exp(m_new) - np.exp(messages[e])))))
            new_messages.append(m_new)
        messages = new_messages
        iterations = sweep + 1
        residuals.append(residual)
        if trace_hook is not None:
            trace_hook(sweep, messages, residual)
        if residual < config.tolerance:
            converged = True
            break

    final = [normalize_table(belief_log(r, messages))
             for r in range(len(rg.regions))]
    marginals: dict[Atom, float] = {}
    holder: dict[Atom, int] = {}
    for i, region in enumerate(rg.regions):
        for a in region.atoms:
            if a not in holder or len(rg.regions[holder[a]].atoms) > len(region.atoms):
                holder[a] = i
    for a, r in holder.items():
        axis = rg.regions[r].atoms.index(a)
        marg = marginalize(final[r], (axis,))
        lin = np.exp(marg - logsumexp(marg))
        marginals[a] = float(lin[1])
    return BeliefResult(
        beliefs=[np.exp(b - logsumexp(b.reshape(-1))) for b in final],
        marginals=marginals,
        iterations_used=iterations,
        converged=converged,
        residuals=residuals,
        messages={rg.edges[e]: np.exp(m) for e, m in enumerate(messages)},
    )
