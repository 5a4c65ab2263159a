"""Lifted regions, region graphs, simulated ground graphs, and statistics.

A lifted region is a region-model MLN (in exchangeable normal form), a set
of grounded variables V_g whose assignments enumerate the ground copies, and
a lifted factorization over the representative partial grounding.  Edges
carry a role: which literal occurrences of the child's cell in the parent
clause the edge aligns to.  Roles keep message identity honest when a
predicate occurs several times in one clause.

Statistics (how many identical copies the simulated graph holds) are
computed by counting CSP solutions with the fixed copy's bindings frozen and
are validated against the explicit simulated graph in the tests.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field

import numpy as np

from .evaluator import RegionModel, compile_query, FactorizationInvalid
from .factorization import FactorizationNode, tree_paths, tree_vertices
from .ground import GroundRegion, GroundRegionGraph, \
    validate_running_intersection
from .lifted import default_factorization, jd_contains, jd_sets
from .mln import (MLN, Atom, Constraint, GroupKey, Literal, MLNError,
                  WeightedClause, clause_groups, clause_solutions,
                  format_atom, group_atoms, group_id_str, groups_consistent,
                  literal_pattern, mln_groups)

__all__ = [
    "LiftedRegion", "LiftedEdge", "LiftedRegionGraph",
    "make_lifted_region", "marginal_compatible", "message_compatible",
    "simulate_ground_graph", "validate_lifted", "truncate_domains",
    "stat_gp", "stat_gd", "stat_ge", "descendant_copies",
    "construct_structure", "lrg_to_text",
]


def _substitute_clause(cl: WeightedClause, theta: dict) -> WeightedClause:
    lits = tuple(
        Literal(l.positive, l.pred,
                tuple(theta.get(a, a) for a in l.args))
        for l in cl.literals)
    cons = set()
    for c in cl.constraints:
        if c.kind == "dom":
            if c.a not in theta:
                cons.add(c)
        else:
            in_a, in_b = c.a in theta, c.b in theta
            if in_a != in_b:
                raise MLNError(
                    "partial grounding splits an equality/inequality "
                    "constraint; unsupported V_g")
            # fully substituted constraints were satisfied by the solution
            if not in_a:
                cons.add(c)
    return WeightedClause(lits, cl.weight, frozenset(cons))


class LiftedRegion:
    """⟨M_r, V_g, E_rg⟩ plus the derived copy and cell structure."""

    def __init__(self, mln: MLN, grounded_vars: frozenset,
                 factorization: FactorizationNode, name: str = ""):
        self.mln = mln
        self.grounded_vars = frozenset(grounded_vars)
        self.factorization = factorization
        self.name = name
        self.base_model = RegionModel(mln, tile=False)
        self.copies = self._enumerate_copies()
        rep = self.copies[0] if self.copies else {}
        self.rep_mln = MLN(mln.domains, mln.predicates, tuple(
            _substitute_clause(cl, rep) for cl in mln.clauses))
        self.rep_model = RegionModel(self.rep_mln, tile=False)
        self._copy_atoms: list[frozenset] | None = None

    def _enumerate_copies(self):
        out = [dict()]
        for cl in self.mln.clauses:
            mine = sorted(set(cl.variables) & self.grounded_vars)
            if not mine:
                continue
            seen = []
            for sol in clause_solutions(self.mln, cl):
                r = {v: sol[v] for v in mine}
                if r not in seen:
                    seen.append(r)
            out = [dict(a, **b) for a in out for b in seen]
        return out

    def _per_copy_data(self):
        """atoms and weighted formulas per copy, computed in one sweep."""
        if self._copy_atoms is not None:
            return
        atoms = [set() for _ in self.copies]
        formulas = [[] for _ in self.copies]
        for cl in self.mln.clauses:
            mine = sorted(set(cl.variables) & self.grounded_vars)
            index: dict[tuple, list[int]] = {}
            for i, copy in enumerate(self.copies):
                index.setdefault(tuple((v, copy[v]) for v in mine),
                                 []).append(i)
            for sol in clause_solutions(self.mln, cl):
                targets = index.get(tuple((v, sol[v]) for v in mine), [])
                ground_lits = tuple(
                    (l.positive, (l.pred, tuple(
                        sol[a] if cl.is_variable(a) else a for a in l.args)))
                    for l in cl.literals)
                for t in targets:
                    for _pos, a in ground_lits:
                        atoms[t].add(a)
                    if cl.weight != 0.0:
                        formulas[t].append((ground_lits, cl.weight))
        self._copy_atoms = [frozenset(s) for s in atoms]
        self._copy_formulas = formulas

    def copy_atoms(self, idx: int) -> frozenset:
        self._per_copy_data()
        return self._copy_atoms[idx]

    def copy_formulas(self, idx: int):
        """Weighted ground formulas of one copy as ((sign, atom), ...) lists."""
        self._per_copy_data()
        return self._copy_formulas[idx]

    def cells(self) -> list[GroupKey]:
        return list(self.base_model.groups)

    def cell_tags(self, key: GroupKey) -> tuple[str, ...]:
        """Per-position encoding of a cell in this region: positions whose
        variables are grounded by V_g count as G; the rest come from the
        factorization vertex of the corresponding representative cell."""
        occurrence = None
        for cl in self.mln.clauses:
            for li, lit in enumerate(cl.literals):
                if literal_pattern(cl, lit) == key:
                    occurrence = (cl, lit)
                    break
            if occurrence:
                break
        if occurrence is None:
            raise MLNError(f"cell {group_id_str(key)} not in region")
        cl, lit = occurrence
        rep = self.copies[0] if self.copies else {}
        rep_lit = Literal(lit.positive, lit.pred, tuple(
            rep.get(a, a) for a in lit.args))
        rep_cl = _substitute_clause(cl, rep)
        rep_key = literal_pattern(rep_cl, rep_lit)
        vertex = None
        for v in tree_vertices(self.factorization):
            if v.group == rep_key:
                vertex = v
                break
        if vertex is None:
            raise MLNError(
                f"cell {group_id_str(rep_key)} missing from factorization")
        tags = []
        for p, arg in enumerate(lit.args):
            if arg in self.grounded_vars or not cl.is_variable(arg):
                tags.append("G")
            else:
                tags.append(vertex.tags[p])
        return tuple(tags)

    def counted_cell(self, key: GroupKey) -> bool:
        return all(t == "C" for t in self.cell_tags(key))


@dataclass(frozen=True)
class LiftedEdge:
    parent: int
    child: int
    role: tuple  # ("cell",) or ("lits", clause_idx, (lit_idx, ...))


class LiftedRegionGraph:
    def __init__(self, regions: list[LiftedRegion], edges: list[LiftedEdge]):
        self.regions = regions
        self.edges = list(edges)
        for e in self.edges:
            if not message_compatible(regions[e.parent], regions[e.child]):
                raise MLNError(
                    f"edge {e.parent}->{e.child} is not message compatible")
        self.children = {i: [] for i in range(len(regions))}
        self.parents = {i: [] for i in range(len(regions))}
        for ei, e in enumerate(self.edges):
            self.children[e.parent].append(ei)
            self.parents[e.child].append(ei)
        # descendant closure over regions (must be acyclic)
        self.desc: list[set[int]] = [set() for _ in regions]
        order = self._topo()
        for v in reversed(order):
            for ei in self.children[v]:
                c = self.edges[ei].child
                self.desc[v].add(c)
                self.desc[v] |= self.desc[c]

    def _topo(self):
        indeg = [0] * len(self.regions)
        for e in self.edges:
            indeg[e.child] += 1
        queue = [i for i, d in enumerate(indeg) if d == 0]
        out = []
        while queue:
            v = queue.pop()
            out.append(v)
            for ei in self.children[v]:
                c = self.edges[ei].child
                indeg[c] -= 1
                if indeg[c] == 0:
                    queue.append(c)
        if len(out) != len(self.regions):
            raise MLNError("lifted region graph contains a cycle")
        return out


def make_lifted_region(m: MLN, v_g, e: FactorizationNode | None = None,
                       name: str = "") -> LiftedRegion:
    """Construct and validate a lifted region.

    Adds zero-weight singleton clauses for cells named by the factorization
    but absent from the formulas, validates the factorization against the
    representative partial grounding, and rejects regions whose ground
    formulas are not covered by the JD family.
    """
    v_g = frozenset(v_g)
    mln = m
    if e is not None:
        present = {k for cl in m.clauses for k in clause_groups(cl)}
        fill_clauses = []
        for idx, vertex in enumerate(tree_vertices(e)):
            key = vertex.group
            if key in present:
                continue
            fill_clauses.append(_cell_clause(m, key, 0.0, f"f{idx}"))
        if fill_clauses:
            mln = MLN(m.domains, m.predicates,
                      m.clauses + tuple(fill_clauses))
    if e is None:
        probe = LiftedRegion(mln, v_g, None, name=name)
        e = default_factorization(probe.rep_mln, model=probe.rep_model)
    region = LiftedRegion(mln, v_g, e, name=name)
    cq_ok, msg = _validate_region_factorization(region)
    if not cq_ok:
        raise FactorizationInvalid(msg)
    index = jd_sets(region.rep_mln, region.factorization,
                    model=region.rep_model)
    for cl in region.rep_mln.clauses:
        if cl.weight == 0.0:
            continue
        for sol in clause_solutions(region.rep_mln, cl):
            atoms = [(l.pred, tuple(sol[a] if cl.is_variable(a) else a
                                    for a in l.args)) for l in cl.literals]
            if not jd_contains(index, atoms):
                raise MLNError(
                    f"ground formula over {[format_atom(a) for a in atoms]} "
                    f"not jointly accessible in the factorization")
    return region


def _validate_region_factorization(region: LiftedRegion):
    try:
        compile_query(region.rep_model, region.factorization, validate=True)
        return True, None
    except (FactorizationInvalid, MLNError, ValueError) as ex:
        return False, str(ex)


def _cell_clause(mln: MLN, key: GroupKey, weight: float,
                 suffix: str) -> WeightedClause:
    pred = mln.predicate(key.pred)
    class_var: dict[int, str] = {}
    args = []
    cons: set[Constraint] = set()
    for p, (kind, val) in enumerate(key.slots):
        if kind == "const":
            args.append(val)
            continue
        if val not in class_var:
            class_var[val] = f"u{val}#{suffix}"
            cons.add(Constraint.dom(class_var[val],
                                    pred.argument_domains[p]))
        args.append(class_var[val])
    for i, j in key.ne_pairs:
        cons.add(Constraint.ne(class_var[i], class_var[j]))
    return WeightedClause((Literal(True, key.pred, tuple(args)),),
                          weight, frozenset(cons))


# ---------------------------------------------------------------------------
# Compatibility predicates
# ---------------------------------------------------------------------------

def marginal_compatible(r_p: LiftedRegion, r_c: LiftedRegion,
                        key: GroupKey) -> bool:
    """Position-wise: whenever the child counts, the parent must count."""
    try:
        p_tags = r_p.cell_tags(key)
        c_tags = r_c.cell_tags(key)
    except MLNError:
        return False
    return all(p == "C" for c, p in zip(c_tags, p_tags) if c == "C")


def message_compatible(r_p: LiftedRegion, r_c: LiftedRegion) -> bool:
    child_cells = r_c.cells()
    for key in child_cells:
        if not marginal_compatible(r_p, r_c, key):
            return False
    # child factorization must be a path graph
    for v in tree_vertices(r_c.factorization):
        if len(v.children) > 1:
            return False
    # the child cells must sit on a single root-to-leaf path of the parent
    rep_cells = [_rep_cell(r_p, key) for key in child_cells]
    if any(not rc for rc in rep_cells):
        return False
    for path in tree_paths(r_p.factorization):
        path_groups = {n.group for n in path}
        if all(set(rc) <= path_groups for rc in rep_cells):
            return True
    return False


def _rep_cell(region: LiftedRegion, key: GroupKey) -> list[GroupKey]:
    """Representative-model cells realizing the given base cell."""
    base_atoms = set(group_atoms(region.mln, key))
    out = []
    for rk in region.rep_model.groups:
        atoms = set(group_atoms(region.rep_mln, rk))
        if rk.pred == key.pred and atoms and atoms <= base_atoms:
            out.append(rk)
    return out


# ---------------------------------------------------------------------------
# Simulated ground graph
# ---------------------------------------------------------------------------

def simulate_ground_graph(lrg: LiftedRegionGraph) -> GroundRegionGraph:
    """Explicit ground region graph: one vertex per (region, copy), edges per
    lifted edge wherever atom labels intersect."""
    factors = []
    regions = []
    vertex_of = {}
    for ri, region in enumerate(lrg.regions):
        for ci in range(len(region.copies)):
            fids = []
            for lits, weight in region.copy_formulas(ci):
                scope = []
                for _pos, a in lits:
                    if a not in scope:
                        scope.append(a)
                table = np.full((2,) * len(scope), weight)
                required = {}
                for pos, a in lits:
                    required.setdefault(a, set()).add(not pos)
                if all(len(v) == 1 for v in required.values()):
                    cellidx = tuple(1 if next(iter(required[a])) else 0
                                    for a in scope)
                    table[cellidx] = 0.0
                fids.append(len(factors))
                factors.append((tuple(scope), table))
            atoms = tuple(sorted(region.copy_atoms(ci), key=format_atom))
            vertex_of[(ri, ci)] = len(regions)
            regions.append(GroundRegion(atoms, tuple(fids)))
    edge_set = set()
    for e in lrg.edges:
        parent = lrg.regions[e.parent]
        child = lrg.regions[e.child]
        for pi in range(len(parent.copies)):
            pa = parent.copy_atoms(pi)
            for ci in range(len(child.copies)):
                if pa & child.copy_atoms(ci):
                    edge_set.add((vertex_of[(e.parent, pi)],
                                  vertex_of[(e.child, ci)]))
    return GroundRegionGraph(tuple(regions), tuple(sorted(edge_set)),
                             tuple(factors))


def validate_lifted(lrg: LiftedRegionGraph, witness_domain: int | None = None
                    ) -> bool:
    """Theorem-2 check: the simulated graph obeys running intersection.

    For large domains pass witness_domain to check a truncated twin instead
    of simulating the full graph.
    """
    target = lrg
    if witness_domain is not None:
        sizes = [len(d.objects) for r in lrg.regions for d in r.mln.domains]
        if sizes and max(sizes) > witness_domain:
            target = truncate_domains(lrg, witness_domain)
    ok, _witness = validate_running_intersection(simulate_ground_graph(target))
    return ok


def truncate_domains(lrg: LiftedRegionGraph, size: int) -> LiftedRegionGraph:
    regions = []
    for r in lrg.regions:
        doms = tuple(type(d)(d.name, d.objects[:size]) for d in r.mln.domains)
        mln = MLN(doms, r.mln.predicates, r.mln.clauses)
        probe = LiftedRegion(mln, r.grounded_vars, None, name=r.name)
        fact = r.factorization
        # ground-copy factorizations name representative constants that may
        # not survive truncation; re-derive them over the truncated twin
        if {v.group for v in tree_vertices(fact)} != \
                set(probe.rep_model.groups):
            fact = default_factorization(probe.rep_mln, model=probe.rep_model)
        regions.append(LiftedRegion(mln, r.grounded_vars, fact, name=r.name))
    return LiftedRegionGraph(regions, lrg.edges)


# ---------------------------------------------------------------------------
# Statistics over the simulated graph, via CSP counting
# ---------------------------------------------------------------------------

def _aligned_parent_copies(lrg, parent_idx, role, child_atoms):
    """Indices of parent copies adjacent to the child copy under the role."""
    parent = lrg.regions[parent_idx]
    if role == ("cell",):
        return {ci for ci in range(len(parent.copies))
                if parent.copy_atoms(ci) & child_atoms}
    _tag, clause_idx, lits = role
    if not hasattr(parent, "_align_cache"):
        parent._align_cache = {}
    cache = parent._align_cache.get((clause_idx, lits))
    if cache is None:
        # atom -> set of copy indices whose role literal grounds to it
        cl = parent.mln.clauses[clause_idx]
        mine = sorted(set(cl.variables) & parent.grounded_vars)
        copy_index: dict[tuple, list[int]] = {}
        for ci, copy in enumerate(parent.copies):
            copy_index.setdefault(tuple((v, copy[v]) for v in mine),
                                  []).append(ci)
        cache = {}
        for li in lits:
            lit = cl.literals[li]
            for sol in clause_solutions(parent.mln, cl):
                atom = (lit.pred, tuple(sol[a] if cl.is_variable(a) else a
                                        for a in lit.args))
                key = tuple((v, sol[v]) for v in mine)
                cache.setdefault(atom, set()).update(copy_index.get(key, ()))
        parent._align_cache[(clause_idx, lits)] = cache
    out = set()
    for atom in child_atoms:
        out |= cache.get(atom, set())
    return out


def stat_gp(lrg: LiftedRegionGraph, r: int, r_p: int,
            role: tuple | None = None, child_copy: int = 0) -> int:
    """Copies of r_p that are parents of one fixed copy of r."""
    roles = [e.role for e in lrg.edges
             if e.parent == r_p and e.child == r and
             (role is None or e.role == role)]
    if not roles:
        raise MLNError("no such lifted edge")
    child_atoms = lrg.regions[r].copy_atoms(child_copy)
    out = set()
    for rl in roles:
        out |= _aligned_parent_copies(lrg, r_p, rl, child_atoms)
    return len(out)


def descendant_copies(lrg: LiftedRegionGraph, r: int, copy: int
                      ) -> dict[int, set[int]]:
    """Ground copies reachable from the fixed copy along lifted edges."""
    reached: dict[int, set[int]] = {}
    frontier = [(r, copy)]
    seen = {(r, copy)}
    while frontier:
        ri, ci = frontier.pop()
        atoms = lrg.regions[ri].copy_atoms(ci)
        for ei in lrg.children[ri]:
            c = lrg.edges[ei].child
            child = lrg.regions[c]
            for cci in range(len(child.copies)):
                if (c, cci) in seen:
                    continue
                if atoms & child.copy_atoms(cci):
                    seen.add((c, cci))
                    reached.setdefault(c, set()).add(cci)
                    frontier.append((c, cci))
    return reached


def stat_gd(lrg: LiftedRegionGraph, r: int, r_d: int, copy: int = 0) -> int:
    """Copies of r_d descended from one fixed copy of r."""
    if r_d not in lrg.desc[r]:
        raise MLNError("r_d is not a descendant of r in the lifted graph")
    return len(descendant_copies(lrg, r, copy).get(r_d, set()))


def stat_ge(lrg: LiftedRegionGraph, r: int, r_d: int, r_dp: int,
            role: tuple | None = None, r_copy: int = 0,
            d_copy: int | None = None) -> int:
    """Copies of r_dp parenting a fixed descendant copy, excluding the fixed
    r copy and its descendants."""
    if r_d not in lrg.desc[r]:
        raise MLNError("r_d is not a descendant of r in the lifted graph")
    reached = descendant_copies(lrg, r, r_copy)
    d_copies = sorted(reached.get(r_d, set()))
    if not d_copies:
        return 0
    if d_copy is None:
        d_copy = d_copies[0]
    child_atoms = lrg.regions[r_d].copy_atoms(d_copy)
    roles = [e.role for e in lrg.edges
             if e.parent == r_dp and e.child == r_d and
             (role is None or e.role == role)]
    if not roles:
        return 0
    out = set()
    for rl in roles:
        out |= _aligned_parent_copies(lrg, r_dp, rl, child_atoms)
    if r_dp == r:
        out.discard(r_copy)
    out -= reached.get(r_dp, set())
    return len(out)


# ---------------------------------------------------------------------------
# Construction strategies
# ---------------------------------------------------------------------------

def _role_classes(region: LiftedRegion, key: GroupKey):
    """Roles of a cell in the region: literal occurrences partitioned by
    pattern-equal argument tuples, merged when the grounded variables cannot
    tell the occurrences apart (then one ground edge serves them all)."""
    roles = []
    for ci, cl in enumerate(region.mln.clauses):
        classes: list[tuple[tuple, list[int]]] = []
        for li, lit in enumerate(cl.literals):
            if literal_pattern(cl, lit) != key:
                continue
            parent = {v: v for v in cl.variables}

            def find(v):
                while parent[v] != v:
                    parent[v] = parent[parent[v]]
                    v = parent[v]
                return v
            for con in cl.constraints:
                if con.kind == "eq":
                    parent[find(con.a)] = find(con.b)
            sig = tuple(find(a) if cl.is_variable(a) else ("const", a)
                        for a in lit.args)
            for s, lis in classes:
                if s == sig:
                    lis.append(li)
                    break
            else:
                classes.append((sig, [li]))
        for _sig, lis in classes:
            roles.append(("lits", ci, tuple(lis)))
    if not region.grounded_vars and len(roles) > 1:
        merged = tuple(sorted({li for _t, _ci, lis in roles for li in lis}))
        roles = [("lits", roles[0][1], merged)]
    return roles


def _atom_region(mln: MLN, key: GroupKey, ground: bool,
                 name: str) -> LiftedRegion:
    cell = _cell_clause(mln, key, 0.0, name)
    rmln = MLN(mln.domains, mln.predicates, (cell,))
    v_g = frozenset(cell.variables) if ground else frozenset()
    model = RegionModel(rmln, tile=False)
    rep_key = model.groups[0]
    if ground:
        rep = LiftedRegion(rmln, v_g, None, name=name)
        # factorization over the representative single atom
        rep_model_key = rep.rep_model.groups[0]
        tags = tuple("G" for _ in rep_model_key.slots)
        fact = FactorizationNode(rep_model_key, tags)
        return LiftedRegion(rmln, v_g, fact, name=name)
    tags = tuple("G" if kind == "const" else "C"
                 for kind, _v in rep_key.slots)
    fact = FactorizationNode(rep_key, tags)
    return LiftedRegion(rmln, frozenset(), fact, name=name)


def _count_chain_factorization(rmln: MLN, model: RegionModel):
    """Lifted sums over every cell in literal order, when valid."""
    node = None
    for key in reversed(model.groups):
        tags = tuple("G" if kind == "const" else "C" for kind, _v in key.slots)
        node = FactorizationNode(key, tags, frozenset(),
                                 (node,) if node is not None else ())
    try:
        compile_query(model, node, validate=True)
        return node
    except (FactorizationInvalid, MLNError, ValueError):
        return None


def _formula_region(mln: MLN, clause_idx: int, strategy: str
                    ) -> LiftedRegion:
    cl = mln.clauses[clause_idx]
    rmln = MLN(mln.domains, mln.predicates, (cl,))
    if strategy == "GG":
        region = LiftedRegion(rmln, frozenset(cl.variables), None,
                              name=f"f{clause_idx}")
        fact = default_factorization(region.rep_mln, model=region.rep_model)
        return LiftedRegion(rmln, frozenset(cl.variables), fact,
                            name=f"f{clause_idx}")
    model = RegionModel(rmln, tile=False)
    # prefer counting every cell (joint count messages all around); fall
    # back to a lifted sum on the first literal's cell plus the greedy plan,
    # then to the plain greedy plan
    fact = _count_chain_factorization(rmln, model)
    if fact is None:
        try:
            first_cell = literal_pattern(cl, cl.literals[0])
            fact = default_factorization(rmln, count_first=first_cell,
                                         model=model)
        except MLNError:
            fact = default_factorization(rmln, model=model)
    return LiftedRegion(rmln, frozenset(), fact, name=f"f{clause_idx}")


def construct_structure(mln: MLN, strategy: str) -> LiftedRegionGraph:
    """The three fixed structures.

    GG grounds the formulas and passes messages over ground atoms (the
    FOBP-like Bethe shape); LG keeps one lifted region per formula with a
    region-lifted factorization but ground messages; LL additionally passes
    joint count-space messages over counted cells, reconciling count/ground
    mismatches through a third-level connector region fed by ground
    messages.
    """
    strategy = strategy.upper()
    if strategy not in ("GG", "LG", "LL"):
        raise ValueError(f"unknown strategy {strategy!r}")
    if not groups_consistent(mln):
        raise MLNError("model cells overlap; shatter the model first")
    _check_duplicate_literals(mln)

    regions: list[LiftedRegion] = []
    edges: list[LiftedEdge] = []
    formula_idx: list[int] = []
    for ci, cl in enumerate(mln.clauses):
        if not clause_solutions(mln, cl):
            continue
        region = _formula_region(mln, ci, strategy)
        formula_idx.append(len(regions))
        regions.append(region)

    # cells needing child regions
    cell_holders: dict[GroupKey, list[int]] = {}
    for ri in formula_idx:
        for key in regions[ri].cells():
            cell_holders.setdefault(key, []).append(ri)
    shared = {}
    for key, holders in cell_holders.items():
        if strategy == "GG":
            shared[key] = holders
        elif len(holders) >= 2:
            shared[key] = holders

    for key in shared:
        holders = shared[key]
        if strategy in ("GG", "LG"):
            child = _atom_region(mln, key, ground=True,
                                 name=f"a_{group_id_str(key)}")
            child_idx = len(regions)
            regions.append(child)
            for ri in holders:
                for role in _role_classes(regions[ri], key):
                    edges.append(LiftedEdge(ri, child_idx, role))
            continue
        counted = [ri for ri in holders if regions[ri].counted_cell(key)]
        ground = [ri for ri in holders if ri not in counted]
        if counted and not ground:
            child = _atom_region(mln, key, ground=False,
                                 name=f"j_{group_id_str(key)}")
            child_idx = len(regions)
            regions.append(child)
            for ri in counted:
                edges.append(LiftedEdge(ri, child_idx, ("cell",)))
        elif counted and ground:
            joint = _atom_region(mln, key, ground=False,
                                 name=f"j_{group_id_str(key)}")
            joint_idx = len(regions)
            regions.append(joint)
            conn = _atom_region(mln, key, ground=True,
                                name=f"c_{group_id_str(key)}")
            conn_idx = len(regions)
            regions.append(conn)
            for ri in counted:
                edges.append(LiftedEdge(ri, joint_idx, ("cell",)))
            edges.append(LiftedEdge(joint_idx, conn_idx, ("cell",)))
            for ri in ground:
                for role in _role_classes(regions[ri], key):
                    edges.append(LiftedEdge(ri, conn_idx, role))
        else:
            child = _atom_region(mln, key, ground=True,
                                 name=f"a_{group_id_str(key)}")
            child_idx = len(regions)
            regions.append(child)
            for ri in ground:
                for role in _role_classes(regions[ri], key):
                    edges.append(LiftedEdge(ri, child_idx, role))
    return LiftedRegionGraph(regions, edges)


def needs_shattering(mln: MLN) -> bool:
    """True when cells overlap or duplicate occurrences are ambiguous."""
    if not groups_consistent(mln):
        return True
    try:
        _check_duplicate_literals(mln)
    except MLNError:
        return True
    return False


def prepare_model(mln: MLN) -> MLN:
    """Shatter the model iff the lifted machinery requires it.

    Models that are already cell-consistent (for instance the random
    experiment models, whose clauses mix distinct predicates) are kept
    whole; splitting them would only degrade the lifted structure.
    """
    from .mln import shatter_to_enf
    return shatter_to_enf(mln) if needs_shattering(mln) else mln


def _check_duplicate_literals(mln: MLN):
    """Same-cell literals inside one clause must be equality-pattern
    determined, otherwise ground edges cannot be partitioned into roles."""
    for ci, cl in enumerate(mln.clauses):
        by_key: dict[GroupKey, list[Literal]] = {}
        for lit in cl.literals:
            by_key.setdefault(literal_pattern(cl, lit), []).append(lit)
        for key, lits in by_key.items():
            if len(lits) < 2:
                continue
            sols = clause_solutions(mln, cl)
            for a, b in itertools.combinations(lits, 2):
                ga = [(a.pred, tuple(s[x] if cl.is_variable(x) else x
                                     for x in a.args)) for s in sols]
                gb = [(b.pred, tuple(s[x] if cl.is_variable(x) else x
                                     for x in b.args)) for s in sols]
                same = [x == y for x, y in zip(ga, gb)]
                if any(same) and not all(same):
                    raise MLNError(
                        f"clause {ci}: ambiguous duplicate occurrences of "
                        f"{group_id_str(key)}; shatter the model first")


def lrg_to_text(lrg: LiftedRegionGraph) -> str:
    from .factorization import factorization_to_text
    lines = []
    for i, r in enumerate(lrg.regions):
        vg = ",".join(sorted(v.split("#")[0] for v in r.grounded_vars))
        lines.append(f"region {i} [{r.name}] copies={len(r.copies)} "
                     f"V_g={{{vg}}}")
        for line in factorization_to_text(r.factorization).splitlines():
            lines.append("    " + line)
    for e in sorted(lrg.edges, key=lambda e: (e.parent, e.child, repr(e.role))):
        lines.append(f"edge {e.parent} -> {e.child} role={e.role}")
    return "\n".join(lines) + "\n"
