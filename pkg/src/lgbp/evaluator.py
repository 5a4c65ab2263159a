"""Recursive evaluator for lifted factorization trees.

Evaluation walks the tree depth-first, conditioning one atom cell at a time:
a lifted sum branches over the cell's true-count k (canonically the first k
atoms in cell order) weighted by C(n,k); a decomposition evaluates one
representative copy and scales by the copy count; grounded classes split the
cell into sub-cells handled sequentially.  Clause contributions fold in at
the step where their last atom is conditioned, counting satisfied instances
over the clause's (copy-restricted) solution set.  Memoization keys on the
step plus the conditionings that still matter downstream, which is what
turns the recursion into the binomial collapse of the lifted sum.

All weights are log-space.  Message potentials attach as count-space vectors
(pointwise in the cell's true count), uniform per-copy 2-vectors, or
explicit per-atom 2-vectors.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .factorization import FactorizationNode, tree_paths, tree_vertices
from .mln import (MLN, Atom, GroupKey, MLNError, clause_solutions,
                  format_atom, group_atoms, group_id_str, literal_pattern,
                  mln_groups)
from .tables import log_binom, logsumexp

__all__ = ["RegionModel", "Attachments", "FactorizationInvalid",
           "CompiledQuery", "compile_query", "evaluate_program",
           "program_leaf_count"]


class FactorizationInvalid(MLNError):
    pass


@dataclass
class Attachments:
    """Message potentials multiplied into an evaluation (log space)."""
    count_msgs: list = field(default_factory=list)   # (GroupKey, vector over k)
    copy_pots: list = field(default_factory=list)    # (GroupKey, 2-vector)
    atom_pots: list = field(default_factory=list)    # (Atom, 2-vector)


class RegionModel:
    """An MLN with atom cells and clause groundings interned for evaluation."""

    def __init__(self, mln: MLN, tile: bool = True):
        self.mln = mln
        self.tile = tile
        self.groups: list[GroupKey] = mln_groups(mln, tile=tile)
        self.group_index = {k: i for i, k in enumerate(self.groups)}
        self.group_atom_lists: list[tuple[Atom, ...]] = [
            group_atoms(mln, k) for k in self.groups]
        self.atoms: list[Atom] = []
        self.atom_id: dict[Atom, int] = {}
        for alist in self.group_atom_lists:
            for a in alist:
                if a not in self.atom_id:
                    self.atom_id[a] = len(self.atoms)
                    self.atoms.append(a)
        self.atom_group: dict[int, int] = {}
        for gi, alist in enumerate(self.group_atom_lists):
            for a in alist:
                aid = self.atom_id[a]
                if self.atom_group.setdefault(aid, gi) != gi:
                    raise MLNError(
                        f"atom {format_atom(a)} belongs to two cells; "
                        f"shatter the model first")
        if tile:
            from .mln import ground_atoms
            for a in ground_atoms(mln):
                if a not in self.atom_id:
                    raise MLNError(
                        f"atom {format_atom(a)} lands in no cell; the "
                        f"model's patterns do not tile the predicate")
        self.clause_data = []
        for cl in mln.clauses:
            sols = clause_solutions(mln, cl)
            lit_ids, lit_groups = [], []
            for lit in cl.literals:
                key = literal_pattern(cl, lit)
                gi = self.group_index[key]
                covered = set(self.group_atom_lists[gi])
                ids = []
                for sol in sols:
                    atom = (lit.pred, tuple(
                        sol[a] if cl.is_variable(a) else a for a in lit.args))
                    if atom not in covered:
                        raise MLNError(
                            f"literal grounding {format_atom(atom)} falls outside "
                            f"its cell {group_id_str(key)}")
                    ids.append(self.atom_id[atom])
                lit_ids.append(np.array(ids, dtype=np.int64))
                lit_groups.append(gi)
            self.clause_data.append({
                "sols": sols,
                "lit_atoms": lit_ids,
                "lit_sign": [l.positive for l in cl.literals],
                "lit_groups": lit_groups,
                "weight": cl.weight,
                "clause": cl,
            })

    def n_atoms(self) -> int:
        return len(self.atoms)

    def group_size(self, key: GroupKey) -> int:
        return len(self.group_atom_lists[self.group_index[key]])


# ---------------------------------------------------------------------------
# Compiled program representation
# ---------------------------------------------------------------------------

@dataclass
class Fold:
    clause_idx: int
    sol_idx: np.ndarray


@dataclass
class CountStep:
    sid: int
    group_idx: int
    atom_ids: tuple[int, ...]
    query_ids: tuple[int, ...]
    count_axis: bool
    whole_group: bool
    folds: list[Fold] = field(default_factory=list)
    # keys of earlier conditionings of the same cell (query-pinned splits);
    # count attachments apply at the cell's last step over the total count
    group_prior: tuple = ()
    last_of_group: bool = False


class PCount:
    __slots__ = ("step", "nxt", "live", "nid")

    def __init__(self, step, nxt):
        self.step, self.nxt = step, nxt


class PBranch:
    __slots__ = ("branches", "live", "nid")

    def __init__(self, branches):
        self.branches = branches


class PDecomp:
    __slots__ = ("plain_mult", "plain", "query_bodies", "leftover", "live", "nid")

    def __init__(self, plain_mult, plain, query_bodies, leftover):
        self.plain_mult = plain_mult
        self.plain = plain
        self.query_bodies = query_bodies
        self.leftover = leftover   # list of (atom_id, is_query)


@dataclass
class CompiledQuery:
    model: RegionModel
    root: object
    axes: list[tuple]                  # public: ('group', gi) / ('atom', aid)
    raw_axes: list[tuple]              # ('grouppart', gi, part) / ('atom', aid)
    steps: list[CountStep]
    group_steps: dict[int, list[CountStep]]
    free_query: list[int]

    def axis_sizes(self) -> tuple[int, ...]:
        out = []
        for kind, val in self.axes:
            out.append(len(self.model.group_atom_lists[val]) + 1
                       if kind == "group" else 2)
        return tuple(out)


def _pos_class(key: GroupKey) -> dict[int, int]:
    return {p: val for p, (kind, val) in enumerate(key.slots) if kind == "var"}


# ---------------------------------------------------------------------------
# Compiler
# ---------------------------------------------------------------------------

class _Compiler:
    def __init__(self, model, query_groups, query_atoms, validate):
        self.model = model
        self.query_group_ids = [model.group_index[g] for g in query_groups]
        self.query_atoms = {model.atom_id[a] for a in query_atoms}
        self.validate = validate
        # conditioning on a query atom breaks exchangeability for every cell
        # sharing its constants, so those constants pin cell splits
        self.pinned_query: set[str] = set()
        for aid in self.query_atoms:
            self.pinned_query.update(model.atoms[aid][1])
        self.axes: list[tuple] = []
        self.steps: list[CountStep] = []
        self.group_steps: dict[int, list[CountStep]] = {}
        self.rep_truth = np.zeros(model.n_atoms(), dtype=bool)
        self.rep_det = np.zeros(model.n_atoms(), dtype=bool)
        self._rep_toggle: dict[int, int] = {}

    def compile(self, root: FactorizationNode) -> CompiledQuery:
        self._check_tree(root)
        folded = [len(d["sols"]) == 0 or d["weight"] == 0.0
                  for d in self.model.clause_data]
        masks = [np.arange(len(d["sols"])) for d in self.model.clause_data]
        prog = self._chain([root], {}, masks, folded)
        for ci, done in enumerate(folded):
            if not done:
                raise FactorizationInvalid(
                    f"clause {ci} never fully conditioned by the tree")
        free_query = sorted(self.query_atoms - {
            a for st in self.steps for a in st.atom_ids + st.query_ids} - {
            aid for spec in self.axes if spec[0] == "atom"
            for aid in [spec[1]]})
        for aid in free_query:
            self.axes.append(("atom", aid))
        for steps in self.group_steps.values():
            if steps:
                steps[-1].last_of_group = True
                prior = []
                for st in steps[:-1]:
                    prior.append(("s", st.sid))
                    prior.extend(("a", a) for a in st.query_ids)
                steps[-1].group_prior = tuple(prior)
        public = []
        seen_groups = set()
        for spec in self.axes:
            if spec[0] == "grouppart":
                if spec[1] not in seen_groups:
                    seen_groups.add(spec[1])
                    public.append(("group", spec[1]))
            else:
                public.append(spec)
        cq = CompiledQuery(self.model, prog, public, self.axes, self.steps,
                           self.group_steps, free_query)
        _assign_live(cq)
        return cq

    def _check_tree(self, root):
        vertices = tree_vertices(root)
        seen = [self.model.group_index[v.group] for v in vertices]
        if len(seen) != len(set(seen)):
            raise FactorizationInvalid("a cell appears on two vertices")
        missing = set(range(len(self.model.groups))) - set(seen)
        if missing:
            names = ", ".join(group_id_str(self.model.groups[g])
                              for g in sorted(missing))
            raise FactorizationInvalid(f"cells missing from the tree: {names}")
        for v in vertices:
            if len(v.tags) != len(v.group.slots):
                raise FactorizationInvalid("tag arity mismatch")
            for t in v.tags:
                if t not in ("C", "D", "G"):
                    raise FactorizationInvalid(f"unknown tag {t!r}")
            v.class_tags()  # raises on same-class disagreement
        paths = [{self.model.group_index[n.group] for n in p}
                 for p in tree_paths(root)]
        for ci, data in enumerate(self.model.clause_data):
            if data["weight"] == 0.0 or not data["sols"]:
                continue
            need = set(data["lit_groups"])
            if not any(need <= p for p in paths):
                raise FactorizationInvalid(
                    f"clause {ci}'s cells do not lie on one root-to-leaf path")
        for gi in self.query_group_ids:
            node = next(v for v in vertices
                        if self.model.group_index[v.group] == gi)
            if not node.counted():
                raise FactorizationInvalid(
                    f"queried group {group_id_str(node.group)} is not counted "
                    f"by the factorization")

    # -- chains ---------------------------------------------------------

    def _chain(self, nodes, frame_cells, masks, folded):
        if not nodes:
            return None
        if len(nodes) > 1:
            return PBranch([self._chain([n], frame_cells, masks, folded)
                            for n in nodes])
        node = nodes[0]
        if node.edge_vars:
            return self._decomp(node, frame_cells, masks, folded)
        return self._vertex(node, frame_cells, masks, folded)

    def _cell_atoms(self, gi, frame_cells):
        model = self.model
        key = model.groups[gi]
        pc = _pos_class(key)
        out = []
        for a in model.group_atom_lists[gi]:
            aid = model.atom_id[a]
            ok = True
            for (g, cls), const in frame_cells.items():
                if g != gi:
                    continue
                for p, c in pc.items():
                    if c == cls and a[1][p] != const:
                        ok = False
            if ok:
                out.append(aid)
        return out

    def _vertex(self, node, frame_cells, masks, folded):
        model = self.model
        gi = model.group_index[node.group]
        tags = node.class_tags()
        pc = _pos_class(node.group)
        bound = {cls for (g, cls) in frame_cells if g == gi}
        atoms = self._cell_atoms(gi, frame_cells)
        g_classes = sorted(cls for cls, t in tags.items()
                           if t == "G" and cls not in bound)
        if g_classes:
            cells: dict[tuple, list[int]] = {}
            for aid in atoms:
                args = model.atoms[aid][1]
                kv = tuple(args[next(p for p, c in pc.items() if c == cls)]
                           for cls in g_classes)
                cells.setdefault(kv, []).append(aid)
            sub_cells = [tuple(cells[k]) for k in sorted(cells)]
        else:
            sub_cells = [tuple(atoms)]
        if self.pinned_query:
            refined = []
            for cell in sub_cells:
                parts: dict[tuple, list[int]] = {}
                for aid in cell:
                    args = model.atoms[aid][1]
                    sig = tuple(a if a in self.pinned_query else None
                                for a in args)
                    parts.setdefault(sig, []).append(aid)
                refined.extend(tuple(parts[k]) for k in sorted(
                    parts, key=lambda s: tuple(map(str, s))))
            sub_cells = refined
        covered = {a for cell in sub_cells for a in cell}
        whole = covered == {model.atom_id[a]
                            for a in model.group_atom_lists[gi]}
        count_axis = gi in self.query_group_ids
        if count_axis:
            if not whole:
                raise FactorizationInvalid(
                    f"group {group_id_str(node.group)} queried as a count but "
                    f"not counted whole")
            if any(a in self.query_atoms for cell in sub_cells for a in cell):
                raise MLNError("group queried both as count and by atom")

        steps = []
        for part_idx, cell in enumerate(sub_cells):
            q_ids = tuple(a for a in cell if a in self.query_atoms)
            rest = tuple(a for a in cell if a not in self.query_atoms)
            step = CountStep(len(self.steps), gi, rest, q_ids,
                             count_axis, whole and len(sub_cells) == 1)
            if self.validate:
                self._validate_step(step, masks, folded, frame_cells)
            self.steps.append(step)
            self.group_steps.setdefault(gi, []).append(step)
            for a in q_ids:
                self.axes.append(("atom", a))
            if count_axis:
                self.axes.append(("grouppart", gi,
                                  len(self.group_steps[gi]) - 1))
            # representative context: mid count, query atoms false; singleton
            # sub-cells alternate so degenerate all-false contexts cannot
            # mask asymmetries
            cell_arr = np.array(cell, dtype=np.int64)
            self.rep_det[cell_arr] = True
            self.rep_truth[cell_arr] = False
            rest_arr = np.array(rest, dtype=np.int64)
            toggle = self._rep_toggle.get(gi, 0)
            k_rep = (len(rest) + toggle) // 2
            self._rep_toggle[gi] = 1 - toggle
            self.rep_truth[rest_arr[:k_rep]] = True
            for ci, data in enumerate(self.model.clause_data):
                if folded[ci]:
                    continue
                if all(bool(np.all(self.rep_det[data["lit_atoms"][li][masks[ci]]]))
                       for li in range(len(data["lit_atoms"]))):
                    step.folds.append(Fold(ci, masks[ci]))
                    folded[ci] = True
            steps.append(step)

        tail = self._chain(list(node.children), frame_cells, masks, folded)
        prog = tail
        for step in reversed(steps):
            prog = PCount(step, prog)
        return prog

    def _edge_bindings(self, edge_vars):
        """(group, class) pairs bound by the edge plus the shared domain."""
        out = set()
        domains = set()
        for data in self.model.clause_data:
            cl = data["clause"]
            for lit in cl.literals:
                key = literal_pattern(cl, lit)
                gi = self.model.group_index[key]
                pc = _pos_class(key)
                for p, arg in enumerate(lit.args):
                    if arg in edge_vars:
                        out.add((gi, pc[p]))
                        domains.add(cl.domain_of(arg))
        if len(domains) > 1:
            raise FactorizationInvalid("decomposer variables span two domains")
        return out, (domains.pop() if domains else None)

    def _decomp(self, node, frame_cells, masks, folded):
        model = self.model
        bindings_cls, domain = self._edge_bindings(node.edge_vars)
        subtree = tree_vertices(node)
        subtree_groups = {model.group_index[v.group] for v in subtree}
        bound_groups = {g for g, _ in bindings_cls}
        for g in sorted(subtree_groups - bound_groups):
            raise FactorizationInvalid(
                f"decomposed vertex {group_id_str(model.groups[g])} has no "
                f"position bound by the edge")

        values: list[str] | None = None
        per_clause_var: dict[int, str] = {}
        for ci, data in enumerate(model.clause_data):
            if folded[ci] or not len(masks[ci]):
                continue
            cl = data["clause"]
            evars = set(cl.variables) & set(node.edge_vars)
            undetermined = [li for li in range(len(data["lit_atoms"]))
                            if not bool(np.all(
                                self.rep_det[data["lit_atoms"][li][masks[ci]]]))]
            if not undetermined:
                continue
            # equality-co-referential variables act as a single decomposer
            parent = {v: v for v in cl.variables}

            def find(v):
                while parent[v] != v:
                    parent[v] = parent[parent[v]]
                    v = parent[v]
                return v
            for con in cl.constraints:
                if con.kind == "eq":
                    parent[find(con.a)] = find(con.b)
            roots = {find(v) for v in evars}
            if len(roots) != 1:
                raise FactorizationInvalid(
                    f"clause {ci} holds {len(roots)} decomposer variable "
                    f"classes, needs exactly 1")
            v = min(evars)
            per_clause_var[ci] = v
            root = next(iter(roots))
            coref = {u for u in cl.variables if find(u) == root}
            for li, lit in enumerate(cl.literals):
                mentions = bool(coref & set(lit.args))
                if li in undetermined and not mentions:
                    raise FactorizationInvalid(
                        f"clause {ci}: undetermined literal misses the "
                        f"decomposer variable")
                if li not in undetermined and mentions:
                    raise FactorizationInvalid(
                        f"clause {ci}: conditioned literal mentions the "
                        f"decomposer variable")
            order = model.mln.domain(cl.domain_of(v)).objects
            vals = sorted({data["sols"][s][v] for s in masks[ci]},
                          key=order.index)
            if values is not None and vals != values:
                raise FactorizationInvalid(
                    "binding values differ across decomposed clauses")
            values = vals
        if values is None:
            values = list(model.mln.domain(domain).objects) if domain else []
        if self.validate and per_clause_var:
            self._validate_decomp(per_clause_var, masks, values, frame_cells,
                                  domain)

        def atom_binding(aid, gi):
            """Binding constant of a subtree atom, or None if uncovered."""
            args = model.atoms[aid][1]
            pc = _pos_class(model.groups[gi])
            consts = set()
            for (g, cls) in bindings_cls:
                if g != gi:
                    continue
                for p, c in pc.items():
                    if c == cls:
                        consts.add(args[p])
            if len(consts) == 1:
                b = consts.pop()
                return b if b in values else None
            return None

        cell_atoms: dict[int, int | None] = {}
        for g in sorted(subtree_groups):
            for aid in self._cell_atoms(g, frame_cells):
                cell_atoms[aid] = atom_binding(aid, g)

        query_bindings: list[str] = []
        for aid in sorted(a for a in cell_atoms
                          if a in self.query_atoms and cell_atoms[a] is not None):
            b = cell_atoms[aid]
            if b not in query_bindings:
                query_bindings.append(b)
        plain_values = [b for b in values if b not in query_bindings]

        def compile_body(b, with_query):
            fc = dict(frame_cells)
            for g, cls in bindings_cls:
                fc[(g, cls)] = b
            bmasks = []
            for ci, data in enumerate(model.clause_data):
                v = per_clause_var.get(ci)
                if v is None:
                    bmasks.append(masks[ci])
                else:
                    bmasks.append(np.array(
                        [s for s in masks[ci] if data["sols"][s][v] == b],
                        dtype=np.int64))
            saved = self.query_atoms
            if not with_query:
                self.query_atoms = set()
            body_folded = list(folded)
            inner = FactorizationNode(node.group, node.tags, frozenset(),
                                      node.children)
            out = self._chain([inner], fc, bmasks, body_folded)
            self.query_atoms = saved
            return out, body_folded

        query_bodies = []
        final_folded = None
        for b in query_bindings:
            body, bf = compile_body(b, True)
            query_bodies.append(body)
            final_folded = bf
        plain = None
        plain_mult = len(plain_values)
        if plain_mult > 0:
            plain, bf = compile_body(plain_values[0], False)
            final_folded = bf
        if final_folded is not None:
            for ci in range(len(folded)):
                folded[ci] = folded[ci] or final_folded[ci]
        leftover = []
        for aid in sorted(a for a, b in cell_atoms.items() if b is None):
            is_q = aid in self.query_atoms
            if is_q:
                self.axes.append(("atom", aid))
            leftover.append((aid, is_q))
        # all subtree atoms are now conditioned for later validation purposes
        for aid in cell_atoms:
            self.rep_det[aid] = True
        return PDecomp(plain_mult, plain, query_bodies, leftover)

    # -- validation -----------------------------------------------------
    #
    # A lifted sum over a cell is checked against the *residual* model at a
    # representative mid-count context: satisfied instances are dropped and
    # falsified literals removed, then the surviving instance multiset must
    # be invariant under (a) adjacent transpositions of unpinned constants
    # and (b) adjacent transpositions of the cell's own atoms for instances
    # lying fully inside the cell.  Multi-position cells additionally demand
    # a residual free of other undetermined groups (c), since constant
    # permutations do not act transitively on their true-count subsets.

    def _simplified_instances(self, ci, mask):
        """(kept instances as tuples of (sign, aid), satisfied count)."""
        data = self.model.clause_data[ci]
        kept, n_sat = [], 0
        for s in mask:
            parts = []
            satisfied = False
            for li in range(len(data["lit_atoms"])):
                aid = int(data["lit_atoms"][li][s])
                sign = data["lit_sign"][li]
                if self.rep_det[aid]:
                    if bool(self.rep_truth[aid]) == sign:
                        satisfied = True
                        break
                else:
                    parts.append((sign, aid))
            if satisfied:
                n_sat += 1
            elif parts:
                kept.append(tuple(parts))
        return kept, n_sat

    def _validate_step(self, step: CountStep, masks, folded, frame_cells):
        model = self.model
        cell = step.atom_ids + step.query_ids
        if len(cell) < 2:
            return
        gi = step.group_idx
        key = model.groups[gi]
        active = [ci for ci, f in enumerate(folded) if not f and len(masks[ci])]
        cell_set = set(cell)
        multi_class = len({v for k, v in key.slots if k == "var"}) >= 2

        residuals = {ci: self._simplified_instances(ci, masks[ci])[0]
                     for ci in active}
        for ci in active:
            touches = any(aid in cell_set for inst in residuals[ci]
                          for _s, aid in inst)
            if not touches:
                continue
            if multi_class:
                for inst in residuals[ci]:
                    if any(aid not in cell_set for _s, aid in inst):
                        raise FactorizationInvalid(
                            f"cell {group_id_str(key)}: multi-position cell "
                            f"coupled to another undetermined cell in clause "
                            f"{ci}; lifted sum invalid")
            # (b) instances fully inside the cell: invariance under adjacent
            # atom swaps of the cell
            inside = [inst for inst in residuals[ci]
                      if all(aid in cell_set for _s, aid in inst)
                      and len(inst) >= 2]
            if inside:
                for i in range(len(cell) - 1):
                    swap = {cell[i]: cell[i + 1], cell[i + 1]: cell[i]}
                    image = [tuple((s, swap.get(a, a)) for s, a in inst)
                             for inst in inside]
                    if sorted(inside) != sorted(image):
                        raise FactorizationInvalid(
                            f"cell {group_id_str(key)} couples to itself in "
                            f"clause {ci}; lifted sum invalid")

        # (a) each adjacent atom pair needs a residual-preserving symmetry:
        # either the bare atom transposition, or a constant permutation that
        # maps one atom to the other while preserving the cell
        rest = step.atom_ids
        for i in range(len(rest) - 1):
            a, b = rest[i], rest[i + 1]
            if self._atom_swap_invariant(a, b, residuals):
                continue
            mapping = self._pair_permutation(a, b, set(rest))
            if mapping is not None and self._perm_invariant(mapping, residuals):
                continue
            raise FactorizationInvalid(
                f"cell {group_id_str(key)} is not exchangeable in the "
                f"residual model (atoms "
                f"{format_atom(model.atoms[a])},{format_atom(model.atoms[b])})")

    def _atom_swap_invariant(self, a, b, residuals):
        swap = {a: b, b: a}
        for insts in residuals.values():
            image = [tuple((s, swap.get(x, x)) for s, x in inst)
                     for inst in insts]
            if sorted(insts) != sorted(image):
                return False
        return True

    def _pair_permutation(self, a, b, cell):
        """Per-domain constant permutation sending atom a to atom b and
        preserving the cell setwise, or None."""
        model = self.model
        pred, args_a = model.atoms[a]
        _p, args_b = model.atoms[b]
        pdoms = model.mln.predicate(pred).argument_domains
        partial: dict[str, dict[str, str]] = {}
        for u, v, dom in zip(args_a, args_b, pdoms):
            if partial.setdefault(dom, {}).setdefault(u, v) != v:
                return None
        mapping: dict[str, dict[str, str]] = {}
        for dom, part in partial.items():
            if len(set(part.values())) != len(part):
                return None
            consts = list(model.mln.domain(dom).objects)
            free_src = [c for c in consts if c not in part]
            free_dst = [c for c in consts if c not in set(part.values())]
            full = dict(part)
            full.update(zip(free_src, free_dst))
            mapping[dom] = full
        mapped_cell = set()
        for aid in cell:
            ma = self._map_atom(aid, mapping)
            if ma < 0:
                return None
            mapped_cell.add(ma)
        if mapped_cell != set(cell):
            return None
        return mapping

    def _map_atom(self, aid, mapping):
        model = self.model
        pred, args = model.atoms[aid]
        pdoms = model.mln.predicate(pred).argument_domains
        new = tuple(mapping.get(d, {}).get(c, c) for c, d in zip(args, pdoms))
        return model.atom_id.get((pred, new), -1)

    def _perm_invariant(self, mapping, residuals):
        for insts in residuals.values():
            image = []
            for inst in insts:
                t = []
                for sign, aid in inst:
                    ma = self._map_atom(aid, mapping)
                    if ma < 0 or self.rep_det[ma]:
                        return False
                    t.append((sign, ma))
                image.append(tuple(t))
            if sorted(insts) != sorted(image):
                return False
        return True

    def _validate_decomp(self, per_clause_var, masks, values, frame_cells,
                         domain):
        """Copies must be identical up to renaming: the simplified residual
        has to be invariant under swapping adjacent binding constants."""
        model = self.model
        for ci, v in per_clause_var.items():
            data = model.clause_data[ci]
            observed = {data["sols"][s][v] for s in masks[ci]}
            if not observed <= set(values):
                raise FactorizationInvalid(
                    f"clause {ci}: solution outside the binding set")
        residuals = {ci: self._simplified_instances(ci, masks[ci])[0]
                     for ci in per_clause_var}
        for i in range(len(values) - 1):
            mapping = {domain: {values[i]: values[i + 1],
                                values[i + 1]: values[i]}}
            if not self._perm_invariant(mapping, residuals):
                raise FactorizationInvalid(
                    f"decomposed copies are not identical (swap "
                    f"{values[i]},{values[i + 1]})")


def _assign_live(cq: CompiledQuery):
    atom_step: dict[int, int] = {}
    for st in cq.steps:
        for a in st.atom_ids:
            atom_step[a] = st.sid
    counter = itertools.count()

    def fold_keys(step):
        keys = set()
        for fold in step.folds:
            data = cq.model.clause_data[fold.clause_idx]
            for li in range(len(data["lit_atoms"])):
                for s in fold.sol_idx:
                    a = int(data["lit_atoms"][li][s])
                    keys.add(("s", atom_step[a]) if a in atom_step else ("a", a))
        return keys

    def visit(node) -> set:
        if node is None:
            return set()
        node.nid = next(counter)
        if isinstance(node, PCount):
            live = set(visit(node.nxt)) | fold_keys(node.step)
            live |= set(node.step.group_prior)
            live.discard(("s", node.step.sid))
            for a in node.step.query_ids:
                live.discard(("a", a))
        elif isinstance(node, PBranch):
            live = set()
            for b in node.branches:
                live |= visit(b)
        else:
            live = set()
            for b in node.query_bodies:
                live |= visit(b)
            if node.plain is not None:
                live |= visit(node.plain)
            for aid, _q in node.leftover:
                live.discard(("a", aid))
        node.live = frozenset(live)
        return set(live)

    visit(cq.root)


def compile_query(model: RegionModel, root: FactorizationNode,
                  query_groups=(), query_atoms=(), validate: bool = True
                  ) -> CompiledQuery:
    return _Compiler(model, query_groups, query_atoms, validate).compile(root)


# ---------------------------------------------------------------------------
# Evaluation
# ---------------------------------------------------------------------------

class _Evaluator:
    def __init__(self, cq: CompiledQuery, att: Attachments):
        self.cq = cq
        self.model = cq.model
        self.truth = np.zeros(cq.model.n_atoms(), dtype=bool)
        self.memo: dict = {}
        gi_of = cq.model.group_index
        self.count_msgs: dict[int, list] = {}
        self.copy_pots: dict[int, list] = {}
        self.atom_pots: dict[int, list] = {}
        for key, vec in att.count_msgs:
            gi = gi_of[key]
            steps = cq.group_steps.get(gi, [])
            covered = {a for st in steps for a in st.atom_ids + st.query_ids}
            cell = {cq.model.atom_id[a]
                    for a in cq.model.group_atom_lists[gi]}
            if not steps or covered != cell or not all(
                    st.count_axis or not st.count_axis for st in steps):
                raise MLNError(
                    f"count message target {group_id_str(key)} is not a "
                    f"whole counted cell here")
            self.count_msgs.setdefault(gi, []).append(np.asarray(vec, float))
        for key, vec in att.copy_pots:
            self.copy_pots.setdefault(gi_of[key], []).append(
                np.asarray(vec, float))
        for atom, vec in att.atom_pots:
            aid = cq.model.atom_id.get(atom)
            if aid is None:
                raise MLNError(f"attachment target {format_atom(atom)} unknown")
            self.atom_pots.setdefault(aid, []).append(np.asarray(vec, float))
        explicit = set(cq.free_query)
        for st in cq.steps:
            explicit.update(st.query_ids)
            if len(st.atom_ids) == 1:
                explicit.add(st.atom_ids[0])
        explicit.update(a for a, _ in _all_leftovers(cq.root))
        for aid in self.atom_pots:
            if aid not in explicit:
                raise MLNError(
                    f"per-atom attachment on {format_atom(cq.model.atoms[aid])} "
                    f"which sits inside a counted cell")

    def run(self) -> np.ndarray:
        out = np.asarray(self._eval(self.cq.root, {}), float)
        for aid in self.cq.free_query:
            vec = np.zeros(2)
            for pot in self.atom_pots.get(aid, []):
                vec = vec + pot
            for psi in self.copy_pots.get(self.model.atom_group[aid], []):
                vec = vec + psi
            out = out.reshape(out.shape + (1,)) + vec.reshape(
                (1,) * out.ndim + (2,))
        return out

    def _eval(self, node, ctx):
        if node is None:
            return np.zeros(())
        key = (node.nid, tuple(sorted(
            (k, v) for k, v in ctx.items() if k in node.live)))
        hit = self.memo.get(key)
        if hit is not None:
            return hit
        if isinstance(node, PCount):
            out = self._eval_count(node, ctx)
        elif isinstance(node, PBranch):
            out = np.zeros(())
            for b in node.branches:
                sub = np.asarray(self._eval(b, ctx), float)
                out = out.reshape(out.shape + (1,) * sub.ndim) + \
                    sub.reshape((1,) * out.ndim + sub.shape)
        else:
            out = self._eval_decomp(node, ctx)
        self.memo[key] = out
        return out

    def _eval_count(self, node, ctx):
        step = node.step
        rest = np.array(step.atom_ids, dtype=np.int64)
        n = rest.size
        qn = len(step.query_ids)
        binom = log_binom(n)
        copy = self.copy_pots.get(step.group_idx, [])
        cmsgs = self.count_msgs.get(step.group_idx, []) \
            if step.last_of_group else []
        prior_true = 0
        if cmsgs and step.group_prior:
            prior_true = sum(int(ctx[k]) for k in step.group_prior)
        per_assign = []
        for q in itertools.product((0, 1), repeat=qn):
            for a, v in zip(step.query_ids, q):
                self.truth[a] = bool(v)
                ctx[("a", a)] = bool(v)
            q_true = sum(q)
            per_k = []
            for k in range(n + 1):
                self.truth[rest] = False
                self.truth[rest[:k]] = True
                ctx[("s", step.sid)] = k
                w = 0.0 if step.count_axis else float(binom[k])
                for psi in copy:
                    w += k * float(psi[1]) + (n - k) * float(psi[0])
                for phi in cmsgs:
                    w += float(phi[k + q_true + prior_true])
                if n == 1:
                    for pot in self.atom_pots.get(int(rest[0]), []):
                        w += float(pot[k])
                for fold in step.folds:
                    w += self._fold_value(fold)
                sub = np.asarray(self._eval(node.nxt, ctx), float)
                per_k.append(w + sub)
            ctx.pop(("s", step.sid), None)
            arr = np.stack(per_k, axis=0)
            if not step.count_axis:
                arr = np.atleast_1d(logsumexp(arr, axis=0)) \
                    if arr.ndim > 1 else np.asarray(logsumexp(arr, axis=0))
            per_assign.append(np.asarray(arr, float))
        for a in step.query_ids:
            ctx.pop(("a", a), None)
        if qn:
            tail_shape = per_assign[0].shape
            out = np.stack(per_assign, axis=0).reshape((2,) * qn + tail_shape)
            for axis, a in enumerate(step.query_ids):
                vec = np.zeros(2)
                for psi in copy:
                    vec = vec + psi
                for pot in self.atom_pots.get(a, []):
                    vec = vec + pot
                shape = [1] * out.ndim
                shape[axis] = 2
                out = out + vec.reshape(shape)
        else:
            out = per_assign[0]
        return out

    def _fold_value(self, fold):
        data = self.model.clause_data[fold.clause_idx]
        idx = fold.sol_idx
        if idx.size == 0:
            return 0.0
        unsat = np.ones(idx.size, dtype=bool)
        for li in range(len(data["lit_atoms"])):
            unsat &= self.truth[data["lit_atoms"][li][idx]] != data["lit_sign"][li]
        return data["weight"] * (idx.size - int(unsat.sum()))

    def _eval_decomp(self, node, ctx):
        out = np.zeros(())
        if node.plain is not None and node.plain_mult:
            out = out + node.plain_mult * np.asarray(
                self._eval(node.plain, ctx), float)
        for body in node.query_bodies:
            sub = np.asarray(self._eval(body, ctx), float)
            out = out.reshape(out.shape + (1,) * sub.ndim) + \
                sub.reshape((1,) * out.ndim + sub.shape)
        for aid, is_q in node.leftover:
            vec = np.zeros(2)
            for psi in self.copy_pots.get(self.model.atom_group[aid], []):
                vec = vec + psi
            for pot in self.atom_pots.get(aid, []):
                vec = vec + pot
            if is_q:
                out = out.reshape(out.shape + (1,)) + vec.reshape(
                    (1,) * out.ndim + (2,))
            else:
                out = out + logsumexp(vec)
        return out


def _all_leftovers(node):
    if node is None:
        return []
    if isinstance(node, PCount):
        return _all_leftovers(node.nxt)
    if isinstance(node, PBranch):
        return [x for b in node.branches for x in _all_leftovers(b)]
    out = list(node.leftover)
    if node.plain is not None:
        out += _all_leftovers(node.plain)
    for b in node.query_bodies:
        out += _all_leftovers(b)
    return out


def _merge_count_axes(arr, i, j, n1, n2):
    """Merge two per-assignment count axes into one over the total count."""
    arr = np.moveaxis(arr, j, i + 1)
    n = n1 + n2
    lb1, lb2, lbn = log_binom(n1), log_binom(n2), log_binom(n)
    out = np.full(arr.shape[:i] + (n + 1,) + arr.shape[i + 2:], -np.inf)
    for k in range(n + 1):
        pieces = []
        for k1 in range(max(0, k - n2), min(n1, k) + 1):
            k2 = k - k1
            sl = arr[(slice(None),) * i + (k1, k2)]
            pieces.append(np.asarray(sl, float) + lb1[k1] + lb2[k2])
        stacked = np.stack(pieces, axis=0)
        out[(slice(None),) * i + (k,)] = \
            logsumexp(stacked, axis=0) - lbn[k]
    return out


def evaluate_program(cq: CompiledQuery, att: Attachments | None = None
                     ) -> np.ndarray:
    """Log array over cq.axes; count axes hold per-assignment values."""
    out = _Evaluator(cq, att or Attachments()).run()
    axes = list(cq.raw_axes)
    while True:
        by_g: dict[int, list[int]] = {}
        for i, spec in enumerate(axes):
            if spec[0] == "grouppart":
                by_g.setdefault(spec[1], []).append(i)
        gi = next((g for g, pos in by_g.items() if len(pos) >= 2), None)
        if gi is None:
            break
        p1, p2 = by_g[gi][0], by_g[gi][1]
        steps = cq.group_steps[gi]
        sizes = [len(st.atom_ids) for st in steps]
        n1 = out.shape[p1] - 1
        n2 = out.shape[p2] - 1
        out = _merge_count_axes(out, p1, p2, n1, n2)
        axes[p1] = ("grouppart", gi, -1)
        del axes[p2]
    return out


def program_leaf_count(cq: CompiledQuery) -> int:
    """Distinct terminal conditioning contexts of the compiled search."""
    if cq.free_query or any(st.query_ids or st.count_axis for st in cq.steps):
        raise MLNError("leaf counting expects a query-free compilation")
    seen = set()
    total = 0
    stack = [(cq.root, frozenset())]
    while stack:
        node, ctx = stack.pop()
        if node is None:
            continue
        key = (node.nid, frozenset(kv for kv in ctx if kv[0] in node.live))
        if key in seen:
            continue
        seen.add(key)
        if isinstance(node, PCount):
            n = len(node.step.atom_ids)
            if node.nxt is None:
                total += n + 1
            else:
                for k in range(n + 1):
                    stack.append((node.nxt, ctx | {(("s", node.step.sid), k)}))
        elif isinstance(node, PBranch):
            for b in node.branches:
                stack.append((b, ctx))
        else:
            if node.plain is not None and node.plain_mult:
                stack.append((node.plain, ctx))
            for b in node.query_bodies:
                stack.append((b, ctx))
    return total
