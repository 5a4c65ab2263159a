"""Exact lifted inference over factorization trees.

Partition functions evaluate by recursive lifted sums / lifted products /
grounding; joint marginals are exposed for atom sets that live on a single
root-to-leaf path (the JD family).  Separable models (every clause a free
product of whole-cell literals) additionally get closed-form count tensors
and count-space variable elimination, which is what makes the random
experiment models cheap at large domain sizes.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .evaluator import (Attachments, CompiledQuery, FactorizationInvalid,
                        RegionModel, compile_query, evaluate_program,
                        program_leaf_count, _pos_class)
from .factorization import FactorizationNode, factorization_to_text, \
    tree_paths, tree_vertices
from .mln import (MLN, Atom, GroupKey, MLNError, OracleLimitError,
                  format_atom, group_id_str, literal_pattern)
from .tables import log_binom, logsumexp

__all__ = [
    "NotInJD", "Potential", "JDIndex",
    "validate_factorization", "evaluate_z", "leaf_count",
    "jd_sets", "jd_contains", "joint_marginal",
    "default_factorization", "enumerate_factorizations",
    "separable", "SeparableJoint", "count_variable_elimination",
    "separable_group_marginals", "separable_log_z",
]

VE_CELL_CAP = 50_000_000


class NotInJD(MLNError):
    pass


# ---------------------------------------------------------------------------
# Potentials over mixed count/atom axes
# ---------------------------------------------------------------------------

@dataclass
class Potential:
    """Normalized log potential; group axes hold per-assignment values."""
    group_axes: tuple[GroupKey, ...]
    atom_axes: tuple[Atom, ...]
    logv: np.ndarray
    group_sizes: tuple[int, ...] = ()

    def normalized(self) -> "Potential":
        weight = np.zeros_like(self.logv)
        for axis, n in enumerate(self.group_sizes):
            shape = [1] * self.logv.ndim
            shape[axis] = n + 1
            weight = weight + log_binom(n).reshape(shape)
        total = logsumexp((self.logv + weight).reshape(-1))
        return Potential(self.group_axes, self.atom_axes, self.logv - total,
                         self.group_sizes)

    def _mass(self) -> np.ndarray:
        norm = self.normalized()
        weight = np.zeros_like(norm.logv)
        for axis, n in enumerate(norm.group_sizes):
            shape = [1] * norm.logv.ndim
            shape[axis] = n + 1
            weight = weight + log_binom(n).reshape(shape)
        return np.exp(norm.logv + weight)

    def atom_marginal(self, atom: Atom) -> float:
        """P(atom = true) for an explicit atom axis."""
        if atom not in self.atom_axes:
            raise MLNError(f"atom {format_atom(atom)} not an axis")
        mass = self._mass()
        axis = len(self.group_axes) + self.atom_axes.index(atom)
        idx = [slice(None)] * mass.ndim
        idx[axis] = 1
        return float(mass[tuple(idx)].sum())

    def group_member_prob(self, key: GroupKey) -> float:
        """P(one member of the counted cell is true), by exchangeability."""
        axis = self.group_axes.index(key)
        n = self.group_sizes[axis]
        mass = self._mass()
        shape = [1] * mass.ndim
        shape[axis] = n + 1
        frac = (np.arange(n + 1) / max(n, 1)).reshape(shape)
        return float((mass * frac).sum())


# ---------------------------------------------------------------------------
# Spec operations
# ---------------------------------------------------------------------------

def validate_factorization(mln: MLN, root: FactorizationNode):
    """(True, None) or (False, first violated precondition)."""
    try:
        compile_query(RegionModel(mln), root, validate=True)
        return True, None
    except (FactorizationInvalid, MLNError, ValueError) as e:
        return False, str(e)


def evaluate_z(mln: MLN, root: FactorizationNode | None = None,
               model: RegionModel | None = None) -> float:
    model = model or RegionModel(mln)
    root = root or default_factorization(mln, model=model)
    cq = compile_query(model, root, validate=True)
    return float(evaluate_program(cq))


def leaf_count(mln: MLN, root: FactorizationNode) -> int:
    cq = compile_query(RegionModel(mln), root, validate=True)
    return program_leaf_count(cq)


@dataclass
class JDIndex:
    model: RegionModel
    paths: list[dict]


def jd_sets(mln: MLN, root: FactorizationNode,
            model: RegionModel | None = None) -> JDIndex:
    """Per root-to-leaf path: which cells appear and which decomposer edges
    pin their classes.  Atom sets are jointly accessible when they fit one
    path with consistent edge bindings."""
    model = model or RegionModel(mln)
    paths = []
    for path in tree_paths(root):
        groups = {}
        edge_bindings = []
        for depth, node in enumerate(path):
            gi = model.group_index[node.group]
            groups[gi] = depth
            if node.edge_vars:
                bound = set()
                for data in model.clause_data:
                    cl = data["clause"]
                    for lit in cl.literals:
                        key = literal_pattern(cl, lit)
                        pc = _pos_class(key)
                        for p, arg in enumerate(lit.args):
                            if arg in node.edge_vars:
                                bound.add((model.group_index[key], pc[p]))
                edge_bindings.append({"depth": depth, "bound": bound})
        paths.append({"groups": groups, "edges": edge_bindings})
    return JDIndex(model, paths)


def jd_contains(index: JDIndex, atoms) -> bool:
    model = index.model
    atoms = [a for a in atoms]
    for a in atoms:
        if a not in model.atom_id:
            return False
    for path in index.paths:
        need: dict[int, str] = {}
        ok = True
        for a in atoms:
            aid = model.atom_id[a]
            gi = model.atom_group[aid]
            if gi not in path["groups"]:
                ok = False
                break
            depth = path["groups"][gi]
            pc = _pos_class(model.groups[gi])
            for ei, edge in enumerate(path["edges"]):
                if edge["depth"] > depth:
                    continue
                for (g, cls) in edge["bound"]:
                    if g != gi:
                        continue
                    pos = next(p for p, c in pc.items() if c == cls)
                    const = model.atoms[aid][1][pos]
                    if need.setdefault(ei, const) != const:
                        ok = False
            if not ok:
                break
        if ok:
            return True
    return False


def joint_marginal(mln: MLN, root: FactorizationNode, atoms=(), groups=(),
                   incoming: Attachments | None = None,
                   model: RegionModel | None = None,
                   check_jd: bool = True) -> Potential:
    """Normalized joint over the requested whole groups and single atoms.

    Raises NotInJD when the targets are not jointly accessible on one
    root-to-leaf path of the factorization.
    """
    model = model or RegionModel(mln)
    atoms = tuple(atoms)
    groups = tuple(groups)
    if check_jd:
        index = jd_sets(mln, root, model=model)
        probe = list(atoms)
        for key in groups:
            probe.extend(model.group_atom_lists[model.group_index[key]])
        if not jd_contains(index, probe):
            raise NotInJD("requested atoms are not in JD for this factorization")
    cq = compile_query(model, root, query_groups=groups, query_atoms=atoms,
                       validate=True)
    logv = evaluate_program(cq, incoming)
    # reorder emission axes to (groups..., atoms...) in request order
    want = [("group", model.group_index[g]) for g in groups] + \
           [("atom", model.atom_id[a]) for a in atoms]
    perm = [cq.axes.index(w) for w in want]
    logv = np.transpose(logv, axes=perm) if perm else logv
    sizes = tuple(len(model.group_atom_lists[model.group_index[g]])
                  for g in groups)
    return Potential(groups, atoms, logv, sizes).normalized()


# ---------------------------------------------------------------------------
# Factorization construction
# ---------------------------------------------------------------------------

def _components(model: RegionModel, remaining: set[int]) -> list[list[int]]:
    adj = {g: set() for g in remaining}
    for data in model.clause_data:
        gs = [g for g in set(data["lit_groups"]) if g in remaining]
        for a, b in itertools.combinations(gs, 2):
            adj[a].add(b)
            adj[b].add(a)
    comps = []
    left = set(remaining)
    while left:
        start = min(left)
        comp = {start}
        frontier = [start]
        while frontier:
            v = frontier.pop()
            for u in adj[v]:
                if u not in comp:
                    comp.add(u)
                    frontier.append(u)
        comps.append(sorted(comp))
        left -= comp
    return comps


def _decomposer_candidates(model: RegionModel, remaining: set[int]):
    """Closures of variables under sharing a (cell, class) position."""
    var_pos: dict[str, set] = {}
    pos_vars: dict[tuple, set] = {}
    for data in model.clause_data:
        cl = data["clause"]
        for lit in cl.literals:
            key = literal_pattern(cl, lit)
            gi = model.group_index[key]
            if gi not in remaining:
                continue
            pc = _pos_class(key)
            for p, arg in enumerate(lit.args):
                if cl.is_variable(arg):
                    var_pos.setdefault(arg, set()).add((gi, pc[p]))
                    pos_vars.setdefault((gi, pc[p]), set()).add(arg)
    seen = set()
    out = []
    for seed in sorted(var_pos):
        closure = {seed}
        changed = True
        while changed:
            changed = False
            for v in list(closure):
                for pos in var_pos[v]:
                    for u in pos_vars[pos]:
                        if u not in closure:
                            closure.add(u)
                            changed = True
        fs = frozenset(closure)
        if fs not in seen:
            seen.add(fs)
            out.append(fs)
    out.sort(key=lambda s: (-len(s), sorted(s)))
    return out


def _candidate_trees(model: RegionModel, remaining: set[int],
                     bound: dict[int, set], pending: frozenset,
                     first_count: int | None):
    """Yield sibling-subtree lists in greedy preference order."""
    if not remaining:
        yield []
        return
    comps = _components(model, remaining)
    if len(comps) > 1:
        if pending:
            return
        def product_over(idx):
            if idx == len(comps):
                yield []
                return
            for head in _candidate_trees(model, set(comps[idx]), bound,
                                         frozenset(), first_count):
                for tail in product_over(idx + 1):
                    yield head + tail
        yield from product_over(0)
        return

    moves = []
    if first_count is not None and first_count in remaining:
        moves.append(("V", first_count, "C"))
    else:
        if not pending:
            for vars_ in _decomposer_candidates(model, remaining):
                moves.append(("D", vars_))
        for gi in sorted(remaining):
            moves.append(("V", gi, "C"))
        for gi in sorted(remaining):
            moves.append(("V", gi, "G"))

    for move in moves:
        if move[0] == "D":
            edge_bound: dict[int, set] = {}
            for data in model.clause_data:
                cl = data["clause"]
                for lit in cl.literals:
                    key = literal_pattern(cl, lit)
                    gi = model.group_index[key]
                    pc = _pos_class(key)
                    for p, arg in enumerate(lit.args):
                        if arg in move[1] and gi in remaining:
                            edge_bound.setdefault(gi, set()).add(pc[p])
            # the decomposed subtree spans the rest of the component, so
            # every remaining cell needs a position bound by this very edge
            if any(not edge_bound.get(gi) for gi in remaining):
                continue
            new_bound = {g: set(b) for g, b in bound.items()}
            for gi, classes in edge_bound.items():
                new_bound.setdefault(gi, set()).update(classes)
            yield from _candidate_trees(model, remaining, new_bound,
                                        move[1], None)
        else:
            _kind, gi, style = move
            key = model.groups[gi]
            pc = _pos_class(key)
            bound_classes = bound.get(gi, set())
            tags = []
            for p, (kind, val) in enumerate(key.slots):
                if kind == "const":
                    tags.append("G")
                elif val in bound_classes:
                    tags.append("D")
                else:
                    tags.append(style)
            for tail in _candidate_trees(model, remaining - {gi}, bound,
                                         frozenset(), None):
                node = FactorizationNode(key, tuple(tags), pending,
                                         tuple(tail))
                yield [node]


def _assemble(roots: list[FactorizationNode]) -> FactorizationNode:
    if len(roots) == 1:
        return roots[0]
    head = roots[0]
    return FactorizationNode(head.group, head.tags, head.edge_vars,
                             head.children + tuple(roots[1:]))


def default_factorization(mln: MLN, count_first: GroupKey | None = None,
                          model: RegionModel | None = None,
                          max_attempts: int = 200) -> FactorizationNode:
    """Greedy plan: decomposers when valid, lifted sums otherwise, grounding
    as the fallback; deterministic.  count_first forces an initial lifted sum
    on the given cell (used for per-formula region factorizations)."""
    model = model or RegionModel(mln)
    remaining = set(range(len(model.groups)))
    first = model.group_index[count_first] if count_first is not None else None
    attempts = 0
    for roots in _candidate_trees(model, remaining, {}, frozenset(), first):
        attempts += 1
        tree = _assemble(roots)
        try:
            compile_query(model, tree, validate=True)
            return tree
        except (FactorizationInvalid, MLNError, ValueError):
            if attempts >= max_attempts:
                break
    raise MLNError("no valid factorization found")


def enumerate_factorizations(mln: MLN, limit: int = 200,
                             model: RegionModel | None = None
                             ) -> list[FactorizationNode]:
    """All distinct valid factorizations the builder can reach (bounded)."""
    model = model or RegionModel(mln)
    remaining = set(range(len(model.groups)))
    out = []
    seen = set()
    attempts = 0
    for roots in _candidate_trees(model, remaining, {}, frozenset(), None):
        attempts += 1
        if attempts > limit * 20:
            break
        tree = _assemble(roots)
        text = factorization_to_text(tree)
        if text in seen:
            continue
        seen.add(text)
        try:
            compile_query(model, tree, validate=True)
            out.append(tree)
        except (FactorizationInvalid, MLNError, ValueError):
            continue
        if len(out) >= limit:
            break
    return out


# ---------------------------------------------------------------------------
# Separable models: closed-form count tensors and variable elimination
# ---------------------------------------------------------------------------

def separable(model: RegionModel) -> bool:
    """Every clause is a free product of whole-cell literals."""
    for data in model.clause_data:
        cl = data["clause"]
        lit_vars = [set(a for a in lit.args if cl.is_variable(a))
                    for lit in cl.literals]
        for a, b in itertools.combinations(range(len(cl.literals)), 2):
            if lit_vars[a] & lit_vars[b]:
                return False
        for con in cl.constraints:
            if con.kind == "dom":
                continue
            holders = [i for i, vs in enumerate(lit_vars)
                       if con.a in vs or con.b in vs]
            if len(holders) > 1:
                return False
        expected = 1
        for li in range(len(cl.literals)):
            gi = data["lit_groups"][li]
            cell = len(model.group_atom_lists[gi])
            if len(set(map(int, data["lit_atoms"][li]))) != cell:
                return False
            expected *= cell
        if len(data["sols"]) != expected:
            return False
    return True


@dataclass
class _Axis:
    key: GroupKey
    gi: int
    mode: str              # 'count' | 'bit' | 'rest'
    rep_atom: Atom | None = None


class SeparableJoint:
    """Static joint log tensor over per-group axes for separable models.

    Interface per group: a single count axis, or a (rep-atom bit, rest
    count) axis pair.  Attachments broadcast over these axes, so belief
    updates never re-enter the evaluator.
    """

    def __init__(self, model: RegionModel, iface: list[tuple[GroupKey, str, Atom | None]]):
        if not separable(model):
            raise MLNError("model is not separable")
        self.model = model
        self.axes: list[_Axis] = []
        self.group_axis: dict[int, list[int]] = {}
        for key, mode, rep in iface:
            gi = model.group_index[key]
            if mode == "count":
                self.group_axis[gi] = [len(self.axes)]
                self.axes.append(_Axis(key, gi, "count"))
            else:
                self.group_axis[gi] = [len(self.axes), len(self.axes) + 1]
                self.axes.append(_Axis(key, gi, "bit", rep))
                self.axes.append(_Axis(key, gi, "rest", rep))
        covered = set(self.group_axis)
        for gi in range(len(model.groups)):
            if gi not in covered:
                self.group_axis[gi] = [len(self.axes)]
                self.axes.append(_Axis(model.groups[gi], gi, "count"))
        self.shape = tuple(self._axis_size(ax) for ax in self.axes)
        if math.prod(self.shape) > VE_CELL_CAP:
            raise OracleLimitError("separable joint tensor too large")
        self.static = self._build_static()

    def _axis_size(self, ax: _Axis) -> int:
        n = len(self.model.group_atom_lists[ax.gi])
        return {"count": n + 1, "bit": 2, "rest": n}[ax.mode]

    def _true_count(self, gi):
        """Broadcastable true-count array for the group."""
        idxs = self.group_axis[gi]
        out = np.zeros(self.shape)
        for axis in idxs:
            shape = [1] * len(self.axes)
            shape[axis] = self.shape[axis]
            out = out + np.arange(self.shape[axis]).reshape(shape)
        return out

    def _build_static(self) -> np.ndarray:
        model = self.model
        logv = np.zeros(self.shape)
        # binomial measure: count axes C(n,k); split axes C(n-1, k_rest)
        for ax_i, ax in enumerate(self.axes):
            n = len(model.group_atom_lists[ax.gi])
            shape = [1] * len(self.axes)
            shape[ax_i] = self.shape[ax_i]
            if ax.mode == "count":
                logv = logv + log_binom(n).reshape(shape)
            elif ax.mode == "rest":
                logv = logv + log_binom(n - 1).reshape(shape)
        for data in model.clause_data:
            if data["weight"] == 0.0 or not data["sols"]:
                continue
            total = 1
            false_prod = np.zeros(())
            for li in range(len(data["lit_atoms"])):
                gi = data["lit_groups"][li]
                n = len(model.group_atom_lists[gi])
                total *= n
                k = self._true_count(gi)
                with np.errstate(divide="ignore"):
                    false_prod = false_prod + np.log(
                        np.maximum(n - k if data["lit_sign"][li] else k, 0.0))
            with np.errstate(over="ignore"):
                n_unsat = np.exp(false_prod)
            logv = logv + data["weight"] * (total - n_unsat)
        return logv

    def evaluate(self, att: Attachments) -> np.ndarray:
        logv = self.static
        gi_of = self.model.group_index
        for key, vec in att.count_msgs:
            gi = gi_of[key]
            idxs = self.group_axis[gi]
            vec = np.asarray(vec, float)
            if len(idxs) == 1:
                shape = [1] * len(self.axes)
                shape[idxs[0]] = self.shape[idxs[0]]
                logv = logv + vec.reshape(shape)
            else:
                bit_ax, rest_ax = idxs
                n = len(self.model.group_atom_lists[gi])
                arr = np.zeros((2, n))
                for b in range(2):
                    arr[b, :] = vec[b:b + n]
                shape = [1] * len(self.axes)
                shape[bit_ax] = 2
                shape[rest_ax] = n
                logv = logv + arr.reshape(shape)
        for key, vec in att.copy_pots:
            gi = gi_of[key]
            n = len(self.model.group_atom_lists[gi])
            k = self._true_count(gi)
            logv = logv + k * float(vec[1]) + (n - k) * float(vec[0])
        for atom, vec in att.atom_pots:
            placed = False
            for ax_i, ax in enumerate(self.axes):
                if ax.mode == "bit" and ax.rep_atom == atom:
                    shape = [1] * len(self.axes)
                    shape[ax_i] = 2
                    logv = logv + np.asarray(vec, float).reshape(shape)
                    placed = True
            if not placed:
                raise MLNError(
                    f"atom attachment {format_atom(atom)} has no bit axis")
        return logv

    def marginal(self, logv: np.ndarray, targets: list[tuple[GroupKey, str]]):
        """Log-mass marginal onto target axes.

        Modes: 'count' keeps the count axis, 'bit' the rep-atom axis,
        'split' both the bit and rest-count axes (in that order).
        """
        keep = []
        for key, mode in targets:
            gi = self.model.group_index[key]
            idxs = self.group_axis[gi]
            if mode == "count":
                if len(idxs) != 1:
                    raise MLNError("group not represented by a count axis")
                keep.append(idxs[0])
            elif mode == "bit":
                if len(idxs) != 2:
                    raise MLNError("group has no rep-atom bit axis")
                keep.append(idxs[0])
            elif mode == "split":
                if len(idxs) != 2:
                    raise MLNError("group has no split axes")
                keep.extend(idxs)
            else:
                raise ValueError(mode)
        drop = tuple(i for i in range(len(self.axes)) if i not in keep)
        out = logsumexp(logv, axis=drop) if drop else logv
        order = np.argsort(np.argsort(keep))
        return np.transpose(np.atleast_1d(out), axes=order)


def count_variable_elimination(model: RegionModel, keep: list[int]):
    """Count-space VE: eliminate all groups except `keep` (log space).

    Returns a log array over the kept groups' count axes carrying total
    probability mass per count (binomials folded in), unnormalized.
    """
    if not separable(model):
        raise MLNError("count-space VE needs a separable model")
    factors: list[tuple[tuple[int, ...], np.ndarray]] = []
    for gi in range(len(model.groups)):
        n = len(model.group_atom_lists[gi])
        factors.append(((gi,), log_binom(n)))
    for data in model.clause_data:
        if data["weight"] == 0.0 or not data["sols"]:
            continue
        gis = sorted(set(data["lit_groups"]))
        sizes = [len(model.group_atom_lists[g]) + 1 for g in gis]
        if math.prod(sizes) > VE_CELL_CAP:
            raise OracleLimitError("clause factor too large")
        false_prod = np.zeros(())
        total = 1
        for li in range(len(data["lit_atoms"])):
            gi = data["lit_groups"][li]
            n = len(model.group_atom_lists[gi])
            total *= n
            axis = gis.index(gi)
            shape = [1] * len(gis)
            shape[axis] = n + 1
            k = np.arange(n + 1).reshape(shape)
            with np.errstate(divide="ignore"):
                false_prod = false_prod + np.log(np.maximum(
                    (n - k) if data["lit_sign"][li] else k, 0.0))
        with np.errstate(over="ignore"):
            n_unsat = np.exp(false_prod)
        factors.append((tuple(gis), data["weight"] * (total - n_unsat)))

    order = [gi for gi in range(len(model.groups)) if gi not in keep]
    # min-degree elimination
    def degree(gi, facs):
        touched = set()
        for axes, _ in facs:
            if gi in axes:
                touched.update(axes)
        return len(touched)

    while order:
        gi = min(order, key=lambda g: (degree(g, factors), g))
        order.remove(gi)
        bundle = [f for f in factors if gi in f[0]]
        rest = [f for f in factors if gi not in f[0]]
        axes = sorted(set(itertools.chain.from_iterable(f[0] for f in bundle)))
        sizes = [len(model.group_atom_lists[g]) + 1 for g in axes]
        if math.prod(sizes) > VE_CELL_CAP:
            raise OracleLimitError("intractable for exact oracle")
        acc = np.zeros(sizes)
        for faxes, arr in bundle:
            shape = [1] * len(axes)
            a = arr
            perm = sorted(range(len(faxes)), key=lambda i: axes.index(faxes[i]))
            a = np.transpose(a, axes=perm)
            for ax in sorted(faxes, key=axes.index):
                shape[axes.index(ax)] = len(model.group_atom_lists[ax]) + 1
            acc = acc + a.reshape(shape)
        out = logsumexp(acc, axis=axes.index(gi))
        new_axes = tuple(a for a in axes if a != gi)
        factors = rest + [(new_axes, np.atleast_1d(out) if new_axes else
                           np.asarray(out))]

    axes = sorted(keep)
    sizes = [len(model.group_atom_lists[g]) + 1 for g in axes]
    acc = np.zeros(sizes) if axes else np.zeros(())
    for faxes, arr in factors:
        if not faxes:
            acc = acc + arr
            continue
        perm = sorted(range(len(faxes)), key=lambda i: axes.index(faxes[i]))
        a = np.transpose(arr, axes=perm)
        shape = [1] * len(axes)
        for ax in faxes:
            shape[axes.index(ax)] = len(model.group_atom_lists[ax]) + 1
        acc = acc + a.reshape(shape)
    return axes, acc


def separable_log_z(model: RegionModel) -> float:
    _axes, acc = count_variable_elimination(model, [])
    return float(acc)


def _count_factors(model: RegionModel):
    factors: list[tuple[tuple[int, ...], np.ndarray]] = []
    for gi in range(len(model.groups)):
        n = len(model.group_atom_lists[gi])
        factors.append(((gi,), log_binom(n)))
    for data in model.clause_data:
        if data["weight"] == 0.0 or not data["sols"]:
            continue
        gis = sorted(set(data["lit_groups"]))
        false_prod = np.zeros(())
        total = 1
        for li in range(len(data["lit_atoms"])):
            gi = data["lit_groups"][li]
            n = len(model.group_atom_lists[gi])
            total *= n
            axis = gis.index(gi)
            shape = [1] * len(gis)
            shape[axis] = n + 1
            k = np.arange(n + 1).reshape(shape)
            with np.errstate(divide="ignore"):
                false_prod = false_prod + np.log(np.maximum(
                    (n - k) if data["lit_sign"][li] else k, 0.0))
        with np.errstate(over="ignore"):
            n_unsat = np.exp(false_prod)
        factors.append((tuple(gis), data["weight"] * (total - n_unsat)))
    return factors


def _minfill_order(scopes, n_vars):
    adj = {v: set() for v in range(n_vars)}
    for sc in scopes:
        for a, b in itertools.combinations(sc, 2):
            adj[a].add(b)
            adj[b].add(a)
    order = []
    remaining = set(range(n_vars))
    while remaining:
        best, best_key = None, None
        for v in sorted(remaining):
            nbrs = adj[v] & remaining
            fill = sum(1 for a, b in itertools.combinations(sorted(nbrs), 2)
                       if b not in adj[a])
            key = (fill, len(nbrs), v)
            if best_key is None or key < best_key:
                best, best_key = v, key
        nbrs = adj[best] & remaining
        for a, b in itertools.combinations(sorted(nbrs), 2):
            adj[a].add(b)
            adj[b].add(a)
        order.append(best)
        remaining.discard(best)
    return order


def _combine(model, factors):
    axes = sorted(set(itertools.chain.from_iterable(f[0] for f in factors)))
    sizes = [len(model.group_atom_lists[g]) + 1 for g in axes]
    if math.prod(sizes) > VE_CELL_CAP:
        raise OracleLimitError("intractable for exact oracle")
    acc = np.zeros(sizes) if axes else np.zeros(())
    for faxes, arr in factors:
        if not faxes:
            acc = acc + arr
            continue
        shape = [1] * len(axes)
        for ax in faxes:
            shape[axes.index(ax)] = len(model.group_atom_lists[ax]) + 1
        acc = acc + arr.reshape(shape)
    return tuple(axes), acc


def _project(model, axes, arr, keep):
    keep = tuple(sorted(keep))
    drop = tuple(i for i, a in enumerate(axes) if a not in keep)
    out = logsumexp(arr, axis=drop) if drop else arr
    return keep, (np.atleast_1d(out) if keep else np.asarray(out))


def separable_group_marginals(model: RegionModel) -> dict[GroupKey, float]:
    """P(atom true) per cell, exactly, via a two-pass count-space bucket tree.

    All single-cell count marginals come out of one upward and one downward
    message pass over a min-fill elimination order (Shafer-Shenoy), which is
    what keeps the random-model experiments cheap at domain size 20.
    """
    if not separable(model):
        raise MLNError("count-space marginals need a separable model")
    factors = _count_factors(model)
    n_vars = len(model.groups)
    order = _minfill_order([f[0] for f in factors if len(f[0]) > 1], n_vars)
    pos = {v: i for i, v in enumerate(order)}
    buckets: list[list] = [[] for _ in order]
    for faxes, arr in factors:
        if not faxes:
            continue
        first = min(faxes, key=lambda v: pos[v])
        buckets[pos[first]].append((faxes, arr))
    received: list[list] = [[] for _ in order]
    children: list[list[int]] = [[] for _ in order]
    up_scope: list[tuple] = [()] * len(order)
    for i, v in enumerate(order):
        items = buckets[i] + received[i]
        axes, acc = _combine(model, items)
        keep = tuple(a for a in axes if a != v)
        scope, msg = _project(model, axes, acc, keep)
        up_scope[i] = scope
        if scope:
            dest = pos[min(scope, key=lambda u: pos[u])]
            received[dest].append((scope, msg))
            children[dest].append(i)
    down: list = [((), np.zeros(()))] * len(order)
    for i in reversed(range(len(order))):
        items = buckets[i] + [down[i]]
        for ci, child in enumerate(children[i]):
            others = [received[i][cj] for cj in range(len(received[i]))
                      if children[i][cj] != child]
            axes, acc = _combine(model, items + others)
            scope, msg = _project(model, axes, acc, up_scope[child])
            down[child] = (scope, msg)
    out = {}
    for gi, key in enumerate(model.groups):
        n = len(model.group_atom_lists[gi])
        if n == 0:
            continue
        i = pos[gi]
        axes, acc = _combine(model, buckets[i] + received[i] + [down[i]])
        _scope, marg = _project(model, axes, acc, (gi,))
        mass = np.exp(marg - logsumexp(marg))
        out[key] = float((mass * (np.arange(n + 1) / n)).sum())
    return out
