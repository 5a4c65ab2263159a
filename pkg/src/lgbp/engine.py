"""Lifted parent-to-child propagation.

One message per lifted role-edge: a 2-entry table over the child's
representative atom, or a count-space vector over the child's whole cell
(O(n) parameters).  Region beliefs attach incoming messages raised to the
copy-count statistics G_P / G_E and evaluate through the region's
factorization: separable regions use closed-form count tensors, everything
else goes through the generic lifted evaluator.  The update rule divides the
marginalized parent belief by every term of the child's belief except the
message being updated, mirroring the propositional engine term for term, so
runs are lockstep-comparable with GBP on the simulated ground graph.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .evaluator import Attachments, RegionModel, compile_query, \
    evaluate_program
from .ground import PropagationConfig
from .lifted import SeparableJoint, separable
from .mln import Atom, GroupKey, MLNError, format_atom, group_atoms, \
    group_id_str
from .regions import (LiftedRegionGraph, descendant_copies, stat_gp,
                      _aligned_parent_copies)
from .tables import (LOG_EPS, collapse_to_counted, damp_log,
                     expand_counted_values, log_binom, logsumexp,
                     normalize_counted, normalize_table)

__all__ = ["Message", "LGBPState", "LGBPResult", "init_state",
           "compute_belief", "update_message", "run", "expand_counted",
           "kl_divergence"]


@dataclass
class Message:
    edge_index: int
    kind: str                    # "tabular" | "counted"
    cell: GroupKey
    atoms: tuple[Atom, ...]      # tabular scope (the aligned parent-side atom)
    values: np.ndarray           # log; normalized per kind
    stamp: int = 0

    def normalized(self) -> "Message":
        fn = normalize_counted if self.kind == "counted" else normalize_table
        return Message(self.edge_index, self.kind, self.cell, self.atoms,
                       fn(self.values), self.stamp)


@dataclass
class LGBPResult:
    marginals: dict[str, float]
    beliefs: dict[int, tuple]
    iterations_used: int
    converged: bool
    residuals: list[float] = field(default_factory=list)
    messages: list[Message] = field(default_factory=list)
    state: "LGBPState" = None


class _BeliefHandle:
    """Log-mass array over ('count', cell) / ('atom', atom) axes."""

    def __init__(self, axes, sizes, logv):
        self.axes = axes
        self.sizes = sizes
        self.logv = logv

    def _reduce(self, keep_idx):
        weighted = self.logv
        drop = [i for i in range(len(self.axes)) if i != keep_idx]
        out = logsumexp(weighted, axis=tuple(drop)) if drop else weighted
        return np.atleast_1d(out)

    def marginal_count(self, cell) -> np.ndarray:
        idx = self.axes.index(("count", cell))
        n = self.sizes[idx] - 1
        return self._reduce(idx) - log_binom(n)

    def marginal_atom(self, atom) -> np.ndarray:
        idx = self.axes.index(("atom", atom))
        return self._reduce(idx)

    def member_prob(self, cell=None, atom=None) -> float:
        if atom is not None and ("atom", atom) in self.axes:
            v = self.marginal_atom(atom)
            lin = np.exp(v - logsumexp(v))
            return float(lin[1])
        idx = self.axes.index(("count", cell))
        mass = self._reduce(idx)
        lin = np.exp(mass - logsumexp(mass))
        n = self.sizes[idx] - 1
        return float((lin * (np.arange(n + 1) / max(n, 1))).sum())


class _RegionBackend:
    """Per-region evaluation: a separable count tensor or a compiled query.

    Cells asked for both a count axis and an atom axis (a count region that
    feeds a connector) get a degenerate joint over (bit, total count) built
    from the split representation — the hypergeometric transition between a
    whole-cell count and one member's value.
    """

    def __init__(self, region, iface):
        # iface entries: ('count', cell) and ('atom', atom, cell)
        self.region = region
        model = region.rep_model
        count_cells = [spec[1] for spec in iface if spec[0] == "count"]
        atom_specs = [(spec[1], spec[2]) for spec in iface
                      if spec[0] == "atom"]
        self.cell_plan = []   # (cell, mode, atom|None); mode count|atom|both
        for c in count_cells:
            atoms_here = [a for a, ac in atom_specs if ac == c]
            if atoms_here:
                if len(atoms_here) > 1:
                    raise MLNError("several atom axes on one counted cell")
                self.cell_plan.append((c, "both", atoms_here[0]))
            else:
                self.cell_plan.append((c, "count", None))
        for a, c in atom_specs:
            if c not in count_cells:
                self.cell_plan.append((c, "atom", a))
        self.axes = []
        for c, mode, a in self.cell_plan:
            if mode in ("atom", "both"):
                self.axes.append(("atom", a))
            if mode in ("count", "both"):
                self.axes.append(("count", c))
        dup_atoms = [a for _c, m, a in self.cell_plan if a is not None]
        if separable(model) and len(set(dup_atoms)) == len(dup_atoms):
            spec = [(c, "count", None) if mode == "count" else
                    (c, "split", a) for c, mode, a in self.cell_plan]
            self.sj = SeparableJoint(model, spec)
            self.cq = None
        else:
            if any(mode == "both" for _c, mode, _a in self.cell_plan):
                raise MLNError(
                    "count+atom interface on a non-separable region")
            self.sj = None
            self.cq = compile_query(
                model, region.factorization,
                query_groups=[c for c, m, _a in self.cell_plan
                              if m == "count"],
                query_atoms=[a for _c, m, a in self.cell_plan if m == "atom"],
                validate=True)
        self.sizes = []
        for kind, val in self.axes:
            if kind == "count":
                n = len(model.group_atom_lists[model.group_index[val]])
                self.sizes.append(n + 1)
            else:
                self.sizes.append(2)

    def _cell_size(self, c):
        model = self.region.rep_model
        return len(model.group_atom_lists[model.group_index[c]])

    def evaluate(self, att: Attachments) -> _BeliefHandle:
        if self.sj is not None:
            logv = self.sj.evaluate(att)
            targets = []
            for c, mode, _a in self.cell_plan:
                targets.append((c, {"count": "count", "atom": "bit",
                                    "both": "split"}[mode]))
            if targets:
                out = self.sj.marginal(logv, targets)
            else:
                out = np.asarray(logsumexp(logv.reshape(-1)))
            # expand split pairs (bit, rest) into (bit, total-count)
            axis = 0
            for c, mode, _a in self.cell_plan:
                if mode == "both":
                    n = self._cell_size(c)
                    expanded = np.full(out.shape[:axis] + (2, n + 1) +
                                       out.shape[axis + 2:], -np.inf)
                    idx_all = [slice(None)] * out.ndim
                    for b in (0, 1):
                        src = list(idx_all)
                        src[axis] = b
                        dst = list(idx_all)
                        dst[axis] = b
                        dst[axis + 1] = slice(b, b + n)
                        expanded[tuple(dst)] = out[tuple(src)]
                    out = expanded
                    axis += 2
                else:
                    axis += 1
            return _BeliefHandle(self.axes, self.sizes, out)
        logv = evaluate_program(self.cq, att)
        model = self.region.rep_model
        want = []
        for c, mode, a in self.cell_plan:
            if mode == "count":
                want.append(("group", model.group_index[c]))
            else:
                want.append(("atom", model.atom_id[a]))
        perm = [self.cq.axes.index(w) for w in want]
        logv = np.transpose(logv, axes=perm) if perm else logv
        # generic output is per-assignment on count axes; fold binomials in
        i = 0
        for c, mode, _a in self.cell_plan:
            if mode == "count":
                n = self._cell_size(c)
                shape = [1] * max(logv.ndim, 1)
                shape[i] = n + 1
                logv = logv + log_binom(n).reshape(shape)
            i += 1
        return _BeliefHandle(self.axes, self.sizes, np.atleast_1d(logv)
                             if self.axes else logv)


@dataclass
class _EdgePlan:
    index: int
    parent: int
    child: int
    kind: str                  # "counted" | "tabular"
    cell: GroupKey
    parent_target: tuple       # ('count', cell) or ('atom', atom)
    child_target: tuple
    g_p: int


@dataclass
class _Attach:
    edge: int
    form: str      # 'count' | 'copy' | 'atom'
    cell: GroupKey | None
    atom: Atom | None
    exponent: float


class LGBPState:
    def __init__(self, lrg: LiftedRegionGraph, config: PropagationConfig):
        self.lrg = lrg
        self.config = config
        self.edge_plans: list[_EdgePlan] = []
        self.messages: list[Message] = []
        self.attach_plans: list[list[_Attach]] = [[] for _ in lrg.regions]
        self.backends: list[_RegionBackend] = []
        self.extraction: dict[GroupKey, tuple] = {}
        self.iteration = 0
        self._build()

    # -- construction ------------------------------------------------------

    def _aligned_atom(self, edge) -> Atom:
        """Parent-side atom a tabular message marginalizes onto."""
        lrg = self.lrg
        parent = lrg.regions[edge.parent]
        child = lrg.regions[edge.child]
        child_rep_atom = next(iter(child.copy_atoms(0)))
        if not parent.grounded_vars:
            return child_rep_atom
        _tag, ci, lits = edge.role
        cl = parent.mln.clauses[ci]
        rep = parent.copies[0]
        from .mln import clause_solutions
        for sol in clause_solutions(parent.mln, cl):
            if all(sol.get(v) == c for v, c in rep.items() if v in sol):
                lit = cl.literals[lits[0]]
                return (lit.pred, tuple(sol[a] if cl.is_variable(a) else a
                                        for a in lit.args))
        raise MLNError("edge role has no grounding in the representative copy")

    def _build(self):
        lrg = self.lrg
        iface: list[set] = [set() for _ in lrg.regions]
        for ei, edge in enumerate(lrg.edges):
            child = lrg.regions[edge.child]
            cell = child.cells()[0]
            # count-space messages go to single-copy whole-cell children;
            # everything else is a tabular message over the child's atom
            counted = not child.grounded_vars and \
                child.counted_cell(cell)
            if counted:
                parent_target = ("count", cell)
                child_target = ("count", cell)
                kind = "counted"
                iface[edge.parent].add(("count", cell))
                iface[edge.child].add(("count", cell))
                atoms = ()
            else:
                a_parent = self._aligned_atom(edge)
                child_rep = next(iter(child.copy_atoms(0)))
                parent_target = ("atom", a_parent)
                child_target = ("atom", child_rep)
                kind = "tabular"
                p_cell = lrg.regions[edge.parent].rep_model.groups[
                    lrg.regions[edge.parent].rep_model.atom_group[
                        lrg.regions[edge.parent].rep_model.atom_id[a_parent]]]
                c_cell = child.rep_model.groups[
                    child.rep_model.atom_group[
                        child.rep_model.atom_id[child_rep]]]
                iface[edge.parent].add(("atom", a_parent, p_cell))
                iface[edge.child].add(("atom", child_rep, c_cell))
                atoms = (a_parent,)
            g_p = stat_gp(lrg, edge.child, edge.parent, role=edge.role,
                          child_copy=0)
            self.edge_plans.append(_EdgePlan(
                ei, edge.parent, edge.child, kind, cell,
                parent_target, child_target, g_p))
            if counted:
                size = len(child.base_model.group_atom_lists[
                    child.base_model.group_index[cell]])
                values = np.full(size + 1, -size * math.log(2.0))
            else:
                values = np.full(2, math.log(0.5))
            self.messages.append(Message(ei, kind, cell, atoms, values))

        # attachment plans
        for r in range(len(lrg.regions)):
            plan = self.attach_plans[r]
            for ei, edge in enumerate(lrg.edges):
                if edge.child != r:
                    continue
                plan.append(_Attach(ei, "count" if self.edge_plans[ei].kind
                                    == "counted" else "atom",
                                    self.edge_plans[ei].cell,
                                    None if self.edge_plans[ei].kind ==
                                    "counted" else
                                    next(iter(lrg.regions[r].copy_atoms(0))),
                                    float(self.edge_plans[ei].g_p)))
            reached = descendant_copies(lrg, r, 0)
            for r_d in sorted(lrg.desc[r]):
                d_copies = sorted(reached.get(r_d, set()))
                if not d_copies:
                    continue
                child = lrg.regions[r_d]
                for ei, edge in enumerate(lrg.edges):
                    if edge.child != r_d:
                        continue
                    exps = []
                    for dc in d_copies:
                        atoms_dc = child.copy_atoms(dc)
                        aligned = _aligned_parent_copies(
                            lrg, edge.parent, edge.role, atoms_dc)
                        if edge.parent == r:
                            aligned.discard(0)
                        aligned -= reached.get(edge.parent, set())
                        exps.append(len(aligned))
                    if all(e == 0 for e in exps):
                        continue
                    if self.edge_plans[ei].kind == "counted":
                        assert len(d_copies) == 1
                        plan.append(_Attach(ei, "count",
                                            self.edge_plans[ei].cell, None,
                                            float(exps[0])))
                    elif len(set(exps)) == 1 and \
                            not lrg.regions[r].grounded_vars and \
                            self._covers_cell(r, r_d, d_copies):
                        plan.append(_Attach(ei, "copy",
                                            self.edge_plans[ei].cell, None,
                                            float(exps[0])))
                    else:
                        for dc, g in zip(d_copies, exps):
                            if g == 0:
                                continue
                            atom = next(iter(child.copy_atoms(dc)))
                            plan.append(_Attach(ei, "atom", None, atom,
                                                float(g)))

        # extraction targets and backends
        for key, (r, target) in self._extraction_targets().items():
            self.extraction[key] = (r, target)
            iface[r].add(target if target[0] == "count" else
                         ("atom", target[1], target[2]))
        for r, region in enumerate(lrg.regions):
            # per-atom attachments need atom axes on the rep model
            for att in self.attach_plans[r]:
                if att.form == "atom" and att.atom is not None:
                    model = region.rep_model
                    c_cell = model.groups[model.atom_group[
                        model.atom_id[att.atom]]]
                    iface[r].add(("atom", att.atom, c_cell))
            specs = sorted(iface[r], key=repr)
            self.backends.append(_RegionBackend(region, specs))

    def _covers_cell(self, r, r_d, d_copies) -> bool:
        """True when the descendant copies under r are the whole cell (so a
        uniform per-copy attachment can fold into the count axes)."""
        child = self.lrg.regions[r_d]
        cell_atoms = set()
        for ci in range(len(child.copies)):
            cell_atoms |= child.copy_atoms(ci)
        under = set()
        for dc in d_copies:
            under |= child.copy_atoms(dc)
        return under == cell_atoms

    def _extraction_targets(self):
        """Smallest region holding each weighted-occurrence cell."""
        lrg = self.lrg
        out = {}
        cells = []
        for r, region in enumerate(lrg.regions):
            for key in region.cells():
                if key not in cells:
                    cells.append(key)
        for key in cells:
            best = None
            for r, region in enumerate(lrg.regions):
                if key not in region.cells():
                    continue
                size = len(region.copy_atoms(0)) if region.copies else 0
                if best is None or size < best[1]:
                    best = (r, size)
            r = best[0]
            region = lrg.regions[r]
            if region.counted_cell(key) and not region.grounded_vars:
                out[key] = (r, ("count", key))
            else:
                rep_model = region.rep_model
                atoms = [a for a in rep_model.atoms
                         if a in set(group_atoms(region.mln, key))]
                atom = atoms[0]
                c_cell = rep_model.groups[rep_model.atom_group[
                    rep_model.atom_id[atom]]]
                out[key] = (r, ("atom", atom, c_cell))
        return out

    # -- per-sweep assembly --------------------------------------------------

    def region_attachments(self, r: int) -> Attachments:
        att = Attachments()
        for item in self.attach_plans[r]:
            msg = self.messages[item.edge]
            scaled = msg.values * item.exponent
            if item.form == "count":
                att.count_msgs.append((item.cell, scaled))
            elif item.form == "copy":
                att.copy_pots.append((item.cell, scaled))
            else:
                atom = item.atom
                att.atom_pots.append((atom, scaled))
        return att


def init_state(lrg: LiftedRegionGraph,
               config: PropagationConfig = PropagationConfig()) -> LGBPState:
    return LGBPState(lrg, config)


def reset_messages(state: LGBPState):
    for i, msg in enumerate(state.messages):
        if msg.kind == "counted":
            n = msg.values.size - 1
            values = np.full(n + 1, -n * math.log(2.0))
        else:
            values = np.full(2, math.log(0.5))
        state.messages[i] = Message(msg.edge_index, msg.kind, msg.cell,
                                    msg.atoms, values)
    state.iteration = 0


def reweight_state(state: LGBPState, weights: dict[int, float]):
    """Swap clause weights without rebuilding structure or statistics.

    Structure, copy counts and statistics are weight-independent; only the
    evaluators' clause weights (and the separable static tensors) change.
    Messages are reset to uniform.
    """
    for r, region in enumerate(state.lrg.regions):
        if not region.name.startswith("f"):
            continue
        ci = int(region.name[1:])
        if ci not in weights:
            continue
        for data in region.rep_model.clause_data:
            if data["clause"].literals == region.rep_mln.clauses[0].literals:
                data["weight"] = weights[ci]
        backend = state.backends[r]
        if backend.sj is not None:
            backend.sj.static = backend.sj._build_static()
    reset_messages(state)


def compute_belief(state: LGBPState, r: int) -> _BeliefHandle:
    return state.backends[r].evaluate(state.region_attachments(r))


def update_message(state: LGBPState, ei: int,
                   beliefs: list[_BeliefHandle]) -> Message:
    plan = state.edge_plans[ei]
    msg = state.messages[ei]
    parent_h = beliefs[plan.parent]
    child_h = beliefs[plan.child]
    if plan.kind == "counted":
        num = parent_h.marginal_count(plan.parent_target[1])
        den = child_h.marginal_count(plan.child_target[1])
        new = num - (den - msg.values)
        new = normalize_counted(new)
        new = normalize_counted(damp_log(new, msg.values,
                                         state.config.damping))
    else:
        num = parent_h.marginal_atom(plan.parent_target[1])
        den = child_h.marginal_atom(plan.child_target[1])
        new = num - (den - msg.values)
        new = normalize_table(new)
        new = normalize_table(damp_log(new, msg.values, state.config.damping))
    return Message(ei, msg.kind, msg.cell, msg.atoms, new,
                   state.iteration + 1)


def run(lrg: LiftedRegionGraph,
        config: PropagationConfig = PropagationConfig(),
        state: LGBPState | None = None) -> LGBPResult:
    """Synchronous sweeps to a fixed point; marginals from the smallest
    region containing each cell."""
    if state is None:
        state = init_state(lrg, config)
    residuals = []
    converged = False
    iterations = 0
    for sweep in range(config.max_iterations):
        beliefs = [compute_belief(state, r) for r in range(len(lrg.regions))]
        new_messages = []
        residual = 0.0
        for ei in range(len(lrg.edges)):
            m_new = update_message(state, ei, beliefs)
            residual = max(residual, float(np.max(np.abs(
                np.exp(m_new.values) - np.exp(state.messages[ei].values)))))
            new_messages.append(m_new)
        state.messages = new_messages
        state.iteration = sweep + 1
        iterations = sweep + 1
        residuals.append(residual)
        if residual < config.tolerance:
            converged = True
            break

    beliefs = [compute_belief(state, r) for r in range(len(lrg.regions))]
    marginals = {}
    for key, (r, target) in state.extraction.items():
        handle = beliefs[r]
        if target[0] == "count":
            p = handle.member_prob(cell=target[1])
        else:
            p = handle.member_prob(atom=target[1])
        marginals[group_id_str(key)] = p
    belief_out = {r: (b.axes, b.logv - logsumexp(
        b.logv.reshape(-1) if b.logv.ndim else b.logv))
        for r, b in enumerate(beliefs)}
    return LGBPResult(
        marginals=dict(sorted(marginals.items())),
        beliefs=belief_out,
        iterations_used=iterations,
        converged=converged,
        residuals=residuals,
        messages=state.messages,
        state=state,
    )


def expand_counted(msg: Message) -> Message:
    """Symmetric tabular extension of a counted message (cap 20 atoms)."""
    if msg.kind != "counted":
        return msg
    values = expand_counted_values(msg.values)
    return Message(msg.edge_index, "tabular", msg.cell, msg.atoms,
                   values, msg.stamp)


def kl_divergence(p, q) -> float:
    """Σ p log(p/q), natural log; +inf when q has a zero where p does not."""
    p = np.asarray(p, dtype=float)
    q = np.asarray(q, dtype=float)
    out = 0.0
    for pi, qi in zip(p.reshape(-1), q.reshape(-1)):
        if pi <= 0.0:
            continue
        if qi <= 0.0:
            return math.inf
        out += pi * math.log(pi / qi)
    return max(out, 0.0)
