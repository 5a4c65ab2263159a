"""Markov logic networks with constrained logical variables.

An MLN is a set of weighted first-order clauses plus a constraint store
(domain membership, equality, inequality) over each clause's logical
variables.  Weights live in log space throughout.  All types are immutable
after construction; operations are pure functions, safe to share across
threads.
"""
from __future__ import annotations

import itertools
import math
import re
from dataclasses import dataclass, field

__all__ = [
    "MLNError", "ParseError", "OracleLimitError",
    "Domain", "Predicate", "Constraint", "Literal", "WeightedClause", "MLN",
    "GroundClause", "GroupKey",
    "parse_mln", "mln_to_text", "solve_csp", "clause_solutions",
    "ground_formulas", "ground_atoms", "world_log_score",
    "shatter_to_enf", "is_enf",
    "literal_pattern", "clause_groups", "mln_groups", "group_atoms",
    "group_id_str", "groups_consistent", "atom_group",
]

# A ground atom is (predicate_name, (constant, ...)).
Atom = tuple[str, tuple[str, ...]]
Substitution = dict[str, str]


class MLNError(Exception):
    pass


class ParseError(MLNError):
    def __init__(self, message: str, line: int, col: int = 0):
        super().__init__(f"line {line}, col {col}: {message}")
        self.line = line
        self.col = col


class OracleLimitError(MLNError):
    pass


@dataclass(frozen=True)
class Domain:
    name: str
    objects: tuple[str, ...]

    def __post_init__(self):
        if len(set(self.objects)) != len(self.objects):
            raise MLNError(f"duplicate constants in domain {self.name}")

    def index(self, const: str) -> int:
        return self.objects.index(const)


@dataclass(frozen=True)
class Predicate:
    name: str
    arity: int
    argument_domains: tuple[str, ...]

    def __post_init__(self):
        if len(self.argument_domains) != self.arity:
            raise MLNError(f"predicate {self.name}: arity/domain mismatch")


@dataclass(frozen=True, order=True)
class Constraint:
    """kind is 'dom' (b = domain name), 'eq' or 'ne' (b = variable)."""
    kind: str
    a: str
    b: str

    @staticmethod
    def dom(var: str, domain: str) -> "Constraint":
        return Constraint("dom", var, domain)

    @staticmethod
    def eq(x: str, y: str) -> "Constraint":
        return Constraint("eq", min(x, y), max(x, y))

    @staticmethod
    def ne(x: str, y: str) -> "Constraint":
        return Constraint("ne", min(x, y), max(x, y))


@dataclass(frozen=True)
class Literal:
    positive: bool
    pred: str
    args: tuple[str, ...]

    def format(self) -> str:
        inner = ",".join(self.args)
        return f"{'' if self.positive else '!'}{self.pred}({inner})"


@dataclass(frozen=True)
class WeightedClause:
    literals: tuple[Literal, ...]
    weight: float
    constraints: frozenset[Constraint]

    @property
    def variables(self) -> tuple[str, ...]:
        """Clause variables in sorted order (those with a dom constraint)."""
        return tuple(sorted(c.a for c in self.constraints if c.kind == "dom"))

    def domain_of(self, var: str) -> str:
        for c in self.constraints:
            if c.kind == "dom" and c.a == var:
                return c.b
        raise MLNError(f"variable {var} has no domain constraint")

    def is_variable(self, token: str) -> bool:
        return any(c.kind == "dom" and c.a == token for c in self.constraints)


@dataclass(frozen=True)
class MLN:
    domains: tuple[Domain, ...]
    predicates: tuple[Predicate, ...]
    clauses: tuple[WeightedClause, ...]

    def domain(self, name: str) -> Domain:
        for d in self.domains:
            if d.name == name:
                return d
        raise MLNError(f"undeclared domain {name}")

    def predicate(self, name: str) -> Predicate:
        for p in self.predicates:
            if p.name == name:
                return p
        raise MLNError(f"undeclared predicate {name}")

    def domain_map(self) -> dict[str, Domain]:
        return {d.name: d for d in self.domains}


@dataclass(frozen=True)
class GroundClause:
    clause_index: int
    literals: tuple[tuple[bool, Atom], ...]
    weight: float

    def atoms(self) -> tuple[Atom, ...]:
        seen: list[Atom] = []
        for _, a in self.literals:
            if a not in seen:
                seen.append(a)
        return tuple(seen)

    def satisfied(self, world: dict[Atom, bool]) -> bool:
        return any(world[a] == pos for pos, a in self.literals)


def format_atom(atom: Atom) -> str:
    return f"{atom[0]}({','.join(atom[1])})"


# ---------------------------------------------------------------------------
# Parsing
# ---------------------------------------------------------------------------

_DOMAIN_RE = re.compile(r"^domain\s+(\w+)\s*=\s*\{([^}]*)\}\s*$")
_PRED_RE = re.compile(r"^predicate\s+(\w+)\s*\(([^)]*)\)\s*$")
_LIT_RE = re.compile(r"\s*(!?)(\w+)\s*\(([^)]*)\)\s*")
_CON_RE = re.compile(r"^\s*(\w+)\s*(!=|=)\s*(\w+)\s*$")


def parse_mln(text: str) -> MLN:
    """Parse the line-oriented MLN format.

    Grammar::

        domain NAME = { c1, c2, ... }
        predicate NAME(DOM1, ..., DOMk)
        WEIGHT :: LIT v LIT v ... [; CON, CON, ...]

    where LIT is ``[!]Pred(arg,...)`` and CON is ``x = y`` or ``x != y``.
    Domain membership of variables is implied by predicate argument
    positions.  Variables are standardized apart across clauses internally.
    """
    domains: list[Domain] = []
    predicates: list[Predicate] = []
    clauses: list[WeightedClause] = []
    dom_names: set[str] = set()
    pred_names: set[str] = set()

    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("domain"):
            m = _DOMAIN_RE.match(line)
            if not m:
                raise ParseError("malformed domain declaration", lineno)
            name, body = m.group(1), m.group(2)
            if name in dom_names:
                raise ParseError(f"duplicate domain {name}", lineno)
            objs = tuple(tok.strip() for tok in body.split(",") if tok.strip())
            if len(set(objs)) != len(objs):
                raise ParseError(f"duplicate constant in domain {name}", lineno)
            domains.append(Domain(name, objs))
            dom_names.add(name)
        elif line.startswith("predicate"):
            m = _PRED_RE.match(line)
            if not m:
                raise ParseError("malformed predicate declaration", lineno)
            name, body = m.group(1), m.group(2)
            if name in pred_names:
                raise ParseError(f"duplicate predicate {name}", lineno)
            args = tuple(tok.strip() for tok in body.split(",") if tok.strip())
            for a in args:
                if a not in dom_names:
                    raise ParseError(f"undeclared domain {a}", lineno)
            predicates.append(Predicate(name, len(args), args))
            pred_names.add(name)
        elif "::" in line:
            clauses.append(_parse_clause(line, lineno, len(clauses),
                                         {d.name: d for d in domains},
                                         {p.name: p for p in predicates}))
        else:
            raise ParseError("unrecognized statement", lineno)
    return MLN(tuple(domains), tuple(predicates), tuple(clauses))


def _parse_clause(line: str, lineno: int, clause_idx: int,
                  domains: dict[str, Domain],
                  predicates: dict[str, Predicate]) -> WeightedClause:
    head, _, body = line.partition("::")
    try:
        weight = float(head.strip())
    except ValueError:
        raise ParseError(f"bad weight {head.strip()!r}", lineno) from None
    lit_part, _, con_part = body.partition(";")

    literals: list[Literal] = []
    rest = lit_part.strip()
    while rest:
        m = _LIT_RE.match(rest)
        if not m or m.start() != 0:
            raise ParseError(f"malformed literal near {rest[:20]!r}", lineno,
                             len(line) - len(rest))
        neg, pname, argbody = m.group(1), m.group(2), m.group(3)
        if pname not in predicates:
            raise ParseError(f"undeclared predicate {pname}", lineno)
        args = tuple(t.strip() for t in argbody.split(",") if t.strip())
        pred = predicates[pname]
        if len(args) != pred.arity:
            raise ParseError(f"predicate {pname} expects {pred.arity} args", lineno)
        literals.append(Literal(neg != "!", pname, args))
        rest = rest[m.end():].strip()
        if rest:
            if not (rest.startswith("v ") or rest.startswith("v\t")):
                raise ParseError("expected 'v' between literals", lineno,
                                 len(line) - len(rest))
            rest = rest[1:].strip()
    if not literals:
        raise ParseError("clause has no literals", lineno)

    # Implied domain constraints; constants are tokens found in the position's
    # declared domain.  Each variable is suffixed with the clause index so
    # clauses are standardized apart.
    suffix = f"#{clause_idx}"
    var_domains: dict[str, str] = {}
    fixed_literals: list[Literal] = []
    for lit in literals:
        pred = predicates[lit.pred]
        new_args = []
        for pos, tok in enumerate(lit.args):
            dom = pred.argument_domains[pos]
            if tok in domains[dom].objects:
                new_args.append(tok)
                continue
            for other in domains.values():
                if other.name != dom and tok in other.objects:
                    raise ParseError(
                        f"token {tok!r} is a constant of domain {other.name}, "
                        f"not of {dom}", lineno)
            var = tok + suffix
            if var in var_domains and var_domains[var] != dom:
                raise ParseError(
                    f"variable {tok} used with conflicting domains "
                    f"{var_domains[var]} and {dom}", lineno)
            var_domains[var] = dom
            new_args.append(var)
        fixed_literals.append(Literal(lit.positive, lit.pred, tuple(new_args)))

    constraints = {Constraint.dom(v, d) for v, d in var_domains.items()}
    if con_part.strip():
        for chunk in con_part.split(","):
            m = _CON_RE.match(chunk)
            if not m:
                raise ParseError(f"malformed constraint {chunk.strip()!r}", lineno)
            x, op, y = m.group(1) + suffix, m.group(2), m.group(3) + suffix
            if x not in var_domains or y not in var_domains:
                raise ParseError(f"constraint over unknown variable in {chunk.strip()!r}",
                                 lineno)
            if var_domains[x] != var_domains[y]:
                raise ParseError("constraint over variables of different domains", lineno)
            constraints.add(Constraint.ne(x, y) if op == "!=" else Constraint.eq(x, y))
    return WeightedClause(tuple(fixed_literals), weight, frozenset(constraints))


def mln_to_text(mln: MLN) -> str:
    """Serialize back to the text format (round-trips through parse_mln)."""
    lines = []
    for d in mln.domains:
        lines.append(f"domain {d.name} = {{ {', '.join(d.objects)} }}")
    for p in mln.predicates:
        lines.append(f"predicate {p.name}({', '.join(p.argument_domains)})")
    for cl in mln.clauses:
        strip = lambda t: t.split("#", 1)[0] if cl.is_variable(t) else t
        lits = " v ".join(
            f"{'' if l.positive else '!'}{l.pred}({','.join(strip(a) for a in l.args)})"
            for l in cl.literals)
        cons = sorted(c for c in cl.constraints if c.kind != "dom")
        suffix = ""
        if cons:
            op = {"eq": "=", "ne": "!="}
            suffix = " ; " + ", ".join(
                f"{c.a.split('#')[0]} {op[c.kind]} {c.b.split('#')[0]}" for c in cons)
        lines.append(f"{cl.weight!r} :: {lits}{suffix}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------------------
# CSP solving and grounding
# ---------------------------------------------------------------------------

def solve_csp(variables, constraints, domains: dict[str, Domain]) -> list[Substitution]:
    """All solutions of ⟨V, C⟩, in lexicographic (variable name, constant index) order.

    Every variable needs a dom constraint; eq/ne constraints are checked as
    soon as both endpoints are bound.  Deterministic across runs.
    """
    variables = sorted(set(variables))
    var_dom: dict[str, str] = {}
    eqs: list[tuple[str, str]] = []
    nes: list[tuple[str, str]] = []
    for c in constraints:
        if c.kind == "dom":
            var_dom[c.a] = c.b
        elif c.kind == "eq":
            eqs.append((c.a, c.b))
        elif c.kind == "ne":
            nes.append((c.a, c.b))
    for v in variables:
        if v not in var_dom:
            raise MLNError(f"variable {v} has no domain constraint")

    solutions: list[Substitution] = []
    binding: Substitution = {}

    def consistent(var: str) -> bool:
        for x, y in eqs:
            if var in (x, y) and x in binding and y in binding and binding[x] != binding[y]:
                return False
        for x, y in nes:
            if var in (x, y) and x in binding and y in binding and binding[x] == binding[y]:
                return False
        return True

    def backtrack(i: int):
        if i == len(variables):
            solutions.append(dict(binding))
            return
        var = variables[i]
        for const in domains[var_dom[var]].objects:
            binding[var] = const
            if consistent(var):
                backtrack(i + 1)
            del binding[var]

    backtrack(0)
    return solutions


def clause_solutions(mln: MLN, clause: WeightedClause) -> list[Substitution]:
    return solve_csp(clause.variables, clause.constraints, mln.domain_map())


def _ground_literal(lit: Literal, theta: Substitution, clause: WeightedClause) -> Atom:
    return (lit.pred,
            tuple(theta[a] if clause.is_variable(a) else a for a in lit.args))


def ground_formulas(mln: MLN) -> list[GroundClause]:
    """All ground clauses, clause-major in CSP solution order.

    Duplicates (identical grounding from the same clause) are kept.
    """
    out = []
    for idx, cl in enumerate(mln.clauses):
        for theta in clause_solutions(mln, cl):
            lits = tuple((l.positive, _ground_literal(l, theta, cl)) for l in cl.literals)
            out.append(GroundClause(idx, lits, cl.weight))
    return out


def ground_atoms(mln: MLN) -> list[Atom]:
    """Every grounding of every declared predicate, in canonical order."""
    dmap = mln.domain_map()
    out: list[Atom] = []
    for pred in mln.predicates:
        pools = [dmap[d].objects for d in pred.argument_domains]
        for combo in itertools.product(*pools):
            out.append((pred.name, combo))
    return out


def world_log_score(mln: MLN, world: dict[Atom, bool]) -> float:
    """Σ_i w_i g_i(world); raises if the world misses any ground atom."""
    missing = [a for a in ground_atoms(mln) if a not in world]
    if missing:
        raise MLNError(f"partial world: missing {format_atom(missing[0])}")
    return sum(g.weight for g in ground_formulas(mln) if g.satisfied(world))


# ---------------------------------------------------------------------------
# Atom groups (predicate + argument equality pattern)
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class GroupKey:
    """Identity of an exchangeable atom group: a predicate cell.

    slots[i] is ('const', c) for a constant position or ('var', class_id)
    where positions with equal variables (under the clause's equality
    closure) share a class id.  ne_pairs lists class-id pairs constrained
    unequal.  Two occurrences with the same key denote the same set of
    ground atoms in any region.
    """
    pred: str
    slots: tuple[tuple[str, object], ...]
    ne_pairs: frozenset[tuple[int, int]]


def literal_pattern(clause: WeightedClause, lit: Literal) -> GroupKey:
    """The literal's own-argument pattern entailed by the clause constraints."""
    # Union-find over clause variables from eq constraints.
    parent: dict[str, str] = {v: v for v in clause.variables}

    def find(v):
        while parent[v] != v:
            parent[v] = parent[parent[v]]
            v = parent[v]
        return v

    for c in clause.constraints:
        if c.kind == "eq":
            parent[find(c.a)] = find(c.b)
    ne_roots = set()
    for c in clause.constraints:
        if c.kind == "ne":
            ra, rb = find(c.a), find(c.b)
            ne_roots.add((min(ra, rb), max(ra, rb)))

    slots: list[tuple[str, object]] = []
    class_ids: dict[str, int] = {}
    for a in lit.args:
        if clause.is_variable(a):
            root = find(a)
            if root not in class_ids:
                class_ids[root] = len(class_ids)
            slots.append(("var", class_ids[root]))
        else:
            slots.append(("const", a))
    id_of = {root: cid for root, cid in class_ids.items()}
    nes = set()
    for ra, rb in ne_roots:
        if ra in id_of and rb in id_of:
            i, j = sorted((id_of[ra], id_of[rb]))
            nes.add((i, j))
    return GroupKey(lit.pred, tuple(slots), frozenset(nes))


def group_id_str(key: GroupKey) -> str:
    if all(kind == "var" for kind, _ in key.slots) and not key.ne_pairs and \
            len({cid for _, cid in key.slots}) == len(key.slots):
        return key.pred
    parts = []
    for kind, val in key.slots:
        parts.append(val if kind == "const" else f"v{val}")
    body = ",".join(parts)
    nes = "".join(f";v{i}!=v{j}" for i, j in sorted(key.ne_pairs))
    return f"{key.pred}[{body}{nes}]"


def group_atoms(mln: MLN, key: GroupKey) -> tuple[Atom, ...]:
    """Ground atoms of the cell, ordered lexicographically by constant index."""
    pred = mln.predicate(key.pred)
    dmap = mln.domain_map()
    n_classes = len({cid for kind, cid in key.slots if kind == "var"})
    class_domain: dict[int, str] = {}
    for pos, (kind, val) in enumerate(key.slots):
        if kind == "var":
            class_domain[val] = pred.argument_domains[pos]
    out = []
    for combo in itertools.product(*[dmap[class_domain[c]].objects
                                     for c in range(n_classes)]):
        if any(combo[i] == combo[j] for i, j in key.ne_pairs):
            continue
        args = tuple(val if kind == "const" else combo[val]
                     for kind, val in key.slots)
        out.append((key.pred, args))
    # order atoms by their raw constant tuples' domain indices
    def sortkey(atom: Atom):
        return tuple(dmap[d].index(c)
                     for c, d in zip(atom[1], pred.argument_domains))
    return tuple(sorted(set(out), key=sortkey))


def clause_groups(clause: WeightedClause) -> list[GroupKey]:
    """Distinct groups of the clause's literals, first-occurrence order."""
    seen: list[GroupKey] = []
    for lit in clause.literals:
        key = literal_pattern(clause, lit)
        if key not in seen:
            seen.append(key)
    return seen


def _predicate_cells(pred: Predicate) -> list[GroupKey]:
    """Fully shattered cells of a predicate: one per argument-equality
    pattern (set partitions of same-domain positions)."""
    by_domain: dict[str, list[int]] = {}
    for p, d in enumerate(pred.argument_domains):
        by_domain.setdefault(d, []).append(p)
    domain_names = sorted(by_domain)
    out = []
    for combo in itertools.product(*[
            list(_set_partitions(by_domain[d])) for d in domain_names]):
        pos_block: dict[int, tuple] = {}
        blocks = []
        for partition in combo:
            for block in partition:
                blocks.append(tuple(sorted(block)))
        for block in blocks:
            for p in block:
                pos_block[p] = block
        order: list[tuple] = []
        slots = []
        for p in range(pred.arity):
            block = pos_block[p]
            if block not in order:
                order.append(block)
            slots.append(("var", order.index(block)))
        nes = set()
        for partition in combo:
            for ba, bb in itertools.combinations(
                    [tuple(sorted(b)) for b in partition], 2):
                i, j = sorted((order.index(ba), order.index(bb)))
                nes.add((i, j))
        out.append(GroupKey(pred.name, tuple(slots), frozenset(nes)))
    return out


def mln_groups(mln: MLN, tile: bool = True) -> list[GroupKey]:
    """Occurrence cells, plus complement cells tiling every predicate.

    With tile=True every ground atom of every declared predicate must land
    in exactly one cell; predicates with partially-overlapping occurrence
    patterns (mixes of free and constrained, or constant arguments) cannot
    be tiled and are caught later by groups_consistent / RegionModel.
    Region models pass tile=False: their atom space is exactly the clauses'
    literal cells.
    """
    seen: list[GroupKey] = []
    for cl in mln.clauses:
        for key in clause_groups(cl):
            if key not in seen:
                seen.append(key)
    if not tile:
        return seen
    atoms_of = {key: set(group_atoms(mln, key)) for key in seen}
    for pred in mln.predicates:
        occ = [k for k in seen if k.pred == pred.name]
        for cell in _predicate_cells(pred):
            if cell in seen:
                continue
            cell_atoms = set(group_atoms(mln, cell))
            if not cell_atoms:
                continue
            if any(cell_atoms & atoms_of[k] for k in occ):
                continue
            seen.append(cell)
            atoms_of[cell] = cell_atoms
    return seen


def groups_consistent(mln: MLN) -> bool:
    """True iff each predicate's occurrence cells are pairwise equal or disjoint.

    Cell identity is what lets regions agree on which atoms a message covers,
    so overlapping non-identical cells (e.g. a free F(x,y) in one clause and
    F(x,y) with x=y in another) rule out lifted-structure construction until
    the model is shattered.
    """
    by_pred: dict[str, list[GroupKey]] = {}
    for key in mln_groups(mln):
        by_pred.setdefault(key.pred, []).append(key)
    for keys in by_pred.values():
        for a, b in itertools.combinations(keys, 2):
            if set(group_atoms(mln, a)) & set(group_atoms(mln, b)):
                return False
    return True


def atom_group(mln: MLN, keys: list[GroupKey], atom: Atom) -> GroupKey:
    for key in keys:
        if key.pred == atom[0] and atom in group_atoms(mln, key):
            return key
    raise MLNError(f"atom {format_atom(atom)} matches no group")


# ---------------------------------------------------------------------------
# Shattering to exchangeable normal form
# ---------------------------------------------------------------------------

def _set_partitions(items: list[str]):
    """All set partitions in canonical (restricted-growth) order."""
    if not items:
        yield []
        return
    first, rest = items[0], items[1:]
    for part in _set_partitions(rest):
        for i in range(len(part)):
            yield part[:i] + [[first] + part[i]] + part[i + 1:]
        yield [[first]] + part


def shatter_to_enf(mln: MLN) -> MLN:
    """Split each clause by variable equality patterns.

    For every clause, enumerate set partitions of its same-domain variables
    (variables of different domains never share a block); each satisfiable
    pattern yields one clause constrained to that pattern (equalities inside
    blocks, inequalities across same-domain blocks).  Ground clauses and
    weights are preserved exactly; the output is in exchangeable normal form
    for constant-free clause bodies.
    """
    dmap = mln.domain_map()
    out: list[WeightedClause] = []
    for cl in mln.clauses:
        by_domain: dict[str, list[str]] = {}
        for v in cl.variables:
            by_domain.setdefault(cl.domain_of(v), []).append(v)
        domain_names = sorted(by_domain)
        per_domain = [list(_set_partitions(sorted(by_domain[d]))) for d in domain_names]
        emitted = 0
        for combo in itertools.product(*per_domain):
            cons = set(cl.constraints)
            for partition in combo:
                for block in partition:
                    for x, y in itertools.combinations(sorted(block), 2):
                        cons.add(Constraint.eq(x, y))
                for block_a, block_b in itertools.combinations(partition, 2):
                    for x in block_a:
                        for y in block_b:
                            cons.add(Constraint.ne(x, y))
            if solve_csp(cl.variables, cons, dmap):
                # standardize apart: each emitted clause gets fresh names
                rename = {v: f"{v.split('#')[0]}#s{len(out)}"
                          for v in cl.variables}
                lits = tuple(Literal(l.positive, l.pred, tuple(
                    rename.get(a, a) for a in l.args)) for l in cl.literals)
                new_cons = frozenset(
                    Constraint.dom(rename.get(c.a, c.a), c.b)
                    if c.kind == "dom" else
                    (Constraint.eq if c.kind == "eq" else Constraint.ne)(
                        rename.get(c.a, c.a), rename.get(c.b, c.b))
                    for c in cons)
                out.append(WeightedClause(lits, cl.weight, new_cons))
                emitted += 1
        if emitted == 0 and clause_solutions(mln, cl):
            raise MLNError("shattering lost groundings")  # unreachable guard
    return MLN(mln.domains, mln.predicates, tuple(out))


# ---------------------------------------------------------------------------
# Brute-force ENF test
# ---------------------------------------------------------------------------

def _world_probabilities(mln: MLN, atoms: list[Atom]):
    """Unnormalized world weights for all 2^n worlds (n = len(atoms))."""
    import numpy as np

    n = len(atoms)
    idx = {a: i for i, a in enumerate(atoms)}
    scores = np.zeros(1 << n)
    assign = np.arange(1 << n, dtype=np.uint64)
    for g in ground_formulas(mln):
        sat = np.zeros(1 << n, dtype=bool)
        for pos, a in g.literals:
            bit = ((assign >> np.uint64(idx[a])) & np.uint64(1)).astype(bool)
            sat |= bit if pos else ~bit
        scores += np.where(sat, g.weight, 0.0)
    w = np.exp(scores - scores.max())
    return w / w.sum(), idx


def is_enf(mln: MLN, max_atoms: int = 16) -> bool:
    """Brute-force Definition-3 check.

    True iff for every clause each pair of its ground formulas has the same
    joint distribution under the renaming induced by the substitutions
    (literal position l of grounding j maps to position l of grounding k).
    """
    import numpy as np

    atoms = ground_atoms(mln)
    if len(atoms) > max_atoms:
        raise OracleLimitError(f"{len(atoms)} ground atoms exceeds cap {max_atoms}")
    probs, idx = _world_probabilities(mln, atoms)
    assign = np.arange(probs.size, dtype=np.uint64)

    def joint(avars: tuple[Atom, ...]):
        key = np.zeros(probs.size, dtype=np.int64)
        for axis, a in enumerate(avars):
            bit = ((assign >> np.uint64(idx[a])) & np.uint64(1)).astype(np.int64)
            key += bit << axis
        flat = np.zeros(1 << len(avars))
        np.add.at(flat, key, probs)
        return flat.reshape((2,) * len(avars), order="F")

    groundings: dict[int, list[GroundClause]] = {}
    for g in ground_formulas(mln):
        groundings.setdefault(g.clause_index, []).append(g)
    for glist in groundings.values():
        tables = [joint(g.atoms()) for g in glist]
        for j in range(len(glist)):
            for k in range(j + 1, len(glist)):
                gj, gk = glist[j], glist[k]
                mapping: dict[Atom, Atom] = {}
                ok = True
                for (pj, aj), (pk, ak) in zip(gj.literals, gk.literals):
                    if mapping.setdefault(aj, ak) != ak:
                        ok = False
                        break
                if not ok or len(set(mapping.values())) != len(mapping):
                    return False
                if set(mapping) != set(gj.atoms()) or set(mapping.values()) != set(gk.atoms()):
                    return False
                aj_order = gj.atoms()
                ak_order = gk.atoms()
                # permute gk's table so axis i corresponds to mapping(aj_order[i])
                perm = [ak_order.index(mapping[a]) for a in aj_order]
                tk = np.transpose(tables[k], axes=perm)
                if not np.allclose(tables[j], tk, atol=1e-12):
                    return False
    return True
