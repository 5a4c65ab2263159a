"""Experiment generators, exact oracles, and the sweep harness.

Random tractable models: 15 clauses of the form x v y v z over unary
predicates R_1..R_15, each predicate carrying its own variable; weights
drawn from N(0, sigma).  The Friends-Smokers-Parents-Cancer model adds the
four implication clauses in clausal form plus one weighted singleton per
predicate.  All randomness flows through splitmix64 streams derived from
the master seed, so sweeps are byte-reproducible across platforms.
"""
from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .engine import init_state, kl_divergence, reset_messages, reweight_state, run
from .evaluator import RegionModel
from .ground import (BRUTE_FORCE_CAP, PropagationConfig, brute_force_marginal,
                     ground_markov_network)
from .lifted import (default_factorization, joint_marginal, separable,
                     separable_group_marginals)
from .mln import (MLN, Constraint, Domain, Literal, MLNError,
                  OracleLimitError, Predicate, WeightedClause, group_atoms,
                  group_id_str, mln_groups)
from .regions import construct_structure, prepare_model, validate_lifted
from .rng import Stream, derive_seed

__all__ = [
    "RandomKBSpec", "SweepConfig", "SweepRecord",
    "gen_random_kb", "instantiate", "fspc_mln", "exact_marginals",
    "run_sweep", "CSV_HEADER",
]

CSV_HEADER = ("model_id,structure,sigma,domain_size,iterations,converged,"
              "mean_kl,max_kl,runtime_ms,witness_domain_size")

STRUCTURES = ("gg", "lg", "ll")


@dataclass(frozen=True)
class RandomKBSpec:
    seed: int
    n_clauses: int = 15
    n_predicates: int = 15
    literals_per_clause: int = 3


def gen_random_kb(seed: int, spec: RandomKBSpec | None = None) -> list[tuple[int, ...]]:
    """Clause templates: per clause the chosen predicate indices (sorted),
    sampled uniformly without replacement, unnegated."""
    spec = spec or RandomKBSpec(seed)
    stream = Stream(seed)
    return [tuple(sorted(stream.sample_without_replacement(
        spec.n_predicates, spec.literals_per_clause)))
        for _ in range(spec.n_clauses)]


def instantiate(kb, d: int, sigma: float, seed: int,
                n_predicates: int = 15) -> MLN:
    """Ground the templates over {1..d} with weights from N(0, sigma)."""
    domains = (Domain("obj", tuple(str(i + 1) for i in range(d))),)
    predicates = tuple(Predicate(f"R{i + 1}", 1, ("obj",))
                       for i in range(n_predicates))
    stream = Stream(seed)
    clauses = []
    for ci, template in enumerate(kb):
        lits, cons = [], set()
        for p in template:
            v = f"x{p + 1}#{ci}"
            lits.append(Literal(True, f"R{p + 1}", (v,)))
            cons.add(Constraint.dom(v, "obj"))
        clauses.append(WeightedClause(tuple(lits), sigma * stream.normal(),
                                      frozenset(cons)))
    return MLN(domains, predicates, tuple(clauses))


FSPC_CLAUSES = [
    # implications in clausal form
    [(False, "Smokes", ("x",)), (False, "Friends", ("x", "y")),
     (True, "Smokes", ("y",))],
    [(False, "Smokes", ("x",)), (True, "Cancer", ("x",))],
    [(False, "Cancer", ("y",)), (False, "ParentOf", ("y", "x")),
     (True, "Cancer", ("x",))],
    [(False, "Smokes", ("y",)), (False, "ParentOf", ("x", "y")),
     (True, "Smokes", ("x",))],
    # singleton formulas, one per predicate
    [(True, "Smokes", ("x",))],
    [(True, "Cancer", ("x",))],
    [(True, "Friends", ("x", "y"))],
    [(True, "ParentOf", ("x", "y"))],
]


def fspc_mln(d: int, sigma: float, seed: int) -> MLN:
    """Friends-Smokers-Parents-Cancer, weights drawn in clause order."""
    domains = (Domain("person", tuple(str(i + 1) for i in range(d))),)
    predicates = (Predicate("Smokes", 1, ("person",)),
                  Predicate("Cancer", 1, ("person",)),
                  Predicate("Friends", 2, ("person", "person")),
                  Predicate("ParentOf", 2, ("person", "person")))
    stream = Stream(seed)
    clauses = []
    for ci, lits in enumerate(FSPC_CLAUSES):
        vars_used = {}
        literals = []
        for pos, pred, args in lits:
            new_args = []
            for a in args:
                v = f"{a}#{ci}"
                vars_used[v] = "person"
                new_args.append(v)
            literals.append(Literal(pos, pred, tuple(new_args)))
        cons = frozenset(Constraint.dom(v, dom) for v, dom in vars_used.items())
        clauses.append(WeightedClause(tuple(literals),
                                      sigma * stream.normal(), cons))
    return MLN(domains, predicates, tuple(clauses))


# ---------------------------------------------------------------------------
# Exact marginals
# ---------------------------------------------------------------------------

def exact_marginals(mln: MLN, brute_cap: int = BRUTE_FORCE_CAP
                    ) -> dict[str, float]:
    """Exact P(atom true) per cell: lifted count-space inference for
    separable models, brute force for small ground networks, a generic
    lifted factorization as the last resort."""
    model = RegionModel(mln)
    if separable(model):
        marg = separable_group_marginals(model)
        return {group_id_str(k): p for k, p in marg.items()}
    atoms = [a for alist in model.group_atom_lists for a in alist]
    if len(set(atoms)) <= brute_cap:
        fg = ground_markov_network(mln)
        out = {}
        for gi, key in enumerate(model.groups):
            cell = model.group_atom_lists[gi]
            if not cell:
                continue
            out[group_id_str(key)] = float(
                brute_force_marginal(fg, [cell[0]])[1])
        return out
    try:
        tree = default_factorization(mln, model=model)
        out = {}
        for key in model.groups:
            if not model.group_atom_lists[model.group_index[key]]:
                continue
            pot = joint_marginal(mln, tree, groups=[key], model=model)
            out[group_id_str(key)] = pot.group_member_prob(key)
        return out
    except MLNError as ex:
        raise OracleLimitError(f"intractable for exact oracle: {ex}") from ex


# ---------------------------------------------------------------------------
# Sweep harness
# ---------------------------------------------------------------------------

@dataclass
class SweepConfig:
    master_seed: int = 1
    family: str = "random"            # "random" | "fspc"
    n_models: int = 50
    sigmas: tuple = tuple(round(0.1 * i, 1) for i in range(11))
    domain_sizes: tuple = tuple(range(1, 9))
    structures: tuple = STRUCTURES
    max_iterations: int = 200
    tolerance: float = 1e-7
    damping: float = 0.5
    witness_domain: int = 4
    kb_spec: RandomKBSpec | None = None

    def engine_config(self) -> PropagationConfig:
        return PropagationConfig(max_iterations=self.max_iterations,
                                 tolerance=self.tolerance,
                                 damping=self.damping)


@dataclass
class SweepRecord:
    model_id: int
    structure: str
    sigma: float
    domain_size: int
    iterations: int
    converged: bool
    mean_kl: float
    max_kl: float
    runtime_ms: float
    witness_domain_size: int

    def row(self) -> str:
        return ",".join([
            str(self.model_id), self.structure, f"{self.sigma:.12g}",
            str(self.domain_size), str(self.iterations),
            str(self.converged).lower(), f"{self.mean_kl:.12g}",
            f"{self.max_kl:.12g}", f"{self.runtime_ms:.12g}",
            str(self.witness_domain_size)])


def _kl_stats(exact: dict[str, float], approx: dict[str, float]):
    kls = []
    for gid, p in sorted(exact.items()):
        if gid not in approx:
            continue
        p = min(max(p, 0.0), 1.0)
        q = min(max(approx[gid], 0.0), 1.0)
        # q entries clamped at 1e-300: saturated approximations give large
        # finite divergences, never infinities
        kls.append(kl_divergence(
            [1.0 - p, p], [max(1.0 - q, 1e-300), max(q, 1e-300)]))
    if not kls:
        return math.inf, math.inf
    return float(np.mean(kls)), float(np.max(kls))


def _sigma_seed(cfg: SweepConfig, model_id: int, d: int, sigma_idx: int) -> int:
    return derive_seed(cfg.master_seed, model_id, d, sigma_idx)


def run_sweep(cfg: SweepConfig, out_path: str, progress=None,
              clock=time.perf_counter) -> list[SweepRecord]:
    """One record per (model, structure, sigma, domain size).

    Structures and statistics are built once per (model, domain) with
    placeholder weights and reweighted per sigma; per-record failures become
    rows with infinite KL and zero iterations rather than aborting.  Rows
    are flushed to <out>.partial as they arrive and the final CSV is
    written sorted.  Pass a deterministic clock for byte-identical output.
    """
    records: list[SweepRecord] = []
    engine_cfg = cfg.engine_config()
    partial = open(out_path + ".partial", "w") if out_path else None
    shared_states: dict = {}

    def build_states(skeleton, cache_key):
        if cache_key is not None and cache_key in shared_states:
            return shared_states[cache_key]
        states = {}
        witness = {}
        for strat in cfg.structures:
            try:
                lrg = construct_structure(skeleton, strat.upper())
                states[strat] = (lrg, init_state(lrg, engine_cfg))
                validate_lifted(lrg, witness_domain=cfg.witness_domain)
                witness[strat] = min(len(skeleton.domains[0].objects),
                                     cfg.witness_domain)
            except (MLNError, ValueError) as ex:
                states[strat] = ex
                witness[strat] = 0
        if cache_key is not None:
            shared_states[cache_key] = (states, witness)
        return states, witness

    for model_id in range(cfg.n_models):
        kb = None
        if cfg.family == "random":
            spec = cfg.kb_spec or RandomKBSpec(0)
            kb = gen_random_kb(derive_seed(cfg.master_seed, model_id), spec)
        for d in cfg.domain_sizes:
            if cfg.family == "random":
                skeleton = instantiate(kb, d, 0.0, seed=0)
                cache_key = None
            else:
                skeleton = prepare_model(fspc_mln(d, 0.0, seed=0))
                cache_key = ("fspc", d)
            skeleton = MLN(skeleton.domains, skeleton.predicates, tuple(
                WeightedClause(c.literals, 1.0, c.constraints)
                for c in skeleton.clauses))
            states, witness = build_states(skeleton, cache_key)
            for sigma_idx, sigma in enumerate(cfg.sigmas):
                seed = _sigma_seed(cfg, model_id, d, sigma_idx)
                if cfg.family == "random":
                    mln = instantiate(kb, d, sigma, seed)
                else:
                    mln = prepare_model(fspc_mln(d, sigma, seed))
                weights = {ci: cl.weight for ci, cl in enumerate(mln.clauses)}
                try:
                    exact = exact_marginals(mln)
                except (OracleLimitError, MLNError):
                    exact = None
                for strat in cfg.structures:
                    t0 = clock()
                    entry = states[strat]
                    if isinstance(entry, Exception) or exact is None:
                        rec = SweepRecord(model_id, strat, sigma, d, 0, False,
                                          math.inf, math.inf, 0.0,
                                          witness[strat])
                    else:
                        lrg, state = entry
                        reweight_state(state, weights)
                        res = run(lrg, engine_cfg, state=state)
                        mean_kl, max_kl = _kl_stats(exact, res.marginals)
                        ms = (clock() - t0) * 1000.0
                        rec = SweepRecord(
                            model_id, strat, sigma, d, res.iterations_used,
                            res.converged, mean_kl, max_kl, ms,
                            witness[strat])
                    records.append(rec)
                    if partial is not None:
                        partial.write(rec.row() + "\n")
                        partial.flush()
                if progress is not None:
                    progress(model_id, d, sigma)
    if partial is not None:
        partial.close()
    records.sort(key=lambda r: (r.model_id, r.structure, r.sigma,
                                r.domain_size))
    if out_path:
        write_sweep_csv(cfg, records, out_path)
    return records


def write_sweep_csv(cfg: SweepConfig, records, out_path: str):
    with open(out_path, "w") as fh:
        fh.write(f"# lgbp sweep family={cfg.family} master_seed={cfg.master_seed} "
                 f"n_models={cfg.n_models}\n")
        fh.write("# random literals: unnegated, sampled uniformly without "
                 "replacement; sigma is the std dev of N(0, sigma)\n")
        fh.write(f"# engine: damping={cfg.damping} tol={cfg.tolerance} "
                 f"max_iters={cfg.max_iterations}\n")
        fh.write(CSV_HEADER + "\n")
        for r in records:
            fh.write(r.row() + "\n")
