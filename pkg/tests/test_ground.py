"""Ground oracle: factor graphs, brute force, RIP, propositional GBP."""

import itertools
import math

import numpy as np
import pytest

from lgbp.ground import (
    BRUTE_FORCE_CAP, FactorGraph, GroundRegion, GroundRegionGraph,
    PropagationConfig, bethe_region_graph, brute_force_marginal,
    brute_force_z, gbp_run, ground_markov_network, region_graph_to_text,
    validate_running_intersection,
)
from lgbp.mln import OracleLimitError, parse_mln, ground_atoms, ground_formulas

RS = """
domain d = { c1, c2 }
predicate R(d)
predicate S(d)
WEIGHT :: R(x) v S(y)
"""

RST = """
domain d = { c1, c2 }
predicate R(d)
predicate S(d)
predicate T(d)
WEIGHT :: R(x) v S(y)
WEIGHT :: S(y) v T(z)
WEIGHT :: R(x) v T(z)
"""


def enumerate_z(mln):
    """Independent oracle: world enumeration straight from the definition."""
    atoms = ground_atoms(mln)
    gcs = ground_formulas(mln)
    total = 0.0
    for values in itertools.product([False, True], repeat=len(atoms)):
        world = dict(zip(atoms, values))
        score = sum(g.weight for g in gcs
                    if any(world[a] == pos for pos, a in g.literals))
        total += math.exp(score)
    return math.log(total)


class TestGroundMarkovNetwork:
    def test_unary(self):
        mln = parse_mln("domain d={c1,c2}\npredicate R(d)\n0.8 :: R(x)")
        fg = ground_markov_network(mln)
        assert len(fg.variables) == 2
        assert len(fg.factors) == 2
        for scope, table in fg.factors:
            assert table.shape == (2,)
            assert table[1] == 0.8 and table[0] == 0.0

    def test_section21(self):
        mln = parse_mln("domain d={a1,a2}\npredicate S(d)\npredicate T(d)\n"
                        "0.5 :: S(x) v !T(y) ; x != y")
        fg = ground_markov_network(mln)
        assert len(fg.variables) == 4
        assert len(fg.factors) == 2
        for scope, table in fg.factors:
            assert table.shape == (2, 2)
            # unsatisfied only when S=false, T=true
            assert table[0, 1] == 0.0
            assert table[0, 0] == table[1, 0] == table[1, 1] == 0.5

    def test_zero_weights(self):
        mln = parse_mln("domain d={c1}\npredicate R(d)\n0.0 :: R(x)")
        fg = ground_markov_network(mln)
        assert all(np.all(t == 0.0) for _, t in fg.factors)


class TestBruteForce:
    def test_independent_zero_weight(self):
        fg = FactorGraph((("A", ()), ("B", ())), ())
        assert brute_force_z(fg) == pytest.approx(math.log(4))
        marg = brute_force_marginal(fg, [("A", ())])
        assert np.allclose(marg, [0.5, 0.5])

    def test_z_161(self):
        mln = parse_mln(RS.replace("WEIGHT", str(math.log(2))))
        fg = ground_markov_network(mln)
        assert brute_force_z(fg) == pytest.approx(math.log(161), abs=1e-12)
        assert brute_force_z(fg) == pytest.approx(enumerate_z(mln), abs=1e-12)

    def test_logistic(self):
        w = 1.7
        mln = parse_mln("domain d={c1}\npredicate R(d)\n" + f"{w} :: R(c1)")
        fg = ground_markov_network(mln)
        marg = brute_force_marginal(fg, [("R", ("c1",))])
        assert marg[1] == pytest.approx(math.exp(w) / (1 + math.exp(w)), abs=1e-12)

    def test_cap(self):
        fg = FactorGraph(tuple((f"V{i}", ()) for i in range(10)), ())
        with pytest.raises(OracleLimitError):
            brute_force_z(fg, cap=8)


def r(atoms, fids=()):
    return GroundRegion(tuple(atoms), tuple(fids))


class TestRunningIntersection:
    A, B, X = ("A", ()), ("B", ()), ("X", ())

    def test_disjoint(self):
        rg = GroundRegionGraph((r([self.A]), r([self.B])), (), ())
        ok, witness = validate_running_intersection(rg)
        assert ok and witness is None

    def test_shared_with_common_child(self):
        rg = GroundRegionGraph(
            (r([self.A, self.X]), r([self.B, self.X]), r([self.X])),
            ((0, 2), (1, 2)), ())
        ok, _ = validate_running_intersection(rg)
        assert ok

    def test_shared_without_common_child(self):
        rg = GroundRegionGraph(
            (r([self.A, self.X]), r([self.B, self.X]), r([self.A]), r([self.B])),
            ((0, 2), (1, 3)), ())
        ok, witness = validate_running_intersection(rg)
        assert not ok
        v1, v2, atom = witness
        assert atom == self.X and {v1, v2} == {0, 1}

    def test_cycle_rejected(self):
        rg = GroundRegionGraph((r([self.A]), r([self.A])), ((0, 1), (1, 0)), ())
        with pytest.raises(Exception):
            validate_running_intersection(rg)


class TestGbpRun:
    def test_tree_exact(self):
        mln = parse_mln("domain d={c1,c2}\npredicate R(d)\npredicate S(d)\n"
                        "0.9 :: R(x) v !S(x)\n-0.4 :: S(x)")
        fg = ground_markov_network(mln)
        rg = bethe_region_graph(fg)
        res = gbp_run(rg, PropagationConfig(damping=0.0))
        assert res.converged
        for atom in fg.variables:
            exact = brute_force_marginal(fg, [atom])[1]
            assert res.marginals[atom] == pytest.approx(exact, abs=1e-9)

    def test_zero_weights_one_sweep(self):
        mln = parse_mln("domain d={c1,c2}\npredicate R(d)\n0.0 :: R(x)")
        rg = bethe_region_graph(ground_markov_network(mln))
        res = gbp_run(rg)
        assert res.converged and res.iterations_used == 1
        assert all(abs(p - 0.5) < 1e-12 for p in res.marginals.values())

    def test_belief_normalization(self):
        mln = parse_mln(RS.replace("WEIGHT", str(0.7)))
        rg = bethe_region_graph(ground_markov_network(mln))
        res = gbp_run(rg)
        for b in res.beliefs:
            assert abs(b.sum() - 1.0) < 1e-12

    def test_local_consistency_at_convergence(self):
        mln = parse_mln(RST.replace("WEIGHT", str(0.3)))
        fg = ground_markov_network(mln)
        rg = bethe_region_graph(fg)
        cfg = PropagationConfig(tolerance=1e-10)
        res = gbp_run(rg, cfg)
        assert res.converged
        for p, c in rg.edges:
            axes = tuple(rg.regions[p].atoms.index(a) for a in rg.regions[c].atoms)
            proj = res.beliefs[p]
            drop = tuple(i for i in range(proj.ndim) if i not in axes)
            marg = proj.sum(axis=drop)
            assert np.max(np.abs(marg - res.beliefs[c])) < 10 * cfg.tolerance


def rst_simulated_fixture(w):
    """Hand-built simulated region graph of the paper's RST lifted graph, d=2.

    Formula regions hold all groundings of one clause; R is exchanged as a
    joint message, T through per-atom regions, S through a count region plus
    per-atom connector regions.
    """
    mln = parse_mln(RST.replace("WEIGHT", str(w)))
    fg = ground_markov_network(mln)
    R1, R2 = ("R", ("c1",)), ("R", ("c2",))
    S1, S2 = ("S", ("c1",)), ("S", ("c2",))
    T1, T2 = ("T", ("c1",)), ("T", ("c2",))
    fid = {}
    for i, (scope, _) in enumerate(fg.factors):
        fid.setdefault(frozenset(scope), []).append(i)

    def factors_over(*preds):
        return tuple(i for i, (scope, _) in enumerate(fg.factors)
                     if {a[0] for a in scope} == set(preds))

    regions = [
        r([R1, R2, S1, S2], factors_over("R", "S")),   # 0 F_RS
        r([S1, S2, T1, T2], factors_over("S", "T")),   # 1 F_ST
        r([R1, R2, T1, T2], factors_over("R", "T")),   # 2 F_RT
        r([R1, R2]),                                   # 3 R joint
        r([S1, S2]),                                   # 4 S count
        r([S1]), r([S2]),                              # 5, 6 S connectors
        r([T1]), r([T2]),                              # 7, 8 T atoms
    ]
    edges = ((0, 3), (2, 3),
             (1, 4), (4, 5), (4, 6), (0, 5), (0, 6),
             (1, 7), (1, 8), (2, 7), (2, 8))
    return GroundRegionGraph(tuple(regions), edges, fg.factors), fg


class TestRstFixture:
    def test_rip_holds(self):
        rg, _ = rst_simulated_fixture(0.3)
        ok, _ = validate_running_intersection(rg)
        assert ok

    def test_marginals_near_brute_force(self):
        # The RST structure is loopy, so GBP is approximate; its fixed-point
        # error scales roughly with w^3 (2.7e-4 at w=0.3, 3.6e-7 at w=0.05).
        rg, fg = rst_simulated_fixture(0.05)
        res = gbp_run(rg, PropagationConfig(tolerance=1e-12, max_iterations=5000))
        assert res.converged
        for atom in fg.variables:
            exact = brute_force_marginal(fg, [atom])[1]
            assert res.marginals[atom] == pytest.approx(exact, abs=1e-6)

    def test_serialization_deterministic(self):
        rg, _ = rst_simulated_fixture(0.3)
        assert region_graph_to_text(rg) == region_graph_to_text(rg)
        assert "edge 0 -> 3" in region_graph_to_text(rg)
