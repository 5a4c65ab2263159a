"""Exact lifted inference: factorizations, Z evaluation, JD sets, marginals."""

import itertools
import math

import numpy as np
import pytest

from lgbp.evaluator import Attachments, RegionModel
from lgbp.factorization import FactorizationNode, factorization_to_text, \
    tree_vertices
from lgbp.ground import brute_force_marginal, brute_force_z, \
    ground_markov_network
from lgbp.lifted import (NotInJD, count_variable_elimination,
                         default_factorization, enumerate_factorizations,
                         evaluate_z, jd_contains, jd_sets, joint_marginal,
                         leaf_count, separable, separable_group_marginals,
                         separable_log_z, validate_factorization,
                         SeparableJoint)
from lgbp.mln import group_id_str, mln_groups, parse_mln
from lgbp.rng import Stream
from lgbp.tables import expand_counted_values

W2 = math.log(2)
RS = f"domain d = {{ c1, c2 }}\npredicate R(d)\npredicate S(d)\n{W2} :: R(x) v S(y)"


def keys_of(mln):
    return {group_id_str(k): k for k in mln_groups(mln)}


def figure1_left(mln):
    g = keys_of(mln)
    y = mln.clauses[0].literals[1].args[0]
    s_node = FactorizationNode(g["S"], ("D",), frozenset({y}))
    return FactorizationNode(g["R"], ("C",), frozenset(), (s_node,))


def figure1_right(mln):
    g = keys_of(mln)
    s_node = FactorizationNode(g["S"], ("C",))
    return FactorizationNode(g["R"], ("C",), frozenset(), (s_node,))


class TestValidate:
    def test_figure1_left_valid(self):
        mln = parse_mln(RS)
        ok, msg = validate_factorization(mln, figure1_left(mln))
        assert ok, msg

    def test_figure1_right_valid(self):
        mln = parse_mln(RS)
        ok, msg = validate_factorization(mln, figure1_right(mln))
        assert ok, msg

    def test_decomposer_violation(self):
        # decomposing y while R(x) stays undetermined breaks independence
        mln = parse_mln(RS)
        g = keys_of(mln)
        y = mln.clauses[0].literals[1].args[0]
        r_node = FactorizationNode(g["R"], ("C",))
        root = FactorizationNode(g["S"], ("D",), frozenset({y}), (r_node,))
        ok, msg = validate_factorization(mln, root)
        assert not ok and ("decompos" in msg or "bound by the edge" in msg)

    def test_count_after_split_rejected(self):
        # counting Cancer after counting Smokes is invalid: the residual
        # splits Cancer's atoms into classes
        mln = parse_mln("domain p = { a, b, c }\npredicate S(p)\n"
                        "predicate C(p)\n0.7 :: !S(x) v C(x)")
        g = keys_of(mln)
        c_node = FactorizationNode(g["C"], ("C",))
        root = FactorizationNode(g["S"], ("C",), frozenset(), (c_node,))
        ok, msg = validate_factorization(mln, root)
        assert not ok and "exchangeable" in msg


class TestEvaluateZ:
    def test_zero_weight(self):
        mln = parse_mln("domain d={c1,c2}\npredicate R(d)\n0.0 :: R(x)")
        root = FactorizationNode(keys_of(mln)["R"], ("C",))
        assert evaluate_z(mln, root) == pytest.approx(math.log(4), abs=1e-12)

    def test_decomposed_unary(self):
        w = 0.8
        mln = parse_mln("domain d={a,b,c}\npredicate R(d)\n" + f"{w} :: R(x)")
        x = mln.clauses[0].literals[0].args[0]
        root = FactorizationNode(keys_of(mln)["R"], ("D",), frozenset({x}))
        assert evaluate_z(mln, root) == pytest.approx(
            3 * math.log(1 + math.exp(w)), abs=1e-12)

    def test_z161_both_figures(self):
        mln = parse_mln(RS)
        expected = brute_force_z(ground_markov_network(mln))
        assert expected == pytest.approx(math.log(161), abs=1e-12)
        for tree in (figure1_left(mln), figure1_right(mln)):
            assert evaluate_z(mln, tree) == pytest.approx(expected, abs=1e-9)


class TestLeafCount:
    def test_figure1(self):
        mln = parse_mln(RS)
        assert leaf_count(mln, figure1_left(mln)) == 6
        assert leaf_count(mln, figure1_right(mln)) == 9

    def test_single_counted_predicate(self):
        for n in (1, 2, 5):
            consts = ",".join(f"c{i}" for i in range(n))
            mln = parse_mln(f"domain d={{{consts}}}\npredicate R(d)\n0.4 :: R(x)")
            root = FactorizationNode(keys_of(mln)["R"], ("C",))
            assert leaf_count(mln, root) == n + 1

    def test_monotone_under_decomposition(self):
        mln = parse_mln(RS)
        assert leaf_count(mln, figure1_left(mln)) <= \
            leaf_count(mln, figure1_right(mln))


class TestJD:
    def atoms(self, *specs):
        return [(p, tuple(args)) for p, *args in specs]

    def test_figure1_left_sets(self):
        mln = parse_mln(RS)
        index = jd_sets(mln, figure1_left(mln))
        assert jd_contains(index, self.atoms(("R", "c1"), ("R", "c2"), ("S", "c1")))
        assert jd_contains(index, self.atoms(("R", "c1"), ("R", "c2"), ("S", "c2")))
        assert not jd_contains(index, self.atoms(
            ("R", "c1"), ("R", "c2"), ("S", "c1"), ("S", "c2")))

    def test_figure1_right_full_joint(self):
        mln = parse_mln(RS)
        index = jd_sets(mln, figure1_right(mln))
        all_atoms = self.atoms(("R", "c1"), ("R", "c2"), ("S", "c1"), ("S", "c2"))
        for r in range(len(all_atoms) + 1):
            for subset in itertools.combinations(all_atoms, r):
                assert jd_contains(index, subset)

    def test_empty_contained(self):
        mln = parse_mln(RS)
        assert jd_contains(jd_sets(mln, figure1_left(mln)), [])


class TestJointMarginal:
    def test_zero_weight_single_atom(self):
        mln = parse_mln("domain d={c1,c2}\npredicate R(d)\n0.0 :: R(x)")
        root = FactorizationNode(keys_of(mln)["R"], ("C",))
        pot = joint_marginal(mln, root, atoms=[("R", ("c1",))])
        assert np.allclose(np.exp(pot.logv), [0.5, 0.5], atol=1e-12)

    def test_counted_group_closed_form(self):
        w = 0.9
        mln = parse_mln("domain d={c1,c2}\npredicate R(d)\n" + f"{w} :: R(x)")
        key = keys_of(mln)["R"]
        root = FactorizationNode(key, ("C",))
        pot = joint_marginal(mln, root, groups=[key])
        z = sum(math.comb(2, k) * math.exp(k * w) for k in range(3))
        for k in range(3):
            assert math.exp(pot.logv[k]) == pytest.approx(
                math.exp(k * w) / z, abs=1e-12)
        # weighted normalization
        total = sum(math.comb(2, k) * math.exp(pot.logv[k]) for k in range(3))
        assert total == pytest.approx(1.0, abs=1e-12)

    def test_r1_marginal_from_enumeration(self):
        mln = parse_mln(RS)
        fg = ground_markov_network(mln)
        exact = brute_force_marginal(fg, [("R", ("c1",))])[1]
        for tree in (figure1_left(mln), figure1_right(mln)):
            pot = joint_marginal(mln, tree, atoms=[("R", ("c1",))])
            assert pot.atom_marginal(("R", ("c1",))) == pytest.approx(
                exact, abs=1e-9)

    def test_not_in_jd_error(self):
        mln = parse_mln(RS)
        with pytest.raises(NotInJD):
            joint_marginal(mln, figure1_left(mln),
                           atoms=[("S", ("c1",)), ("S", ("c2",))])

    def test_expansion_matches_brute_force(self):
        w = -0.6
        mln = parse_mln("domain d={c1,c2,c3}\npredicate R(d)\n" + f"{w} :: R(x)")
        key = keys_of(mln)["R"]
        pot = joint_marginal(mln, FactorizationNode(key, ("C",)), groups=[key])
        table = np.exp(expand_counted_values(pot.logv))
        fg = ground_markov_network(mln)
        exact = brute_force_marginal(fg, [("R", (c,)) for c in ("c1", "c2", "c3")])
        assert np.max(np.abs(table - exact)) < 1e-9


class TestDefaultFactorization:
    def test_single_predicate_deterministic(self):
        mln = parse_mln("domain d={c1,c2}\npredicate R(d)\n0.5 :: R(x)")
        t1 = factorization_to_text(default_factorization(mln))
        t2 = factorization_to_text(default_factorization(mln))
        assert t1 == t2
        ok, msg = validate_factorization(mln, default_factorization(mln))
        assert ok, msg

    def test_rs_gives_figure1_left_shape(self):
        mln = parse_mln(RS)
        tree = default_factorization(mln)
        assert tree.group.pred == "R"
        assert tree.tags == ("C",)
        assert len(tree.children) == 1
        child = tree.children[0]
        assert child.group.pred == "S"
        assert child.tags == ("D",) and child.edge_vars

    def test_non_liftable_residual_uses_grounding(self):
        mln = parse_mln("domain p={a,b}\npredicate S(p)\npredicate P(p,p)\n"
                        "0.5 :: !S(y) v !P(x,y) v S(x) ; x != y")
        tree = default_factorization(mln)
        ok, msg = validate_factorization(mln, tree)
        assert ok, msg
        tags = [t for v in tree_vertices(tree) for t in v.tags]
        assert "G" in tags


def random_small_mln(stream, max_preds=3, d=3):
    n_preds = 1 + stream.randint(max_preds)
    arities = [1 + stream.randint(2) for _ in range(n_preds)]
    lines = [f"domain d={{{','.join(f'c{i}' for i in range(d))}}}"]
    for i, a in enumerate(arities):
        lines.append(f"predicate P{i}({','.join(['d'] * a)})")
    varnames = ["x", "y", "z", "u"]
    for c in range(1 + stream.randint(2)):
        lits = []
        for _ in range(1 + stream.randint(2)):
            p = stream.randint(n_preds)
            args = [varnames[stream.randint(len(varnames))]
                    for _ in range(arities[p])]
            neg = "!" if stream.randint(2) else ""
            lits.append(f"{neg}P{p}({','.join(args)})")
        w = (stream.uniform() - 0.5) * 3
        lines.append(f"{w} :: {' v '.join(lits)}")
    return parse_mln("\n".join(lines))


class TestFactorizationInvariance:
    def test_all_valid_factorizations_agree(self):
        from lgbp.mln import shatter_to_enf
        stream = Stream(77)
        checked = 0
        for trial in range(40):
            mln = shatter_to_enf(random_small_mln(stream))
            if len(lgbp_atoms(mln)) > 14:
                continue
            expected = brute_force_z(ground_markov_network(mln))
            for tree in enumerate_factorizations(mln, limit=12):
                got = evaluate_z(mln, tree)
                assert got == pytest.approx(expected, rel=1e-9, abs=1e-9), \
                    factorization_to_text(tree)
                checked += 1
        assert checked >= 40

    def test_binomial_sanity(self):
        mln = parse_mln("domain d={c1,c2,c3,c4}\npredicate R(d)\n"
                        "0.0 :: R(x)")
        root = FactorizationNode(keys_of(mln)["R"], ("C",))
        assert evaluate_z(mln, root) == pytest.approx(4 * math.log(2), abs=1e-12)


def lgbp_atoms(mln):
    from lgbp.mln import ground_atoms
    return ground_atoms(mln)


class TestSeparable:
    KB = ("domain d={c1,c2,c3}\n"
          "predicate A(d)\npredicate B(d)\npredicate C(d)\n"
          "0.5 :: A(x) v B(y) v !C(z)\n"
          "-0.3 :: B(x) v C(y)\n")

    def test_detection(self):
        assert separable(RegionModel(parse_mln(self.KB)))
        coupled = parse_mln("domain d={c1,c2}\npredicate A(d)\npredicate B(d)\n"
                            "0.5 :: A(x) v B(x)")
        assert not separable(RegionModel(coupled))

    def test_ve_matches_brute_force(self):
        mln = parse_mln(self.KB)
        model = RegionModel(mln)
        fg = ground_markov_network(mln)
        assert separable_log_z(model) == pytest.approx(
            brute_force_z(fg), abs=1e-9)
        marg = separable_group_marginals(model)
        for key, p in marg.items():
            atom = model.group_atom_lists[model.group_index[key]][0]
            assert p == pytest.approx(brute_force_marginal(fg, [atom])[1],
                                      abs=1e-9)

    def test_joint_tensor_matches_evaluator(self):
        mln = parse_mln(self.KB)
        model = RegionModel(mln)
        keys = keys_of(mln)
        sj = SeparableJoint(model, [(keys["A"], "count", None),
                                    (keys["B"], "count", None),
                                    (keys["C"], "count", None)])
        from lgbp.tables import log_binom, logsumexp
        logv = sj.evaluate(Attachments())
        out = sj.marginal(logv, [(keys["A"], "count")])  # log mass per count
        tree = default_factorization(mln)
        pot = joint_marginal(mln, tree, groups=[keys["A"]])
        per_assignment = out - log_binom(3) - logsumexp(out)
        assert np.max(np.abs(per_assignment - pot.logv)) < 1e-9
