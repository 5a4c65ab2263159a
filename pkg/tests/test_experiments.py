"""Experiment generators, exact oracle, sweep harness, CLI."""

import math
import os

import numpy as np
import pytest

from lgbp.cli import main
from lgbp.evaluator import RegionModel
from lgbp.experiments import (RandomKBSpec, SweepConfig, exact_marginals,
                              fspc_mln, gen_random_kb, instantiate, run_sweep,
                              CSV_HEADER)
from lgbp.ground import brute_force_marginal, ground_markov_network
from lgbp.lifted import separable
from lgbp.mln import group_atoms, group_id_str, mln_groups, mln_to_text, \
    parse_mln
from lgbp.regions import prepare_model
from lgbp.rng import derive_seed


class TestGenerators:
    def test_deterministic(self):
        kb1 = gen_random_kb(99)
        kb2 = gen_random_kb(99)
        assert kb1 == kb2
        m1 = instantiate(kb1, 3, 0.5, seed=7)
        m2 = instantiate(kb2, 3, 0.5, seed=7)
        assert mln_to_text(m1) == mln_to_text(m2)

    def test_shape(self):
        kb = gen_random_kb(5)
        assert len(kb) == 15
        assert all(len(t) == 3 and len(set(t)) == 3 for t in kb)
        mln = instantiate(kb, 4, 0.3, seed=1)
        assert len(mln.clauses) == 15
        assert len(mln.predicates) == 15

    def test_sigma_zero(self):
        mln = instantiate(gen_random_kb(5), 3, 0.0, seed=1)
        assert all(cl.weight == 0.0 for cl in mln.clauses)

    def test_domain_one(self):
        mln = instantiate(gen_random_kb(5), 1, 0.4, seed=1)
        marg = exact_marginals(mln)
        fg = ground_markov_network(mln)
        for key in mln_groups(mln):
            atom = group_atoms(mln, key)[0]
            assert marg[group_id_str(key)] == pytest.approx(
                brute_force_marginal(fg, [atom])[1], abs=1e-9)


class TestFspc:
    def test_structure(self):
        mln = fspc_mln(2, 0.5, seed=3)
        assert {p.name for p in mln.predicates} == {
            "Smokes", "Cancer", "Friends", "ParentOf"}
        assert len(mln.clauses) == 8
        from lgbp.mln import ground_atoms
        assert len(ground_atoms(mln)) == 12  # 2+2+4+4 at d=2

    def test_sigma_zero_marginals(self):
        from lgbp.engine import run
        from lgbp.regions import construct_structure
        mln = prepare_model(fspc_mln(2, 0.0, seed=3))
        for s in ("GG", "LG", "LL"):
            res = run(construct_structure(mln, s))
            for p in res.marginals.values():
                assert p == pytest.approx(0.5, abs=1e-12)

    def test_needs_shattering(self):
        mln = fspc_mln(2, 0.5, seed=3)
        assert prepare_model(mln) is not mln


class TestExactMarginals:
    def test_lifted_at_d20(self):
        # width-friendly model: chain-structured KB stays narrow
        kb = [(i, (i + 1) % 10, (i + 2) % 10) for i in range(10)]
        kb = [tuple(sorted(t)) for t in kb]
        mln = instantiate(kb, 20, 0.3, seed=4, n_predicates=10)
        assert separable(RegionModel(mln))
        marg = exact_marginals(mln)  # must not touch the brute-force cap
        assert len(marg) == 10
        for p in marg.values():
            # positive clause weights saturate marginals at this scale
            assert 0.0 < p <= 1.0

    def test_fspc_brute_force(self):
        mln = prepare_model(fspc_mln(2, 0.4, seed=9))
        marg = exact_marginals(mln)
        fg = ground_markov_network(mln)
        for key in mln_groups(mln):
            atoms = group_atoms(mln, key)
            if not atoms:
                continue
            assert marg[group_id_str(key)] == pytest.approx(
                brute_force_marginal(fg, [atoms[0]])[1], abs=1e-9)

    def test_zero_weight(self):
        mln = instantiate(gen_random_kb(5), 3, 0.0, seed=1)
        for p in exact_marginals(mln).values():
            assert p == pytest.approx(0.5, abs=1e-12)


def small_sweep_config(**kw):
    base = dict(master_seed=3, family="random", n_models=2,
                sigmas=(0.0, 0.5), domain_sizes=(2, 3),
                structures=("gg", "lg", "ll"), max_iterations=150,
                kb_spec=RandomKBSpec(0, n_clauses=4, n_predicates=4))
    base.update(kw)
    return SweepConfig(**base)


class TestSweep:
    def test_record_count_and_rows(self, tmp_path):
        out = tmp_path / "sweep.csv"
        records = run_sweep(small_sweep_config(), str(out))
        assert len(records) == 2 * 2 * 2 * 3
        lines = out.read_text().splitlines()
        comments = [l for l in lines if l.startswith("#")]
        assert comments
        header_idx = next(i for i, l in enumerate(lines)
                          if not l.startswith("#"))
        assert lines[header_idx] == CSV_HEADER
        assert len(lines) - header_idx - 1 == len(records)
        assert (tmp_path / "sweep.csv.partial").exists()

    def test_sigma_zero_exact(self, tmp_path):
        records = run_sweep(small_sweep_config(), str(tmp_path / "s.csv"))
        for r in records:
            if r.sigma == 0.0:
                assert r.mean_kl < 1e-9

    def test_reproducible(self, tmp_path):
        ticks = iter(range(10 ** 6))
        clock = lambda: next(ticks) * 0.001
        a = tmp_path / "a.csv"
        b = tmp_path / "b.csv"
        ticks = iter(range(10 ** 6))
        run_sweep(small_sweep_config(), str(a), clock=lambda: next(ticks) * 0.001)
        ticks = iter(range(10 ** 6))
        run_sweep(small_sweep_config(), str(b), clock=lambda: next(ticks) * 0.001)
        assert a.read_bytes() == b.read_bytes()

    def test_mean_le_max(self, tmp_path):
        records = run_sweep(small_sweep_config(), str(tmp_path / "m.csv"))
        for r in records:
            if math.isfinite(r.mean_kl):
                assert r.mean_kl <= r.max_kl + 1e-15


class TestCli:
    def model_file(self, tmp_path):
        path = tmp_path / "m.mln"
        path.write_text("domain d = { c1, c2 }\npredicate R(d)\n"
                        "predicate S(d)\n0.7 :: R(x) v S(y)\n")
        return str(path)

    def test_infer(self, tmp_path, capsys):
        code = main(["infer", self.model_file(tmp_path), "--structure", "ll"])
        out = capsys.readouterr().out
        assert code == 0
        assert "R " in out and "S " in out

    def test_exactz(self, tmp_path, capsys):
        path = tmp_path / "m.mln"
        path.write_text("domain d = { c1, c2 }\npredicate R(d)\n"
                        "predicate S(d)\n"
                        f"{math.log(2)} :: R(x) v S(y)\n")
        code = main(["exactz", str(path)])
        assert code == 0
        assert float(capsys.readouterr().out.strip()) == pytest.approx(
            math.log(161), abs=1e-9)

    def test_marginals(self, tmp_path, capsys):
        code = main(["marginals", self.model_file(tmp_path)])
        assert code == 0
        lines = capsys.readouterr().out.strip().splitlines()
        assert len(lines) == 2 and lines[0].startswith("R")

    def test_gen_random_roundtrip(self, tmp_path, capsys):
        out = tmp_path / "kb.mln"
        code = main(["gen-random", "--seed", "5", "--sigma", "0.3",
                     "--domain", "3", "-o", str(out)])
        assert code == 0
        mln = parse_mln(out.read_text())
        assert len(mln.clauses) == 15
        code = main(["infer", str(out), "--structure", "ll",
                     "--max-iters", "100"])
        assert code == 0

    def test_validate(self, tmp_path, capsys):
        code = main(["validate", self.model_file(tmp_path),
                     "--structure", "ll", "--witness-domain", "3"])
        assert code == 0
        assert "valid=true" in capsys.readouterr().out

    def test_sweep_cli(self, tmp_path):
        cfgfile = tmp_path / "sweep.cfg"
        cfgfile.write_text("family = random\nmodels = 1\nsigmas = 0,0.5\n"
                           "domains = 2..3\nstructures = gg,ll\nseed = 2\n"
                           "max-iters = 100\n")
        out = tmp_path / "out.csv"
        code = main(["sweep", "--config", str(cfgfile), "-o", str(out)])
        assert code == 0
        lines = [l for l in out.read_text().splitlines()
                 if not l.startswith("#")]
        assert lines[0] == CSV_HEADER

    def test_usage_error(self):
        assert main(["infer"]) == 1

    def test_model_error(self, tmp_path):
        bad = tmp_path / "bad.mln"
        bad.write_text("domain d={a}\n1.0 :: Undeclared(x)\n")
        assert main(["infer", str(bad), "--structure", "gg"]) == 2
