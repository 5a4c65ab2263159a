"""Secondary component: heatmap rendering from sweep CSVs."""

import os
import subprocess
import sys

import pytest

import render_kl

HEADER = ("model_id,structure,sigma,domain_size,iterations,converged,"
          "mean_kl,max_kl,runtime_ms,witness_domain_size")


def toy_csv(path, with_bad_row=False):
    lines = ["# toy sweep", HEADER]
    for model in (0, 1):
        for structure in ("gg", "lg", "ll"):
            for si, sigma in enumerate((0.0, 0.5)):
                for d in (2, 3):
                    kl = 0.0 if sigma == 0.0 else 0.01 * (d + model)
                    lines.append(
                        f"{model},{structure},{sigma},{d},5,true,"
                        f"{kl},{kl * 2},1.5,2")
    if with_bad_row:
        lines.append("0,gg,0.5,4,200,false,inf,inf,9.9,2")
    path.write_text("\n".join(lines) + "\n")
    return str(path)


class TestRender:
    def test_three_images_with_grid(self, tmp_path):
        csv = toy_csv(tmp_path / "toy.csv")
        out = render_kl.render(csv, str(tmp_path / "imgs"))
        assert sorted(out) == ["gg", "lg", "ll"]
        for info in out.values():
            assert os.path.exists(info["path"])
            assert info["grid_shape"] == (2, 2)  # |sigma| x |d|

    def test_sentinel_cells(self, tmp_path):
        csv = toy_csv(tmp_path / "toy.csv", with_bad_row=True)
        out = render_kl.render(csv, str(tmp_path / "imgs"))
        assert out["gg"]["sentinels"] == 1
        assert out["gg"]["grid_shape"] == (2, 3)

    def test_deterministic(self, tmp_path):
        csv = toy_csv(tmp_path / "toy.csv")
        out1 = render_kl.render(csv, str(tmp_path / "a"))
        out2 = render_kl.render(csv, str(tmp_path / "b"))
        for s in out1:
            b1 = open(out1[s]["path"], "rb").read()
            b2 = open(out2[s]["path"], "rb").read()
            assert b1 == b2

    def test_max_stat(self, tmp_path):
        csv = toy_csv(tmp_path / "toy.csv")
        out = render_kl.render(csv, str(tmp_path / "imgs"), stat="max")
        assert len(out) == 3

    def test_malformed_csv_exit_code(self, tmp_path):
        bad = tmp_path / "bad.csv"
        bad.write_text(HEADER + "\n0,gg,not-a-number,2,5,true,0,0,1,2\n")
        proc = subprocess.run(
            [sys.executable, os.path.join(os.path.dirname(__file__),
                                          "render_kl.py"),
             str(bad), str(tmp_path / "o")],
            capture_output=True, text=True)
        assert proc.returncode != 0
        assert "line 2" in proc.stderr

    def test_cli_main(self, tmp_path, capsys):
        csv = toy_csv(tmp_path / "toy.csv")
        code = render_kl.main([csv, str(tmp_path / "imgs")])
        assert code == 0
        assert "gg" in capsys.readouterr().out
