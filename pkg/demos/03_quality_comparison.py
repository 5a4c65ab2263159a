#!/usr/bin/env python3
"""A miniature of the sweep experiments plus heatmap rendering.

Runs the three structures over a few random tractable models and the
Friends-Smokers-Parents-Cancer model, compares against exact marginals,
writes a sweep CSV, and (when matplotlib is importable) renders the
KL heatmaps with the secondary component.
"""
import math
import os
import subprocess
import sys

import numpy as np

from lgbp.experiments import SweepConfig, run_sweep

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

cfg = SweepConfig(master_seed=1234, family="random", n_models=4,
                  sigmas=(0.0, 0.25, 0.5, 0.75, 1.0),
                  domain_sizes=(2, 3, 4, 5),
                  structures=("gg", "lg", "ll"),
                  max_iterations=200, damping=0.0)
csv_path = os.path.join(OUT, "mini_sweep.csv")
records = run_sweep(cfg, csv_path)
print(f"wrote {csv_path} ({len(records)} records)")

kl, conv = {}, {}
for r in records:
    conv.setdefault(r.structure, []).append(r.converged)
    if r.converged and math.isfinite(r.mean_kl):
        kl.setdefault(r.structure, []).append(r.mean_kl)
print("\nmean KL over converged cells / converged fraction:")
for s in ("gg", "lg", "ll"):
    print(f"  {s}: {np.mean(kl[s]):.6f} / {np.mean(conv[s]):.3f}")

fspc = SweepConfig(master_seed=77, family="fspc", n_models=25,
                   sigmas=(0.5,), domain_sizes=(2,),
                   structures=("gg", "lg", "ll"),
                   max_iterations=300, damping=0.0)
fspc_csv = os.path.join(OUT, "fspc_sweep.csv")
frecords = run_sweep(fspc, fspc_csv)
fkl = {}
for r in frecords:
    if r.converged and math.isfinite(r.mean_kl):
        fkl.setdefault(r.structure, []).append(r.mean_kl)
print("\nFriends-Smokers-Parents-Cancer at d=2, 25 weight draws:")
for s in ("gg", "lg", "ll"):
    print(f"  {s}: mean KL {np.mean(fkl[s]):.2e}")

render = os.path.join(os.path.dirname(__file__), "..", "frontend",
                      "render_kl.py")
proc = subprocess.run([sys.executable, render, csv_path,
                       os.path.join(OUT, "plots")], capture_output=True,
                      text=True)
print("\nheatmaps:" if proc.returncode == 0 else "\nrender failed:")
print(proc.stdout or proc.stderr)
