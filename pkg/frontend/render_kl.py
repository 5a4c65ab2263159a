#!/usr/bin/env python3
"""Render KL-divergence heatmaps from sweep CSVs, one panel per structure.

Usage: render_kl.py <csv> <outdir> [--stat mean|max]

Each panel is a variance-by-domain-size grid of the chosen KL statistic
aggregated over model ids, drawn on a log color scale (floor 1e-12).
Non-converged or infinite cells get a distinct hatch marker; missing grid
cells stay blank.  Output files are kl_gg.png, kl_lg.png, kl_ll.png.
"""
from __future__ import annotations

import argparse
import csv
import math
import os
import sys

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np
from matplotlib.colors import LogNorm

STRUCTURES = ("gg", "lg", "ll")
FLOOR = 1e-12


class CsvError(Exception):
    def __init__(self, message, line):
        super().__init__(f"line {line}: {message}")
        self.line = line


def read_rows(path):
    rows = []
    header = None
    with open(path) as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(",")
                required = {"model_id", "structure", "sigma", "domain_size",
                            "converged", "mean_kl", "max_kl"}
                if not required <= set(header):
                    raise CsvError("missing required columns", lineno)
                continue
            parts = line.split(",")
            if len(parts) != len(header):
                raise CsvError("wrong field count", lineno)
            row = dict(zip(header, parts))
            try:
                rows.append({
                    "structure": row["structure"].lower(),
                    "sigma": float(row["sigma"]),
                    "domain_size": int(row["domain_size"]),
                    "converged": row["converged"].lower() == "true",
                    "mean_kl": float(row["mean_kl"]),
                    "max_kl": float(row["max_kl"]),
                })
            except ValueError as ex:
                raise CsvError(str(ex), lineno) from ex
    if header is None:
        raise CsvError("empty file", 1)
    return rows


def build_grid(rows, structure, stat):
    """(sigmas, domains, value grid, sentinel mask); NaN cells are missing."""
    sigmas = sorted({r["sigma"] for r in rows})
    domains = sorted({r["domain_size"] for r in rows})
    grid = np.full((len(sigmas), len(domains)), np.nan)
    sentinel = np.zeros_like(grid, dtype=bool)
    cells = {}
    for r in rows:
        if r["structure"] != structure:
            continue
        key = (sigmas.index(r["sigma"]), domains.index(r["domain_size"]))
        cells.setdefault(key, []).append(r)
    for (i, j), group in cells.items():
        vals = [g[f"{stat}_kl"] for g in group]
        bad = any(not g["converged"] or not math.isfinite(v)
                  for g, v in zip(group, vals))
        finite = [v for v in vals if math.isfinite(v)]
        if finite:
            grid[i, j] = max(float(np.mean(finite)), FLOOR)
        sentinel[i, j] = bad
    return sigmas, domains, grid, sentinel


def render(csv_path, out_dir, stat="mean"):
    rows = read_rows(csv_path)
    os.makedirs(out_dir, exist_ok=True)
    outputs = {}
    vals = [r[f"{stat}_kl"] for r in rows if math.isfinite(r[f"{stat}_kl"])]
    vmax = max(max(vals, default=1.0), FLOOR * 10)
    for structure in STRUCTURES:
        sigmas, domains, grid, sentinel = build_grid(rows, structure, stat)
        fig, ax = plt.subplots(figsize=(4.2, 3.4), dpi=120)
        masked = np.ma.masked_invalid(grid)
        mesh = ax.pcolormesh(
            np.arange(len(domains) + 1), np.arange(len(sigmas) + 1), masked,
            norm=LogNorm(vmin=FLOOR, vmax=vmax), cmap="viridis",
            edgecolors="none")
        for i in range(len(sigmas)):
            for j in range(len(domains)):
                if sentinel[i, j]:
                    ax.plot(j + 0.5, i + 0.5, marker="x", color="red",
                            markersize=6)
        ax.set_xticks(np.arange(len(domains)) + 0.5)
        ax.set_xticklabels([str(d) for d in domains], fontsize=7)
        ax.set_yticks(np.arange(len(sigmas)) + 0.5)
        ax.set_yticklabels([f"{s:g}" for s in sigmas], fontsize=7)
        ax.set_xlabel("domain size d")
        ax.set_ylabel("variance σ")
        ax.set_title(f"{stat} KL, {structure.upper()}")
        fig.colorbar(mesh, ax=ax)
        fig.tight_layout()
        out = os.path.join(out_dir, f"kl_{structure}.png")
        fig.savefig(out, metadata={"Software": None})
        plt.close(fig)
        outputs[structure] = {"path": out, "grid_shape": grid.shape,
                              "sentinels": int(sentinel.sum())}
    return outputs


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("csv")
    parser.add_argument("outdir")
    parser.add_argument("--stat", choices=["mean", "max"], default="mean")
    args = parser.parse_args(argv)
    try:
        outputs = render(args.csv, args.outdir, args.stat)
    except (OSError, CsvError) as ex:
        print(f"error: {ex}", file=sys.stderr)
        return 1
    for structure, info in sorted(outputs.items()):
        print(f"{structure}: {info['path']} grid={info['grid_shape']}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
