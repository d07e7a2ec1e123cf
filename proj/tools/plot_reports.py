#!/usr/bin/env python3
# Copyright 2026 The shortcut Authors
# SPDX-License-Identifier: Apache-2.0
"""Render shortcut CSV reports as PNG figures.

    plot_reports.py eval_fit.csv   -> r² heatmaps (one per caster)
    plot_reports.py eval_lm*.csv   -> Precision@k / Surprisal per layer
    plot_reports.py early_exit.csv -> Precision@1 vs. average layers
"""

import argparse
import pathlib
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402
import pandas as pd  # noqa: E402


def plot_fit(df, out):
    r2 = df[df.metric == "r2"]
    casters = sorted(r2.caster.unique())
    n = int(max(r2.layer.max(), r2.pair_target.max()))
    fig, axes = plt.subplots(1, len(casters), figsize=(4.5 * len(casters), 4), squeeze=False)
    for ax, caster in zip(axes[0], casters):
        grid = np.full((n + 1, n + 1), np.nan)
        for row in r2[r2.caster == caster].itertuples():
            grid[row.pair_target, row.layer] = row.value
        im = ax.imshow(grid, origin="lower", vmin=min(0.0, np.nanmin(grid)), vmax=1.0, cmap="viridis")
        ax.set_title(f"r² ({caster})")
        ax.set_xlabel("source layer")
        ax.set_ylabel("target layer")
        fig.colorbar(im, ax=ax)
    fig.tight_layout()
    fig.savefig(out, dpi=120)


def plot_lm(df, out):
    metrics = [m for m in df.metric.unique() if m.startswith("precision@")] + ["surprisal"]
    fig, axes = plt.subplots(1, len(metrics), figsize=(4 * len(metrics), 3.5), squeeze=False)
    for ax, metric in zip(axes[0], metrics):
        part = df[df.metric == metric]
        for caster in sorted(part.caster.unique()):
            rows = part[part.caster == caster].sort_values("layer")
            ax.errorbar(rows.layer, rows.value, yerr=rows.ci95.fillna(0), label=caster, capsize=2)
        ax.set_title(metric)
        ax.set_xlabel("layer")
        ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)


def plot_exit(df, out):
    fig, ax = plt.subplots(figsize=(5, 4))
    for caster in sorted(df.caster.unique()):
        rows = df[df.caster == caster].sort_values("avg_layers")
        ax.plot(rows.avg_layers, rows.precision_at_1, marker="o", label=caster)
    ax.set_xlabel("average layers processed")
    ax.set_ylabel("Precision@1")
    ax.legend()
    fig.tight_layout()
    fig.savefig(out, dpi=120)


def main(argv):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("csv", nargs="+", type=pathlib.Path)
    parser.add_argument("--out-dir", type=pathlib.Path, default=None)
    args = parser.parse_args(argv)
    for path in args.csv:
        df = pd.read_csv(path)
        out = (args.out_dir or path.parent) / (path.stem + ".png")
        out.parent.mkdir(parents=True, exist_ok=True)
        if "lambda" in df.columns:
            plot_exit(df, out)
        elif (df.metric == "r2").all():
            plot_fit(df, out)
        else:
            plot_lm(df, out)
        print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    sys.exit(main(sys.argv[1:]))
