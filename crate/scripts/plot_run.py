#!/usr/bin/env python3
"""Render loss and evaluation curves of one or more run directories.

    python3 scripts/plot_run.py runs/a runs/b -o curves.png

Reads only metrics.csv and evals.csv. Needs matplotlib.
"""
import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt


def rows(path):
    with open(path, newline="") as f:
        return list(csv.DictReader(f))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("runs", nargs="+", type=Path)
    ap.add_argument("-o", "--out", type=Path, default=Path("curves.png"))
    args = ap.parse_args()

    fig, (loss_ax, miou_ax) = plt.subplots(1, 2, figsize=(11, 4))
    for run in args.runs:
        m = rows(run / "metrics.csv")
        loss_ax.plot([int(r["iter"]) for r in m], [float(r["total"]) for r in m], label=run.name, lw=0.8)
        e = rows(run / "evals.csv")
        miou_ax.plot([int(r["iter"]) for r in e], [float(r["miou"]) for r in e], marker="o", label=run.name)
    loss_ax.set(xlabel="iteration", ylabel="total loss", yscale="log")
    miou_ax.set(xlabel="iteration", ylabel="validation mIoU")
    miou_ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")


if __name__ == "__main__":
    main()
