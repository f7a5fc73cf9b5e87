#!/usr/bin/env python3
"""Plot a trace directory written by `dacbf run`.

Usage: plot_trace.py TRACE_DIR [--out FIGURE.png]

Panels: barrier value h, applied and nominal input, delay estimate with the
bound interval, and the robustness margin d_e next to its fixed-bound
counterpart.
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def read_csv(path):
    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    return {k: [float(r[k]) if k != "diagnostic" else r[k] for r in rows] for k in (rows[0] if rows else {})}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("trace_dir", type=Path)
    ap.add_argument("--out", type=Path, default=None)
    args = ap.parse_args()

    steps = read_csv(args.trace_dir / "steps.csv")
    t = steps["t"]
    fig, ax = plt.subplots(4, 1, sharex=True, figsize=(8, 10))

    ax[0].plot(t, steps["h"], label="h(x)")
    ax[0].axhline(0.0, color="k", lw=0.8)
    ax[0].set_ylabel("h")

    ax[1].plot(t, steps["u0"], label="u")
    ax[1].plot(t, steps["u_nom0"], ls="--", label="u_nom")
    ax[1].set_ylabel("input (m/s²)")
    ax[1].legend()

    ax[2].plot(t, steps["d_hat"], label="D̂")
    ax[2].fill_between(t, steps["lo"], steps["hi"], alpha=0.2, label="bound interval")
    ax[2].set_ylabel("delay (s)")
    ax[2].legend()

    ax[3].plot(t, steps["d_e"], label="d_e")
    ax[3].plot(t, steps["d_e_ref"], ls="--", label="d_e, fixed bound")
    ax[3].set_ylabel("margin")
    ax[3].set_xlabel("t (s)")
    ax[3].legend()

    fig.tight_layout()
    out = args.out or args.trace_dir / "trace.png"
    fig.savefig(out, dpi=120)
    print(out)


if __name__ == "__main__":
    main()
