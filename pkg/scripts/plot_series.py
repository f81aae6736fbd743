"""Render the median/IQR series written by an experiment run (needs matplotlib).

    python3 scripts/plot_series.py runs/sweep
"""

import argparse
import csv
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

SERIES = {"cutin_llh": "mean log-likelihood (test)",
          "cutin_llh_pareto": "mean log-likelihood (Pareto front)",
          "cutin_iqr": "collision probability (IS)"}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("run_dir", help="directory written by `scenario-risk experiment`")
    args = ap.parse_args()
    run = Path(args.run_dir)
    for name, label in SERIES.items():
        with open(run / f"{name}.csv") as fh:
            rows = list(csv.DictReader(fh))
        frac = [float(r["fraction"]) for r in rows]
        fig, ax = plt.subplots(figsize=(5, 3.5))
        for est, color in (("kde", "tab:blue"), ("nf", "tab:orange")):
            med = [float(r[f"{est}_median"]) for r in rows]
            lo = [float(r[f"{est}_q25"]) for r in rows]
            hi = [float(r[f"{est}_q75"]) for r in rows]
            ax.plot(frac, med, color=color, label=est.upper())
            ax.fill_between(frac, lo, hi, color=color, alpha=0.25)
        if name == "cutin_iqr":
            ax.set_yscale("log")
        ax.set_xlabel("fraction of data")
        ax.set_ylabel(label)
        ax.legend()
        fig.tight_layout()
        fig.savefig(run / f"{name}.png", dpi=150)
        print(run / f"{name}.png")


if __name__ == "__main__":
    main()
