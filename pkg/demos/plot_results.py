"""Optional plotting convenience: render error-vs-NFE curves from a sweep CSV.

Usage: python demos/plot_results.py <results.csv> [out.png]

The CSV is the contract; this script is cosmetic and degrades gracefully
when matplotlib is unavailable.
"""

import csv
import sys
from collections import defaultdict


def main(argv):
    if len(argv) < 2:
        print(__doc__)
        return 1
    try:
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt
    except ImportError:
        print("matplotlib is not installed; the CSV already holds every number")
        return 0

    curves = defaultdict(list)
    with open(argv[1]) as fh:
        for row in csv.DictReader(fh):
            if row["status"] != "ok" or not row["mean_error"]:
                continue
            key = f"{row['schedule']}/{row['solver']}-{row['order']}/{row['mode']}"
            curves[key].append((int(row["nfe"]), float(row["mean_error"])))

    fig, ax = plt.subplots(figsize=(7, 4.5))
    for key, points in sorted(curves.items()):
        points.sort()
        ax.plot([p[0] for p in points], [p[1] for p in points], marker="o", label=key)
    ax.set_xlabel("score evaluations (solver steps)")
    ax.set_ylabel("mean terminal error vs. teacher")
    ax.set_yscale("log")
    ax.legend(fontsize=7)
    ax.grid(alpha=0.3)
    out = argv[2] if len(argv) > 2 else "results.png"
    fig.tight_layout()
    fig.savefig(out, dpi=150)
    print(f"wrote {out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main(sys.argv))
