"""SVG charts from the CSVs written by ``lab`` (optional, needs matplotlib).

    python3 scripts/plot_results.py results/01-sweep-p/sweep-p.csv ...

Sweep files give kappa against p (p sweeps) or against the element count
(h sweeps), one line per preconditioner; refel files give kappa of the
reference-element blocks against p.
"""
import csv
import sys
from collections import defaultdict
from pathlib import Path

import matplotlib

matplotlib.use("svg")
import matplotlib.pyplot as plt  # noqa: E402


def read_rows(path):
    with open(path) as fh:
        return list(csv.DictReader(line for line in fh if not line.startswith("#")))


def plot(path):
    rows = read_rows(path)
    if not rows:
        return None
    fig, ax = plt.subplots(figsize=(5, 4))
    series = defaultdict(list)
    if "preconditioner" in rows[0]:
        levels = {r["level"] for r in rows}
        xkey = "triangles" if len(levels) > 1 else "p"
        for r in rows:
            series[r["preconditioner"]].append((float(r[xkey]), float(r["kappa"])))
        ax.set_xlabel("elements" if xkey == "triangles" else "p")
    elif "block" in rows[0]:
        xkey = "p"
        for r in rows:
            series[r["block"]].append((float(r["p"]), float(r["kappa"])))
        ax.set_xlabel("p")
    else:
        plt.close(fig)
        return None
    for name, pts in sorted(series.items()):
        pts.sort()
        ax.loglog(*zip(*pts), marker="o", label=name)
    ax.set_ylabel("condition number")
    ax.legend(fontsize=8)
    ax.grid(True, which="both", alpha=0.3)
    out = Path(path).with_suffix(".svg")
    fig.tight_layout()
    fig.savefig(out)
    plt.close(fig)
    return out


def main(paths):
    for p in paths:
        out = plot(p)
        print(out if out else f"skipped {p}")


if __name__ == "__main__":
    main(sys.argv[1:])
