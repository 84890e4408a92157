"""Plot rolling EM against cumulative tokens for one or more run directories.

    python scripts/plot_metrics.py runs/slate runs/full --out em.png

Needs the optional ``plot`` extra (matplotlib).
"""

from __future__ import annotations

import argparse
import csv
from pathlib import Path


def read_metrics(run_dir: Path) -> tuple[list[int], list[float]]:
    with open(run_dir / "metrics.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    return [int(r["tokens"]) for r in rows], [float(r["em_rate"]) for r in rows]


def main(argv=None) -> int:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("runs", nargs="+", type=Path)
    p.add_argument("--out", type=Path, default=Path("em_vs_tokens.png"))
    args = p.parse_args(argv)

    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6, 4))
    for run in args.runs:
        tokens, em = read_metrics(run)
        ax.plot(tokens, em, label=run.name)
    ax.set_xlabel("cumulative generated tokens")
    ax.set_ylabel("rolling EM")
    ax.set_ylim(0, 1.02)
    ax.legend()
    fig.tight_layout()
    fig.savefig(args.out, dpi=120)
    print(f"wrote {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
