"""Print median curves from sweep output directories.

usage: python3 scripts/summarize.py runs/desk/horizon runs/desk/noise ...
"""

import argparse
from pathlib import Path

from kstgcn.metrics import COLUMNS
from kstgcn.runner import median_by_x, read_plotdata


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("dirs", nargs="+", type=Path)
    ap.add_argument("--metric", choices=COLUMNS, default="rmse")
    args = ap.parse_args(argv)
    for d in args.dirs:
        for f in sorted(d.glob("plot_*.csv")):
            med = median_by_x(read_plotdata(f), args.metric)
            print(f"{d.name}/{f.stem[5:]}: " + "  ".join(f"{x}={v:.4f}" for x, v in med.items()))


if __name__ == "__main__":
    main()
