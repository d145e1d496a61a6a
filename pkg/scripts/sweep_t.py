"""Time-slot sensitivity curve on the synthetic stream, via the CLI.

Writes the stream to <output-dir>/synthetic.csv, runs ``mrate sweep-t`` and
prints the curve as a small text plot.
"""

import argparse
import csv
import sys
from pathlib import Path

from mrate.cli import main as cli_main
from mrate.ingest import dump_interactions
from mrate.synthetic import repeat_stream


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--output-dir", default="runs/sweep_t")
    ap.add_argument("--values", default="1,2,3,4,5,6,7")
    ap.add_argument("--epochs", type=int, default=3)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    out = Path(args.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    data = out / "synthetic.csv"
    dump_interactions(repeat_stream(seed=args.seed), data)
    code = cli_main(["sweep-t", "--dataset", str(data), "--output-dir", str(out), "--seed", str(args.seed),
                     "--values", args.values, "--epochs", str(args.epochs)])
    if code:
        return code
    with open(out / "sweep_t.csv", newline="") as fh:
        rows = list(csv.DictReader(fh))
    top = max(float(r["valid_mrr"]) for r in rows) or 1.0
    for r in rows:
        m = float(r["valid_mrr"])
        print(f"T={float(r['T_days']):>5g}d  {m:.4f}  {'#' * round(40 * m / top)}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
