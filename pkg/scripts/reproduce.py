"""Desk-scale end-to-end run: generate, train, evaluate, export.

    python scripts/reproduce.py --out runs/desk [--n 2000] [--quick]

Each stage goes through the CLI, so the run directory ends up with the same
files and manifest as running the subcommands by hand. Existing datasets in
the run directory are reused.
"""

import argparse
import sys
import time
from pathlib import Path

from mcvd_locate import cli


def stage(name, *argv):
    t0 = time.perf_counter()
    code = cli.main([name, *map(str, argv)])
    print(f"== {name}: exit {code} in {time.perf_counter() - t0:.0f} s", flush=True)
    if code != 0:
        sys.exit(code)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--out", default="runs/desk")
    p.add_argument("--n", type=int)
    p.add_argument("--quick", action="store_true", help="tiny scene and few epochs, for a smoke run")
    args = p.parse_args()
    out = Path(args.out)
    quick = ["--quick"] if args.quick else []
    n = ["--n", args.n] if args.n else []

    if not (out / "dataset.data.csv").exists():
        stage("gen-dataset", "--out", out, "-v", *n, *quick)
    stage("train", "--dataset", out / "dataset", "--out", out, *quick)
    stage("eval", "--dataset", out / "dataset", "--model", out / "model.json", "--out", out)
    stage("plot-export", "--dataset", out / "dataset", "--model", out / "model.json",
          "--history", out / "history.csv", "--out", out)


if __name__ == "__main__":
    main()
