"""Run desk-scale experiments and write summaries/CSVs to an output directory.

    python3 scripts/run_experiments.py --out-dir results            # all
    python3 scripts/run_experiments.py --out-dir results moments paulsen

Exit status is 0 when every selected criterion passes, 5 otherwise."""
import argparse
import sys
import time

from opscale.cli import main as cli_main
from opscale.experiments import EXPERIMENTS


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("names", nargs="*", help=f"subset of: {', '.join(EXPERIMENTS)}")
    ap.add_argument("--out-dir", default="results")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    names = args.names or list(EXPERIMENTS)
    unknown = [n for n in names if n not in EXPERIMENTS]
    if unknown:
        ap.error(f"unknown experiment(s): {', '.join(unknown)}")
    status = 0
    for name in names:
        t0 = time.perf_counter()
        code = cli_main(["--seed", str(args.seed), "--out-dir", args.out_dir, "--format", "csv",
                         "experiment", name])
        print(f"# {name}: exit {code} in {time.perf_counter() - t0:.1f}s", file=sys.stderr)
        status = status or code
    return status


if __name__ == "__main__":
    sys.exit(main())
