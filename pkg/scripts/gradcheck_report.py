"""Write the gradient-check table for every loss and print the worst error.

    python scripts/gradcheck_report.py --trials 200 --seed 7
"""
import argparse
import sys
from pathlib import Path

from posekit.diff import write_reports_csv
from posekit.gradcheck import grad_check_all


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--trials", type=int, default=100)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, default=Path("results/gradcheck.csv"))
    args = ap.parse_args()
    reports = grad_check_all(args.trials, args.seed)
    args.out.parent.mkdir(parents=True, exist_ok=True)
    with open(args.out, "w", newline="") as fh:
        write_reports_csv(reports, fh)
    for r in reports:
        print(f"{r.op:12s} {r.max_rel_err:.3g}")
    return 0 if max(r.max_rel_err for r in reports) < 1e-5 else 1


if __name__ == "__main__":
    sys.exit(main())
