"""Critical noise p* per bound order and depth target (plot-ready rows).

    python scripts/pstar_curves.py --out results/ --N 4 5 6 7 8 9 10
"""

import argparse
from pathlib import Path

from outputs import write_config, write_csv

from qfibounds import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--N", type=int, nargs="+", default=list(range(2, 11)))
    ap.add_argument("--family", choices=("ghz", "noon"), default="ghz")
    args = ap.parse_args()
    cfg = bench.ExperimentConfig(family=args.family, N_list=tuple(args.N), pstar_orders=(0, 1, 2, 3, "qfi"))
    rows = bench.run_pstar_curves(cfg)
    write_csv(args.out / f"pstar_{args.family}.csv", rows)
    write_config(args.out / f"pstar_{args.family}.config.json", cfg)


if __name__ == "__main__":
    main()
