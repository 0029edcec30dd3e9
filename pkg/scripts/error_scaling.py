"""Monte-Carlo error versus M, target crossings and collapse exponents.

    python scripts/error_scaling.py --family ghz --out results/ --R 50
    python scripts/error_scaling.py --family noon --N 4 8 12 16 20 --out results/

Desk-scale defaults: GHZ N = 2..6 and N00N N = 4..20 at p = 0.25.
"""

import argparse
import time
from pathlib import Path

from outputs import write_config, write_csv

from qfibounds import bench

DEFAULT_N = {"ghz": (2, 3, 4, 5, 6), "noon": (4, 6, 8, 10, 12, 14, 16, 18, 20)}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--family", choices=("ghz", "noon"), default="ghz")
    ap.add_argument("--N", type=int, nargs="+")
    ap.add_argument("--p", type=float, default=0.25)
    ap.add_argument("--R", type=int, default=50)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--out", type=Path, default=Path("results"))
    args = ap.parse_args()

    cfg = bench.ExperimentConfig(
        family=args.family,
        N_list=tuple(args.N or DEFAULT_N[args.family]),
        p=args.p,
        R=args.R,
        seed=args.seed,
        workers=args.workers,
        M_grid=bench.DEFAULT_GHZ_GRID if args.family == "ghz" else bench.DEFAULT_NOON_GRID,
    )
    t0 = time.perf_counter()
    res = bench.run_error_scaling(cfg, progress=lambda N, M: print(f"  N={N} M={M}", flush=True))
    stem = f"scaling_{args.family}"
    write_csv(args.out / f"{stem}_rows.csv", res.row_dicts())
    write_csv(args.out / f"{stem}_summary.csv", res.summary_dicts())
    write_config(args.out / f"{stem}.config.json", cfg)
    for n, a in res.collapse_exponent.items():
        print(f"F_{n}: collapse exponent a = {a}")
    print(f"{time.perf_counter() - t0:.0f} s")


if __name__ == "__main__":
    main()
