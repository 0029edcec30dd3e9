"""Bound series F_0..F_n against F_Q for noisy GHZ and N00N states.

    python scripts/convergence_table.py --out results/
"""

import argparse
from pathlib import Path

from outputs import write_config, write_csv

from qfibounds import bench


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--n-max", type=int, default=8)
    args = ap.parse_args()
    for family, Ns in (("ghz", (2, 4, 6, 8, 10)), ("noon", (2, 5, 10, 20, 50))):
        cfg = bench.ExperimentConfig(family=family, N_list=Ns, p_list=(0.0, 0.1, 0.25, 0.5), n_max=args.n_max)
        write_csv(args.out / f"convergence_{family}.csv", bench.run_convergence(cfg))
        write_config(args.out / f"convergence_{family}.config.json", cfg)


if __name__ == "__main__":
    main()
