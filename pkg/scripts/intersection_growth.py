#!/usr/bin/env python3
"""Tabulate exact overlap sums I_N against their predicted growth laws.

For each cell the table shows I_N on a doubling grid of horizons next to
the predicted asymptote and their ratio; the ratio drifting toward 1
(slowly, on log scales) is the numerical face of the growth-law table.
"""

import argparse
import sys

from polytube.environment import ModelParams
from polytube.intersection import growth_law, intersection_profile

DEFAULT_CELLS = ("1,0.0,1.0", "1,0.25,1.0", "1,0.75,1.0", "2,1.0,1.0")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--cells", nargs="+", default=list(DEFAULT_CELLS),
                        help="cells as d,a,R triples (default: one per branch)")
    parser.add_argument("--geometry", choices=("tube", "cone"),
                        default="tube", help="region family (default: tube)")
    parser.add_argument("--n-min", type=int, default=6,
                        help="smallest horizon, as a power of two (default: 6)")
    parser.add_argument("--n-max", type=int, default=14,
                        help="largest horizon, as a power of two (default: 14)")
    args = parser.parse_args()

    grid = [2 ** k for k in range(args.n_min, args.n_max + 1)]
    for triple in args.cells:
        d, a, R = triple.split(",")
        params = ModelParams(d=int(d), N=grid[-1], a=float(a), R=float(R),
                             geometry=args.geometry)
        law = growth_law(params)
        i_n = intersection_profile(params, grid)
        pred = law.at(grid)
        print(f"\n(d={d}, a={a}, R={R}) {args.geometry}: {law.branch}, "
              f"I_N ~ {law.constant:.4f} * {law.label}")
        print(f"{'N':>8}  {'I_N':>12}  {'predicted':>12}  {'ratio':>8}")
        for n, got, want in zip(grid, i_n, pred):
            print(f"{n:>8}  {got:>12.5f}  {want:>12.5f}  {got / want:>8.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
