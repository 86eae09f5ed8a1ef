#!/usr/bin/env python3
"""Print the disorder-relevance classification grid as an aligned table.

For each (d, a, R) cell: the regime, the matching coupling-schedule kind
and closed form, and (when an effective coupling is given) the log-normal
limit variance sigma^2.
"""

import argparse
import itertools
import sys

from polytube.environment import ModelParams
from polytube.intersection import classify_regime


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--beta-hat", type=float, default=None,
                        help="effective coupling, fills the sigma^2 column")
    parser.add_argument("--geometry", choices=("tube", "cone"),
                        default="tube", help="region family (default: tube)")
    args = parser.parse_args()

    rows = []
    for d, a, R in itertools.product((1, 2, 3), (0.0, 0.25, 0.5, 0.75, 1.0),
                                     (0.0, 1.0, 2.0)):
        params = ModelParams(d=d, N=8, a=a, R=R, geometry=args.geometry)
        rep = classify_regime(params, args.beta_hat)
        sig = "" if rep.sigma_sq is None else f"{rep.sigma_sq:.4f}"
        rows.append((str(d), f"{a:g}", f"{R:g}", rep.regime,
                     rep.schedule_kind, rep.schedule_text, sig))

    header = ("d", "a", "R", "regime", "schedule", "beta_N", "sigma^2")
    widths = [max(len(h), *(len(r[i]) for r in rows))
              for i, h in enumerate(header)]
    fmt = "  ".join(f"{{:<{w}}}" for w in widths)
    print(fmt.format(*header))
    print(fmt.format(*("-" * w for w in widths)))
    for row in rows:
        print(fmt.format(*row))
    return 0


if __name__ == "__main__":
    sys.exit(main())
