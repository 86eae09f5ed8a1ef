#!/usr/bin/env python3
"""Regenerate the golden CSVs for every fixture under fixtures/.

Each fixture directory holds a config.toml; this runs it and writes the
produced CSVs (and manifest) next to it.  Run from the repository root
after an intentional change to output formats or pinned configurations,
then audit the diff before committing.
"""

import argparse
import sys
from pathlib import Path

from polytube import harness


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--fixtures", default="fixtures",
                        help="fixture root directory (default: fixtures)")
    args = parser.parse_args()
    root = Path(args.fixtures)
    subdirs = sorted(p for p in root.iterdir()
                     if (p / "config.toml").is_file())
    if not subdirs:
        print(f"no fixture configs under {root}", file=sys.stderr)
        return 1
    for sub in subdirs:
        cfg = harness.config_from_toml(sub / "config.toml")
        result = harness.run(cfg, out_dir=sub)
        names = ", ".join(p.name for p in result.csv_paths)
        print(f"{sub.name}: {result.rows} rows -> {names}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
