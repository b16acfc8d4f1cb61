#!/usr/bin/env python3
"""Constant-vol benchmark: grid-solver prices vs the closed form.

Runs both bundled correlation setups end to end (solve, price, compare)
and prints the discrepancy summary. Artifacts land under out/.
"""

import pathlib
import sys

from hybridlv import cli

ROOT = pathlib.Path(__file__).resolve().parents[1]


def main() -> int:
    for name in ("bshw_rho_pos", "bshw_rho_neg_2y"):
        config = ROOT / "configs" / f"{name}.yaml"
        out = ROOT / "out" / name
        for command in ("price-pde", "price-analytic"):
            status = cli.run(command, config_path=str(config), out_dir=str(out))
            if status != 0:
                return status
        status = cli.run(
            "compare",
            out_dir=str(out),
            left=str(out / "prices_pde.csv"),
            right=str(out / "prices_analytic.csv"),
        )
        if status != 0:
            return status
        print(f"[{name}] discrepancy table: {out / 'discrepancy.csv'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
