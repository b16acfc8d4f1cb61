#!/usr/bin/env python3
"""Corrective-term fan: adjustment curves over a grid of maturities.

Exports Adj(T, K) for the positive-correlation constant-vol setup; with
the sign flipped in the config the same run produces the negative fan.
"""

import pathlib
import sys

from hybridlv import cli

ROOT = pathlib.Path(__file__).resolve().parents[1]


def main() -> int:
    config = ROOT / "configs" / "corrective_terms_rho_pos.yaml"
    out = ROOT / "out" / "corrective_terms_rho_pos"
    return cli.run("corrective-terms", config_path=str(config), out_dir=str(out))


if __name__ == "__main__":
    sys.exit(main())
