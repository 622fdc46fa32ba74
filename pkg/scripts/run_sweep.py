#!/usr/bin/env python3
"""FFNO hyperparameter sensitivity grid (width x modes x layers).

Thin wrapper over ``qgc sweep`` with the defaults used for the
sensitivity-analysis figure layout; expects datasets from
run_offline_trend.py (or ``qgc generate``).
"""

import argparse
import sys

from qgc.cli import main as qgc_main


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--data", default="runs/offline-trend/eddy_train.qgds")
    ap.add_argument("--test", default="runs/offline-trend/jet_test.qgds")
    ap.add_argument("--widths", default="32,64,128")
    ap.add_argument("--modes", default="8,16")
    ap.add_argument("--layers", default="4,8")
    ap.add_argument("--epochs", type=int, default=20)
    ap.add_argument("--out-dir", default="runs/sweep")
    args = ap.parse_args(argv)
    return qgc_main([
        "sweep", "--model", "ffno", "--data", args.data, "--test", args.test,
        "--widths", args.widths, "--modes", args.modes, "--layers", args.layers,
        "--epochs", str(args.epochs), "--out-dir", args.out_dir,
    ])


if __name__ == "__main__":
    sys.exit(main())
