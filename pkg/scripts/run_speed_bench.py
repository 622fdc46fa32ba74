#!/usr/bin/env python3
"""Wall-time speedup table: high-res vs parameterized low-res runs."""

import argparse
import sys

from qgc import closures, evaluation, qgmodel, training


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--regime", default="jet", choices=["eddy", "jet"])
    ap.add_argument("--nx-fine", type=int, default=128)
    ap.add_argument("--factor", type=int, default=4)
    ap.add_argument("--steps", type=int, default=1000, help="coarse steps")
    ap.add_argument("--checkpoint", help="adds a neural-closure row")
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    runs = {
        "smagorinsky": closures.make_smagorinsky(),
        "biharmonic": closures.make_biharmonic(),
        "backscatter": closures.make_backscatter(),
        "zb": closures.make_zb(),
    }
    if args.checkpoint:
        model, stats = training.load_checkpoint(args.checkpoint)
        runs["neural"] = closures.make_neural(model, stats)

    p_fine = qgmodel.REGIMES[args.regime](nx=args.nx_fine)
    rep = evaluation.speed_benchmark(p_fine, args.factor, runs, args.steps,
                                     seed=args.seed)
    print(f"{'run':16s} {'wall[s]':>10s} {'speedup':>9s}")
    print(f"{'hires':16s} {rep.t_hires:10.2f} {1.0:9.2f}")
    print(f"{'lores':16s} {rep.t_lores:10.2f} {rep.speedups['lores']:9.2f}")
    for name, t in rep.t_param.items():
        print(f"{'lores+' + name:16s} {t:10.2f} {rep.speedups[name]:9.2f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
