#!/usr/bin/env python3
"""Online evaluation: parameterized coarse runs vs a coarsened fine run.

Produces the spectral-budget panels (CSV + SVG) for a set of closures on
one regime, mirroring the energy-diagnostics comparison figure.
"""

import argparse
import os
import sys
import time

from qgc import closures, evaluation, qgmodel, training


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--regime", default="eddy", choices=["eddy", "jet"])
    ap.add_argument("--nx-fine", type=int, default=128)
    ap.add_argument("--factor", type=int, default=4)
    ap.add_argument("--steps", type=int, default=4000,
                    help="coarse steps (fine run scales by factor)")
    ap.add_argument("--sample-every", type=int, default=20)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--checkpoint", help="adds a neural closure run")
    ap.add_argument("--closures", default="smagorinsky,biharmonic,backscatter,zb")
    ap.add_argument("--out-dir", default="runs/online-eval")
    args = ap.parse_args(argv)
    os.makedirs(args.out_dir, exist_ok=True)
    t0 = time.time()

    def log(msg):
        print(f"[{time.time() - t0:6.0f}s] {msg}", file=sys.stderr, flush=True)

    p_fine = qgmodel.REGIMES[args.regime](nx=args.nx_fine)
    log(f"reference: {args.regime} at {args.nx_fine}^2, factor {args.factor}")
    ref, p_c = evaluation.reference_diagnostics(
        p_fine, args.factor, args.steps * args.factor, seed=args.seed,
        sample_every=args.sample_every * args.factor,
    )

    runs = {"reference(hires)": ref}
    table = {}
    kinds = {
        "none": None,
        "smagorinsky": closures.make_smagorinsky(),
        "biharmonic": closures.make_biharmonic(),
        "backscatter": closures.make_backscatter(),
        "zb": closures.make_zb(),
    }
    wanted = ["none"] + [k.strip() for k in args.closures.split(",") if k.strip()]
    if args.checkpoint:
        model, stats = training.load_checkpoint(args.checkpoint)
        kinds["neural"] = closures.make_neural(model, stats)
        wanted.append("neural")
    for kind in wanted:
        log(f"coarse run: closure={kind}")
        rep = evaluation.online_eval(kinds[kind], p_c, ref, args.steps,
                                     seed=args.seed,
                                     sample_every=args.sample_every)
        if rep.blew_up:
            log(f"  {kind}: BLEW UP after {rep.steps_completed} steps")
        if rep.diagnostics is not None:
            runs[kind] = rep.diagnostics
        table[kind] = rep

    evaluation.spectra_to_csv(runs, os.path.join(args.out_dir, "spectra.csv"))
    evaluation.plot_spectra(runs, os.path.join(args.out_dir, "spectra.svg"),
                            title=f"{args.regime} {p_c.nx}^2 online diagnostics")
    print(f"{'closure':14s} {'blew_up':8s} " +
          " ".join(f"{n:>16s}" for n in evaluation.DIAGNOSTIC_NAMES))
    for kind, rep in table.items():
        dv = (["-"] * 5 if rep.distances is None
              else [f"{rep.distances[n]:.3f}" for n in evaluation.DIAGNOSTIC_NAMES])
        print(f"{kind:14s} {str(rep.blew_up):8s} " +
              " ".join(f"{v:>16s}" for v in dv))
    return 0


if __name__ == "__main__":
    sys.exit(main())
