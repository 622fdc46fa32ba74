#!/usr/bin/env python3
"""Offline generalization experiment: train on eddies, test on jets.

Generates an eddy training set and a jet test set at 128->32 coarsening,
trains capacity-matched closures, and prints the per-layer R2 table.  With
the default budget (2000 train / 500 test samples, 50 epochs) this takes a
few hours on a desktop CPU; shrink --samples/--epochs for a quick look.
"""

import argparse
import os
import sys
import time

from qgc import evaluation, subgrid, training
from qgc.models import baseline_config, build_model, count_params


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--models", default="ffno,fcnn",
                    help="comma list from: fno, ffno, ffno-star, fcnn")
    ap.add_argument("--samples", type=int, default=2000)
    ap.add_argument("--test-samples", type=int, default=500)
    ap.add_argument("--epochs", type=int, default=50)
    ap.add_argument("--batch", type=int, default=16)
    ap.add_argument("--lr", type=float, default=1e-3)
    ap.add_argument("--interval", type=int, default=50,
                    help="coarse steps between samples")
    ap.add_argument("--workers", type=int,
                    default=int(os.environ.get("QGC_THREADS", "2")))
    ap.add_argument("--out-dir", default="runs/offline-trend")
    args = ap.parse_args(argv)

    os.makedirs(args.out_dir, exist_ok=True)
    t0 = time.time()

    def log(msg):
        print(f"[{time.time() - t0:7.0f}s] {msg}", file=sys.stderr, flush=True)

    train_path = os.path.join(args.out_dir, "eddy_train.qgds")
    if not os.path.exists(train_path):
        log(f"generating {args.samples} eddy training samples (128->32)")
        d = subgrid.generate_dataset("eddy", n_sims=2, n_samples=args.samples,
                                     factor=4, seed=101, nx_fine=128,
                                     sample_interval=args.interval,
                                     workers=args.workers)
        subgrid.write_dataset(d, train_path)
    test_path = os.path.join(args.out_dir, "jet_test.qgds")
    if not os.path.exists(test_path):
        log(f"generating {args.test_samples} jet test samples")
        d = subgrid.generate_dataset("jet", n_sims=2, n_samples=args.test_samples,
                                     factor=4, seed=202, nx_fine=128,
                                     sample_interval=args.interval,
                                     workers=args.workers)
        subgrid.write_dataset(d, test_path)

    train_set = subgrid.read_dataset(train_path)
    test_set = subgrid.read_dataset(test_path)
    cfg = training.TrainConfig(epochs=args.epochs, batch_size=args.batch,
                               lr=args.lr, seed=0, val_fraction=0.1)

    reports = []
    for name in args.models.split(","):
        name = name.strip()
        ckpt = os.path.join(args.out_dir, f"{name}.qgck")
        if os.path.exists(ckpt):
            log(f"{name}: reusing checkpoint {ckpt}")
            model, stats = training.load_checkpoint(ckpt)
        else:
            model = build_model(baseline_config(name), seed=0)
            log(f"{name}: training {count_params(model):,} params")
            model, hist = training.train(
                model, train_set, cfg, checkpoint_path=ckpt,
                log=lambda h: log(
                    f"  epoch {h['epoch']:3d} train {h['train_loss']:.4e} "
                    f"val {h['val_loss']:.4e}"),
            )
            _, stats = training.load_checkpoint(ckpt)
        rep = evaluation.offline_eval(model, stats, test_set)
        reports.append((name, rep))
        log(f"{name}: jet r2_upper={rep.r2_upper:.4f} r2_lower={rep.r2_lower:.4f}")

    evaluation.r2_to_csv(
        [evaluation.R2Report(r.r2_upper, r.r2_lower, r.n_samples, name)
         for name, r in reports],
        os.path.join(args.out_dir, "offline_r2.csv"),
    )
    print(f"\n{'model':10s} {'upper R2':>10s} {'lower R2':>10s}")
    for name, r in reports:
        print(f"{name:10s} {r.r2_upper:10.4f} {r.r2_lower:10.4f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
