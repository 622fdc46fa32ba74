"""Command-line front end: the full pipeline behind one executable.

Subcommands: simulate, generate, train, eval-offline, eval-online,
bench-speed, sweep.  Flags override values from ``--config`` files; every
run writes a ``<out>.manifest`` echoing the fully resolved configuration.
Progress goes to stderr, data to files.  Exit codes: 0 success, 2 config,
3 io/format, 4 numerical blow-up, 5 shape/channel mismatch.

``QGC_THREADS`` bounds worker threads for parallel simulations and sweep
cells.
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from . import closures, evaluation, qgmodel, subgrid, training
from .config import (
    RunConfig,
    closure_from_config,
    model_params_from_config,
    parse_config,
)
from .errors import BlowUpError, ConfigError, FormatError, MismatchError
from .models import baseline_config, build_model, count_params
from .subgrid import atomic_write


def _log(msg: str):
    print(msg, file=sys.stderr, flush=True)


def _threads() -> int:
    try:
        return max(1, int(os.environ.get("QGC_THREADS", "1")))
    except ValueError:
        raise ConfigError("QGC_THREADS must be an integer")


def _load_config(args) -> RunConfig:
    rc = parse_config(args.config) if args.config else RunConfig()
    for attr, sec_key in getattr(args, "_overrides", []):
        v = getattr(args, attr, None)
        if v is not None:
            rc.set(*sec_key, v)
    rc.validate()
    return rc


def _write_manifest(rc: RunConfig, out_path: str):
    atomic_write(out_path + ".manifest", rc.manifest_text().encode())


def _add_common(sp, overrides):
    sp.add_argument("--config", help="INI config file")
    sp.set_defaults(_overrides=overrides)


def cmd_simulate(args) -> int:
    rc = _load_config(args)
    p = model_params_from_config(rc)
    closure = closure_from_config(rc)
    sim = rc.sections["simulation"]
    _log(f"simulate: regime={sim['regime']} nx={p.nx} steps={sim['steps']} "
         f"seed={sim['seed']}")
    state, snaps = qgmodel.simulate(
        p, sim["steps"], closure=closure,
        sample_every=sim["sample_every"], seed=sim["seed"],
    )
    g = qgmodel.make_grid(p)
    from .spectral import inverse_transform

    q = inverse_transform(state.qh, g)
    buf = _npy_bytes(q)
    atomic_write(args.out, buf)
    _write_manifest(rc, args.out)
    _log(f"simulate: wrote final q {q.shape} to {args.out}; "
         f"CFL={qgmodel.cfl_number(state, p, g):.3f}; {len(snaps)} snapshots")
    return 0


def _npy_bytes(arr: np.ndarray) -> bytes:
    import io

    bio = io.BytesIO()
    np.save(bio, arr)
    return bio.getvalue()


def cmd_generate(args) -> int:
    rc = _load_config(args)
    gen = rc.sections["generate"]
    sim = rc.sections["simulation"]
    _log(f"generate: regime={sim['regime']} sims={gen['sims']} "
         f"samples={gen['samples']} factor={gen['factor']} seed={sim['seed']}")
    d = subgrid.generate_dataset(
        regime=sim["regime"], n_sims=gen["sims"], n_samples=gen["samples"],
        factor=gen["factor"], seed=sim["seed"], nx_fine=gen["nx_fine"],
        sample_interval=gen["interval"], workers=_threads(),
    )
    subgrid.write_dataset(d, args.out)
    _write_manifest(rc, args.out)
    _log(f"generate: wrote {len(d)} samples at H={d.resolution} to {args.out}")
    return 0


def cmd_train(args) -> int:
    rc = _load_config(args)
    tr = rc.sections["train"]
    data = subgrid.read_dataset(args.data)
    cfg = training.TrainConfig(
        epochs=tr["epochs"], batch_size=tr["batch"], lr=tr["lr"],
        seed=tr["seed"], val_fraction=tr["val_fraction"],
        patience=tr["patience"], weight_decay=tr["weight_decay"],
    )
    mc = baseline_config(tr["model"])
    model = build_model(mc, seed=tr["seed"])
    _log(f"train: {tr['model']} ({count_params(model):,} params) on "
         f"{len(data)} samples, {cfg.epochs} epochs")
    model, history = training.train(
        model, data, cfg, checkpoint_path=args.out,
        log=lambda h: _log(f"  epoch {h['epoch']:3d}: train {h['train_loss']:.4e} "
                           f"val {h['val_loss']:.4e}"),
    )
    _write_manifest(rc, args.out)
    return 0


def cmd_eval_offline(args) -> int:
    rc = _load_config(args)
    model, stats = training.load_checkpoint(args.checkpoint)
    data = subgrid.read_dataset(args.data)
    report = evaluation.offline_eval(model, stats, data)
    evaluation.r2_to_csv([report], args.out)
    _write_manifest(rc, args.out)
    _log(f"eval-offline: r2_upper={report.r2_upper:.4f} "
         f"r2_lower={report.r2_lower:.4f} ({report.n_samples} samples)")
    return 0


def cmd_eval_online(args) -> int:
    rc = _load_config(args)
    ev = rc.sections["evaluation"]
    gen = rc.sections["generate"]
    p_fine = model_params_from_config(rc, nx=gen["nx_fine"])
    factor = gen["factor"]
    closure = closure_from_config(rc)
    _log(f"eval-online: reference hires nx={p_fine.nx}, factor={factor}")
    ref, p_c = evaluation.reference_diagnostics(
        p_fine, factor, ev["steps"] * factor, seed=ev["reference_seed"],
        sample_every=ev["sample_every"] * factor, spinup_frac=ev["spinup_frac"],
    )
    _log(f"eval-online: closure={rc.get('closure', 'kind')} coarse nx={p_c.nx}")
    rep = evaluation.online_eval(
        closure, p_c, ref, ev["steps"], seed=rc.get("simulation", "seed"),
        sample_every=ev["sample_every"], spinup_frac=ev["spinup_frac"],
    )
    curves = {"reference(hires)": ref}
    rows = []
    if rep.diagnostics is not None:
        curves[f"closure={rc.get('closure', 'kind')}"] = rep.diagnostics
        rows = sorted(rep.distances.items())
    evaluation.spectra_to_csv(curves, args.out)
    base, _ = os.path.splitext(args.out)
    evaluation.plot_spectra(curves, base + ".svg")
    with open(base + ".distances.csv", "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["diagnostic", "distance", "blew_up", "steps_completed"])
        for name, dist in rows:
            w.writerow([name, repr(dist), rep.blew_up, rep.steps_completed])
        if not rows:
            w.writerow(["-", "", rep.blew_up, rep.steps_completed])
    _write_manifest(rc, args.out)
    status = "BLEW UP" if rep.blew_up else "ok"
    _log(f"eval-online: {status}; distances: " +
         ", ".join(f"{k}={v:.3f}" for k, v in rows))
    return 0


def cmd_bench_speed(args) -> int:
    rc = _load_config(args)
    gen = rc.sections["generate"]
    p_fine = model_params_from_config(rc, nx=gen["nx_fine"])
    cls: dict[str, object] = {}
    for kind in args.closures.split(",") if args.closures else []:
        kind = kind.strip()
        if not kind:
            continue
        sub = RunConfig()
        sub.sections = {k: dict(v) for k, v in rc.sections.items()}
        sub.set("closure", "kind", kind)
        if kind == "neural" and args.checkpoint:
            sub.set("closure", "checkpoint_path", args.checkpoint)
        sub.validate()
        cls[kind] = closure_from_config(sub)
    _log(f"bench-speed: nx={p_fine.nx} factor={gen['factor']} "
         f"steps={args.steps} closures={sorted(cls)}")
    rep = evaluation.speed_benchmark(p_fine, gen["factor"], cls, args.steps,
                                     seed=rc.get("simulation", "seed"))
    with open(args.out, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["run", "steps", "wall_time_s", "speedup_vs_hires"])
        w.writerow(["hires", rep.n_steps * gen["factor"], repr(rep.t_hires), 1.0])
        w.writerow(["lores", rep.n_steps, repr(rep.t_lores),
                    repr(rep.speedups["lores"])])
        for name, t in rep.t_param.items():
            w.writerow([f"lores+{name}", rep.n_steps, repr(t),
                        repr(rep.speedups[name])])
    _write_manifest(rc, args.out)
    for name, s in rep.speedups.items():
        _log(f"bench-speed: {name}: speedup {s:.2f}")
    return 0


def cmd_sweep(args) -> int:
    rc = _load_config(args)
    tr = rc.sections["train"]
    data = subgrid.read_dataset(args.data)
    test = subgrid.read_dataset(args.test) if args.test else None
    widths = [int(w) for w in args.widths.split(",")]
    modes = [int(m) for m in args.modes.split(",")]
    layers = [int(n) for n in args.layers.split(",")]
    cells = [(w, m, n) for w in widths for m in modes for n in layers]
    _log(f"sweep: {len(cells)} cells over widths={widths} modes={modes} "
         f"layers={layers}")
    cfg = training.TrainConfig(
        epochs=tr["epochs"], batch_size=tr["batch"], lr=tr["lr"],
        seed=tr["seed"], val_fraction=tr["val_fraction"], patience=tr["patience"],
    )
    from .models import ModelConfig

    os.makedirs(args.out_dir, exist_ok=True)

    def run_cell(cell):
        w, m, n = cell
        mc = ModelConfig(kind=args.model, width=w, n_layers=n, modes=m,
                         share_weights=args.model == "ffno")
        model = build_model(mc, seed=tr["seed"])
        path = os.path.join(args.out_dir, f"{args.model}_w{w}_m{m}_n{n}.qgck")
        model, _ = training.train(model, data, cfg, checkpoint_path=path)
        row = {"width": w, "modes": m, "layers": n,
               "params": count_params(model)}
        if test is not None:
            _, stats = training.load_checkpoint(path)
            rep = evaluation.offline_eval(model, stats, test)
            row.update(r2_upper=rep.r2_upper, r2_lower=rep.r2_lower)
        _log(f"sweep: done w={w} m={m} n={n}: {row}")
        return row

    workers = _threads()
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            rows = list(pool.map(run_cell, cells))
    else:
        rows = [run_cell(c) for c in cells]
    fields = ["width", "modes", "layers", "params", "r2_upper", "r2_lower"]
    with open(os.path.join(args.out_dir, "sweep.csv"), "w", newline="") as f:
        w = csv.DictWriter(f, fieldnames=fields)
        w.writeheader()
        for row in rows:
            w.writerow({k: row.get(k, "") for k in fields})
    _write_manifest(rc, os.path.join(args.out_dir, "sweep.csv"))
    return 0


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="qgc",
        description="two-layer QG subgrid-closure laboratory",
    )
    sub = ap.add_subparsers(dest="command", required=True)

    sp = sub.add_parser("simulate", help="run one simulation")
    _add_common(sp, [("regime", ("simulation", "regime")),
                     ("nx", ("simulation", "nx")),
                     ("steps", ("simulation", "steps")),
                     ("seed", ("simulation", "seed")),
                     ("closure", ("closure", "kind"))])
    sp.add_argument("--regime", choices=["eddy", "jet"])
    sp.add_argument("--nx", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--closure", choices=list(
        ("none", "smagorinsky", "biharmonic", "backscatter", "zb", "neural")))
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_simulate)

    sp = sub.add_parser("generate", help="generate a training dataset")
    _add_common(sp, [("regime", ("simulation", "regime")),
                     ("seed", ("simulation", "seed")),
                     ("sims", ("generate", "sims")),
                     ("samples", ("generate", "samples")),
                     ("factor", ("generate", "factor")),
                     ("nx_fine", ("generate", "nx_fine")),
                     ("interval", ("generate", "interval"))])
    sp.add_argument("--regime", choices=["eddy", "jet", "mixed"])
    sp.add_argument("--sims", type=int)
    sp.add_argument("--samples", type=int)
    sp.add_argument("--factor", type=int)
    sp.add_argument("--nx-fine", dest="nx_fine", type=int)
    sp.add_argument("--interval", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_generate)

    sp = sub.add_parser("train", help="train a neural closure")
    _add_common(sp, [("model", ("train", "model")),
                     ("epochs", ("train", "epochs")),
                     ("batch", ("train", "batch")),
                     ("lr", ("train", "lr")),
                     ("seed", ("train", "seed"))])
    sp.add_argument("--data", required=True)
    sp.add_argument("--model", choices=["fno", "ffno", "ffno-star", "fcnn"])
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval-offline", help="offline R2 on a test dataset")
    _add_common(sp, [])
    sp.add_argument("--checkpoint", required=True)
    sp.add_argument("--data", required=True)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval_offline)

    sp = sub.add_parser("eval-online", help="online spectra vs coarsened hires")
    _add_common(sp, [("regime", ("simulation", "regime")),
                     ("seed", ("simulation", "seed")),
                     ("closure", ("closure", "kind")),
                     ("checkpoint", ("closure", "checkpoint_path")),
                     ("factor", ("generate", "factor")),
                     ("nx_fine", ("generate", "nx_fine")),
                     ("steps", ("evaluation", "steps"))])
    sp.add_argument("--regime", choices=["eddy", "jet"])
    sp.add_argument("--closure")
    sp.add_argument("--checkpoint")
    sp.add_argument("--factor", type=int)
    sp.add_argument("--nx-fine", dest="nx_fine", type=int)
    sp.add_argument("--steps", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_eval_online)

    sp = sub.add_parser("bench-speed", help="wall-time speedup harness")
    _add_common(sp, [("regime", ("simulation", "regime")),
                     ("factor", ("generate", "factor")),
                     ("nx_fine", ("generate", "nx_fine")),
                     ("seed", ("simulation", "seed"))])
    sp.add_argument("--regime", choices=["eddy", "jet"])
    sp.add_argument("--factor", type=int)
    sp.add_argument("--nx-fine", dest="nx_fine", type=int)
    sp.add_argument("--steps", type=int, default=500)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--closures", default="",
                    help="comma list: smagorinsky,biharmonic,backscatter,zb,neural")
    sp.add_argument("--checkpoint")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_bench_speed)

    sp = sub.add_parser("sweep", help="hyperparameter grid of trained models")
    _add_common(sp, [("epochs", ("train", "epochs")),
                     ("batch", ("train", "batch")),
                     ("lr", ("train", "lr")),
                     ("seed", ("train", "seed"))])
    sp.add_argument("--model", default="ffno", choices=["fno", "ffno"])
    sp.add_argument("--data", required=True)
    sp.add_argument("--test")
    sp.add_argument("--widths", required=True)
    sp.add_argument("--modes", required=True)
    sp.add_argument("--layers", required=True)
    sp.add_argument("--epochs", type=int)
    sp.add_argument("--batch", type=int)
    sp.add_argument("--lr", type=float)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out-dir", required=True)
    sp.set_defaults(func=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as e:
        _log(f"config error: {e}")
        return 2
    except (FormatError, OSError) as e:
        _log(f"io/format error: {e}")
        return 3
    except BlowUpError as e:
        _log(f"numerical blow-up: {e}")
        return 4
    except MismatchError as e:
        _log(f"mismatch error: {e}")
        return 5
    except ValueError as e:
        _log(f"config error: {e}")
        return 2
    except Exception:
        traceback.print_exc()
        return 1


if __name__ == "__main__":
    sys.exit(main())
