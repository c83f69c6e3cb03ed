"""Command-line interface.

Subcommands: simulate, fit, evaluate, spectra, transform, portrait,
gridsearch, repro. Every flag has a config-file equivalent (JSON, strict
key checking) and flags override config values. Exit codes: 0 success,
2 configuration error, 3 numerical failure, 4 I/O error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import experiments
from .datasets import (
    AffineTransform, apply_transform, build_snapshots, delay_embed,
    embed_trajectories, split, standardize,
)
from .errors import ConfigError, KoopfuseError
from .evaluation import evaluate_model, grid_search, phase_portrait
from .solvers import (
    TrainConfig, finite_closure_theoretical_model, fit_direct_ocdmd,
    fit_nonlinear_statespace, fit_sequential_ocdmd, model_from_json,
)
from .spectral import (
    apply_affine_transform, eval_eigenfunctions, match_eigenpairs,
    modal_decomposition, pearson_correlation, state_grid,
)
from .systems import generate_dataset, make_system, trajectories_from_csv, trajectories_to_csv

NUMERICAL_ERRORS = (np.linalg.LinAlgError, FloatingPointError)

ALGO_FITTERS = {
    "direct": fit_direct_ocdmd,
    "sequential": fit_sequential_ocdmd,
    "baseline": fit_nonlinear_statespace,
}


def _default_seed():
    env = os.environ.get("KOOPFUSE_SEED")
    return int(env) if env else 0


def _load_json_arg(value, what):
    try:
        return json.loads(value)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"invalid JSON for {what}: {exc}") from exc


def _read_trajectories(path):
    return trajectories_from_csv(Path(path).read_text())


def _load_model(path):
    return model_from_json(Path(path).read_text())


def _write(path, text):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _train_config(args):
    return TrainConfig(
        learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
        seed=args.seed, early_stop_patience=args.patience,
        gradient_clip=args.clip, warm_start=not args.no_warm_start)


def _prepared_snapshots(args):
    """Load trajectories, split, embed, standardize per the shared flags."""
    trajs = _read_trajectories(args.data)
    train, val, test = split(trajs, seed=args.seed)
    n_d = args.n_delays
    if n_d > 1:
        train = embed_trajectories(train, n_d)
        val = embed_trajectories(val, n_d)
        test = embed_trajectories(test, n_d)
    snap_tr = build_snapshots(train)
    snap_va = build_snapshots(val)
    if args.no_standardize:
        return snap_tr, snap_va, test, None
    snap_tr, tf = standardize(snap_tr)
    return snap_tr, apply_transform(snap_va, tf), test, tf


SIMULATE_DEFAULTS = {
    "finite-closure": {"ic_box": [[5, 10], [5, 10]], "horizon": 30},
    "mems": {"ic_box": [[0, 2], [0, 2]], "horizon": 15.0},
    "actrep": {"ic_box": [[0.1, 1], [0.1, 1]], "horizon": 50.0},
}


def cmd_simulate(args):
    spec = make_system(args.system, ts=args.dt)
    defaults = SIMULATE_DEFAULTS[args.system]
    box = (_load_json_arg(args.ic_box, "--ic-box")
           if args.ic_box else defaults["ic_box"])
    horizon = args.horizon if args.horizon is not None else defaults["horizon"]
    trajs = generate_dataset(spec, args.n_traj, box, horizon, seed=args.seed)
    outdir = Path(args.out)
    _write(outdir / "trajectories.csv", trajectories_to_csv(trajs))
    _write(outdir / "system.json", spec.to_json())
    print(f"wrote {len(trajs)} trajectories ({len(trajs[0])} samples each) to {outdir}")
    return 0


def cmd_fit(args):
    if args.algo not in ALGO_FITTERS:
        raise ConfigError(f"unknown algorithm {args.algo!r}")
    hyper = _load_json_arg(args.hyper, "--hyper")
    if not isinstance(hyper, dict):
        raise ConfigError("--hyper must be a JSON object")
    snap_tr, snap_va, _, tf = _prepared_snapshots(args)
    cfg = _train_config(args)
    model = ALGO_FITTERS[args.algo](snap_tr, snap_va, hyper, cfg,
                                    transform=tf, n_delays=args.n_delays)
    _write(args.out, model.to_json())
    if args.log:
        history = model.fit_report.get("history", [])
        lines = ["epoch,train_loss,val_loss"]
        lines += [f"{e},{t:.17g},{v:.17g}" for e, t, v in history]
        _write(args.log, "\n".join(lines) + "\n")
    rep = model.fit_report
    def _fmt(key):
        value = rep.get(key)
        return f"{value:.6g}" if isinstance(value, float) else "n/a"

    print(f"fit {args.algo}: epochs_run={rep.get('epochs_run', 'n/a')} "
          f"train_loss={_fmt('train_loss')} val_loss={_fmt('val_loss')}")
    return 0


def cmd_evaluate(args):
    model = _load_model(args.model)
    trajs = _read_trajectories(args.data)
    if model.n_delays > 1:
        trajs = embed_trajectories(trajs, model.n_delays)
    rec = evaluate_model(model, trajs, horizon=args.horizon,
                         model_id=str(args.model), dataset_id=str(args.data))
    text = json.dumps(rec.to_dict(), indent=2)
    if args.out:
        _write(args.out, text)
    print(text)
    return 0


def _spectra_grid(args, model):
    if args.grid_low and args.grid_high:
        low = _load_json_arg(args.grid_low, "--grid-low")
        high = _load_json_arg(args.grid_high, "--grid-high")
    else:
        low = [-1.0] * model.n
        high = [1.0] * model.n
    return state_grid(low, high, args.resolution)


def cmd_spectra(args):
    model = _load_model(args.model)
    dec = modal_decomposition(model)
    grid = _spectra_grid(args, model)
    field = eval_eigenfunctions(dec, model.dictionary, grid)
    outdir = Path(args.out)
    payload = {
        "eigenvalues": [[lam.real, lam.imag] for lam in dec.eigenvalues],
        "modes_real": dec.modes.real.tolist(),
        "modes_imag": dec.modes.imag.tolist(),
    }
    rows = np.vstack([grid, field.values.real, field.values.imag])
    header = ([f"x{i + 1}" for i in range(model.n)]
              + [f"phi{i + 1}_re" for i in range(model.n_L)]
              + [f"phi{i + 1}_im" for i in range(model.n_L)])
    lines = [",".join(header)]
    lines += [",".join(f"{v:.17g}" for v in col) for col in rows.T]
    _write(outdir / "eigenfunctions.csv", "\n".join(lines) + "\n")
    if args.compare:
        if args.compare == "theoretical":
            tf = model.transform
            other = finite_closure_theoretical_model()
            if tf is not None:
                other = apply_affine_transform(other, tf)
        else:
            other = _load_model(args.compare)
        dec_o = modal_decomposition(other)
        field_o = eval_eigenfunctions(dec_o, other.dictionary, grid)
        pairing = match_eigenpairs(dec, dec_o, strict=False)
        # constant-in-both fields (the unit-eigenvalue pair) carry no
        # correlation information
        pairing = [(i, j) for i, j in pairing
                   if np.std(field.values[i].real) > 1e-12
                   or np.std(field_o.values[j].real) > 1e-12
                   or np.std(field.values[i].imag) > 1e-12
                   or np.std(field_o.values[j].imag) > 1e-12]
        rhos = pearson_correlation(field, field_o, pairing)
        payload["correlations"] = [
            {"lambda": [dec.eigenvalues[i].real, dec.eigenvalues[i].imag],
             "lambda_other": [dec_o.eigenvalues[j].real, dec_o.eigenvalues[j].imag],
             "rho": rho, "abs_rho": a}
            for (i, j), (rho, a) in zip(pairing, rhos)]
    _write(outdir / "spectra.json", json.dumps(payload, indent=2))
    print(f"eigenvalues: {[round(abs(l), 6) for l in dec.eigenvalues]}")
    return 0


def cmd_transform(args):
    model = _load_model(args.model)
    tf = AffineTransform(
        np.array(_load_json_arg(args.P, "--P"), dtype=float),
        np.array(_load_json_arg(args.b, "--b"), dtype=float),
        np.array(_load_json_arg(args.Q, "--Q"), dtype=float),
        np.array(_load_json_arg(args.c, "--c"), dtype=float))
    out = apply_affine_transform(model, tf)
    _write(args.out, out.to_json())
    print(f"transformed model written to {args.out} (n_L {model.n_L} -> {out.n_L})")
    return 0


def cmd_portrait(args):
    model = _load_model(args.model)
    refs = _read_trajectories(args.data)
    if model.n_delays > 1:
        refs = embed_trajectories(refs, model.n_delays)
    refs = refs[: args.n_ics]
    result = phase_portrait(model, [t.states[0] for t in refs],
                            args.n_steps, refs)
    outdir = Path(args.out)
    n = model.n
    lines = ["ic_id,step,source," + ",".join(f"x{i + 1}" for i in range(n))]
    for ic_id, (roll, ref) in enumerate(zip(result["rollouts"], refs)):
        for k, x in enumerate(roll):
            lines.append(f"{ic_id},{k + 1},model," + ",".join(f"{v:.17g}" for v in x))
        for k, x in enumerate(ref.states[1:len(roll) + 1]):
            lines.append(f"{ic_id},{k + 1},reference," + ",".join(f"{v:.17g}" for v in x))
    _write(outdir / "portrait.csv", "\n".join(lines) + "\n")
    _write(outdir / "portrait.json",
           json.dumps({"portrait_r2": result["portrait_r2"]}, indent=2))
    print(f"portrait r2 = {result['portrait_r2']:.6f}")
    return 0


def cmd_gridsearch(args):
    grid = _load_json_arg(args.grid, "--grid")
    if not isinstance(grid, dict):
        raise ConfigError("--grid must be a JSON object of lists")
    snap_tr, snap_va, test, tf = _prepared_snapshots(args)
    cfg = _train_config(args)
    best, results = grid_search(args.algo, grid, snap_tr, snap_va, cfg,
                                transform=tf, val_trajectories=None,
                                n_jobs=args.jobs)
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    fields = sorted({k for row in results for k in row})
    with open(outdir / "results.csv", "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=fields)
        writer.writeheader()
        writer.writerows(results)
    _write(outdir / "best_model.json", best.to_json())
    rec = evaluate_model(best, test)
    _write(outdir / "best_metrics.json", json.dumps(rec.to_dict(), indent=2))
    print(f"grid search: {len(results)} cells, best test r2_x_1step={rec.r2_x_1step:.4f}")
    return 0


def cmd_repro(args):
    outdir = Path(args.out)
    outdir.mkdir(parents=True, exist_ok=True)
    if args.experiment == "example1":
        report = experiments.run_example1(epochs=args.epochs or 2000)
        corr = experiments.eigenfunction_correlations(
            report["models"]["sequential"], report["transform"])
        payload = {k: report[k] for k in
                   ("direct", "sequential", "direct_restricted_min_r2_y",
                    "direct_restricted")}
        payload["eigenfunction_abs_rho"] = corr["abs_rho"]
    elif args.experiment == "mems":
        report = experiments.run_mems(epochs=args.epochs or 30000)
        payload = {k: report[k] for k in ("baseline", "direct", "sequential")}
    elif args.experiment == "actrep":
        report = experiments.run_actrep(epochs=args.epochs or 2000)
        payload = {"table": report["table"]}
    else:
        raise ConfigError(f"unknown experiment {args.experiment!r}")
    _write(outdir / f"{args.experiment}.json", json.dumps(payload, indent=2))
    print(json.dumps(payload, indent=2))
    return 0


def _add_train_flags(p):
    p.add_argument("--lr", type=float, default=0.1)
    p.add_argument("--epochs", type=int, default=20000)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--patience", type=int, default=500)
    p.add_argument("--clip", type=float, default=None)
    p.add_argument("--no-warm-start", action="store_true")
    p.add_argument("--no-standardize", action="store_true")
    p.add_argument("--n-delays", type=int, default=1)


def build_parser():
    parser = argparse.ArgumentParser(
        prog="koopfuse",
        description="Learn output-constrained Koopman operator models from "
                    "fused state/output time-series data.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, fn, needs=(), **kw):
        p = sub.add_parser(name, **kw)
        p.add_argument("--config", help="JSON config file; flags override its values")
        p.add_argument("--seed", type=int, default=None)
        p.set_defaults(fn=fn, _needs=tuple(needs))
        return p

    p = add("simulate", cmd_simulate, needs=("system", "out"),
            help="generate a benchmark dataset")
    p.add_argument("--system", choices=["finite-closure", "mems", "actrep"])
    p.add_argument("--n-traj", type=int, default=300)
    p.add_argument("--ic-box", default=None,
                   help='JSON bounds per coordinate, e.g. "[[5,10],[5,10]]"')
    p.add_argument("--horizon", type=float, default=None)
    p.add_argument("--dt", type=float, default=0.5)
    p.add_argument("--out", required=False)

    p = add("fit", cmd_fit, needs=("data", "algo", "hyper", "out"),
            help="fit a model on a trajectory CSV")
    p.add_argument("--data", required=False)
    p.add_argument("--algo", required=False, choices=sorted(ALGO_FITTERS))
    p.add_argument("--hyper", required=False, help="JSON hyperparameter object")
    p.add_argument("--out", required=False)
    p.add_argument("--log", default=None, help="optional training-history CSV")
    _add_train_flags(p)

    p = add("evaluate", cmd_evaluate, needs=("model", "data"),
            help="Table-1-style metrics for a model")
    p.add_argument("--model", required=False)
    p.add_argument("--data", required=False)
    p.add_argument("--horizon", type=int, default=None)
    p.add_argument("--out", default=None)

    p = add("spectra", cmd_spectra, needs=("model", "out"),
            help="modal decomposition and eigenfunctions")
    p.add_argument("--model", required=False)
    p.add_argument("--compare", default=None,
                   help="second model JSON, or 'theoretical'")
    p.add_argument("--grid-low", default=None)
    p.add_argument("--grid-high", default=None)
    p.add_argument("--resolution", type=int, default=50)
    p.add_argument("--out", required=False)

    p = add("transform", cmd_transform, needs=("model", "P", "b", "Q", "c", "out"),
            help="apply an affine coordinate change")
    p.add_argument("--model", required=False)
    p.add_argument("--P", required=False)
    p.add_argument("--b", required=False)
    p.add_argument("--Q", required=False)
    p.add_argument("--c", required=False)
    p.add_argument("--out", required=False)

    p = add("portrait", cmd_portrait, needs=("model", "data", "out"),
            help="phase-portrait rollouts vs reference")
    p.add_argument("--model", required=False)
    p.add_argument("--data", required=False)
    p.add_argument("--n-steps", type=int, default=100)
    p.add_argument("--n-ics", type=int, default=20)
    p.add_argument("--out", required=False)

    p = add("gridsearch", cmd_gridsearch, needs=("data", "algo", "grid", "out"),
            help="hyperparameter grid search")
    p.add_argument("--data", required=False)
    p.add_argument("--algo", required=False, choices=sorted(ALGO_FITTERS))
    p.add_argument("--grid", required=False, help="JSON object of value lists")
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--out", required=False)
    _add_train_flags(p)

    p = add("repro", cmd_repro, needs=("out",),
            help="run a named benchmark experiment")
    p.add_argument("experiment", choices=["example1", "mems", "actrep"])
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--out", required=False)
    return parser


def _explicit_dests(argv):
    """Destinations set explicitly on the command line (--some-flag[=v])."""
    dests = set()
    for token in argv:
        if token == "--":
            break
        if token.startswith("--"):
            dests.add(token[2:].split("=", 1)[0].replace("-", "_"))
    return dests


def _apply_config(args, argv):
    """Merge a JSON config file under explicit flags, strictly."""
    if not getattr(args, "config", None):
        return args
    data = json.loads(Path(args.config).read_text())
    if not isinstance(data, dict):
        raise ConfigError("config file must hold a JSON object")
    known = set(vars(args))
    unknown = [k for k in data if k.replace("-", "_") not in known]
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(sorted(unknown))}")
    explicit = _explicit_dests(argv)
    for key, value in data.items():
        dest = key.replace("-", "_")
        if dest not in explicit:
            setattr(args, dest, value)
    return args


def main(argv=None):
    if argv is None:
        argv = sys.argv[1:]
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        args = _apply_config(args, argv)
        missing = [k for k in getattr(args, "_needs", ())
                   if getattr(args, k, None) in (None, "")]
        if missing:
            raise ConfigError(
                "missing required option(s): "
                + ", ".join("--" + k.replace("_", "-") for k in missing))
        if args.seed is None:
            args.seed = _default_seed()
        return args.fn(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 2
    except NUMERICAL_ERRORS as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except KoopfuseError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
