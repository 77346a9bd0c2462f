"""Command-line interface: ``photoest <subcommand> ...``.

Every subcommand accepts ``--seed`` and ``--gamma-units``. The latter is the
emitter decay rate expressed in the units used for all rates and times on the
command line and in files; internally everything is rescaled to gamma = 1.
Tabular outputs are CSV with a header row plus a ``<out>.json`` sidecar
holding the seed, configuration and library versions.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from dataclasses import replace

import numpy as np

from photoest import bayes, bench, fisher, nnest, trajsim
from photoest.errors import DomainError
from photoest.qdyn import SystemParams

log = logging.getLogger("photoest")


def _floats(text: str) -> list:
    return [float(x) for x in text.split(",") if x.strip()]


def _common(p: argparse.ArgumentParser):
    p.add_argument("--seed", type=int, default=0, help="master random seed (default 0)")
    p.add_argument("--gamma-units", type=float, default=1.0, metavar="GAMMA",
                   help="decay rate in the units of all given rates and times (default 1)")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress")


def _to_unit_gamma(ds: trajsim.Dataset, gamma: float) -> trajsim.Dataset:
    if gamma == 1.0:
        return ds
    records = [
        trajsim.DelayRecord(
            r.delays * gamma,
            None if r.truth is None else SystemParams(r.truth.delta / gamma, r.truth.omega / gamma),
            r.allow_negative,
        )
        for r in ds.records
    ]
    return trajsim.Dataset(records, replace(ds.meta, gamma=1.0))


# --------------------------------------------------------------------------
# subcommands
# --------------------------------------------------------------------------


def cmd_simulate(args):
    g = args.gamma_units
    noise = trajsim.NoiseConfig(args.sigma_tau, args.sigma_y, not args.no_clip)
    if args.delta is not None:
        omega = args.omega if args.omega is not None else g
        params = SystemParams(args.delta, omega, g)
        ds = trajsim.generate_at(params, args.count, args.n_clicks, noise, args.seed,
                                 args.method, args.dt)
    else:
        if args.box == "2d":
            ranges, fixed = dict(trajsim.RANGES_2D), {}
        else:
            ranges, fixed = dict(trajsim.RANGES_1D), dict(trajsim.FIXED_1D)
        ranges = {k: (lo * g, hi * g) for k, (lo, hi) in ranges.items()}
        fixed = {k: v * g for k, v in fixed.items()}
        if args.delta_range:
            ranges["delta"] = tuple(args.delta_range)
        if args.omega_range:
            ranges["omega"] = tuple(args.omega_range)
            fixed.pop("omega", None)
        elif args.omega is not None:
            ranges.pop("omega", None)
            fixed["omega"] = args.omega
        ds = trajsim.generate_dataset(ranges, fixed, args.count, args.n_clicks, noise,
                                      args.seed, args.method, g, args.dt)
    trajsim.write_dataset(ds, args.out)
    if args.csv:
        trajsim.export_csv(ds, args.csv)
    bench.write_sidecar(args.out, vars(args))
    log.info("wrote %d records to %s", len(ds), args.out)


def cmd_train(args):
    ds = _to_unit_gamma(trajsim.read_dataset(args.dataset), args.gamma_units)
    cfg = nnest.TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
                            sigma_y=args.sigma_y / args.gamma_units, seed=args.seed)

    def progress(epoch, tr, va):
        log.info("epoch %d train_msle=%.6g val_msle=%.6g", epoch, tr, va)

    model, history = nnest.train(ds, cfg, args.arch, log=progress)
    nnest.save_model(model, args.out)
    hist_path = args.history or f"{args.out}.loss.csv"
    history.to_csv(hist_path)
    bench.write_sidecar(hist_path, vars(args))
    log.info("saved model to %s, loss history to %s", args.out, hist_path)


def cmd_infer(args):
    g = args.gamma_units
    ds = trajsim.read_dataset(args.dataset)
    delays = ds.delays() * g  # in units of 1/gamma
    if args.model:
        model = nnest.load_model(args.model)
        est = nnest.predict(model, delays)
        method = "nn"
    elif args.bayes or args.classical:
        dims = args.bayes or args.classical
        kind = "bayes" if args.bayes else "classical"
        n_grid = args.n_grid or (bayes.N_GRID_1D if dims == "1d" else bayes.N_GRID_2D)
        if dims == "1d":
            omega = (args.omega if args.omega is not None else g) / g
            if kind == "bayes":
                mean, mode = bayes.batch_estimates_1d(delays, n_grid=n_grid, fixed_omega=omega,
                                                      drop_nonpositive=args.drop_nonpositive)
            else:
                mean, mode = bayes.batch_classical_1d(delays, n_grid=n_grid, fixed_omega=omega)
            mean, mode = mean[:, None], mode[:, None]
        else:
            if kind == "bayes":
                mean, mode = bayes.batch_estimates_2d(delays, n_grid=n_grid,
                                                      drop_nonpositive=args.drop_nonpositive)
            else:
                mean, mode = bayes.batch_classical_2d(delays, n_grid=n_grid)
        est = mode if args.estimator == "map" else mean
        method = f"{kind}-{args.estimator}"
    else:
        raise DomainError("choose one of --model, --bayes or --classical")
    est = np.asarray(est, dtype=float) * g
    names = ["delta_hat", "omega_hat"][: est.shape[1]]
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        has_truth = bool(ds.records) and ds.records[0].truth is not None
        w.writerow(["record"] + (["delta", "omega"] if has_truth else []) + names)
        for i, row in enumerate(est):
            lead = [ds.records[i].truth.delta, ds.records[i].truth.omega] if has_truth else []
            w.writerow([i] + [repr(float(x)) for x in lead] + [repr(float(x)) for x in row])
    bench.write_sidecar(args.out, {**vars(args), "method": method})


def _grid_from_args(args, noise=None):
    """Validation grid in units of gamma."""
    g = args.gamma_units
    per = args.per_point
    if args.grid == "2d":
        return bench.grid_2d(args.n_points, per, noise)
    if args.deltas:
        return bench.grid_at([d / g for d in _floats(args.deltas)], args.omega / g, per, noise)
    return bench.grid_1d(args.n_points, 0.0, 2.1, args.omega / g, per, noise)


def cmd_bench(args):
    names = [s.strip() for s in args.estimators.split(",") if s.strip()]
    model = nnest.load_model(args.model) if args.model else None
    g = args.gamma_units
    grid = _grid_from_args(args, trajsim.NoiseConfig(sigma_tau=args.sigma_tau * g))

    def progress(k, n):
        log.info("grid point %d/%d", k, n)

    tables = bench.run_validation(grid, names, model, args.seed, args.bayes_grid, progress=progress)
    for t in tables.values():
        t.points, t.rmse, t.bias = t.points * g, t.rmse * g, t.bias * g
    bench.write_tables(tables, args.out)
    meta = vars(args)
    if "bayes" in tables:
        meta["ratios_vs_bayes"] = {
            n: bench.compare_tables(t, tables["bayes"]).ratio_of_means
            for n, t in tables.items() if n != "bayes"
        }
    bench.write_sidecar(args.out, meta)


def cmd_fisher(args):
    g = args.gamma_units
    lo, hi, n = args.delta_grid
    theta = np.linspace(lo / g, hi / g, int(n))
    omega = (args.omega if args.omega is not None else g) / g
    curve = None
    if args.per_point > 0:
        model = nnest.load_model(args.model) if args.model else None
        grid = bench.grid_at(theta, omega, args.per_point)
        tables = bench.run_validation(grid, [args.estimator], model, args.seed, keep_estimates=True)
        est = tables[args.estimator].estimates[:, :, 0]
        curve = fisher.empirical_bias(est.ravel(), np.repeat(theta, est.shape[1]), min_samples=1)
    report = fisher.fisher_report(theta, omega, args.n_clicks, curve, args.eta, step=args.step)
    if g != 1.0:
        report = fisher.FisherReport(
            report.theta_grid * g, report.fisher / g**2, report.qfi / g**2, report.bias * g,
            report.bias_slope, report.crb_rmse * g, report.qcrb_rmse * g,
            report.crb_var * g**2, report.qcrb_var * g**2, report.eta,
        )
    report.to_csv(args.out)
    bench.write_sidecar(args.out, vars(args))


def cmd_noise_sweep(args):
    if (args.sigma_tau_list is None) == (args.sigma_y_list is None):
        raise DomainError("give exactly one of --sigma-tau-list or --sigma-y-list")
    kind = "tau" if args.sigma_tau_list is not None else "y"
    sigmas = _floats(args.sigma_tau_list if kind == "tau" else args.sigma_y_list)
    if args.gamma_units != 1.0:
        sigmas = [s * args.gamma_units if kind == "tau" else s / args.gamma_units for s in sigmas]
    grid = _grid_from_args(args)
    rows = bench.noise_sweep(kind, sigmas, grid, args.count, args.epochs, args.seed,
                             batch_size=args.batch)
    bench.write_rows(rows, args.out)
    bench.write_sidecar(args.out, vars(args))


# --------------------------------------------------------------------------
# parser
# --------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="photoest",
        description="Estimate detuning and Rabi frequency of a driven two-level emitter "
                    "from photon-counting delays.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="generate a dataset of delay records")
    _common(p)
    p.add_argument("--delta", type=float, help="fixed detuning (otherwise sampled from the box)")
    p.add_argument("--omega", type=float, help="fixed Rabi frequency (default gamma)")
    p.add_argument("--box", choices=["1d", "2d"], default="1d",
                   help="training box for random truths: 1d delta in [0,5], omega=1; "
                        "2d delta in [0,3], omega in [0.25,5]")
    p.add_argument("--delta-range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--omega-range", type=float, nargs=2, metavar=("LO", "HI"))
    p.add_argument("--n-clicks", type=int, default=trajsim.DEFAULT_N_CLICKS)
    p.add_argument("--count", type=int, default=1000)
    p.add_argument("--method", choices=["iid", "euler"], default="iid")
    p.add_argument("--dt", type=float, default=trajsim.DEFAULT_DT, help="Euler step (1/gamma)")
    p.add_argument("--sigma-tau", type=float, default=0.0, help="timing jitter std")
    p.add_argument("--sigma-y", type=float, default=0.0,
                   help="target noise std recorded for training")
    p.add_argument("--no-clip", action="store_true", help="keep negative jittered delays")
    p.add_argument("--out", required=True)
    p.add_argument("--csv", help="also export records as CSV")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", help="train the histogram-dense estimator")
    _common(p)
    p.add_argument("--dataset", required=True)
    p.add_argument("--arch", choices=["1d", "2d"], default="1d")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=12800)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--sigma-y", type=float, default=0.0, help="Gaussian noise on targets")
    p.add_argument("--out", required=True, help="model file")
    p.add_argument("--history", help="loss history CSV (default MODEL.loss.csv)")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("infer", help="estimate parameters for every record of a dataset")
    _common(p)
    p.add_argument("--dataset", required=True)
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--model")
    src.add_argument("--bayes", choices=["1d", "2d"])
    src.add_argument("--classical", choices=["1d", "2d"])
    p.add_argument("--estimator", choices=["mean", "map"], default="mean")
    p.add_argument("--omega", type=float, help="known Rabi frequency for 1d inference")
    p.add_argument("--n-grid", type=int)
    p.add_argument("--drop-nonpositive", action="store_true",
                   help="ignore zero delays in the exact likelihood")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_infer)

    p = sub.add_parser("bench", help="paired RMSE/bias validation on a parameter grid")
    _common(p)
    p.add_argument("--grid", choices=["1d", "2d"], default="1d")
    p.add_argument("--n-points", type=int, default=40)
    p.add_argument("--deltas", help="comma-separated delta values instead of the uniform grid")
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--per-point", type=int, default=1000)
    p.add_argument("--estimators", default="bayes,classical",
                   help=f"comma-separated subset of {','.join(bench.ESTIMATORS)}")
    p.add_argument("--model")
    p.add_argument("--bayes-grid", type=int)
    p.add_argument("--sigma-tau", type=float, default=0.0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("fisher", help="Fisher information, QFI and biased Cramer-Rao bounds")
    _common(p)
    p.add_argument("--delta-grid", type=float, nargs=3, default=[0.0, 2.1, 40],
                   metavar=("LO", "HI", "N"))
    p.add_argument("--omega", type=float)
    p.add_argument("--n-clicks", type=int, default=48)
    p.add_argument("--step", type=float, default=fisher.DEFAULT_STEP)
    p.add_argument("--eta", type=int, default=1)
    p.add_argument("--per-point", type=int, default=0,
                   help="trajectories per point for the empirical bias (0: unbiased bounds)")
    p.add_argument("--estimator", choices=list(bench.ESTIMATORS), default="bayes")
    p.add_argument("--model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fisher)

    p = sub.add_parser("noise-sweep", help="retrain and validate across noise levels")
    _common(p)
    grp = p.add_mutually_exclusive_group(required=True)
    grp.add_argument("--sigma-tau-list", help="comma-separated jitter levels")
    grp.add_argument("--sigma-y-list", help="comma-separated target-noise levels")
    p.add_argument("--count", type=int, default=200_000)
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--batch", type=int, default=12800)
    p.add_argument("--grid", choices=["1d"], default="1d")
    p.add_argument("--n-points", type=int, default=40)
    p.add_argument("--deltas")
    p.add_argument("--omega", type=float, default=1.0)
    p.add_argument("--per-point", type=int, default=1000)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_noise_sweep)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    func = args.func
    try:
        func(args)
    except (DomainError, ValueError, OSError) as exc:
        print(f"photoest {args.command}: error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
