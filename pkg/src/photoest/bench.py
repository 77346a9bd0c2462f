"""Paired RMSE/bias validation of estimators on a grid of true parameters."""

from __future__ import annotations

import csv
import json
import platform
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy
from scipy.stats import binomtest

from photoest import bayes
from photoest.errors import DomainError, GridMismatchError, MissingModelError
from photoest.nnest import HistDenseModel, TrainConfig, predict, train
from photoest.qdyn import SystemParams
from photoest.trajsim import (
    FIXED_1D,
    RANGES_1D,
    NoiseConfig,
    generate_at,
    generate_dataset,
)

ESTIMATORS = ("bayes", "bayes-map", "classical", "classical-map", "nn")


@dataclass
class ValidationGrid:
    deltas: np.ndarray
    omegas: np.ndarray
    trajectories_per_point: int = 1000
    n_clicks: int = 48
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    dims: int = 1
    gamma: float = 1.0

    def points(self) -> list:
        """(delta, omega) pairs in grid order: delta-major for 2D grids."""
        if self.dims == 1:
            return [(float(d), float(self.omegas[0])) for d in self.deltas]
        return [(float(d), float(o)) for d in self.deltas for o in self.omegas]


def grid_1d(n: int = 40, lo: float = 0.0, hi: float = 2.1, omega: float = 1.0,
            per_point: int = 1000, noise: NoiseConfig | None = None) -> ValidationGrid:
    return ValidationGrid(np.linspace(lo, hi, n), np.array([omega]), per_point,
                          noise=noise or NoiseConfig(), dims=1)


def grid_2d(n: int = 40, per_point: int = 1000, noise: NoiseConfig | None = None) -> ValidationGrid:
    return ValidationGrid(np.linspace(0.0, 2.1, n), np.linspace(0.25, 2.1, n), per_point,
                          noise=noise or NoiseConfig(), dims=2)


def grid_at(deltas, omega: float = 1.0, per_point: int = 1000,
            noise: NoiseConfig | None = None) -> ValidationGrid:
    return ValidationGrid(np.asarray(deltas, dtype=float), np.array([omega]), per_point,
                          noise=noise or NoiseConfig(), dims=1)


@dataclass
class MetricTable:
    """Per-grid-point errors of one estimator. Arrays are (points, dims)."""

    estimator: str
    points: np.ndarray
    rmse: np.ndarray
    bias: np.ndarray
    n_samples: np.ndarray
    estimates: np.ndarray | None = None

    @property
    def rmse_total(self) -> np.ndarray:
        return np.sqrt(np.sum(self.rmse**2, axis=1))

    @property
    def variance(self) -> np.ndarray:
        return self.rmse**2 - self.bias**2


def point_seed(seed: int, index: int) -> int:
    """Seed for the records of grid point ``index``."""
    return int(np.random.SeedSequence(seed, spawn_key=(index,)).generate_state(1)[0])


def _estimate(name, delays, grid: ValidationGrid, model, bayes_grid):
    noisy = grid.noise.sigma_tau > 0
    if grid.dims == 1:
        omega = float(grid.omegas[0])
        if name in ("bayes", "bayes-map"):
            mean, mode = bayes.batch_estimates_1d(
                delays, n_grid=bayes_grid, fixed_omega=omega, gamma=grid.gamma,
                drop_nonpositive=noisy,
            )
        elif name in ("classical", "classical-map"):
            mean, mode = bayes.batch_classical_1d(delays, n_grid=bayes_grid, fixed_omega=omega,
                                                  gamma=grid.gamma)
        else:
            return predict(model, delays * grid.gamma)[:, :1] * grid.gamma
        return (mode if name.endswith("map") else mean)[:, None]
    if name in ("bayes", "bayes-map"):
        mean, mode = bayes.batch_estimates_2d(delays, n_grid=bayes_grid, gamma=grid.gamma,
                                              drop_nonpositive=noisy)
    elif name in ("classical", "classical-map"):
        mean, mode = bayes.batch_classical_2d(delays, n_grid=bayes_grid, gamma=grid.gamma)
    else:
        return predict(model, delays * grid.gamma) * grid.gamma
    return mode if name.endswith("map") else mean


def run_validation(
    grid: ValidationGrid,
    estimators=("bayes", "classical"),
    model: HistDenseModel | None = None,
    seed: int = 0,
    bayes_grid: int | None = None,
    keep_estimates: bool = False,
    progress=None,
) -> dict:
    """Evaluate every estimator on identical simulated records at each grid point."""
    estimators = list(estimators)
    for name in estimators:
        if name not in ESTIMATORS:
            raise DomainError(f"unknown estimator {name!r}; choose from {ESTIMATORS}")
    if "nn" in estimators:
        if model is None:
            raise MissingModelError("the 'nn' estimator needs a trained model")
        if model.output_dim != grid.dims:
            raise DomainError(f"a {model.arch} model cannot be validated on a {grid.dims}D grid")
    if bayes_grid is None:
        bayes_grid = bayes.N_GRID_1D if grid.dims == 1 else bayes.N_GRID_2D

    points = grid.points()
    dims = grid.dims
    per = grid.trajectories_per_point
    out = {n: (np.empty((len(points), dims)), np.empty((len(points), dims)),
               np.empty((len(points), per, dims)) if keep_estimates else None) for n in estimators}
    for k, (d, o) in enumerate(points):
        truth = np.array([d, o][:dims])
        ds = generate_at(SystemParams(d, o, grid.gamma), per, grid.n_clicks, grid.noise,
                         seed=point_seed(seed, k))
        delays = ds.delays()
        for name in estimators:
            est = _estimate(name, delays, grid, model, bayes_grid)
            err = est - truth
            out[name][0][k] = np.sqrt(np.mean(err**2, axis=0))
            out[name][1][k] = err.mean(axis=0)
            if keep_estimates:
                out[name][2][k] = est
        if progress is not None:
            progress(k + 1, len(points))
    pts = np.array(points)
    return {
        n: MetricTable(n, pts, r, b, np.full(len(points), per), e)
        for n, (r, b, e) in out.items()
    }


@dataclass
class Comparison:
    ratios: np.ndarray
    mean_ratio: float
    ratio_of_means: float
    wins: int
    losses: int
    ties: int
    sign_test_p: float


def compare_tables(a: MetricTable, b: MetricTable) -> Comparison:
    """RMSE of ``a`` relative to ``b``; a 'win' means ``a`` has the lower RMSE."""
    if a.points.shape != b.points.shape or not np.array_equal(a.points, b.points):
        raise GridMismatchError("tables were computed on different grids")
    ra, rb = a.rmse_total, b.rmse_total
    with np.errstate(divide="ignore", invalid="ignore"):
        ratios = np.where(ra == rb, 1.0, ra / rb)
    wins = int(np.sum(ra < rb))
    losses = int(np.sum(ra > rb))
    ties = len(ra) - wins - losses
    p = binomtest(wins, wins + losses).pvalue if wins + losses else 1.0
    return Comparison(ratios, float(np.mean(ratios)), float(ra.mean() / rb.mean()),
                      wins, losses, ties, float(p))


def write_tables(tables: dict, path) -> None:
    """Long-format CSV: one row per estimator and grid point."""
    first = next(iter(tables.values()))
    dims = first.rmse.shape[1]
    names = ["delta", "omega"][:dims]
    header = ["estimator", "delta", "omega"]
    for n in names:
        header += [f"rmse_{n}", f"bias_{n}"]
    header += ["rmse", "n_samples"]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for name, t in tables.items():
            for k in range(len(t.points)):
                row = [name, repr(float(t.points[k, 0])), repr(float(t.points[k, 1]))]
                for j in range(dims):
                    row += [repr(float(t.rmse[k, j])), repr(float(t.bias[k, j]))]
                row += [repr(float(t.rmse_total[k])), int(t.n_samples[k])]
                w.writerow(row)


def run_metadata(config: dict) -> dict:
    from photoest import __version__

    return {
        "config": {k: v for k, v in config.items() if not callable(v)},
        "versions": {
            "photoest": __version__,
            "numpy": np.__version__,
            "scipy": scipy.__version__,
            "python": platform.python_version(),
        },
    }


def write_sidecar(path, config: dict) -> None:
    with open(f"{path}.json", "w") as fh:
        json.dump(run_metadata(config), fh, indent=2, sort_keys=True, default=_jsonable)


def _jsonable(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    if hasattr(obj, "__dataclass_fields__"):
        return asdict(obj)
    return str(obj)


# --------------------------------------------------------------------------
# noise experiments
# --------------------------------------------------------------------------


def train_desk_model(
    count: int = 200_000,
    epochs: int = 200,
    noise: NoiseConfig | None = None,
    seed: int = 0,
    config: TrainConfig | None = None,
    log=None,
    batch_size: int = 12800,
):
    """1D model on the standard training box, optionally with jitter and target noise."""
    noise = noise or NoiseConfig()
    ds = generate_dataset(dict(RANGES_1D), dict(FIXED_1D), count, 48, noise, seed=seed)
    cfg = config or TrainConfig(epochs=epochs, seed=seed, sigma_y=noise.sigma_y,
                                batch_size=batch_size)
    return train(ds, cfg, "1d", log=log)


def noise_sweep(
    kind: str,
    sigmas,
    grid: ValidationGrid,
    count: int = 200_000,
    epochs: int = 200,
    seed: int = 0,
    log=None,
    batch_size: int = 12800,
) -> list:
    """Retrain and validate one model per noise level.

    ``kind`` is ``"tau"`` (jitter on training and validation delays, compared
    against noise-unaware Bayesian inference) or ``"y"`` (noise on the
    training targets only, validated on clean records).
    """
    if kind not in ("tau", "y"):
        raise DomainError("kind must be 'tau' or 'y'")
    rows = []
    for i, s in enumerate(sigmas):
        noise = NoiseConfig(sigma_tau=s) if kind == "tau" else NoiseConfig(sigma_y=s)
        model, _ = train_desk_model(count, epochs, noise, seed=point_seed(seed, i), log=log,
                                    batch_size=batch_size)
        vgrid = ValidationGrid(grid.deltas, grid.omegas, grid.trajectories_per_point,
                               grid.n_clicks, NoiseConfig(sigma_tau=noise.sigma_tau), grid.dims)
        names = ["nn", "bayes"] if kind == "tau" else ["nn"]
        tables = run_validation(vgrid, names, model, seed=seed)
        for k, (d, o) in enumerate(vgrid.points()):
            rows.append({
                "kind": kind,
                "sigma": float(s),
                "delta": d,
                "omega": o,
                "rmse_nn": float(tables["nn"].rmse_total[k]),
                "rmse_bayes": float(tables["bayes"].rmse_total[k]) if "bayes" in tables else float("nan"),
            })
    return rows


def write_rows(rows: list, path) -> None:
    if not rows:
        raise DomainError("nothing to write")
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=list(rows[0]))
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
