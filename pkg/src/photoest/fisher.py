"""Fisher information for delta, quantum Fisher information from the
generalized Liouvillian, empirical bias curves and biased Cramer-Rao bounds."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.integrate import quad

from photoest.errors import DomainError, EigenTrackingError, InsufficientSamplesError, QuadratureError
from photoest.qdyn import (
    DensityKernel,
    SystemParams,
    liouvillian_entries,
    steady_state_population,
    wtd,
    wtd_survival,
)
from photoest.trajsim import record_rng, sample_delays

DEFAULT_STEP = 1e-3


def _check_step(step, lo, hi, gamma):
    if not lo * gamma <= step <= hi * gamma:
        raise DomainError(f"finite-difference step {step} outside [{lo * gamma}, {hi * gamma}]")


def _score_density(tau, delta, omega, gamma, step):
    """w * (d ln w / d delta)^2 with a central difference in delta."""
    w = wtd(tau, delta, omega, gamma)
    wp = wtd(tau, delta + step, omega, gamma)
    wm = wtd(tau, delta - step, omega, gamma)
    with np.errstate(divide="ignore", invalid="ignore"):
        val = (wp - wm) ** 2 / (4.0 * step**2 * w)
    return np.where(w > 0, val, 0.0)


def fisher_per_click(params: SystemParams, step: float = DEFAULT_STEP, rtol: float = 1e-10) -> float:
    d, o, g = params.as_tuple()
    if o <= 0:
        raise DomainError("omega must be positive")
    _check_step(step, 1e-5, 1e-2, g)
    upper = 100.0 / g
    while wtd_survival(upper, d, o, g) > 1e-17:
        upper *= 2.0
    # split into pieces a few oscillation periods long for the adaptive rule
    edges = np.linspace(0.0, upper, int(np.ceil(upper * g / 5.0)) + 1)
    total = 0.0
    err = 0.0
    for a, b in zip(edges[:-1], edges[1:]):
        val, e = quad(lambda t: float(_score_density(t, d, o, g, step)), a, b,
                      epsabs=1e-14, epsrel=rtol, limit=200)
        total += val
        err += e
    if err > max(1e-10, 1e-8 * abs(total)):
        raise QuadratureError(f"Fisher integral error estimate {err:.3g} too large")
    return total


def fisher_per_trajectory(params: SystemParams, n_clicks: int = 48, step: float = DEFAULT_STEP) -> float:
    """Fisher information about delta carried by ``n_clicks`` independent delays."""
    return n_clicks * fisher_per_click(params, step)


def sampled_scores(
    params: SystemParams,
    n_traj: int,
    n_clicks: int = 48,
    step: float = DEFAULT_STEP,
    seed: int = 0,
) -> np.ndarray:
    """d/d delta of the record log-likelihood for ``n_traj`` simulated records."""
    d, o, g = params.as_tuple()
    delays = np.stack([sample_delays(params, n_clicks, record_rng(seed, i)) for i in range(n_traj)])
    lp = DensityKernel(d + step, o, g).log_density(delays).sum(axis=1)
    lm = DensityKernel(d - step, o, g).log_density(delays).sum(axis=1)
    return (lp - lm) / (2.0 * step)


def fisher_sampled(
    params: SystemParams,
    n_traj: int = 10_000,
    n_clicks: int = 48,
    step: float = DEFAULT_STEP,
    seed: int = 0,
) -> float:
    """Monte Carlo Fisher information: mean squared score over simulated records."""
    if n_traj < 100:
        raise DomainError("n_traj must be at least 100")
    return float(np.mean(sampled_scores(params, n_traj, n_clicks, step, seed) ** 2))


def zero_mode_eigenvalue(delta1, delta2, omega, gamma=1.0, tie_tol=1e-8) -> complex:
    """Eigenvalue of the generalized Liouvillian with the largest real part."""
    vals = np.linalg.eigvals(liouvillian_entries((delta1, omega), (delta2, omega), gamma))
    order = np.argsort(vals.real)[::-1]
    top, runner = vals[order[0]], vals[order[1]]
    if abs(top - runner) < tie_tol:
        raise EigenTrackingError(f"eigenvalues {top} and {runner} cannot be separated")
    return complex(top)


def qfi(params: SystemParams, n_clicks: int = 48, h: float = DEFAULT_STEP) -> float:
    """Quantum Fisher information about delta over the mean duration of a record."""
    d, o, g = params.as_tuple()
    _check_step(h, 1e-4, 1e-2, g)
    if o <= 0:
        raise DomainError("omega must be positive")
    lam = {
        (s1, s2): zero_mode_eigenvalue(d + s1 * h, d + s2 * h, o, g).real
        for s1 in (1, -1)
        for s2 in (1, -1)
    }
    mixed = (lam[1, 1] - lam[1, -1] - lam[-1, 1] + lam[-1, -1]) / (4.0 * h * h)
    duration = n_clicks / (g * steady_state_population(params))
    return 4.0 * duration * mixed


@dataclass
class BiasCurve:
    theta: np.ndarray
    bias: np.ndarray
    se: np.ndarray
    slope: np.ndarray
    variance: np.ndarray
    rmse: np.ndarray
    n: np.ndarray


def smoothed_slope(theta: np.ndarray, values: np.ndarray) -> np.ndarray:
    """Derivative after a 3-point moving average of the interior points."""
    values = np.asarray(values, dtype=float)
    smooth = values.copy()
    if len(values) >= 3:
        smooth[1:-1] = (values[:-2] + values[1:-1] + values[2:]) / 3.0
    if len(values) < 2:
        return np.zeros_like(values)
    return np.gradient(smooth, np.asarray(theta, dtype=float))


def empirical_bias(estimates, truths, min_samples: int = 100) -> BiasCurve:
    """Per-truth-value bias, spread and smoothed bias slope."""
    est = np.asarray(estimates, dtype=float).ravel()
    tru = np.asarray(truths, dtype=float).ravel()
    if est.shape != tru.shape:
        raise DomainError("estimates and truths must have equal length")
    theta = np.unique(tru)
    rows = []
    for t in theta:
        err = est[tru == t] - t
        if err.size < min_samples:
            raise InsufficientSamplesError(f"only {err.size} estimates at theta={t}")
        rows.append((err.mean(), err.std(ddof=1) / np.sqrt(err.size), err.var(ddof=0),
                     np.sqrt(np.mean(err**2)), err.size))
    bias, se, var, rmse, n = (np.array(c) for c in zip(*rows))
    return BiasCurve(theta, bias, se, smoothed_slope(theta, bias), var, rmse, n.astype(int))


def biased_crb_variance(fisher: float, bias_slope: float, eta: int = 1) -> float:
    if fisher <= 0:
        raise DomainError("Fisher information must be positive")
    if eta < 1:
        raise DomainError("eta must be >= 1")
    return (1.0 + bias_slope) ** 2 / (eta * fisher)


def biased_crb(fisher: float, bias_slope: float = 0.0, bias: float = 0.0, eta: int = 1) -> float:
    """Lower bound on the RMSE of an estimator with the given bias and bias slope."""
    return float(np.sqrt(biased_crb_variance(fisher, bias_slope, eta) + bias**2))


@dataclass
class FisherReport:
    theta_grid: np.ndarray
    fisher: np.ndarray
    qfi: np.ndarray
    bias: np.ndarray
    bias_slope: np.ndarray
    crb_rmse: np.ndarray
    qcrb_rmse: np.ndarray
    crb_var: np.ndarray
    qcrb_var: np.ndarray
    eta: int = 1

    def to_csv(self, path) -> None:
        cols = ["delta", "fisher", "qfi", "bias", "bias_slope", "crb_rmse", "qcrb_rmse",
                "crb_var", "qcrb_var"]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for row in zip(*(getattr(self, c if c != "delta" else "theta_grid") for c in cols)):
                w.writerow([repr(float(x)) for x in row])


def _bound_or_nan(info, slope, bias, eta):
    if info <= 0:
        return np.nan, np.nan
    var = biased_crb_variance(info, slope, eta)
    return var, np.sqrt(var + bias**2)


def fisher_report(
    theta_grid,
    omega: float = 1.0,
    n_clicks: int = 48,
    bias: BiasCurve | None = None,
    eta: int = 1,
    gamma: float = 1.0,
    step: float = DEFAULT_STEP,
) -> FisherReport:
    """Bounds across a delta grid; without a bias curve the estimator is taken as unbiased.

    Where the Fisher information vanishes (delta = 0) the bounds are NaN.
    """
    theta = np.asarray(theta_grid, dtype=float)
    if bias is not None:
        if not np.allclose(bias.theta, theta):
            raise DomainError("bias curve must be sampled on the report grid")
        b, slope = bias.bias, bias.slope
    else:
        b, slope = np.zeros_like(theta), np.zeros_like(theta)
    f = np.array([fisher_per_trajectory(SystemParams(t, omega, gamma), n_clicks, step) for t in theta])
    h = np.array([qfi(SystemParams(t, omega, gamma), n_clicks, step) for t in theta])
    crb = np.array([_bound_or_nan(fi, s, bi, eta) for fi, s, bi in zip(f, slope, b)])
    qcrb = np.array([_bound_or_nan(hi, s, bi, eta) for hi, s, bi in zip(h, slope, b)])
    return FisherReport(theta, f, h, b, slope, crb[:, 1], qcrb[:, 1], crb[:, 0], qcrb[:, 0], eta)
