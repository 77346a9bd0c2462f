"""Grid posteriors over (delta) or (delta, omega) under a flat prior.

Two likelihoods are supported: the exact one, a product of waiting-time
densities over the recorded delays, and the Gaussian likelihood of the
mean delay alone.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from photoest.errors import AllImpossibleError, DomainError
from photoest.qdyn import DensityKernel, SystemParams, mean_delay, mean_delay_std

SUPPORT_1D = (0.0, 5.0)
N_GRID_1D = 1000
BOX_2D = ((0.0, 3.0), (0.25, 5.0))
N_GRID_2D = 300
# records per chunk when evaluating likelihood matrices
_CHUNK_ELEMS = 50_000


@dataclass
class PosteriorGrid:
    axes: list
    masses: np.ndarray
    log_evidence: float

    @property
    def ndim(self) -> int:
        return len(self.axes)

    def to_csv(self, path) -> None:
        names = ["delta", "omega"][: self.ndim]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(names + ["mass"])
            if self.ndim == 1:
                for x, m in zip(self.axes[0], self.masses):
                    w.writerow([repr(float(x)), repr(float(m))])
            else:
                for i, x in enumerate(self.axes[0]):
                    for j, y in enumerate(self.axes[1]):
                        w.writerow([repr(float(x)), repr(float(y)), repr(float(self.masses[i, j]))])


@dataclass
class Estimate:
    values: np.ndarray
    method: str


def _axis(lo, hi, n):
    if not lo < hi:
        raise DomainError(f"degenerate support [{lo}, {hi}]")
    if n < 2:
        raise DomainError("a grid needs at least two points")
    return np.linspace(lo, hi, n)


def _normalize(logl: np.ndarray, axes: list) -> PosteriorGrid:
    top = np.max(logl)
    if not np.isfinite(top):
        raise AllImpossibleError("every grid point gives the data zero likelihood")
    w = np.exp(logl - top)
    total = w.sum()
    masses = w / total
    log_evidence = float(top + np.log(total) - np.log(logl.size))
    return PosteriorGrid(axes=axes, masses=masses, log_evidence=log_evidence)


def log_likelihood(record, params: SystemParams) -> float:
    """Sum of log waiting-time densities over the record's delays (may be -inf)."""
    if params.omega == 0:
        raise DomainError("omega = 0: the likelihood is undefined")
    kern = DensityKernel(params.delta, params.omega, params.gamma)
    return float(np.sum(kern.log_density(np.asarray(record.delays, dtype=float))))


def loglik_matrix(delays: np.ndarray, kern: DensityKernel) -> np.ndarray:
    """Log-likelihoods of a (B, N) batch of records at every kernel parameter point.

    Returns shape (B, G) where G is the flattened size of the kernel parameters.
    Delays may be NaN to mark entries excluded from the product.
    """
    delays = np.atleast_2d(np.asarray(delays, dtype=float))
    n_rec, n_clicks = delays.shape
    g = kern.a.size
    out = np.empty((n_rec, g))
    per = max(1, _CHUNK_ELEMS // max(1, n_clicks * g))
    for start in range(0, n_rec, per):
        block = delays[start : start + per, :, None]
        vals = kern.log_density(block)
        vals = np.where(np.isnan(block), 0.0, vals)
        out[start : start + per] = vals.sum(axis=1)
    return out


def _prepare(record, drop_nonpositive: bool) -> np.ndarray:
    d = np.asarray(record.delays if hasattr(record, "delays") else record, dtype=float)
    if drop_nonpositive:
        d = d[d > 0]
    return d


def posterior_1d(
    record,
    support=SUPPORT_1D,
    n_grid: int = N_GRID_1D,
    fixed_omega: float = 1.0,
    gamma: float = 1.0,
    drop_nonpositive: bool = False,
) -> PosteriorGrid:
    """Posterior over delta at fixed omega on a uniform grid.

    With ``drop_nonpositive`` delays equal to zero are left out, which
    lets a noise-unaware likelihood digest clipped jittered data.
    """
    axis = _axis(support[0], support[1], n_grid)
    d = _prepare(record, drop_nonpositive)
    if d.size == 0:
        return _normalize(np.zeros(n_grid), [axis])
    kern = DensityKernel(axis, fixed_omega, gamma)
    return _normalize(loglik_matrix(d[None, :], kern)[0], [axis])


def posterior_2d(
    record,
    box=BOX_2D,
    n_grid=N_GRID_2D,
    gamma: float = 1.0,
    drop_nonpositive: bool = False,
) -> PosteriorGrid:
    (dlo, dhi), (olo, ohi) = box
    nd, no = (n_grid, n_grid) if np.isscalar(n_grid) else n_grid
    if olo <= 0:
        raise DomainError("the omega range must exclude 0")
    dax = _axis(dlo, dhi, nd)
    oax = _axis(olo, ohi, no)
    d = _prepare(record, drop_nonpositive)
    if d.size == 0:
        return _normalize(np.zeros((nd, no)), [dax, oax])
    dd, oo = np.meshgrid(dax, oax, indexing="ij")
    kern = DensityKernel(dd.ravel(), oo.ravel(), gamma)
    logl = loglik_matrix(d[None, :], kern)[0].reshape(nd, no)
    return _normalize(logl, [dax, oax])


def classical_loglik(mean_tau, delta, omega, n_clicks: int, gamma: float = 1.0):
    """Gaussian log-likelihood of the observed mean delay (constants dropped)."""
    mu = mean_delay(delta, omega, gamma)
    sigma = mean_delay_std(delta, omega, n_clicks, gamma)
    mean_tau = np.asarray(mean_tau, dtype=float)[..., None]
    return -np.log(sigma) - 0.5 * ((mean_tau - mu) / sigma) ** 2


def classical_posterior(
    record,
    support=SUPPORT_1D,
    n_grid: int = N_GRID_1D,
    fixed_omega: float = 1.0,
    gamma: float = 1.0,
) -> PosteriorGrid:
    """Posterior over delta given only the mean of the record's delays."""
    axis = _axis(support[0], support[1], n_grid)
    d = np.asarray(record.delays, dtype=float)
    if d.size == 0:
        return _normalize(np.zeros(n_grid), [axis])
    logl = classical_loglik(d.mean(), axis, fixed_omega, d.size, gamma)
    return _normalize(logl, [axis])


def estimate_mean(p: PosteriorGrid) -> Estimate:
    if p.ndim == 1:
        vals = np.array([np.dot(p.axes[0], p.masses)])
    else:
        vals = np.array([np.dot(p.axes[0], p.masses.sum(axis=1)), np.dot(p.axes[1], p.masses.sum(axis=0))])
    return Estimate(vals, "bayes-mean")


def estimate_map(p: PosteriorGrid) -> Estimate:
    # argmax returns the first maximum, i.e. the smallest parameter values
    flat = int(np.argmax(p.masses))
    if p.ndim == 1:
        return Estimate(np.array([p.axes[0][flat]]), "bayes-map")
    i, j = np.unravel_index(flat, p.masses.shape)
    return Estimate(np.array([p.axes[0][i], p.axes[1][j]]), "bayes-map")


# --------------------------------------------------------------------------
# batched point estimates for benchmarking
# --------------------------------------------------------------------------


def _masses_from_logl(logl: np.ndarray) -> np.ndarray:
    top = logl.max(axis=1, keepdims=True)
    if not np.all(np.isfinite(top)):
        raise AllImpossibleError("a record has zero likelihood at every grid point")
    w = np.exp(logl - top)
    return w / w.sum(axis=1, keepdims=True)


def batch_estimates_1d(
    delays: np.ndarray,
    support=SUPPORT_1D,
    n_grid: int = N_GRID_1D,
    fixed_omega: float = 1.0,
    gamma: float = 1.0,
    drop_nonpositive: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-mean and MAP delta for each row of a (B, N) delay array."""
    axis = _axis(support[0], support[1], n_grid)
    delays = np.asarray(delays, dtype=float)
    if drop_nonpositive:
        delays = np.where(delays > 0, delays, np.nan)
    kern = DensityKernel(axis, fixed_omega, gamma)
    logl = loglik_matrix(delays, kern)
    masses = _masses_from_logl(logl)
    return masses @ axis, axis[np.argmax(masses, axis=1)]


def batch_estimates_2d(
    delays: np.ndarray,
    box=BOX_2D,
    n_grid=N_GRID_2D,
    gamma: float = 1.0,
    drop_nonpositive: bool = False,
) -> tuple[np.ndarray, np.ndarray]:
    """Posterior-mean and MAP (delta, omega), each shaped (B, 2)."""
    (dlo, dhi), (olo, ohi) = box
    nd, no = (n_grid, n_grid) if np.isscalar(n_grid) else n_grid
    dax, oax = _axis(dlo, dhi, nd), _axis(olo, ohi, no)
    dd, oo = np.meshgrid(dax, oax, indexing="ij")
    delays = np.asarray(delays, dtype=float)
    if drop_nonpositive:
        delays = np.where(delays > 0, delays, np.nan)
    kern = DensityKernel(dd.ravel(), oo.ravel(), gamma)
    masses = _masses_from_logl(loglik_matrix(delays, kern))
    mean = np.stack([masses @ dd.ravel(), masses @ oo.ravel()], axis=1)
    k = np.argmax(masses, axis=1)
    return mean, np.stack([dd.ravel()[k], oo.ravel()[k]], axis=1)


def batch_classical_1d(
    delays: np.ndarray,
    support=SUPPORT_1D,
    n_grid: int = N_GRID_1D,
    fixed_omega: float = 1.0,
    gamma: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    axis = _axis(support[0], support[1], n_grid)
    delays = np.asarray(delays, dtype=float)
    logl = classical_loglik(delays.mean(axis=1), axis, fixed_omega, delays.shape[1], gamma)
    masses = _masses_from_logl(logl)
    return masses @ axis, axis[np.argmax(masses, axis=1)]


def batch_classical_2d(
    delays: np.ndarray,
    box=BOX_2D,
    n_grid=N_GRID_2D,
    gamma: float = 1.0,
) -> tuple[np.ndarray, np.ndarray]:
    (dlo, dhi), (olo, ohi) = box
    nd, no = (n_grid, n_grid) if np.isscalar(n_grid) else n_grid
    dax, oax = _axis(dlo, dhi, nd), _axis(olo, ohi, no)
    dd, oo = np.meshgrid(dax, oax, indexing="ij")
    delays = np.asarray(delays, dtype=float)
    logl = classical_loglik(delays.mean(axis=1), dd.ravel(), oo.ravel(), delays.shape[1], gamma)
    masses = _masses_from_logl(logl)
    mean = np.stack([masses @ dd.ravel(), masses @ oo.ravel()], axis=1)
    k = np.argmax(masses, axis=1)
    return mean, np.stack([dd.ravel()[k], oo.ravel()[k]], axis=1)
