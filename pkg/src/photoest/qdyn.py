"""Closed-form physics of the resonantly driven, decaying two-level emitter.

Time is measured in units of ``1/gamma`` and frequencies in units of
``gamma``; callers normally leave ``gamma = 1``.

The Hamiltonian in the frame of the drive is
``H = delta * s^dag s + omega * (s + s^dag)`` with ``s = |0><1|`` and the
emitter decays at rate ``gamma`` through ``s``.

Liouvillian matrices act on density matrices flattened by column stacking,
``vec(rho)[i + 2 j] = rho[i, j]``, so ``vec(A rho B) = (B^T kron A) vec(rho)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from photoest.errors import DomainError

# relative size of R below which the two decay branches are treated as merged
_EXCEPTIONAL_TOL = 1e-7


@dataclass(frozen=True)
class SystemParams:
    delta: float
    omega: float
    gamma: float = 1.0

    def __post_init__(self):
        for name in ("delta", "omega", "gamma"):
            value = getattr(self, name)
            if not math.isfinite(value):
                raise DomainError(f"{name} must be finite, got {value!r}")
        if self.gamma <= 0:
            raise DomainError(f"gamma must be positive, got {self.gamma}")
        if self.omega < 0:
            raise DomainError(f"omega must be nonnegative, got {self.omega}")
        if self.delta < 0:
            raise DomainError(
                f"delta must be nonnegative (its sign is unidentifiable), got {self.delta}"
            )

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.delta, self.omega, self.gamma)


@dataclass(frozen=True)
class ClassicalMoments:
    """Mean and standard deviation of the sample-mean delay over ``n_clicks`` delays."""

    mu: float
    sigma: float
    n_clicks: int


@dataclass(frozen=True)
class LiouvillianMatrix:
    entries: np.ndarray
    left_params: SystemParams
    right_params: SystemParams

    def eigenvalues(self) -> np.ndarray:
        return np.linalg.eigvals(self.entries)

    def steady_state(self) -> np.ndarray:
        """Density matrix of the zero mode, normalized to unit trace."""
        vals, vecs = np.linalg.eig(self.entries)
        k = int(np.argmin(np.abs(vals)))
        rho = vecs[:, k].reshape(2, 2, order="F")
        return rho / np.trace(rho)


# --------------------------------------------------------------------------
# vectorized kernels (no validation; negative delta allowed)
# --------------------------------------------------------------------------


def _branch_terms(delta, omega, gamma):
    """Return (a2_plus, a2_minus, R) such that the density is a difference of
    cosh(sqrt(a2) tau) terms, damped by exp(-gamma tau / 2)."""
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    gamma = np.asarray(gamma, dtype=float)
    s = 4.0 * (delta**2 + 4.0 * omega**2)
    r = np.sqrt(np.maximum((gamma**2 + s) ** 2 - 64.0 * gamma**2 * omega**2, 0.0))
    base = gamma**2 - s
    return (base + r) / 8.0, (base - r) / 8.0, r


def _damped_cosh(a2, tau, c):
    """exp(-c tau) * cosh(sqrt(a2) tau), continued to cos(sqrt(-a2) tau) for a2 < 0."""
    a = np.sqrt(np.abs(a2))
    grow = (np.exp((a - c) * tau) + np.exp(-(a + c) * tau)) / 2.0
    osc = np.exp(-c * tau) * np.cos(a * tau)
    return np.where(a2 >= 0, grow, osc)


def _damped_shc(a2, tau, c):
    """exp(-c tau) * sinh(z)/z with z = sqrt(a2) tau (sin(z)/z for a2 < 0)."""
    a = np.sqrt(np.abs(a2))
    z = a * tau
    small = z < 1.0
    safe_z = np.where(small, 1.0, z)
    grow = np.where(
        small,
        np.exp(-c * tau) * np.sinh(z) / np.where(small & (z > 0), z, 1.0),
        (np.exp((a - c) * tau) - np.exp(-(a + c) * tau)) / (2.0 * safe_z),
    )
    grow = np.where(small & (z == 0), np.exp(-c * tau), grow)
    osc = np.exp(-c * tau) * np.sinc(z / np.pi)
    return np.where(a2 >= 0, grow, osc)


def _damped_gap(a, b, tau, c):
    """exp(-c tau) * (cosh(a tau) - cos(b tau)) for a, b >= 0, free of cancellation."""
    at = a * tau
    return np.exp((a - c) * tau) * (0.5 * np.expm1(-at) ** 2 + 2.0 * np.exp(-at) * np.sin(b * tau / 2.0) ** 2)


def wtd(tau, delta, omega, gamma=1.0):
    """Waiting-time density evaluated with numpy broadcasting over every argument."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _wtd(tau, delta, omega, gamma)


def _wtd(tau, delta, omega, gamma):
    tau = np.asarray(tau, dtype=float)
    a2p, a2m, r = _branch_terms(delta, omega, gamma)
    gamma = np.asarray(gamma, dtype=float)
    omega = np.asarray(omega, dtype=float)
    c = gamma / 2.0
    scale = gamma**2 + 4.0 * (np.asarray(delta, dtype=float) ** 2 + 4.0 * omega**2)
    merged = r <= _EXCEPTIONAL_TOL * scale
    safe_r = np.where(merged, 1.0, r)
    # a2p >= 0 >= a2m always, so the bracket is exp(-c tau)(cosh(a tau) - cos(b tau)),
    # written without cancellation for parameters near the exceptional point
    a = np.sqrt(np.maximum(a2p, 0.0))
    b = np.sqrt(np.maximum(-a2m, 0.0))
    split = (8.0 * gamma * omega**2 / safe_r) * _damped_gap(a, b, tau, c)
    mid = (a2p + a2m) / 2.0
    limit = gamma * omega**2 * tau**2 * _damped_shc(mid, tau, c)
    return np.where(tau < 0, 0.0, np.maximum(np.where(merged, limit, split), 0.0))


def _tail_integral(a2, tau, c):
    # int_tau^inf exp(-c s) cosh(sqrt(a2) s) ds, valid for a2 < c^2
    dch = _damped_cosh(a2, tau, c)
    dsh = _damped_shc(a2, tau, c)
    return (c * dch + a2 * tau * dsh) / (c**2 - a2), dch, dsh


def _cdf_parts(tau, delta, omega, gamma):
    tau = np.asarray(tau, dtype=float)
    a2p, a2m, r = _branch_terms(delta, omega, gamma)
    gamma = np.asarray(gamma, dtype=float)
    omega = np.asarray(omega, dtype=float)
    c = gamma / 2.0
    scale = gamma**2 + 4.0 * (np.asarray(delta, dtype=float) ** 2 + 4.0 * omega**2)
    merged = r <= _EXCEPTIONAL_TOL * scale
    safe_r = np.where(merged, 1.0, r)
    k = 8.0 * gamma * omega**2 / safe_r
    tp, _, _ = _tail_integral(a2p, tau, c)
    tm, _, _ = _tail_integral(a2m, tau, c)
    head_p = c / (c**2 - a2p) - tp
    head_m = c / (c**2 - a2m) - tm
    mid = (a2p + a2m) / 2.0
    t0, dch, dsh = _tail_integral(mid, tau, c)
    # x-derivatives of the head and tail integrals at the merged branch
    extra = (c * tau**2 * dsh / 2.0 + tau * (dsh + dch) / 2.0) / (c**2 - mid)
    d_tail = t0 / (c**2 - mid) + extra
    d_head = c / (c**2 - mid) ** 2 - d_tail
    g = 2.0 * gamma * omega**2
    cdf = np.where(merged, g * d_head, k * (head_p - head_m))
    surv = np.where(merged, g * d_tail, k * (tp - tm))
    return np.clip(cdf, 0.0, 1.0), np.clip(surv, 0.0, 1.0)


def wtd_cdf(tau, delta, omega, gamma=1.0):
    """Closed-form cumulative distribution of the waiting time, broadcasting."""
    with np.errstate(over="ignore", invalid="ignore"):
        return _cdf_parts(tau, delta, omega, gamma)[0]


def wtd_survival(tau, delta, omega, gamma=1.0):
    """Probability that the next click arrives later than ``tau``; accurate in the far tail.

    Within a relative distance of about 1e-6 of the exceptional point the
    absolute error grows to roughly 1e-10.
    """
    with np.errstate(over="ignore", invalid="ignore"):
        return _cdf_parts(tau, delta, omega, gamma)[1]


def mean_delay(delta, omega, gamma=1.0):
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    return (gamma**2 + 4.0 * delta**2 + 8.0 * omega**2) / (4.0 * gamma * omega**2)


def mean_delay_std(delta, omega, n_clicks, gamma=1.0):
    delta = np.asarray(delta, dtype=float)
    omega = np.asarray(omega, dtype=float)
    g2 = gamma**2
    d2 = delta**2
    o2 = omega**2
    var = ((g2 + 4.0 * d2) ** 2 - 8.0 * (g2 - 12.0 * d2) * o2 + 64.0 * o2**2) / (
        n_clicks * 16.0 * g2 * o2**2
    )
    return np.sqrt(var)


class DensityKernel:
    """Waiting-time density, survival and log-density for arrays of parameters.

    Uses the real form ``K exp(-c tau) (cosh(a tau) - cos(b tau))`` with
    ``a = sqrt(a2_plus) >= 0`` and ``b = sqrt(-a2_minus) >= 0``; parameters at
    the exceptional point where the two branches merge fall back to the
    generic limit formulas.
    """

    def __init__(self, delta, omega, gamma=1.0):
        self.delta = np.asarray(delta, dtype=float)
        self.omega = np.asarray(omega, dtype=float)
        self.gamma = np.asarray(gamma, dtype=float)
        a2p, a2m, r = _branch_terms(self.delta, self.omega, self.gamma)
        scale = self.gamma**2 + 4.0 * (self.delta**2 + 4.0 * self.omega**2)
        self.merged = r <= _EXCEPTIONAL_TOL * scale
        self.any_merged = bool(np.any(self.merged))
        safe_r = np.where(self.merged, 1.0, r)
        self.a = np.sqrt(np.maximum(a2p, 0.0))
        self.b = np.sqrt(np.maximum(-a2m, 0.0))
        self.c = self.gamma / 2.0
        self.k = 8.0 * self.gamma * self.omega**2 / safe_r
        with np.errstate(divide="ignore"):
            self.log_k = np.log(self.k)

    def _fallback(self, values, tau, fn):
        if not self.any_merged:
            return values
        m = np.broadcast_to(self.merged, values.shape)
        if not m.any():
            return values
        d, o, g, t = np.broadcast_arrays(self.delta, self.omega, self.gamma, tau)
        out = values.copy()
        out[m] = fn(t[m], d[m], o[m], g[m])
        return out

    def log_density(self, tau):
        tau = np.asarray(tau, dtype=float)
        shape = np.broadcast_shapes(tau.shape, self.a.shape)
        # log k + (a - c) tau + log(expm1(-a tau)^2 / 2 + 2 exp(-a tau) sin^2(b tau / 2)),
        # evaluated in place because this is the inner loop of every grid posterior
        em = np.multiply(-self.a, tau, out=np.empty(shape))
        np.expm1(em, out=em)
        s2 = np.multiply(self.b / 2.0, tau, out=np.empty(shape))
        np.sin(s2, out=s2)
        s2 *= s2
        s2 *= 2.0
        out = np.multiply(em, 0.5, out=np.empty(shape))
        out += s2
        out *= em
        out += s2
        np.maximum(out, 0.0, out=out)
        with np.errstate(divide="ignore"):
            np.log(out, out=out)
        np.multiply(self.a - self.c, tau, out=em)
        out += em
        out += self.log_k
        neg = tau < 0
        if neg.any():
            out[np.broadcast_to(neg, shape)] = -np.inf
        return self._fallback(out, tau, log_wtd)

    def density(self, tau):
        tau = np.asarray(tau, dtype=float)
        with np.errstate(over="ignore", invalid="ignore"):
            out = np.where(tau < 0, 0.0, self.k * _damped_gap(self.a, self.b, tau, self.c))
        return self._fallback(out, tau, wtd)

    def survival_and_density(self, tau):
        tau = np.asarray(tau, dtype=float)
        c, a, b = self.c, self.a, self.b
        ec = np.exp(-c * tau)
        e1 = np.exp((a - c) * tau)
        e2 = np.exp(-(a + c) * tau)
        cb = np.cos(b * tau)
        sb = np.sin(b * tau)
        dch_p = 0.5 * (e1 + e2)
        dch_m = ec * cb
        tail_p = (c * dch_p + 0.5 * a * (e1 - e2)) / (c**2 - a**2)
        tail_m = (c * dch_m - b * ec * sb) / (c**2 + b**2)
        surv = np.clip(self.k * (tail_p - tail_m), 0.0, 1.0)
        dens = self.k * _damped_gap(a, b, tau, c)
        if self.any_merged:
            surv = self._fallback(surv, tau, wtd_survival)
            dens = self._fallback(dens, tau, wtd)
        return surv, dens


def log_wtd(tau, delta, omega, gamma=1.0):
    with np.errstate(divide="ignore"):
        return np.log(wtd(tau, delta, omega, gamma))


# --------------------------------------------------------------------------
# public, validated API
# --------------------------------------------------------------------------


def _require_emission(params: SystemParams):
    if params.omega == 0:
        raise DomainError("omega = 0: the undriven emitter never emits a photon")


def waiting_time_density(tau, params: SystemParams):
    """Probability density of the delay between consecutive photodetections.

    ``tau`` may be a scalar or an array; a float is returned for scalar input.
    """
    _require_emission(params)
    arr = np.asarray(tau, dtype=float)
    if np.any(arr < 0) or not np.all(np.isfinite(arr)):
        raise DomainError("waiting times must be finite and nonnegative")
    out = wtd(arr, params.delta, params.omega, params.gamma)
    return float(out) if out.ndim == 0 else out


def waiting_time_cdf(tau, params: SystemParams):
    _require_emission(params)
    arr = np.asarray(tau, dtype=float)
    if np.any(arr < 0):
        raise DomainError("waiting times must be nonnegative")
    out = wtd_cdf(arr, params.delta, params.omega, params.gamma)
    return float(out) if out.ndim == 0 else out


def steady_state_population(params: SystemParams) -> float:
    d, o, g = params.as_tuple()
    return 4.0 * o**2 / (g**2 + 4.0 * d**2 + 8.0 * o**2)


def classical_moments(params: SystemParams, n_clicks: int) -> ClassicalMoments:
    _require_emission(params)
    if n_clicks < 1:
        raise DomainError(f"n_clicks must be >= 1, got {n_clicks}")
    d, o, g = params.as_tuple()
    return ClassicalMoments(
        mu=float(mean_delay(d, o, g)),
        sigma=float(mean_delay_std(d, o, n_clicks, g)),
        n_clicks=int(n_clicks),
    )


_SIGMA = np.array([[0, 1], [0, 0]], dtype=complex)
_NUMBER = _SIGMA.conj().T @ _SIGMA
_EYE = np.eye(2, dtype=complex)


def hamiltonian(delta: float, omega: float) -> np.ndarray:
    return delta * _NUMBER + omega * (_SIGMA + _SIGMA.conj().T)


def liouvillian_entries(left, right, gamma: float = 1.0) -> np.ndarray:
    """4x4 generalized Liouvillian for raw (delta, omega) pairs."""
    h1 = hamiltonian(*left)
    h2 = hamiltonian(*right)
    coherent = -1j * np.kron(_EYE, h1) + 1j * np.kron(h2.T, _EYE)
    jump = gamma * np.kron(_SIGMA.conj(), _SIGMA)
    anti = -(gamma / 2.0) * (np.kron(_EYE, _NUMBER) + np.kron(_NUMBER.T, _EYE))
    return coherent + jump + anti


def liouvillian(left: SystemParams, right: SystemParams) -> LiouvillianMatrix:
    """Matrix of rho -> -i(H(left) rho - rho H(right)) + gamma/2 D[s] rho."""
    if left.gamma != right.gamma:
        raise DomainError("left and right parameters must share gamma")
    entries = liouvillian_entries(
        (left.delta, left.omega), (right.delta, right.omega), left.gamma
    )
    return LiouvillianMatrix(entries=entries, left_params=left, right_params=right)
