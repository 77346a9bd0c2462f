"""Photon-counting data: i.i.d. delay sampling, quantum-jump Euler trajectories,
timing jitter and the on-disk dataset formats.

Every record of a dataset draws from its own generator, seeded from
``(master seed, record index)``, so records can be produced in any order
or in parallel without changing a single bit of the output.
"""

from __future__ import annotations

import csv
import json
import math
import struct
from dataclasses import dataclass, field, asdict
from functools import lru_cache
from pathlib import Path

import numpy as np

from photoest.errors import DomainError, FormatError, NoEmissionError
from photoest.qdyn import DensityKernel, SystemParams, wtd_cdf, wtd_survival

DEFAULT_N_CLICKS = 48
DEFAULT_DT = 1e-3
TABLE_KNOTS = 100_000
TABLE_SPAN = 100.0
# tail mass beyond the table span above which the span is widened
TABLE_TAIL_TOL = 1e-12

RANGES_1D = {"delta": (0.0, 5.0)}
FIXED_1D = {"omega": 1.0}
RANGES_2D = {"delta": (0.0, 3.0), "omega": (0.25, 5.0)}

_MAGIC = b"PCNT"
_VERSION = 1
_HEADER = struct.Struct("<4sHHBQQdd")


@dataclass
class DelayRecord:
    delays: np.ndarray
    truth: SystemParams | None = None
    # only the unclipped-jitter variant may carry negative delays
    allow_negative: bool = False

    def __post_init__(self):
        self.delays = np.asarray(self.delays, dtype=np.float64)
        if self.delays.ndim != 1:
            raise DomainError("delays must be a one-dimensional sequence")
        if not np.all(np.isfinite(self.delays)):
            raise DomainError("delays must be finite")
        if not self.allow_negative and np.any(self.delays < 0):
            raise DomainError("delays must be nonnegative")

    def __len__(self):
        return len(self.delays)

    @property
    def duration(self) -> float:
        return float(self.delays.sum())

    def mean_delay(self) -> float:
        return float(self.delays.mean())


@dataclass
class WavefunctionState:
    amp0: complex = 1.0 + 0j
    amp1: complex = 0j

    def excited_population(self) -> float:
        return abs(self.amp1) ** 2

    def norm(self) -> float:
        return math.sqrt(abs(self.amp0) ** 2 + abs(self.amp1) ** 2)


@dataclass
class NoiseConfig:
    sigma_tau: float = 0.0
    sigma_y: float = 0.0
    clip_negative_delays: bool = True

    def __post_init__(self):
        if self.sigma_tau < 0 or self.sigma_y < 0:
            raise DomainError("noise standard deviations must be nonnegative")


@dataclass
class DatasetMeta:
    n_clicks: int
    ranges: dict = field(default_factory=dict)
    fixed: dict = field(default_factory=dict)
    seed: int = 0
    generator: str = "iid"
    noise: NoiseConfig = field(default_factory=NoiseConfig)
    gamma: float = 1.0
    dt: float | None = None


@dataclass
class Dataset:
    records: list
    meta: DatasetMeta

    def __len__(self):
        return len(self.records)

    def delays(self) -> np.ndarray:
        """All delays as a (count, n_clicks) array."""
        if not self.records:
            return np.zeros((0, self.meta.n_clicks))
        return np.stack([r.delays for r in self.records])

    def truths(self) -> np.ndarray:
        """Ground truth as a (count, 2) array of (delta, omega)."""
        return np.array(
            [[r.truth.delta, r.truth.omega] for r in self.records], dtype=float
        ).reshape(-1, 2)


def record_rng(seed: int, index: int) -> np.random.Generator:
    """Independent child generator for record ``index`` of a run seeded by ``seed``."""
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(index,)))


def _require_emission(params: SystemParams):
    if params.omega == 0:
        raise DomainError("omega = 0: no photons are emitted")


# --------------------------------------------------------------------------
# i.i.d. sampling from the waiting-time distribution
# --------------------------------------------------------------------------


@lru_cache(maxsize=256)
def _cdf_table(delta: float, omega: float, gamma: float):
    span = TABLE_SPAN / gamma
    while wtd_survival(span, delta, omega, gamma) > TABLE_TAIL_TOL:
        span *= 2.0
    knots = np.linspace(0.0, span, TABLE_KNOTS)
    cdf = wtd_cdf(knots, delta, omega, gamma)
    cdf = np.maximum.accumulate(cdf)
    # the tail beyond the last knot is folded into it
    cdf[-1] = 1.0
    return knots, cdf


def sample_delays(params: SystemParams, size: int, rng: np.random.Generator) -> np.ndarray:
    """Draw ``size`` delays by inverse transform on the tabulated CDF."""
    _require_emission(params)
    knots, cdf = _cdf_table(*params.as_tuple())
    u = rng.random(size)
    idx = np.clip(np.searchsorted(cdf, u, side="right"), 1, len(knots) - 1)
    lo, hi = cdf[idx - 1], cdf[idx]
    width = hi - lo
    frac = np.divide(u - lo, width, out=np.zeros_like(u), where=width > 0)
    return knots[idx - 1] + np.clip(frac, 0.0, 1.0) * (knots[idx] - knots[idx - 1])


def sample_delay(params: SystemParams, rng: np.random.Generator) -> float:
    return float(sample_delays(params, 1, rng)[0])


def invert_cdf(u, delta, omega, gamma=1.0, tol=1e-12, max_iter=100):
    """Exact quantiles of the waiting-time distribution, vectorized over mixed parameters.

    Safeguarded Newton iteration on the closed-form survival function. Only
    unconverged entries are iterated.
    """
    u = np.asarray(u, dtype=float)
    shape = u.shape
    u = u.ravel()
    delta, omega, gamma = (
        np.broadcast_to(np.asarray(x, dtype=float), shape).ravel() for x in (delta, omega, gamma)
    )
    tail = 1.0 - u  # target survival probability

    def resid(t, idx):
        kern = DensityKernel(delta[idx], omega[idx], gamma[idx])
        surv, dens = kern.survival_and_density(t)
        return tail[idx] - surv, dens

    mu = (gamma**2 + 4 * delta**2 + 8 * omega**2) / (4 * gamma * omega**2)
    lo = np.zeros_like(u)
    hi = mu * (2.0 - 2.0 * np.log(np.maximum(tail, 1e-300)))
    idx = np.arange(u.size)
    for _ in range(200):
        r, _ = resid(hi[idx], idx)
        short = r < 0
        if not short.any():
            break
        idx = idx[short]
        lo[idx] = hi[idx]
        hi[idx] *= 2.0

    t = np.minimum(mu * -np.log(np.maximum(tail, 1e-300)), 0.5 * (lo + hi))
    t = np.where(t > lo, t, 0.5 * (lo + hi))
    idx = np.arange(u.size)
    last = np.full(u.size, np.inf)
    for _ in range(max_iter):
        tt = t[idx]
        r, slope = resid(tt, idx)
        l = np.where(r < 0, tt, lo[idx])
        h = np.where(r > 0, tt, hi[idx])
        lo[idx], hi[idx] = l, h
        with np.errstate(divide="ignore", invalid="ignore"):
            newton = tt - r / slope
        # bisect when Newton leaves the bracket or stalls
        bad = ~np.isfinite(newton) | (newton <= l) | (newton >= h) | (np.abs(r) > 0.5 * last[idx])
        last[idx] = np.abs(r)
        t_new = np.where(bad, 0.5 * (l + h), newton)
        t[idx] = t_new
        keep = np.abs(t_new - tt) > tol * np.maximum(tt, 1.0)
        idx = idx[keep]
        if not idx.size:
            break
    return t.reshape(shape)


# --------------------------------------------------------------------------
# quantum-jump (Euler) trajectories
# --------------------------------------------------------------------------


def _step_matrix(params: SystemParams, dt: float) -> np.ndarray:
    d, o, g = params.as_tuple()
    h_eff = np.array([[0.0, o], [o, d - 0.5j * g]], dtype=complex)
    return np.eye(2, dtype=complex) - 1j * h_eff * dt


def euler_step(state: WavefunctionState, params: SystemParams, dt: float) -> WavefunctionState:
    """One no-jump step ``psi -> [I - i H_eff dt] psi``, renormalized."""
    m = _step_matrix(params, dt)
    a0 = m[0, 0] * state.amp0 + m[0, 1] * state.amp1
    a1 = m[1, 0] * state.amp0 + m[1, 1] * state.amp1
    n = math.sqrt(abs(a0) ** 2 + abs(a1) ** 2)
    return WavefunctionState(a0 / n, a1 / n)


class _NoJumpPath:
    """Jump probabilities along the deterministic no-jump evolution from |0>.

    After every click the emitter restarts from |0>, so the conditional state
    between clicks is the same path for every delay; it is built once and
    extended block by block.
    """

    BLOCK = 4096

    def __init__(self, params: SystemParams, dt: float):
        self.dt = dt
        self.gamma = params.gamma
        step = _step_matrix(params, dt)
        powers = np.empty((self.BLOCK, 2, 2), dtype=complex)
        powers[0] = np.eye(2)
        for j in range(1, self.BLOCK):
            powers[j] = step @ powers[j - 1]
        self._powers = powers
        self._advance = step @ powers[-1]
        self._psi = np.array([1.0, 0.0], dtype=complex)
        self.jump_prob = np.zeros(0)

    def extend(self):
        states = self._powers @ self._psi
        pops = np.abs(states[:, 1]) ** 2 / np.sum(np.abs(states) ** 2, axis=1)
        self.jump_prob = np.concatenate([self.jump_prob, self.dt * self.gamma * pops])
        nxt = self._advance @ self._psi
        self._psi = nxt / np.linalg.norm(nxt)

    def ensure(self, n_steps: int):
        while len(self.jump_prob) < n_steps:
            self.extend()


@lru_cache(maxsize=64)
def _no_jump_path(params: SystemParams, dt: float) -> _NoJumpPath:
    return _NoJumpPath(params, dt)


def _euler_delay(path: _NoJumpPath, rng: np.random.Generator, max_steps: int) -> float:
    start = 0
    while start < max_steps:
        stop = min(start + path.BLOCK, max_steps)
        path.ensure(stop)
        u = rng.random(stop - start)
        hits = np.flatnonzero(u < path.jump_prob[start:stop])
        if hits.size:
            return (start + hits[0] + 1) * path.dt
        start = stop
    raise NoEmissionError(f"no photon emitted within {max_steps} steps")


def simulate_trajectory_euler(
    params: SystemParams,
    n_clicks: int = DEFAULT_N_CLICKS,
    dt: float = DEFAULT_DT,
    rng: np.random.Generator | None = None,
    max_steps: int = 2_000_000,
) -> DelayRecord:
    """Monitor one emitter from |0> until ``n_clicks`` photons have been detected.

    Each step the emitter jumps with probability ``dt * gamma * <s^dag s>``;
    otherwise it follows the normalized non-Hermitian Euler step.
    ``max_steps`` caps the wait for any single click.
    """
    if not 0 < dt <= 1e-2 / params.gamma:
        raise DomainError(f"dt must lie in (0, 0.01/gamma], got {dt}")
    if n_clicks < 1:
        raise DomainError("n_clicks must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    path = _no_jump_path(params, float(dt))
    delays = np.array([_euler_delay(path, rng, max_steps) for _ in range(n_clicks)])
    return DelayRecord(delays, truth=params)


# --------------------------------------------------------------------------
# noise and dataset generation
# --------------------------------------------------------------------------


def apply_jitter(delays: np.ndarray, noise: NoiseConfig, rng: np.random.Generator) -> np.ndarray:
    if noise.sigma_tau == 0:
        return delays
    noisy = delays + rng.normal(0.0, noise.sigma_tau, size=delays.shape)
    if noise.clip_negative_delays:
        noisy = np.maximum(noisy, 0.0)
    return noisy


def _check_ranges(ranges: dict, fixed: dict):
    for name, (lo, hi) in ranges.items():
        if name not in ("delta", "omega"):
            raise DomainError(f"unknown parameter {name!r}")
        if not (math.isfinite(lo) and math.isfinite(hi)) or lo > hi or lo < 0:
            raise DomainError(f"invalid range for {name}: [{lo}, {hi}]")
    if "omega" in ranges and ranges["omega"][0] <= 0:
        raise DomainError("omega range must exclude 0")
    for name in ("delta", "omega"):
        if name not in ranges and name not in fixed:
            raise DomainError(f"{name} must be given a range or a fixed value")
    if fixed.get("omega", 1.0) <= 0:
        raise DomainError("fixed omega must be positive")


def generate_dataset(
    ranges: dict | None = None,
    fixed: dict | None = None,
    count: int = 1000,
    n_clicks: int = DEFAULT_N_CLICKS,
    noise: NoiseConfig | None = None,
    seed: int = 0,
    method: str = "iid",
    gamma: float = 1.0,
    dt: float = DEFAULT_DT,
) -> Dataset:
    """Records with ground truth drawn uniformly over ``ranges``.

    ``ranges`` maps parameter names to ``(lo, hi)``; parameters absent from it
    take their value from ``fixed``. Defaults give the 1D training box.
    """
    if ranges is None:
        ranges, fixed = dict(RANGES_1D), dict(FIXED_1D) if fixed is None else fixed
    fixed = dict(fixed or {})
    noise = noise or NoiseConfig()
    if count < 0:
        raise DomainError("count must be nonnegative")
    if method not in ("iid", "euler"):
        raise DomainError(f"unknown generator {method!r}")
    _check_ranges(ranges, fixed)

    truths = np.empty((count, 2))
    uniforms = np.empty((count, n_clicks))
    rngs = []
    for i in range(count):
        rng = record_rng(seed, i)
        for k, name in enumerate(("delta", "omega")):
            if name in ranges:
                truths[i, k] = rng.uniform(*ranges[name])
            else:
                truths[i, k] = fixed[name]
        if method == "iid":
            uniforms[i] = rng.random(n_clicks)
        rngs.append(rng)

    if method == "iid":
        delays = invert_cdf(uniforms, truths[:, :1], truths[:, 1:2], gamma)
    else:
        delays = np.stack(
            [
                simulate_trajectory_euler(
                    SystemParams(truths[i, 0], truths[i, 1], gamma), n_clicks, dt, rngs[i]
                ).delays
                for i in range(count)
            ]
        ) if count else np.zeros((0, n_clicks))

    records = []
    for i in range(count):
        d = apply_jitter(delays[i], noise, rngs[i])
        records.append(DelayRecord(d, SystemParams(truths[i, 0], truths[i, 1], gamma),
                                   allow_negative=not noise.clip_negative_delays))
    meta = DatasetMeta(
        n_clicks=n_clicks,
        ranges={k: tuple(v) for k, v in ranges.items()},
        fixed=fixed,
        seed=seed,
        generator=method,
        noise=noise,
        gamma=gamma,
        dt=dt if method == "euler" else None,
    )
    return Dataset(records, meta)


def generate_at(
    params: SystemParams,
    count: int,
    n_clicks: int = DEFAULT_N_CLICKS,
    noise: NoiseConfig | None = None,
    seed: int = 0,
    method: str = "iid",
    dt: float = DEFAULT_DT,
) -> Dataset:
    """Records all generated at one fixed parameter point."""
    noise = noise or NoiseConfig()
    _require_emission(params)
    records = []
    for i in range(count):
        rng = record_rng(seed, i)
        if method == "iid":
            d = sample_delays(params, n_clicks, rng)
        elif method == "euler":
            d = simulate_trajectory_euler(params, n_clicks, dt, rng).delays
        else:
            raise DomainError(f"unknown generator {method!r}")
        records.append(DelayRecord(apply_jitter(d, noise, rng), params,
                                   allow_negative=not noise.clip_negative_delays))
    meta = DatasetMeta(
        n_clicks=n_clicks,
        fixed={"delta": params.delta, "omega": params.omega},
        seed=seed,
        generator=method,
        noise=noise,
        gamma=params.gamma,
        dt=dt if method == "euler" else None,
    )
    return Dataset(records, meta)


# --------------------------------------------------------------------------
# persistence
# --------------------------------------------------------------------------


def _meta_json(meta: DatasetMeta) -> bytes:
    doc = asdict(meta)
    doc["ranges"] = {k: list(v) for k, v in meta.ranges.items()}
    return json.dumps(doc, sort_keys=True).encode()


def write_dataset(ds: Dataset, path) -> None:
    """Little-endian binary: fixed header, JSON metadata block, then records.

    Each record is its truth (delta, omega) as f64 followed by the delays as f64.
    """
    meta = ds.meta
    has_truth = bool(ds.records) and all(r.truth is not None for r in ds.records)
    if ds.records and not has_truth and any(r.truth is not None for r in ds.records):
        raise FormatError("either every record or none must carry ground truth")
    for r in ds.records:
        if len(r) != meta.n_clicks:
            raise FormatError(f"record length {len(r)} != n_clicks {meta.n_clicks}")
    n_params = 2 if has_truth else 0
    blob = _meta_json(meta)
    with open(path, "wb") as fh:
        fh.write(
            _HEADER.pack(
                _MAGIC, _VERSION, meta.n_clicks, n_params, len(ds.records),
                meta.seed, meta.noise.sigma_tau, meta.noise.sigma_y,
            )
        )
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        if ds.records:
            rows = np.empty((len(ds.records), n_params + meta.n_clicks), dtype="<f8")
            for i, r in enumerate(ds.records):
                if n_params:
                    rows[i, :2] = (r.truth.delta, r.truth.omega)
                rows[i, n_params:] = r.delays
            fh.write(rows.tobytes())


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size + 4:
        raise FormatError(f"{path}: file too short for a dataset header")
    magic, version, n_clicks, n_params, count, seed, s_tau, s_y = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise FormatError(f"{path}: bad magic bytes {magic!r}, expected {_MAGIC!r}")
    if version != _VERSION:
        raise FormatError(f"{path}: unsupported dataset format version {version}")
    (blob_len,) = struct.unpack_from("<I", raw, _HEADER.size)
    off = _HEADER.size + 4
    try:
        doc = json.loads(raw[off : off + blob_len])
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise FormatError(f"{path}: corrupt metadata block") from exc
    off += blob_len
    width = n_params + n_clicks
    expected = count * width * 8
    if len(raw) - off != expected:
        raise FormatError(f"{path}: expected {expected} bytes of records, found {len(raw) - off}")
    rows = np.frombuffer(raw, dtype="<f8", offset=off, count=count * width).reshape(count, width)
    gamma = doc.get("gamma", 1.0)
    noise = NoiseConfig(**doc["noise"])
    if (noise.sigma_tau, noise.sigma_y) != (s_tau, s_y) or doc["seed"] != seed:
        raise FormatError(f"{path}: header and metadata block disagree")
    meta = DatasetMeta(
        n_clicks=n_clicks,
        ranges={k: tuple(v) for k, v in doc["ranges"].items()},
        fixed=doc["fixed"],
        seed=seed,
        generator=doc["generator"],
        noise=noise,
        gamma=gamma,
        dt=doc.get("dt"),
    )
    records = []
    for row in rows:
        truth = SystemParams(float(row[0]), float(row[1]), gamma) if n_params else None
        records.append(DelayRecord(np.array(row[n_params:]), truth,
                                   allow_negative=not noise.clip_negative_delays))
    return Dataset(records, meta)


def export_csv(ds: Dataset, path) -> None:
    """One record per row: delta, omega (when known), then tau_1..tau_N."""
    has_truth = bool(ds.records) and ds.records[0].truth is not None
    header = (["delta", "omega"] if has_truth else []) + [
        f"tau_{i + 1}" for i in range(ds.meta.n_clicks)
    ]
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in ds.records:
            lead = [repr(r.truth.delta), repr(r.truth.omega)] if has_truth else []
            w.writerow(lead + [repr(float(x)) for x in r.delays])
