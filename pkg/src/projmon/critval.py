"""
Monte-Carlo critical values for the Brownian suprema that govern the
monitoring procedure.

Open-end:   sup_{delta/(1+delta) <= s <= 1} |B(s)| / s^gamma
Closed-end: sup_{delta <= t <= T} |B1(t) - t B2(1) + drift(t)| / w(t)
            with w(t) = (1 + t) (t / (1 + t))^gamma  (default weighting)
            or   w(t) = 1                            (flat weighting)

Brownian paths are built from exact Gaussian increments between grid
points. Every replication draws from its own MT19937 stream whose 32-bit
seed is word ``r`` of ``SeedSequence(seed).generate_state(R)``; samples are
therefore identical however the replications are scheduled, and the first
R' replications of a run with R > R' equal the run with R'.

Closed-end grids
----------------
``"natural"`` (default) places points uniformly, N per unit, in the clock
s = t / (1 + t) in which the closed-end process is a time-changed Brownian
motion; ``"uniform"`` places N points per unit of t. Both include the exact
window endpoints.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Callable, Iterable, Optional, Sequence, Union

import numba
import numpy as np
from scipy.integrate import cumulative_trapezoid

from .core import OPEN_END, MonitorError

DEFAULT_REPS = 100_000
DEFAULT_GRID = 10_000
DEFAULT_SEED = 20240501


@numba.njit(cache=True)
def _sup_kernel(seeds, step_sd, b2_coef, drift, weights, lo, hi, use_b2):
    R = seeds.shape[0]
    n = step_sd.shape[0]
    G = weights.shape[0]
    W = lo.shape[0]
    out = np.zeros((R, W, G))
    best = np.zeros((W, G))
    for r in range(R):
        np.random.seed(seeds[r])
        b2 = 0.0
        if use_b2:
            b2 = np.random.standard_normal()
        b = 0.0
        best[:, :] = 0.0
        for i in range(n):
            b += step_sd[i] * np.random.standard_normal()
            x = abs(b - b2_coef[i] * b2 + drift[i])
            for g in range(G):
                a = x * weights[g, i]
                for w in range(W):
                    if lo[w] <= i and i <= hi[w] and a > best[w, g]:
                        best[w, g] = a
        out[r] = best
    return out


def replication_seeds(seed: int, R: int) -> np.ndarray:
    return np.random.SeedSequence(int(seed)).generate_state(int(R), dtype=np.uint32).astype(np.int64)


def _validate(gamma: float, delta: float, R: int, N: int) -> None:
    if not 0.0 <= gamma < 0.5:
        raise MonitorError(f"gamma must lie in [0, 1/2), got {gamma}")
    if not delta > 0.0:
        raise MonitorError(f"delta must be positive, got {delta}")
    if R < 1:
        raise MonitorError("need at least one replication")
    if N < 1:
        raise MonitorError("grid size N must be positive")


def closed_end_weight(t: np.ndarray, gamma: float, weighting: str = "paper") -> np.ndarray:
    t = np.asarray(t, dtype=np.float64)
    if weighting == "flat":
        return np.ones_like(t)
    if weighting != "paper":
        raise MonitorError(f"unknown weighting {weighting!r}")
    return (1.0 + t) * (t / (1.0 + t)) ** gamma


# ---------------------------------------------------------------------------
# open end
# ---------------------------------------------------------------------------


def _openend_batch(gammas: Sequence[float], deltas: Sequence[float], R: int, N: int, seed: int) -> np.ndarray:
    t = np.arange(1, N + 1, dtype=np.float64) / N
    lo = []
    for delta in deltas:
        s0 = delta / (1.0 + delta)
        i0 = int(np.searchsorted(t, s0 - 1e-12, side="left"))
        if N - i0 < 1:
            raise MonitorError("no grid point in the evaluation window")
        lo.append(i0)
    weights = np.stack([t ** (-g) for g in gammas])
    step_sd = np.full(N, math.sqrt(1.0 / N))
    zeros = np.zeros(N)
    return _sup_kernel(
        replication_seeds(seed, R), step_sd, zeros, zeros, weights,
        np.array(lo, dtype=np.int64), np.full(len(lo), N - 1, dtype=np.int64), False,
    )


def simulate_openend_sup(gamma: float, delta: float, R: int = DEFAULT_REPS, N: int = DEFAULT_GRID, seed: int = DEFAULT_SEED) -> np.ndarray:
    """Sample the open-end limit sup_{delta/(1+delta) <= t <= 1} |B(t)| / t^gamma.

    B is simulated on the uniform grid i/N, i = 1..N, of [0, 1] and the
    maximum is taken over the grid points inside the window.

    Returns
    -------
    numpy.ndarray, shape (R,)
    """
    _validate(gamma, delta, R, N)
    return _openend_batch([gamma], [delta], R, N, seed)[:, 0, 0]


# ---------------------------------------------------------------------------
# closed end
# ---------------------------------------------------------------------------


def closed_end_grid(windows: Sequence[tuple[float, float]], N: int, grid: str = "natural") -> tuple[np.ndarray, list[tuple[int, int]]]:
    """Evaluation points for closed-end windows [delta, T].

    Returns the sorted t-grid and, per window, the (first, last) grid index
    inside it.
    """
    if grid not in ("natural", "uniform"):
        raise MonitorError(f"unknown grid {grid!r}")
    t_min = min(d for d, _ in windows)
    t_max = max(T for _, T in windows)
    if grid == "natural":
        s_lo, s_hi = t_min / (1 + t_min), t_max / (1 + t_max)
        s = np.arange(math.ceil(s_lo * N), math.floor(s_hi * N) + 1, dtype=np.float64) / N
        ends = [x / (1 + x) for w in windows for x in w]
        s = np.unique(np.concatenate([s[(s >= s_lo) & (s <= s_hi)], ends]))
        t = s / (1.0 - s)
    else:
        t = np.arange(math.ceil(t_min * N), math.floor(t_max * N) + 1, dtype=np.float64) / N
        t = np.unique(np.concatenate([t[(t >= t_min) & (t <= t_max)], [x for w in windows for x in w]]))
    t = t[t > 0]
    idx = []
    for d, T in windows:
        # endpoints were inserted exactly; tolerate the s <-> t round trip
        i0 = int(np.searchsorted(t, d * (1 - 1e-12), side="left"))
        i1 = int(np.searchsorted(t, T * (1 + 1e-12), side="right")) - 1
        idx.append((i0, i1))
    return t, idx


def _closedend_batch(
    gammas: Sequence[float],
    windows: Sequence[tuple[float, float]],
    R: int,
    N: int,
    seed: int,
    weighting: str = "paper",
    grid: str = "natural",
    drift: Optional[Callable[[np.ndarray], np.ndarray]] = None,
) -> np.ndarray:
    t, idx = closed_end_grid(windows, N, grid)
    step_sd = np.sqrt(np.diff(np.concatenate([[0.0], t])))
    weights = np.stack([1.0 / closed_end_weight(t, g, weighting) for g in gammas])
    d = np.zeros_like(t) if drift is None else np.asarray(drift(t), dtype=np.float64)
    return _sup_kernel(
        replication_seeds(seed, R), step_sd, t, d, weights,
        np.array([i for i, _ in idx], dtype=np.int64), np.array([j for _, j in idx], dtype=np.int64), True,
    )


def simulate_closedend_sup(
    gamma: float,
    delta: float,
    T: float,
    R: int = DEFAULT_REPS,
    N: int = DEFAULT_GRID,
    seed: int = DEFAULT_SEED,
    weighting: str = "paper",
    grid: str = "natural",
) -> np.ndarray:
    """Sample sup_{delta <= t <= T} |B1(t) - t B2(1)| / w(t).

    B2(1) is a single standard normal independent of the path B1. With
    ``T == delta`` the supremum is taken at the single point delta.
    """
    _validate(gamma, delta, R, N)
    if T < delta:
        raise MonitorError(f"T={T} must not be smaller than delta={delta}")
    return _closedend_batch([gamma], [(delta, T)], R, N, seed, weighting, grid)[:, 0, 0]


# ---------------------------------------------------------------------------
# local alternatives
# ---------------------------------------------------------------------------


@dataclass
class LocalAlternativeSpec:
    """Drift shape after a change at relative time ``theta_break``.

    ``delta_fn`` is the shape function of the moment functional after the
    change, evaluated on [0, T - theta_break].
    """

    theta_break: float
    delta_fn: Callable[[np.ndarray], np.ndarray]
    T: float

    def __post_init__(self) -> None:
        if not 0.0 < self.theta_break < self.T:
            raise MonitorError("theta_break must lie in (0, T)")

    def drift(self, t: np.ndarray) -> np.ndarray:
        """1{t >= theta} * integral_0^{t - theta} Delta(s) ds by the trapezoidal rule on the grid."""
        t = np.asarray(t, dtype=np.float64)
        out = np.zeros_like(t)
        after = t >= self.theta_break
        if not after.any():
            return out
        u = np.concatenate([[0.0], t[after] - self.theta_break])
        u, inverse = np.unique(u, return_inverse=True)
        vals = np.asarray(self.delta_fn(u), dtype=np.float64) * np.ones_like(u)
        if not np.all(np.isfinite(vals)):
            raise MonitorError("drift quadrature failed: delta_fn returned non-finite values")
        integral = cumulative_trapezoid(vals, u, initial=0.0)
        out[after] = integral[inverse[1:]]
        return out


def simulate_power(
    spec: LocalAlternativeSpec,
    gamma: float,
    delta: float,
    c: float,
    R: int = 10_000,
    N: int = 2_000,
    seed: int = DEFAULT_SEED,
    grid: str = "natural",
) -> float:
    """Probability that the drifted closed-end supremum exceeds ``c``."""
    if not c > 0:
        raise MonitorError("critical value must be positive")
    _validate(gamma, delta, R, N)
    if not delta < spec.T:
        raise MonitorError("delta must be smaller than the horizon T")
    sups = _closedend_batch([gamma], [(delta, spec.T)], R, N, seed, "paper", grid, drift=spec.drift)[:, 0, 0]
    return float(np.mean(sups > c))


# ---------------------------------------------------------------------------
# quantiles and tables
# ---------------------------------------------------------------------------


def quantile(sample, alpha: float) -> float:
    """Empirical (1 - alpha)-quantile, taking the order statistic ceil((1 - alpha) R)."""
    if not 0.0 < alpha < 1.0:
        raise MonitorError(f"alpha must lie in (0, 1), got {alpha}")
    x = np.sort(np.asarray(sample, dtype=np.float64).reshape(-1))
    if x.size == 0:
        raise MonitorError("cannot take a quantile of an empty sample")
    rank = math.ceil(round((1.0 - alpha) * x.size, 9))
    return float(x[min(max(rank, 1), x.size) - 1])


def _norm(x: float) -> float:
    return round(float(x), 12)


def _horizon_key(h) -> Union[str, float]:
    return OPEN_END if h in (None, OPEN_END) else _norm(h)


@dataclass
class CriticalValueTable:
    """Map (gamma, delta, horizon, alpha, weighting) -> critical value with provenance.

    Misses are simulated with the table's (reps, grid, seed) and cached.
    """

    entries: dict = field(default_factory=dict)
    reps: int = DEFAULT_REPS
    grid: int = DEFAULT_GRID
    seed: int = DEFAULT_SEED

    @staticmethod
    def key(gamma, delta, horizon, alpha, weighting="paper") -> tuple:
        return (_norm(gamma), _norm(delta), _horizon_key(horizon), _norm(alpha), weighting)

    def insert(self, gamma, delta, horizon, alpha, c, R, N, seed, weighting="paper") -> None:
        if not c > 0:
            raise MonitorError("critical values must be positive")
        self.entries[self.key(gamma, delta, horizon, alpha, weighting)] = {"c": float(c), "R": int(R), "N": int(N), "seed": int(seed)}

    def get(self, gamma, delta, horizon, alpha, weighting="paper") -> Optional[float]:
        rec = self.entries.get(self.key(gamma, delta, horizon, alpha, weighting))
        return None if rec is None else rec["c"]

    def lookup(self, gamma, delta, horizon=OPEN_END, alpha=0.05, weighting="paper") -> float:
        c = self.get(gamma, delta, horizon, alpha, weighting)
        if c is not None:
            return c
        if horizon in (None, OPEN_END):
            sample = simulate_openend_sup(gamma, delta, self.reps, self.grid, self.seed)
        else:
            sample = simulate_closedend_sup(gamma, delta, float(horizon), self.reps, self.grid, self.seed, weighting)
        c = quantile(sample, alpha)
        self.insert(gamma, delta, horizon, alpha, c, self.reps, self.grid, self.seed, weighting)
        return c

    def to_records(self) -> list[dict]:
        out = []
        for (g, d, h, a, w), rec in sorted(self.entries.items(), key=lambda kv: (kv[0][4], str(kv[0][2]), kv[0][0], kv[0][1], kv[0][3])):
            out.append({"gamma": g, "delta": d, "horizon": h, "alpha": a, "weighting": w, **rec})
        return out

    def save(self, path: Union[str, Path]) -> None:
        Path(path).write_text(json.dumps(self.to_records(), indent=1) + "\n", encoding="utf-8")

    @classmethod
    def from_records(cls, records: Iterable[dict], **kwargs) -> "CriticalValueTable":
        table = cls(**kwargs)
        for r in records:
            table.insert(r["gamma"], r["delta"], r["horizon"], r["alpha"], r["c"], r["R"], r["N"], r["seed"], r.get("weighting", "paper"))
        return table

    @classmethod
    def load(cls, path: Union[str, Path], **kwargs) -> "CriticalValueTable":
        return cls.from_records(json.loads(Path(path).read_text(encoding="utf-8")), **kwargs)


TABLE_GAMMAS = (0.0, 0.25, 0.45)
TABLE_DELTAS = (0.05, 0.1, 0.25)
TABLE_ALPHAS = (0.01, 0.05, 0.1)
TABLE_HORIZONS = (2.0, 4.0)


def build_table(
    gammas: Sequence[float] = TABLE_GAMMAS,
    deltas: Sequence[float] = TABLE_DELTAS,
    alphas: Sequence[float] = TABLE_ALPHAS,
    horizons: Sequence[float] = TABLE_HORIZONS,
    R: int = DEFAULT_REPS,
    N: int = DEFAULT_GRID,
    seed: int = DEFAULT_SEED,
) -> CriticalValueTable:
    """Simulate a full table; all (gamma, delta) cells of one horizon share paths."""
    table = CriticalValueTable(reps=R, grid=N, seed=seed)
    sups = _openend_batch(gammas, deltas, R, N, seed)
    for wi, d in enumerate(deltas):
        for gi, g in enumerate(gammas):
            for a in alphas:
                table.insert(g, d, OPEN_END, a, quantile(sups[:, wi, gi], a), R, N, seed)
    windows = [(d, T) for T in horizons for d in deltas]
    sups = _closedend_batch(gammas, windows, R, N, seed)
    for wi, (d, T) in enumerate(windows):
        for gi, g in enumerate(gammas):
            for a in alphas:
                table.insert(g, d, T, a, quantile(sups[:, wi, gi], a), R, N, seed)
    return table


_DEFAULT: Optional[CriticalValueTable] = None


def default_table() -> CriticalValueTable:
    """The shipped table (loaded once); misses are simulated and cached in memory."""
    global _DEFAULT
    if _DEFAULT is None:
        ref = resources.files("projmon") / "data" / "critval_default.json"
        if ref.is_file():
            _DEFAULT = CriticalValueTable.from_records(json.loads(ref.read_text(encoding="utf-8")))
        else:
            _DEFAULT = CriticalValueTable()
    return _DEFAULT


def refine_path(times: np.ndarray, values: np.ndarray, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Halve every step of a Brownian path by Brownian-bridge midpoints.

    The returned path contains the original points unchanged, so any grid
    supremum can only grow under refinement.
    """
    times = np.asarray(times, dtype=np.float64)
    values = np.asarray(values, dtype=np.float64)
    t0 = np.concatenate([[0.0], times[:-1]])
    v0 = np.concatenate([[0.0], values[:-1]])
    h = times - t0
    mid_t = t0 + h / 2
    mid_v = (v0 + values) / 2 + np.sqrt(h / 4) * rng.standard_normal(times.size)
    out_t = np.empty(2 * times.size)
    out_v = np.empty(2 * times.size)
    out_t[0::2], out_t[1::2] = mid_t, times
    out_v[0::2], out_v[1::2] = mid_v, values
    return out_t, out_v


def grid_sup(times: np.ndarray, values: np.ndarray, gamma: float, start: float) -> float:
    """max |B(t)| / t^gamma over the path points with t >= start."""
    times = np.asarray(times)
    keep = times >= start
    return float(np.max(np.abs(values[keep]) / times[keep] ** gamma))
