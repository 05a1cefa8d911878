"""
Synthetic streams.

* ``VectorMA``: Y_t = mu + sum_{l=0}^{L} c_l A_l eta_{t-l} with c_0 = 1,
  c_l = l^(-beta), fixed row-normalized mixing matrices A_l and i.i.d.
  innovations. Replacing the innovation at lag l moves Y_t by exactly
  c_l A_l (eta - eta'), so the physical dependence decays like l^(-beta).
* ``LocallyStationary``: a VectorMA core sampled through Lipschitz mean and
  scale curves of u = t/m.
* ``CovarianceBreak``: i.i.d. N(0, Sigma0) up to ``break_at``, N(0, SigmaA) after.
* ``Regression63``: the three-regime cosine regression with a regressor-law
  change at t = 2000 and a regression-function change at t = 4000.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import MonitorError, ObservationStream, rng_for

CHANGE_1 = 2000
CHANGE_2 = 4000


@dataclass
class VectorMA:
    d: int = 5
    beta: float = 3.0
    L_max: int = 20
    innovation: str = "normal"
    df: float = 10.0
    mu: Union[float, np.ndarray] = 0.0
    seed: int = 0

    def __post_init__(self) -> None:
        if not self.beta > 2:
            raise MonitorError(f"decay beta must exceed 2, got {self.beta}")
        if self.L_max < 0:
            raise MonitorError("L_max must be nonnegative")
        if self.innovation not in ("normal", "student_t"):
            raise MonitorError(f"unknown innovation law {self.innovation!r}")
        if self.innovation == "student_t" and not self.df > 4:
            raise MonitorError("student_t innovations need df > 4 for moments of order q > 4")
        if self.d < 1:
            raise MonitorError("dimension must be positive")

    def coefficients(self) -> np.ndarray:
        lags = np.arange(self.L_max + 1, dtype=np.float64)
        c = np.ones_like(lags)
        c[1:] = lags[1:] ** (-self.beta)
        return c

    def mixing(self) -> np.ndarray:
        rng = rng_for(self.seed, "datagen", "mixing")
        A = rng.standard_normal((self.L_max + 1, self.d, self.d))
        return A / np.linalg.norm(A, axis=2, keepdims=True)

    def innovations(self, n: int, rng: np.random.Generator) -> np.ndarray:
        shape = (n + self.L_max, self.d)
        if self.innovation == "normal":
            return rng.standard_normal(shape)
        # unit-variance t innovations
        return rng.standard_t(self.df, shape) * math.sqrt((self.df - 2) / self.df)

    def apply(self, eta: np.ndarray) -> np.ndarray:
        """Outputs for an innovation array of shape (n + L_max, d); row L_max + t - 1 is eta_t."""
        L = self.L_max
        n = eta.shape[0] - L
        c, A = self.coefficients(), self.mixing()
        Y = np.zeros((n, self.d))
        for lag in range(L + 1):
            Y += c[lag] * eta[L - lag : L - lag + n] @ A[lag].T
        return Y + self.mu


@dataclass
class LocallyStationary:
    """Mean and scale modulated by Lipschitz curves of u = t / m."""

    core: VectorMA = field(default_factory=VectorMA)
    m: int = 500
    mean_amp: float = 0.5
    scale_amp: float = 0.5

    def curves(self, u: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        phase = np.arange(self.core.d) / max(self.core.d, 1)
        arg = 2 * np.pi * (np.asarray(u)[:, None] + phase[None, :])
        mean = self.mean_amp * np.sin(arg)
        scale = 1.0 + self.scale_amp * (1.0 - np.cos(arg)) / 2.0
        return mean, scale

    def apply(self, X: np.ndarray, t: np.ndarray) -> np.ndarray:
        mean, scale = self.curves(np.asarray(t, dtype=np.float64) / self.m)
        return mean + scale * X


@dataclass
class CovarianceBreak:
    Sigma0: np.ndarray
    SigmaA: np.ndarray
    break_at: int
    seed: int = 0

    def __post_init__(self) -> None:
        self.Sigma0 = np.atleast_2d(np.asarray(self.Sigma0, dtype=np.float64))
        self.SigmaA = np.atleast_2d(np.asarray(self.SigmaA, dtype=np.float64))
        if self.Sigma0.shape != self.SigmaA.shape:
            raise MonitorError("pre- and post-change covariances must have equal shape")

    @property
    def d(self) -> int:
        return self.Sigma0.shape[0]


@dataclass
class Regression63:
    seed: int = 0
    noise_is_variance: bool = True


GeneratorSpec = Union[VectorMA, LocallyStationary, CovarianceBreak, Regression63]


def generate(spec: GeneratorSpec, n: int, train_len: Optional[int] = None) -> ObservationStream:
    """Draw n observations; deterministic given the spec's seed."""
    if n < 1:
        raise MonitorError("n must be positive")
    train_len = n if train_len is None else train_len
    if isinstance(spec, VectorMA):
        Y = spec.apply(spec.innovations(n, rng_for(spec.seed, "datagen", "innovations")))
        return ObservationStream(Y, train_len)
    if isinstance(spec, LocallyStationary):
        core = spec.core
        X = core.apply(core.innovations(n, rng_for(core.seed, "datagen", "innovations"))) - core.mu
        return ObservationStream(spec.apply(X, np.arange(1, n + 1)), train_len)
    if isinstance(spec, CovarianceBreak):
        rng = rng_for(spec.seed, "datagen", "covbreak")
        Z = rng.standard_normal((n, spec.d))
        k = min(max(spec.break_at, 0), n)
        Y = np.empty((n, spec.d))
        Y[:k] = Z[:k] @ np.linalg.cholesky(spec.Sigma0).T
        Y[k:] = Z[k:] @ np.linalg.cholesky(spec.SigmaA).T
        return ObservationStream(Y, train_len)
    if isinstance(spec, Regression63):
        return generate_regression63(spec.seed, n, spec.noise_is_variance, train_len)
    raise MonitorError(f"unknown generator spec {type(spec).__name__}")


def physical_dependence_proxy(spec: VectorMA, lags, reps: int = 2000, seed: int = 1) -> np.ndarray:
    """Mean |Y_t - Y_t'| where Y_t' has the lag-l innovation replaced by an independent copy.

    Averaged over coordinates and ``reps`` couplings, one value per lag.
    """
    rng = np.random.default_rng(seed)
    out = []
    L = spec.L_max
    for lag in lags:
        if not 1 <= lag <= L:
            raise MonitorError(f"lag {lag} outside 1..{L}")
        diffs = []
        for _ in range(reps):
            eta = spec.innovations(1, rng)
            eta2 = eta.copy()
            eta2[L - lag] = spec.innovations(1, rng)[0]
            diffs.append(np.abs(spec.apply(eta)[0] - spec.apply(eta2)[0]).mean())
        out.append(float(np.mean(diffs)))
    return np.array(out)


def nonstationarity_proxy(spec: LocallyStationary, m: int, reps: int = 500, seed: int = 2) -> float:
    """sum_{t=2}^m (mean |G(t/m, e) - G((t-1)/m, e)|^4)^(1/4), maximized over coordinates.

    Each term uses the same innovation draws at both time points.
    """
    core = spec.core
    rng = np.random.default_rng(seed)
    X = core.apply(core.innovations(reps, rng)) - core.mu  # reps stationary draws of the core
    model = LocallyStationary(core, m, spec.mean_amp, spec.scale_amp)
    u = np.arange(1, m + 1)
    mean, scale = model.curves(u / m)
    # increments of mean + scale * X between consecutive t, for every draw
    dmean, dscale = np.diff(mean, axis=0), np.diff(scale, axis=0)
    inc4 = np.mean((dmean[:, None, :] + dscale[:, None, :] * X[None, :, :]) ** 4, axis=1)
    return float(np.max(np.sum(inc4**0.25, axis=0)))


# ---------------------------------------------------------------------------
# regression scenario
# ---------------------------------------------------------------------------


def regression63_mean(t: np.ndarray, x1: np.ndarray) -> np.ndarray:
    """Noise-free response for 1-based times t and first regressor x1."""
    t = np.asarray(t)
    freq = np.where(t < CHANGE_2, 10 * np.pi, 4 * np.pi)
    return np.cos(freq * np.asarray(x1))


def generate_regression63(seed: int = 0, n: int = 50_000, noise_is_variance: bool = True, train_len: int = 1000) -> ObservationStream:
    """Three regressors and a response column with change points at t = 2000 and t = 4000.

    The noise parameters 0.1 and 0.05 are variances; pass
    ``noise_is_variance=False`` to read them as standard deviations.
    """
    rng = rng_for(seed, "datagen", "regression63")
    t = np.arange(1, n + 1)
    before = t < CHANGE_1
    x = rng.uniform(-0.5, 0.5, n)
    x_star = rng.uniform(0.0, 1.0, n)
    x1 = np.where(before, x, x_star)
    extra = rng.uniform(0.0, 1.0, (n, 2))
    e = rng.standard_normal(n)
    scale_1 = math.sqrt(0.1) if noise_is_variance else 0.1
    scale_2 = math.sqrt(0.05) if noise_is_variance else 0.05
    noise = np.where(t < CHANGE_2, scale_1, scale_2) * e
    z = regression63_mean(t, x1) + noise
    X = np.column_stack([x1, extra])
    return ObservationStream(X, min(train_len, n), response=z)
