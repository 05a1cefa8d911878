"""
Training-sample moment estimation and thresholded covariance / precision
matrices.

Thresholding operators act elementwise. Hard keeps x when |x| >= t,
lasso returns sign(x)(|x| - t)_+, and SCAD interpolates between the two
with parameter a > 2:

    |x| <= 2t        sign(x)(|x| - t)_+
    2t < |x| <= at   ((a - 1) x - sign(x) a t) / (a - 2)
    |x| > at         x
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Union

import numpy as np

from .core import MonitorError

HARD = "hard"
LASSO = "lasso"
SCAD = "scad"


@dataclass
class MomentEstimates:
    mu_hat: np.ndarray
    M_hat: np.ndarray
    Sigma_hat: np.ndarray
    m: int


def _sym(a: np.ndarray) -> np.ndarray:
    return (a + a.T) / 2.0


def estimate_moments(Y) -> MomentEstimates:
    """Sample mean, second-moment matrix and covariance (divisor m)."""
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim != 2:
        raise MonitorError("training block must be two-dimensional (m, d)")
    m = Y.shape[0]
    if m < 2:
        raise MonitorError(f"need at least two observations, got {m}")
    mu = Y.mean(axis=0)
    M = _sym(Y.T @ Y / m)
    Sigma = _sym(M - np.outer(mu, mu))
    return MomentEstimates(mu, M, Sigma, m)


# ---------------------------------------------------------------------------
# thresholding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ThresholdRule:
    """Operator kind plus either a fixed threshold or the rate rule t = C_th d^(4/q) / sqrt(m)."""

    kind: str = LASSO
    t: Optional[float] = None
    C_th: float = 1.0
    q: float = 8.0
    a: float = 3.7

    def __post_init__(self) -> None:
        if self.kind not in (HARD, LASSO, SCAD):
            raise MonitorError(f"unknown threshold kind {self.kind!r}")
        if self.t is not None and self.t < 0:
            raise MonitorError("threshold must be nonnegative")
        if self.kind == SCAD and not self.a > 2:
            raise MonitorError("SCAD needs a > 2")
        if not self.q > 4:
            raise MonitorError("q must exceed 4")
        if self.C_th < 0:
            raise MonitorError("C_th must be nonnegative")

    def value(self, d: int, m: int) -> float:
        if self.t is not None:
            return float(self.t)
        return paper_threshold(d, m, self.C_th, self.q)


def paper_threshold(d: int, m: int, C_th: float = 1.0, q: float = 8.0) -> float:
    return C_th * d ** (4.0 / q) / math.sqrt(m)


def _shrink(ax: np.ndarray, t: float) -> np.ndarray:
    """(ax - t)_+ rounded toward ax, so that ax - result <= t holds exactly.

    The rounding error of ax - t is recovered with the TwoSum transformation;
    when the float result fell below the exact difference it is bumped one ulp.
    """
    d = ax - t
    bb = d - ax
    err = (ax - (d - bb)) + (-t - bb)
    d = np.where(err > 0, np.nextafter(d, np.inf), d)
    return np.maximum(d, 0.0)


def threshold_scalar(x, t: float, kind: str = LASSO, a: float = 3.7):
    """Elementwise thresholding operator applied to a scalar or array."""
    x = np.asarray(x, dtype=np.float64)
    ax = np.abs(x)
    if kind == HARD:
        return np.where(ax >= t, x, 0.0) if t > 0 else x.copy()
    shrunk = _shrink(ax, t)
    soft = np.sign(x) * shrunk
    if kind == LASSO:
        return soft
    if kind == SCAD:
        mid = ((a - 1.0) * x - np.sign(x) * a * t) / (a - 2.0)
        # keep rounding from breaking |s| <= |x| and |s - x| <= t between the knots
        mid = np.sign(x) * np.clip(np.abs(mid), shrunk, ax)
        return np.where(ax <= 2 * t, soft, np.where(ax <= a * t, mid, x))
    raise MonitorError(f"unknown threshold kind {kind!r}")


def apply_threshold(Sigma, rule: ThresholdRule, m: Optional[int] = None, keep_diagonal: bool = True) -> np.ndarray:
    """Threshold every entry of a symmetric matrix.

    Diagonal entries are left untouched unless ``keep_diagonal=False``.
    ``m`` is needed only when the rule derives t from the sample size.
    """
    Sigma = np.asarray(Sigma, dtype=np.float64)
    if rule.t is None and m is None:
        raise MonitorError("the rate-based threshold needs the sample size m")
    t = rule.value(Sigma.shape[0], m or 1)
    out = threshold_scalar(Sigma, t, rule.kind, rule.a)
    if keep_diagonal:
        np.fill_diagonal(out, np.diag(Sigma))
    # the operator is elementwise, so a symmetric input stays exactly symmetric
    return out


# ---------------------------------------------------------------------------
# spectral quantities
# ---------------------------------------------------------------------------


def spectral_norm(A, tol: float = 1e-10, max_iter: int = 1000, seed: int = 0) -> float:
    """Largest absolute eigenvalue of a symmetric matrix.

    Power iteration with a Rayleigh-quotient stopping rule; falls back to a
    full symmetric eigendecomposition if the iteration cap is hit (e.g. when
    the two extreme eigenvalues have nearly equal magnitude).
    """
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise MonitorError("spectral_norm needs a square matrix")
    if not np.all(np.isfinite(A)):
        raise MonitorError("spectral_norm: non-finite entries")
    n = A.shape[0]
    if n == 0:
        return 0.0
    x = np.random.default_rng(seed).standard_normal(n)
    x /= np.linalg.norm(x)
    lam = 0.0
    for _ in range(max_iter):
        y = A @ x
        ny = np.linalg.norm(y)
        if ny == 0.0:
            return float(np.max(np.abs(np.linalg.eigvalsh(A))))
        lam_new = abs(float(x @ y))
        x = y / ny
        # |x'Ax| is a lower bound of the norm, ||Ax|| for a unit x as well; both meet at convergence
        if abs(ny - lam_new) <= tol * max(ny, 1e-300) and abs(lam_new - lam) <= tol * ny:
            return float(ny)
        lam = lam_new
    return float(np.max(np.abs(np.linalg.eigvalsh(A))))


@dataclass(frozen=True)
class UniformityClassParams:
    r: float
    s0: float
    M: float
    eps0: Optional[float] = None

    def __post_init__(self) -> None:
        if not 0.0 <= self.r < 1.0:
            raise MonitorError("r must lie in [0, 1)")
        if not self.s0 > 0 or not self.M > 0:
            raise MonitorError("s0 and M must be positive")
        if self.eps0 is not None and not self.eps0 > 0:
            raise MonitorError("eps0 must be positive")


def _row_lr(Sigma: np.ndarray, r: float) -> np.ndarray:
    a = np.abs(Sigma)
    if r == 0.0:
        return (a != 0).sum(axis=1).astype(np.float64)
    return (a**r).sum(axis=1)


@dataclass
class MembershipResult:
    member: bool
    diagnostics: list[str] = field(default_factory=list)
    lambda_min: float = float("nan")

    def __bool__(self) -> bool:
        return self.member


def membership_check(Sigma, params: UniformityClassParams, atol: float = 1e-12) -> MembershipResult:
    """Check bounded variances, row-wise l_r sparsity and (if eps0 given) the smallest eigenvalue."""
    Sigma = np.asarray(Sigma, dtype=np.float64)
    diag = []
    for i, v in enumerate(np.diag(Sigma)):
        if v > params.M + atol:
            diag.append(f"row {i}: variance {v:.6g} exceeds M={params.M}")
    for i, s in enumerate(_row_lr(Sigma, params.r)):
        if s > params.s0 + atol:
            diag.append(f"row {i}: l_r sum {s:.6g} exceeds s0={params.s0}")
    lam = float(np.linalg.eigvalsh(Sigma)[0])
    if params.eps0 is not None and lam < params.eps0 - atol:
        diag.append(f"eigenvalue: lambda_min {lam:.6g} below eps0={params.eps0}")
    return MembershipResult(not diag, diag, lam)


@dataclass
class BoundCheck:
    lhs: float
    rhs: float
    holds: bool


def threshold_bound(Gamma, Sigma, params: UniformityClassParams, t: float, gamma_split: float) -> float:
    """Right-hand side of the operator-norm error bound for a thresholded matrix."""
    diff = np.abs(np.asarray(Gamma) - np.asarray(Sigma))
    sup = float(diff.max())
    count = int((diff > (1.0 - gamma_split) * t).sum())
    r, s0 = params.r, params.s0
    return 2 * t ** (1 - r) * s0 + sup * (count + s0 / (gamma_split * t) ** r + 2 * s0 / t**r)


def threshold_bound_check(
    Gamma, Sigma, params: UniformityClassParams, t: float, gamma_split: float, kind: str = LASSO, a: float = 3.7
) -> BoundCheck:
    """Evaluate both sides of the thresholding error bound.

    The operator is applied to every entry, diagonal included. Raises when
    Sigma is outside the uniformity class.
    """
    if not t > 0:
        raise MonitorError("threshold must be positive")
    if not 0 < gamma_split < 1:
        raise MonitorError("gamma_split must lie in (0, 1)")
    check = membership_check(Sigma, params)
    if not check:
        raise MonitorError("Sigma outside the uniformity class: " + "; ".join(check.diagnostics))
    lhs = spectral_norm(threshold_scalar(Gamma, t, kind, a) - np.asarray(Sigma))
    rhs = threshold_bound(Gamma, Sigma, params, t, gamma_split)
    return BoundCheck(lhs, rhs, lhs <= rhs + 1e-9)


# ---------------------------------------------------------------------------
# precision matrices
# ---------------------------------------------------------------------------


@dataclass
class PrecisionEstimate:
    precision: np.ndarray
    jitter: float
    lambda_min: float

    @property
    def adjusted(self) -> bool:
        return self.jitter > 0


def precision_estimate(Sigma, eps0: float) -> PrecisionEstimate:
    """Inverse of a symmetric matrix through a Cholesky factorization.

    If the smallest eigenvalue is below eps0 / 2 the diagonal is lifted by
    eps0 / 2 - lambda_min first; the lift is reported in ``jitter``.
    """
    A = np.asarray(Sigma, dtype=np.float64)
    if not np.all(np.isfinite(A)):
        raise MonitorError("precision_estimate: non-finite entries")
    A = _sym(A)
    lam = float(np.linalg.eigvalsh(A)[0])
    jitter = 0.0
    if lam < eps0 / 2:
        jitter = eps0 / 2 - lam
        A = A + jitter * np.eye(A.shape[0])
    L = np.linalg.cholesky(A)
    Linv = np.linalg.solve(L, np.eye(A.shape[0]))
    return PrecisionEstimate(_sym(Linv.T @ Linv), jitter, lam)


def thresholded_precision(Y, rule: ThresholdRule, eps0: float) -> tuple[MomentEstimates, np.ndarray, PrecisionEstimate]:
    mom = estimate_moments(Y)
    S = apply_threshold(mom.Sigma_hat, rule, mom.m)
    return mom, S, precision_estimate(S, eps0)


def select_c_th(Y, kind: str = LASSO, q: float = 8.0, grid=None, splits: int = 20, seed: int = 0) -> float:
    """Pick C_th by random 2-fold splits.

    The first half is thresholded at the rate rule for its size, and each
    candidate is scored by the operator-norm distance to the raw covariance
    of the other half. The score is averaged over ``splits`` splits.
    """
    Y = np.asarray(Y, dtype=np.float64)
    m, d = Y.shape
    grid = np.linspace(0.0, 3.0, 31) if grid is None else np.asarray(grid, dtype=np.float64)
    rng = np.random.default_rng(seed)
    loss = np.zeros(grid.size)
    for _ in range(splits):
        perm = rng.permutation(m)
        a, b = perm[: m // 2], perm[m // 2 :]
        Sa = estimate_moments(Y[a]).Sigma_hat
        Sb = estimate_moments(Y[b]).Sigma_hat
        for i, C in enumerate(grid):
            rule = ThresholdRule(kind, C_th=float(C), q=q)
            loss[i] += spectral_norm(apply_threshold(Sa, rule, len(a)) - Sb)
    return float(grid[int(np.argmin(loss))])


# ---------------------------------------------------------------------------
# serialization
# ---------------------------------------------------------------------------


def matrix_to_json(A) -> str:
    A = np.asarray(A, dtype=np.float64)
    iu = np.triu_indices(A.shape[0])
    return json.dumps({"d": int(A.shape[0]), "triu": A[iu].tolist()})


def matrix_from_json(text: Union[str, dict]) -> np.ndarray:
    obj = json.loads(text) if isinstance(text, str) else text
    d = int(obj["d"])
    A = np.zeros((d, d))
    iu = np.triu_indices(d)
    A[iu] = obj["triu"]
    A.T[iu] = obj["triu"]
    return A


def matrix_to_csv(A, path) -> None:
    np.savetxt(path, np.asarray(A, dtype=np.float64), delimiter=",", fmt="%.17g")


def matrix_from_csv(path) -> np.ndarray:
    return np.loadtxt(path, delimiter=",", ndmin=2)
