"""
Long-run variance of a scalar series by overlapping block (subsampling) sums.

The estimate is the empirical variance of the m - b + 1 scaled sums

    S_j(b) = b^(-1/2) * (x[j] + ... + x[j+b-1]),   j = 0..m-b   (0-based)

around their mean. Block sums are produced by a sliding window with Kahan
compensation, so the cost is O(m) and the result agrees with a direct
two-pass evaluation to rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from .core import MonitorError


@dataclass(frozen=True)
class LrvConfig:
    rho: float = 0.4
    b_override: Optional[int] = None

    def __post_init__(self) -> None:
        if not 0.0 < self.rho < 0.5:
            raise MonitorError(f"rho must lie in (0, 1/2), got {self.rho}")
        if self.b_override is not None and self.b_override < 1:
            raise MonitorError("b_override must be a positive integer")


def bandwidth(m: int, cfg: LrvConfig = LrvConfig()) -> int:
    """Block length: ``b_override`` or floor(m**rho), clamped to [2, m // 2]."""
    if m < 4:
        raise MonitorError(f"long-run variance needs m >= 4 observations, got {m}")
    if cfg.b_override is not None:
        if cfg.b_override >= m:
            raise MonitorError(f"b_override={cfg.b_override} must be smaller than m={m}")
        b = cfg.b_override
    else:
        b = int(math.floor(m**cfg.rho + 1e-12))
    return int(min(max(b, 2), m // 2))


@numba.njit(cache=True)
def _sliding_block_sums(x, b):
    n = x.shape[0] - b + 1
    out = np.empty(n)
    s = 0.0
    comp = 0.0
    for i in range(b):
        y = x[i] - comp
        t = s + y
        comp = (t - s) - y
        s = t
    out[0] = s
    for j in range(1, n):
        # add x[j+b-1], remove x[j-1]
        y = x[j + b - 1] - comp
        t = s + y
        comp = (t - s) - y
        s = t
        y = -x[j - 1] - comp
        t = s + y
        comp = (t - s) - y
        s = t
        out[j] = s
    return out


def block_statistics(x: np.ndarray, b: int) -> np.ndarray:
    """Scaled overlapping block sums S_j(b), j = 0..m-b."""
    x = np.ascontiguousarray(x, dtype=np.float64)
    return _sliding_block_sums(x, int(b)) / math.sqrt(b)


def lrv_estimate(projected_squares, cfg: LrvConfig = LrvConfig()) -> float:
    """Estimate the long-run variance of ``projected_squares``.

    Parameters
    ----------
    projected_squares : array_like, shape (m,)
        Training-sample series, e.g. (v' Y_t)^2.
    cfg : LrvConfig
        Bandwidth rule.

    Returns
    -------
    float
        Strictly positive variance estimate.

    Raises
    ------
    MonitorError
        If m < 4, the series is non-finite, or every block sum coincides
        (degenerate long-run variance).
    """
    x = np.asarray(projected_squares, dtype=np.float64).reshape(-1)
    if not np.all(np.isfinite(x)):
        raise MonitorError("long-run variance input has non-finite values")
    b = bandwidth(x.size, cfg)
    s = block_statistics(x, b)
    centered = s - s.mean()
    var = float(np.dot(centered, centered) / s.size)
    scale = float(np.max(np.abs(s))) if s.size else 0.0
    if not var > (64 * np.finfo(float).eps * max(scale, 1e-300)) ** 2:
        raise MonitorError("degenerate long-run variance (all block sums equal)")
    return var
