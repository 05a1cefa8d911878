"""
Projection vectors built from estimated moments: minimum-variance and
target-return (Markowitz) portfolios, support restriction and gross-exposure
diagnostics.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .core import MonitorError, ProjectionVector


def _solve(precision: np.ndarray, rhs: np.ndarray) -> np.ndarray:
    return np.asarray(precision, dtype=np.float64) @ rhs


def min_variance_portfolio(precision) -> ProjectionVector:
    """w = P 1 / (1' P 1) for a precision matrix P; weights sum to one."""
    P = np.asarray(precision, dtype=np.float64)
    ones = np.ones(P.shape[0])
    x = _solve(P, ones)
    denom = float(ones @ x)
    if not denom > 0:
        raise MonitorError("1' P 1 must be positive; the precision matrix is not positive definite")
    w = x / denom
    w /= w.sum()
    return ProjectionVector(w, meta={"kind": "minvar"})


def target_return_portfolio(precision, mu, mu0: float) -> ProjectionVector:
    """Variance-minimal w with w'1 = 1 and w'mu = mu0.

    The solution is a P 1 + b P mu with (a, b) from the 2x2 system built
    from A = 1'P1, B = 1'P mu, C = mu'P mu.
    """
    P = np.asarray(precision, dtype=np.float64)
    mu = np.asarray(mu, dtype=np.float64).reshape(-1)
    ones = np.ones(P.shape[0])
    p1, pmu = _solve(P, ones), _solve(P, mu)
    A, B, C = float(ones @ p1), float(ones @ pmu), float(mu @ pmu)
    det = A * C - B * B
    if not abs(det) > 1e-12 * max(A * C, 1e-300):
        raise MonitorError("degenerate target-return constraint (mu is parallel to the ones vector)")
    a, b = np.linalg.solve(np.array([[A, B], [B, C]]), np.array([1.0, mu0]))
    w = a * p1 + b * pmu
    return ProjectionVector(w, meta={"kind": "target", "mu0": float(mu0)})


def restrict_support(v: ProjectionVector, support: Iterable[int]) -> ProjectionVector:
    """Zero every entry outside ``support`` (0-based indices)."""
    A = frozenset(int(i) for i in support)
    if not A:
        raise MonitorError("support set must be nonempty")
    if min(A) < 0 or max(A) >= v.dim:
        raise MonitorError(f"support indices must lie in 0..{v.dim - 1}")
    w = np.zeros_like(v.entries)
    idx = sorted(A)
    w[idx] = v.entries[idx]
    meta = dict(v.meta, l1=float(np.abs(w).sum()), l2=float(np.linalg.norm(w)))
    return ProjectionVector(w, support=A, meta=meta)


def gross_exposure(v) -> float:
    w = v.entries if isinstance(v, ProjectionVector) else np.asarray(v, dtype=np.float64)
    return float(np.abs(w).sum())


# plug-in maps (precision, mean) -> vector
PLUGINS: dict[str, Callable[..., ProjectionVector]] = {
    "minvar": lambda P, mu, **kw: min_variance_portfolio(P),
    "target": lambda P, mu, mu0, **kw: target_return_portfolio(P, mu, mu0),
}


def register_linear_plugin(name: str, matrix) -> None:
    """Register w = L mu / (1' L mu) for a fixed matrix L."""
    L = np.asarray(matrix, dtype=np.float64)

    def plug(P, mu, **kw):
        x = L @ np.asarray(mu, dtype=np.float64)
        s = x.sum()
        if s == 0:
            raise MonitorError(f"plug-in {name!r}: weights sum to zero, cannot normalize")
        return ProjectionVector(x / s, meta={"kind": name})

    PLUGINS[name] = plug


def plugin_portfolio(name: str, precision, mu, **kwargs) -> ProjectionVector:
    try:
        f = PLUGINS[name]
    except KeyError:
        raise MonitorError(f"unknown plug-in {name!r}; registered: {sorted(PLUGINS)}") from None
    return f(np.asarray(precision, dtype=np.float64), mu, **kwargs)


@dataclass
class PortfolioSpec:
    kind: str = "minvar"
    mu0: Optional[float] = None
    exposure_cap: Optional[float] = None


def build_portfolio(spec: PortfolioSpec, precision, mu=None) -> ProjectionVector:
    if spec.kind == "target":
        if spec.mu0 is None or mu is None:
            raise MonitorError("target-return portfolio needs mu and mu0")
        return target_return_portfolio(precision, mu, spec.mu0)
    return plugin_portfolio(spec.kind, precision, mu)


def portfolio_report(w: ProjectionVector, spec: PortfolioSpec, mu=None) -> dict:
    """JSON-ready summary: weights, gross exposure and constraint residuals."""
    resid = {"sum_to_one": float(w.entries.sum() - 1.0)}
    if spec.kind == "target" and mu is not None:
        resid["target_return"] = float(w.entries @ np.asarray(mu) - spec.mu0)
    out = {
        "weights": w.entries.tolist(),
        "gross_exposure": gross_exposure(w),
        "kind": spec.kind,
        "constraints_residuals": resid,
    }
    if spec.exposure_cap is not None:
        out["exposure_cap"] = spec.exposure_cap
        out["exceeds_cap"] = out["gross_exposure"] > spec.exposure_cap
    return out


def portfolio_json(w: ProjectionVector, spec: PortfolioSpec, mu=None) -> str:
    return json.dumps(portfolio_report(w, spec, mu))
