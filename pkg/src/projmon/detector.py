"""
Weighted CUSUM detector for the projected second-moment functional.

For a frozen projection v and training sum  A = sum_{j<=m} (v'Y_j)^2  the
detector after k monitoring observations is

    Q(m, k) = | sum_{m<i<=m+k} (v'Y_i)^2 - (k/m) A |

and the procedure signals at the first k >= ceil(m*delta) with
Q(m, k) / sigma0 > c * g(m, k). The residual variant cumulates
(z_i - v'Y_i)^2 instead of (v'Y_i)^2.

``monitor_step`` and ``run_monitor`` share one compiled kernel, so stepping
one observation at a time and replaying a whole block give bit-identical
trajectories.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Optional, Union

import numba
import numpy as np

from .core import BoundaryConfig, MonitorError, MonitorState, ObservationStream, ProjectionVector
from .lrv import LrvConfig, lrv_estimate

PROJECTION = "projection"
RESIDUAL = "residual"


@numba.njit(cache=True)
def _g(m, k, gamma, flat):
    if flat:
        return math.sqrt(m)
    return math.sqrt(m) * ((m + k) / m) * (k / (m + k)) ** gamma


@numba.njit(cache=True)
def _dot(v, y):
    s = 0.0
    for j in range(v.shape[0]):
        s += v[j] * y[j]
    return s


@numba.njit(cache=True)
def _series(v, Y, z, residual):
    n = Y.shape[0]
    out = np.empty(n)
    for i in range(n):
        p = _dot(v, Y[i])
        if residual:
            e = z[i] - p
            out[i] = e * e
        else:
            out[i] = p * p
    return out


@numba.njit(cache=True)
def _advance(vals, m, k, mon_sum, train_sum, sigma, c, gamma, flat, k0, k_last, stats, bounds):
    # status: 0 consumed all, 1 signal at row i, 2 horizon reached before row i, 3 non-finite at row i
    n = vals.shape[0]
    for i in range(n):
        if k_last >= 0 and k + 1 > k_last:
            return 2, i, k, mon_sum
        x = vals[i]
        if not np.isfinite(x):
            return 3, i, k, mon_sum
        k += 1
        mon_sum += x
        if k >= k0:
            q = abs(mon_sum - (k / m) * train_sum)
            stat = q / sigma
            bound = c * _g(m, k, gamma, flat)
            stats[i] = stat
            bounds[i] = bound
            if stat > bound:
                return 1, i, k, mon_sum
        else:
            stats[i] = np.nan
            bounds[i] = np.nan
    return 0, n, k, mon_sum


def boundary_g(m: int, k, gamma: float, weighting: str = "paper"):
    """g(m, k) = m^(1/2) ((m + k) / m) (k / (m + k))^gamma.

    ``k`` may be an integer or an integer array. ``weighting="flat"`` gives
    the constant m^(1/2).
    """
    if m < 1:
        raise MonitorError("m must be positive")
    if not 0.0 <= gamma < 0.5:
        raise MonitorError(f"gamma must lie in [0, 1/2), got {gamma}")
    flat = weighting == "flat"
    ks = np.asarray(k)
    if np.any(ks < 0) or (np.any(ks == 0) and gamma > 0 and not flat):
        raise MonitorError("boundary is undefined at k = 0 for gamma > 0")
    if ks.ndim == 0:
        return float(_g(float(m), float(ks), float(gamma), flat))
    return np.array([_g(float(m), float(x), float(gamma), flat) for x in ks.ravel()]).reshape(ks.shape)


def detector_q(train_sum: float, mon_sum: float, m: int, k: int) -> float:
    """Q(m, k) = |mon_sum - (k / m) train_sum|."""
    if m < 1 or k < 1:
        raise MonitorError("detector needs m >= 1 and k >= 1")
    return abs(mon_sum - (k / m) * train_sum)


# ---------------------------------------------------------------------------
# events and reports
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SignalEvent:
    k: int
    time: int
    stat: float
    bound: float
    kind: str = PROJECTION

    def to_dict(self) -> dict:
        return {"signal": True, "k": self.k, "time": self.time, "stat": self.stat, "bound": self.bound, "kind": self.kind}


class TerminalNoSignal:
    """Returned by ``monitor_step`` once a closed-end horizon has been passed."""

    _instance = None

    def __new__(cls):
        if cls._instance is None:
            cls._instance = super().__new__(cls)
        return cls._instance

    def __repr__(self) -> str:
        return "TERMINAL_NO_SIGNAL"


TERMINAL_NO_SIGNAL = TerminalNoSignal()


def _state_params(state: MonitorState):
    b = state.boundary
    k_last = b.last_index(state.m)
    return (
        float(state.m), float(state.train_sum), float(state.sigma0_hat), float(state.c), float(b.gamma),
        b.weighting == "flat", b.start_index(state.m), -1 if k_last is None else int(k_last),
    )


def _projected(state: MonitorState, Y: np.ndarray, z) -> np.ndarray:
    Y = np.ascontiguousarray(Y, dtype=np.float64)
    if Y.ndim != 2 or Y.shape[1] != state.v_hat.dim:
        raise MonitorError(f"dimension mismatch: expected {state.v_hat.dim} entries per observation")
    residual = state.kind == RESIDUAL
    if residual:
        if z is None:
            raise MonitorError("the residual detector needs a response z for every observation")
        z = np.ascontiguousarray(np.reshape(z, -1), dtype=np.float64)
        if z.shape[0] != Y.shape[0]:
            raise MonitorError("response length does not match the observations")
    else:
        z = np.zeros(0)
    return _series(state.v_hat.entries, Y, z, residual)


def monitor_step(state: MonitorState, y, z: Optional[float] = None):
    """Consume one observation.

    Returns
    -------
    (MonitorState, event)
        ``event`` is a SignalEvent when the boundary is crossed,
        TERMINAL_NO_SIGNAL when a closed-end horizon has already been
        reached (state unchanged), else None. A state that has already
        signaled is returned unchanged.
    """
    if state.signaled_at is not None:
        return state, None
    vals = _projected(state, np.reshape(np.asarray(y, dtype=np.float64), (1, -1)), None if z is None else [z])
    m, train_sum, sigma, c, gamma, flat, k0, k_last = _state_params(state)
    stats, bounds = np.empty(1), np.empty(1)
    status, _, k, mon_sum = _advance(vals, m, state.k, state.mon_sum, train_sum, sigma, c, gamma, flat, k0, k_last, stats, bounds)
    if status == 2:
        return state, TERMINAL_NO_SIGNAL
    if status == 3:
        raise MonitorError(f"non-finite projected value at time {state.m + state.k + 1}")
    if status == 1:
        event = SignalEvent(k, state.m + k, float(stats[0]), float(bounds[0]), state.kind)
        return replace(state, k=k, mon_sum=mon_sum, signaled_at=k), event
    return replace(state, k=k, mon_sum=mon_sum), None


@dataclass
class RunReport:
    """Trajectory of a monitoring run (only indices k >= ceil(m*delta))."""

    k: np.ndarray
    stat: np.ndarray
    bound: np.ndarray
    event: Optional[SignalEvent]
    state: MonitorState
    truncated: bool = False
    horizon_reached: bool = False

    @property
    def signal_time(self) -> Optional[int]:
        return None if self.event is None else self.event.time

    def records(self):
        for k, s, b in zip(self.k, self.stat, self.bound):
            yield {"k": int(k), "stat": float(s), "bound": float(b)}
        if self.event is not None:
            yield self.event.to_dict()

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r) + "\n" for r in self.records())

    def write_jsonl(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.to_jsonl(), encoding="utf-8")


def run_monitor(state: MonitorState, Y, z=None, start_time: Optional[int] = None) -> RunReport:
    """Feed a block of monitoring observations through the detector.

    ``Y`` holds the observations following the state's current index; the
    run stops at the first signal, at a closed-end horizon, or at the end of
    the block (``truncated=True`` for a closed-end run that ran out of data).
    """
    if state.signaled_at is not None:
        empty = np.zeros(0)
        return RunReport(np.zeros(0, dtype=np.int64), empty, empty, None, state)
    Y = np.asarray(Y, dtype=np.float64)
    if Y.ndim == 1:
        Y = Y.reshape(-1, state.v_hat.dim)
    vals = _projected(state, Y, z)
    m, train_sum, sigma, c, gamma, flat, k0, k_last = _state_params(state)
    stats = np.full(vals.shape[0], np.nan)
    bounds = np.full(vals.shape[0], np.nan)
    status, i, k, mon_sum = _advance(vals, m, state.k, state.mon_sum, train_sum, sigma, c, gamma, flat, k0, k_last, stats, bounds)
    if status == 3:
        t = state.m + state.k + i + 1
        raise MonitorError(f"non-finite projected value at time {t}")
    used = i + 1 if status == 1 else i
    ks = state.k + np.arange(1, used + 1)
    keep = ks >= k0
    event = None
    new_state = replace(state, k=k, mon_sum=mon_sum)
    if status == 1:
        event = SignalEvent(k, state.m + k, float(stats[i]), float(bounds[i]), state.kind)
        new_state = replace(new_state, signaled_at=k)
    horizon_reached = status == 2 or (k_last >= 0 and k >= k_last)
    truncated = k_last >= 0 and not horizon_reached and status != 1
    return RunReport(ks[keep], stats[:used][keep], bounds[:used][keep], event, new_state, truncated, horizon_reached)


# ---------------------------------------------------------------------------
# configuration and training phase
# ---------------------------------------------------------------------------


@dataclass
class MonitorConfig:
    """Everything needed to turn a training block into a MonitorState.

    ``c`` overrides the critical-value lookup by (gamma, delta, horizon, alpha).
    """

    v: Union[ProjectionVector, np.ndarray]
    boundary: BoundaryConfig = field(default_factory=BoundaryConfig)
    alpha: float = 0.05
    c: Optional[float] = None
    lrv: LrvConfig = field(default_factory=LrvConfig)
    kind: str = PROJECTION

    def projection(self) -> ProjectionVector:
        return self.v if isinstance(self.v, ProjectionVector) else ProjectionVector(np.asarray(self.v, dtype=np.float64))

    def critical_value(self, table=None) -> float:
        if self.c is not None:
            return float(self.c)
        from .critval import default_table

        table = default_table() if table is None else table
        b = self.boundary
        return table.lookup(b.gamma, b.delta, b.horizon, self.alpha, b.weighting)


def training_series(v: ProjectionVector, Y, z=None, kind: str = PROJECTION) -> np.ndarray:
    """(v'Y_t)^2 or (z_t - v'Y_t)^2 over a block, with the detector's own arithmetic."""
    probe = MonitorState(v, 1.0, 0.0, 1, 1.0, BoundaryConfig(), kind=kind)
    return _projected(probe, np.atleast_2d(np.asarray(Y, dtype=np.float64)), z)


def start_monitor(train_Y, cfg: MonitorConfig, train_z=None, table=None) -> MonitorState:
    """Freeze the training-phase quantities: v, sigma0 (via lrv), training sum, c."""
    v = cfg.projection()
    train_Y = np.atleast_2d(np.asarray(train_Y, dtype=np.float64))
    m = train_Y.shape[0]
    if m < 2:
        raise MonitorError("insufficient training data: need m >= 2")
    series = training_series(v, train_Y, train_z, cfg.kind)
    if not np.all(np.isfinite(series)):
        raise MonitorError("non-finite projected value in the training sample")
    sigma0 = math.sqrt(lrv_estimate(series, cfg.lrv))
    return MonitorState(
        v_hat=v,
        sigma0_hat=sigma0,
        train_sum=float(np.sum(series)),
        m=m,
        c=cfg.critical_value(table),
        boundary=cfg.boundary,
        kind=cfg.kind,
    )


def run_stream(stream: ObservationStream, cfg: MonitorConfig, table=None) -> RunReport:
    """Train on the stream's first m rows, then monitor the rest."""
    if len(stream) < stream.train_len:
        raise MonitorError("insufficient training data: stream shorter than train_len")
    z = stream.response
    state = start_monitor(stream.training, cfg, None if z is None else z[: stream.train_len], table)
    return run_monitor(state, stream.monitoring, None if z is None else z[stream.train_len :])


def run_closed_end(stream: ObservationStream, cfg: MonitorConfig, table=None) -> RunReport:
    """Closed-end run over ceil(m*delta) <= k <= floor(m*T); notes truncation if the stream is short."""
    if cfg.boundary.open_end:
        raise MonitorError("run_closed_end needs a closed-end horizon")
    return run_stream(stream, cfg, table)
