"""
Shared domain types: observation streams, projection vectors, boundary
configuration and the monitor state, plus CSV / JSON plumbing and the seed
derivation tree used by every randomized routine in the package.
"""

from __future__ import annotations

import csv
import json
import math
import zlib
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence, Union

import numpy as np


class MonitorError(ValueError):
    """Raised on invalid input or a failed computation anywhere in the package."""


# ---------------------------------------------------------------------------
# seeds
# ---------------------------------------------------------------------------


def _key(part: Union[int, str]) -> int:
    if isinstance(part, str):
        return zlib.crc32(part.encode("utf-8"))
    return int(part)


def derive_seed(root: int, *path: Union[int, str]) -> np.random.SeedSequence:
    """Child seed sequence at ``path`` below ``root``.

    Every random quantity in the package is drawn from a generator built
    this way, so a single root seed pins a whole invocation and the seed of
    one branch never depends on how many draws another branch made.
    String path components are hashed with CRC32.
    """
    return np.random.SeedSequence(entropy=int(root), spawn_key=tuple(_key(p) for p in path))


def rng_for(root: int, *path: Union[int, str]) -> np.random.Generator:
    return np.random.default_rng(derive_seed(root, *path))


# ---------------------------------------------------------------------------
# streams
# ---------------------------------------------------------------------------


@dataclass
class ObservationStream:
    """Ordered d-dimensional observations with a training prefix of length m.

    ``data`` has shape (n, d); row ``t - 1`` is the observation at time t.
    ``response`` is the optional regression response column z.
    """

    data: np.ndarray
    train_len: int
    response: Optional[np.ndarray] = None
    columns: Optional[list[str]] = None

    def __post_init__(self) -> None:
        self.data = np.asarray(self.data, dtype=np.float64)
        if self.data.ndim == 1:
            self.data = self.data.reshape(-1, 1)
        if self.data.ndim != 2:
            raise MonitorError("stream data must be two-dimensional (n, d)")
        bad = np.argwhere(~np.isfinite(self.data))
        if bad.size:
            t, j = bad[0] + 1
            raise MonitorError(f"non-finite value at (t={t}, j={j})")
        if self.response is not None:
            self.response = np.asarray(self.response, dtype=np.float64).reshape(-1)
            if self.response.shape[0] != self.data.shape[0]:
                raise MonitorError("response length does not match the number of observations")

    @property
    def dim(self) -> int:
        return int(self.data.shape[1])

    def __len__(self) -> int:
        return int(self.data.shape[0])

    @property
    def training(self) -> np.ndarray:
        return self.data[: self.train_len]

    @property
    def monitoring(self) -> np.ndarray:
        return self.data[self.train_len :]


@dataclass
class ValidationReport:
    dim: Optional[int]
    n_obs: int
    train_len: int
    nonfinite: list[tuple[int, int]] = field(default_factory=list)
    ragged_rows: list[int] = field(default_factory=list)
    train_available: bool = False

    @property
    def ok(self) -> bool:
        return self.train_available and not self.nonfinite and not self.ragged_rows

    def messages(self) -> list[str]:
        out = []
        if not self.train_available:
            out.append("train_len unavailable")
        if self.ragged_rows:
            out.append(f"dimension mismatch at rows {self.ragged_rows}")
        if self.nonfinite:
            out.append(f"non-finite values at (t, j) {self.nonfinite}")
        return out or ["ok"]

    def __str__(self) -> str:
        return "; ".join(self.messages())


def validate_stream(rows: Union[ObservationStream, Sequence[Sequence[float]]], train_len: Optional[int] = None) -> ValidationReport:
    """Scan a stream for ragged rows, non-finite entries and a usable training prefix.

    Locations are reported 1-based as (t, j). Never raises.
    """
    if isinstance(rows, ObservationStream):
        train_len = rows.train_len if train_len is None else train_len
        rows = rows.data
    train_len = 0 if train_len is None else int(train_len)
    rows = list(rows)
    dim = len(rows[0]) if rows else None
    report = ValidationReport(dim=dim, n_obs=len(rows), train_len=train_len)
    for t, row in enumerate(rows, start=1):
        row = list(row)
        if len(row) != dim:
            report.ragged_rows.append(t)
            continue
        for j, value in enumerate(row, start=1):
            if not math.isfinite(float(value)):
                report.nonfinite.append((t, j))
    report.train_available = train_len >= 2 and len(rows) >= train_len
    return report


def read_csv(path: Union[str, Path], train_len: int, response: Optional[str] = "z") -> ObservationStream:
    """Read the ``y1,...,yd[,z]`` CSV format.

    A column named ``response`` (default ``z``) becomes the response; all
    other columns must be named ``y1..yd`` in order.
    """
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise MonitorError(f"{path}: empty file") from None
        body = [row for row in reader if row]
    z_idx = header.index(response) if response and response in header else None
    y_cols = [h for i, h in enumerate(header) if i != z_idx]
    expected = [f"y{j}" for j in range(1, len(y_cols) + 1)]
    for want, got in zip(expected, y_cols):
        if want != got:
            raise MonitorError(f"{path}: missing column {want} (found {got})")
    if not y_cols:
        raise MonitorError(f"{path}: missing column y1")
    try:
        values = np.array([[float(v) for v in row] for row in body], dtype=np.float64)
    except ValueError as exc:
        raise MonitorError(f"{path}: {exc}") from None
    if values.size and values.shape[1] != len(header):
        raise MonitorError(f"{path}: rows do not match header width {len(header)}")
    values = values.reshape(-1, len(header))
    z = values[:, z_idx] if z_idx is not None else None
    y = np.delete(values, z_idx, axis=1) if z_idx is not None else values
    return ObservationStream(y, train_len, response=z, columns=y_cols)


def write_csv(path: Union[str, Path], data: np.ndarray, response: Optional[np.ndarray] = None) -> None:
    data = np.asarray(data, dtype=np.float64)
    if data.ndim == 1:
        data = data.reshape(-1, 1)
    header = [f"y{j}" for j in range(1, data.shape[1] + 1)]
    if response is not None:
        header.append("z")
        data = np.column_stack([data, response])
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in data:
            writer.writerow([repr(float(v)) for v in row])


# ---------------------------------------------------------------------------
# projections and boundary configuration
# ---------------------------------------------------------------------------


@dataclass
class ProjectionVector:
    """Projection direction v with optional support set and diagnostics.

    ``support`` holds 0-based indices. ``meta`` may carry externally known
    sparsity/rate diagnostics (e.g. ``{"s": 3, "r_d": 1.2}``); they are
    recorded, not verified.
    """

    entries: np.ndarray
    support: Optional[frozenset[int]] = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        self.entries = np.asarray(self.entries, dtype=np.float64).reshape(-1)
        if not np.all(np.isfinite(self.entries)):
            raise MonitorError("projection vector has non-finite entries")
        if self.support is not None:
            self.support = frozenset(int(i) for i in self.support)
            outside = [i for i in range(self.entries.size) if i not in self.support and self.entries[i] != 0.0]
            if outside:
                raise MonitorError(f"entries outside the support are nonzero at {outside}")

    @property
    def dim(self) -> int:
        return int(self.entries.size)

    @property
    def l1(self) -> float:
        return float(np.abs(self.entries).sum())

    @property
    def l2(self) -> float:
        return float(np.linalg.norm(self.entries))

    def __eq__(self, other) -> bool:
        if not isinstance(other, ProjectionVector):
            return NotImplemented
        return np.array_equal(self.entries, other.entries) and self.support == other.support and self.meta == other.meta

    def support_consistent(self) -> bool:
        if self.support is None:
            return True
        return all(v == 0.0 for i, v in enumerate(self.entries) if i not in self.support)

    def to_dict(self) -> dict:
        return {
            "entries": self.entries.tolist(),
            "support": None if self.support is None else sorted(self.support),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "ProjectionVector":
        support = obj.get("support")
        return cls(np.array(obj["entries"], dtype=np.float64), None if support is None else frozenset(support), dict(obj.get("meta") or {}))


OPEN_END = "open"


@dataclass(frozen=True)
class BoundaryConfig:
    """Boundary tuning.

    horizon is ``"open"`` for open-end monitoring or a float T for a
    closed-end run over ``ceil(m*delta) <= k <= floor(m*T)``. With
    ``weighting="flat"`` the boundary is the constant m^(1/2) (closed-end only).
    """

    gamma: float = 0.25
    delta: float = 0.1
    horizon: Union[str, float] = OPEN_END
    weighting: str = "paper"

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 0.5:
            raise MonitorError(f"gamma must lie in [0, 1/2), got {self.gamma}")
        if not self.delta > 0.0:
            raise MonitorError(f"delta must be positive, got {self.delta}")
        if self.weighting not in ("paper", "flat"):
            raise MonitorError(f"unknown weighting {self.weighting!r}")
        if self.horizon != OPEN_END:
            T = float(self.horizon)
            object.__setattr__(self, "horizon", T)
            # T == delta is accepted as the degenerate, empty monitoring window
            if T < self.delta:
                raise MonitorError(f"closed-end horizon T={T} must not be below delta={self.delta}")
        elif self.weighting == "flat":
            raise MonitorError("flat weighting requires a closed-end horizon")

    @property
    def open_end(self) -> bool:
        return self.horizon == OPEN_END

    def start_index(self, m: int) -> int:
        # round(.., 9) guards against m*delta = 10.000000000000002
        return max(1, math.ceil(round(m * self.delta, 9)))

    def last_index(self, m: int) -> Optional[int]:
        """Largest monitoring index of a closed-end run, ``None`` if open-end."""
        if self.open_end:
            return None
        if self.horizon <= self.delta:
            return self.start_index(m) - 1
        return math.floor(round(m * self.horizon, 9))

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class MonitorState:
    """Frozen training quantities plus the running monitoring sums.

    ``kind`` is ``"projection"`` (cumulate (v'y)^2) or ``"residual"``
    (cumulate (z - v'y)^2).
    """

    v_hat: ProjectionVector
    sigma0_hat: float
    train_sum: float
    m: int
    c: float
    boundary: BoundaryConfig
    k: int = 0
    mon_sum: float = 0.0
    signaled_at: Optional[int] = None
    kind: str = "projection"

    def __post_init__(self) -> None:
        if not self.sigma0_hat > 0.0:
            raise MonitorError("sigma0_hat must be positive")
        if self.m < 1:
            raise MonitorError("train_len m must be positive")
        if self.kind not in ("projection", "residual"):
            raise MonitorError(f"unknown detector kind {self.kind!r}")

    def to_dict(self) -> dict:
        return {
            "v_hat": self.v_hat.to_dict(),
            "sigma0_hat": self.sigma0_hat,
            "train_sum": self.train_sum,
            "m": self.m,
            "c": self.c,
            "boundary": self.boundary.to_dict(),
            "k": self.k,
            "mon_sum": self.mon_sum,
            "signaled_at": self.signaled_at,
            "kind": self.kind,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "MonitorState":
        return cls(
            v_hat=ProjectionVector.from_dict(obj["v_hat"]),
            sigma0_hat=float(obj["sigma0_hat"]),
            train_sum=float(obj["train_sum"]),
            m=int(obj["m"]),
            c=float(obj["c"]),
            boundary=BoundaryConfig(**obj["boundary"]),
            k=int(obj["k"]),
            mon_sum=float(obj["mon_sum"]),
            signaled_at=obj.get("signaled_at"),
            kind=obj.get("kind", "projection"),
        )

    def to_json(self) -> str:
        # json emits the shortest repr of each float, which round-trips bit-exactly;
        # an infinite c is written as the non-standard token Infinity.
        return json.dumps(self.to_dict())

    @classmethod
    def from_json(cls, text: str) -> "MonitorState":
        return cls.from_dict(json.loads(text))
