"""Sequential monitoring of projected second moments."""

from .core import (
    OPEN_END,
    BoundaryConfig,
    MonitorError,
    MonitorState,
    ObservationStream,
    ProjectionVector,
    read_csv,
    validate_stream,
    write_csv,
)
from .critval import CriticalValueTable, default_table, quantile, simulate_closedend_sup, simulate_openend_sup
from .detector import MonitorConfig, RunReport, SignalEvent, monitor_step, run_monitor, run_stream, start_monitor
from .lrv import LrvConfig, lrv_estimate

__all__ = [
    "OPEN_END",
    "BoundaryConfig",
    "CriticalValueTable",
    "LrvConfig",
    "MonitorConfig",
    "MonitorError",
    "MonitorState",
    "ObservationStream",
    "ProjectionVector",
    "RunReport",
    "SignalEvent",
    "default_table",
    "lrv_estimate",
    "monitor_step",
    "quantile",
    "read_csv",
    "run_monitor",
    "run_stream",
    "simulate_closedend_sup",
    "simulate_openend_sup",
    "start_monitor",
    "validate_stream",
    "write_csv",
]
