import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from projmon.core import BoundaryConfig, MonitorError, MonitorState, ObservationStream, ProjectionVector
from projmon.detector import (
    RESIDUAL,
    TERMINAL_NO_SIGNAL,
    MonitorConfig,
    boundary_g,
    detector_q,
    monitor_step,
    run_closed_end,
    run_monitor,
    run_stream,
    start_monitor,
)


def reference_run(train_vals, mon_vals, sigma, c, gamma, delta, horizon=None):
    """Straight-line evaluation of the stopping rule, one k at a time."""
    m = len(train_vals)
    s_train = sum(train_vals)
    k0 = math.ceil(round(m * delta, 9))
    last = len(mon_vals) if horizon is None else min(len(mon_vals), math.floor(m * horizon))
    traj, s = [], 0.0
    for k in range(1, last + 1):
        s += mon_vals[k - 1]
        if k < k0:
            continue
        stat = abs(s - k / m * s_train) / sigma
        bound = c * math.sqrt(m) * (m + k) / m * (k / (m + k)) ** gamma
        traj.append((k, stat, bound))
        if stat > bound:
            return traj, k
    return traj, None


def _state(train_vals, c=2.0, gamma=0.25, delta=0.1, horizon="open", sigma=1.0):
    return MonitorState(ProjectionVector([1.0]), sigma, float(np.sum(train_vals)), len(train_vals), c, BoundaryConfig(gamma, delta, horizon))


def test_boundary_examples():
    assert boundary_g(100, 100, 0.0) == pytest.approx(20.0, abs=1e-12)
    assert boundary_g(100, 100, 0.25) == pytest.approx(10 * 2 * 0.5**0.25, abs=1e-12)
    assert boundary_g(100, 100, 0.25) == pytest.approx(16.8179, abs=1e-4)
    assert boundary_g(400, 40, 0.0) == pytest.approx(22.0, abs=1e-12)
    with pytest.raises(MonitorError):
        boundary_g(100, 0, 0.25)


@given(m=st.integers(1, 10_000), gamma=st.floats(0.0, 0.4999))
def test_boundary_strictly_increasing(m, gamma):
    g = boundary_g(m, np.arange(1, 400), gamma)
    assert np.all(np.diff(g) > 0)


def test_detector_q_examples():
    assert detector_q(100.0, 50.0, 100, 50) == 0.0
    assert detector_q(100.0, 75.0, 100, 50) == 25.0
    # step of 0.5 on top of a matched level 1: brute-force sum
    seq = np.full(40, 1.5)
    assert detector_q(100.0, float(seq.sum()), 100, 40) == pytest.approx(40 * 0.5)


def test_infinite_c_never_signals():
    rng = np.random.default_rng(1)
    s = _state(rng.standard_normal(50) ** 2, c=math.inf)
    for y in rng.standard_normal(300) * 10:
        s, ev = monitor_step(s, [y])
        assert ev is None
    assert s.k == 300 and s.signaled_at is None


def test_constant_stream_q_zero():
    m = 80
    state = _state(np.full(m, 4.0), c=1e-9, delta=0.1)
    rep = run_monitor(state, np.full((500, 1), 2.0))  # (v'y)^2 = 4 matches training
    assert rep.event is None and np.all(rep.stat == 0.0)


@given(
    seed=st.integers(0, 10_000),
    m=st.integers(10, 200),
    c=st.floats(0.2, 3.0),
    gamma=st.floats(0.0, 0.49),
    delta=st.floats(0.01, 1.0),
    shift=st.floats(0.0, 3.0),
)
def test_run_matches_reference(seed, m, c, gamma, delta, shift):
    rng = np.random.default_rng(seed)
    train = rng.standard_normal(m) ** 2
    mon = rng.standard_normal(3 * m) ** 2 + shift * (np.arange(3 * m) > m)
    state = _state(train, c=c, gamma=gamma, delta=delta, sigma=1.3)
    rep = run_monitor(state, np.sqrt(mon)[:, None])
    traj, tau = reference_run(list(train), list(np.sqrt(mon) ** 2), 1.3, c, gamma, delta)
    assert (rep.event.k if rep.event else None) == tau
    assert len(traj) == len(rep.k)
    np.testing.assert_allclose(rep.stat, [t[1] for t in traj], rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(rep.bound, [t[2] for t in traj], rtol=1e-12)
    if rep.event:
        assert rep.event.stat > rep.event.bound and rep.event.k >= math.ceil(m * delta - 1e-9)


@given(seed=st.integers(0, 10_000), c=st.floats(0.5, 3.0))
def test_step_equals_batch(seed, c):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((400, 3)) * np.r_[np.ones(250), 1.8 * np.ones(150)][:, None]
    cfg = MonitorConfig(ProjectionVector([0.5, 0.3, 0.2]), BoundaryConfig(0.25, 0.1), c=c)
    s0 = start_monitor(Y[:100], cfg)
    rep = run_monitor(s0, Y[100:])
    s, ev = s0, None
    for y in Y[100:]:
        s, ev = monitor_step(s, y)
        if ev is not None:
            break
    assert ev == rep.event
    assert s == rep.state


def test_step_is_deterministic_and_signal_is_final():
    s = _state(np.ones(10), c=0.01, delta=0.1)
    a = monitor_step(s, [3.0])
    b = monitor_step(s, [3.0])
    assert a == b and a[1] is not None
    s2, ev = monitor_step(a[0], [100.0])
    assert ev is None and s2 is a[0]


@given(lam=st.floats(0.01, 100.0), seed=st.integers(0, 1000))
def test_scale_equivariance(lam, seed):
    rng = np.random.default_rng(seed)
    Y = rng.standard_normal((900, 2))
    Y[500:] *= 1.5
    cfg = MonitorConfig(ProjectionVector([1.0, -1.0]), BoundaryConfig(0.25, 0.1), c=2.3)
    s1, s2 = start_monitor(Y[:300], cfg), start_monitor(lam * Y[:300], cfg)
    assert s2.sigma0_hat == pytest.approx(lam**2 * s1.sigma0_hat, rel=1e-9)
    r1, r2 = run_monitor(s1, Y[300:]), run_monitor(s2, lam * Y[300:])
    np.testing.assert_allclose(r2.stat, r1.stat, rtol=1e-7)
    # crossings away from numerical ties coincide
    margin = np.min(np.abs(r1.stat - r1.bound) / r1.bound)
    if margin > 1e-6:
        assert (r1.event and r1.event.k) == (r2.event and r2.event.k)


def test_checkpoint_replay_closed_end():
    rng = np.random.default_rng(5)
    Y = rng.standard_normal((1500, 2))
    cfg = MonitorConfig(ProjectionVector([1.0, 0.0]), BoundaryConfig(0.25, 0.1, 2.0), c=50.0)
    state = start_monitor(Y[:500], cfg)
    full = run_monitor(state, Y[500:])
    head = run_monitor(state, Y[500:800])
    restored = MonitorState.from_json(head.state.to_json())
    tail = run_monitor(restored, Y[800:])
    np.testing.assert_array_equal(np.r_[head.k, tail.k], full.k)
    np.testing.assert_array_equal(np.r_[head.stat, tail.stat], full.stat)
    assert full.horizon_reached and full.k[-1] == 1000


def test_closed_end_stops_at_horizon_and_terminal_marker():
    s = _state(np.ones(20), c=1e9, delta=0.1, horizon=1.0)
    for _ in range(20):
        s, ev = monitor_step(s, [1.0])
        assert ev is None
    s2, ev = monitor_step(s, [1.0])
    assert ev is TERMINAL_NO_SIGNAL and s2 is s


def test_zero_length_window_gives_empty_trajectory():
    st_ = ObservationStream(np.random.default_rng(0).standard_normal((300, 1)), 100)
    cfg = MonitorConfig(ProjectionVector([1.0]), BoundaryConfig(0.25, 0.1, 0.1), c=0.001)
    rep = run_closed_end(st_, cfg)
    assert rep.k.size == 0 and rep.event is None


def test_truncated_closed_end_run_is_flagged():
    st_ = ObservationStream(np.random.default_rng(0).standard_normal((300, 1)), 100)
    rep = run_closed_end(st_, MonitorConfig(ProjectionVector([1.0]), BoundaryConfig(0.25, 0.1, 4.0), c=1e6))
    assert rep.truncated and not rep.horizon_reached


def test_errors():
    s = _state(np.ones(10))
    with pytest.raises(MonitorError, match="dimension"):
        monitor_step(s, [1.0, 2.0])
    with pytest.raises(MonitorError, match="time 11"):
        monitor_step(s, [np.nan])
    r = MonitorState(ProjectionVector([1.0]), 1.0, 10.0, 10, 1.0, BoundaryConfig(), kind=RESIDUAL)
    with pytest.raises(MonitorError, match="response"):
        monitor_step(r, [1.0])
    with pytest.raises(MonitorError, match="insufficient"):
        run_stream(ObservationStream(np.ones((5, 1)), 10), MonitorConfig(ProjectionVector([1.0]), c=1.0))


def test_residual_detector_cumulates_squared_errors():
    z = np.array([1.0, 2.0, 3.0, 4.0])
    Y = np.array([[1.0], [1.0], [1.0], [1.0]])
    r = MonitorState(ProjectionVector([0.5]), 1.0, 0.0, 10, math.inf, BoundaryConfig(), kind=RESIDUAL)
    rep = run_monitor(r, Y, z)
    assert rep.state.mon_sum == pytest.approx(sum((zi - 0.5) ** 2 for zi in z))


def test_jsonl_records():
    s = _state(np.ones(10), c=0.01, delta=0.1)
    rep = run_monitor(s, np.full((5, 1), 3.0))
    lines = rep.to_jsonl().strip().splitlines()
    assert '"signal": true' in lines[-1]


def test_h0_level_no_signal_in_95_percent_of_seeds():
    # i.i.d. stream at the training level, c for alpha = 0.05, 10 m monitoring steps
    from projmon.critval import default_table

    c = default_table().lookup(0.25, 0.1, "open", 0.05)
    m, reps = 500, 400
    quiet = 0
    for seed in range(reps):
        Y = np.random.default_rng(seed).standard_normal((11 * m, 1))
        cfg = MonitorConfig(ProjectionVector([1.0]), BoundaryConfig(0.25, 0.1), c=c)
        quiet += run_stream(ObservationStream(Y, m), cfg).event is None
    print(f"no-signal fraction {quiet / reps:.4f}")
    assert quiet / reps >= 0.95


def test_power_step_change_median_delay():
    from projmon.critval import default_table

    c = default_table().lookup(0.25, 0.1, "open", 0.05)
    m = 500
    delays = []
    for seed in range(40):
        rng = np.random.default_rng(seed)
        Y = rng.standard_normal((m + 10 * m, 1))
        Y[m + 50 :] *= 2.0  # projected second moment times 4 from k* = m delta
        rep = run_stream(ObservationStream(Y, m), MonitorConfig(ProjectionVector([1.0]), BoundaryConfig(0.25, 0.1), c=c))
        delays.append(rep.event.k - 50 if rep.event else np.inf)
    assert np.median(delays) < m
