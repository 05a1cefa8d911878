import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from projmon.core import (
    OPEN_END,
    BoundaryConfig,
    MonitorError,
    MonitorState,
    ObservationStream,
    ProjectionVector,
    derive_seed,
    read_csv,
    validate_stream,
    write_csv,
)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def test_validate_reports_nan_position():
    rows = np.ones((5, 3))
    rows[2, 1] = np.nan
    rep = validate_stream(rows, train_len=2)
    assert rep.nonfinite == [(3, 2)]
    assert not rep.ok


def test_validate_empty_stream():
    rep = validate_stream([], train_len=10)
    assert "train_len unavailable" in rep.messages()


def test_validate_well_formed():
    rep = validate_stream(np.zeros((150, 5)), train_len=100)
    assert rep.ok and str(rep) == "ok" and rep.dim == 5


def test_validate_ragged_rows():
    rep = validate_stream([[1, 2], [3], [4, 5]], train_len=2)
    assert rep.ragged_rows == [2]


def test_stream_rejects_short_or_bad_data():
    with pytest.raises(MonitorError):
        ObservationStream(np.array([[1.0, np.inf]]), 1)
    s = ObservationStream(np.arange(12.0).reshape(6, 2), 4)
    assert s.dim == 2 and len(s) == 6
    assert s.training.shape == (4, 2) and s.monitoring.shape == (2, 2)


def test_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    Y, z = rng.standard_normal((20, 3)), rng.standard_normal(20)
    write_csv(tmp_path / "a.csv", Y, z)
    s = read_csv(tmp_path / "a.csv", 10)
    assert np.array_equal(s.data, Y) and np.array_equal(s.response, z)
    assert s.columns == ["y1", "y2", "y3"]


def test_csv_missing_column_named(tmp_path):
    (tmp_path / "b.csv").write_text("y1,y3\n1,2\n")
    with pytest.raises(MonitorError, match="y2"):
        read_csv(tmp_path / "b.csv", 1)


def test_projection_support_consistency():
    v = ProjectionVector([0.0, 2.0, 0.0], support={1})
    assert v.support_consistent() and v.l1 == 2.0
    with pytest.raises(MonitorError):
        ProjectionVector([1.0, 2.0], support={1})
    assert ProjectionVector.from_dict(json.loads(json.dumps(v.to_dict()))) == v


def test_boundary_config_validation():
    with pytest.raises(MonitorError):
        BoundaryConfig(gamma=0.5)
    with pytest.raises(MonitorError):
        BoundaryConfig(delta=0.0)
    with pytest.raises(MonitorError):
        BoundaryConfig(delta=0.5, horizon=0.2)
    with pytest.raises(MonitorError):
        BoundaryConfig(weighting="flat")
    b = BoundaryConfig(0.25, 0.1, 2)
    assert b.start_index(500) == 50 and b.last_index(500) == 1000
    assert BoundaryConfig(0.25, 0.1).last_index(500) is None


def test_start_index_rounds_up():
    assert BoundaryConfig(delta=0.101).start_index(100) == 11
    assert BoundaryConfig(delta=0.1).start_index(30) == 3  # 30 * 0.1 is 3.0000000000000004


def test_zero_length_window():
    b = BoundaryConfig(0.0, 0.1, 0.1)
    assert b.last_index(100) < b.start_index(100)


@given(
    v=st.lists(finite, min_size=1, max_size=6),
    sigma=st.floats(1e-12, 1e12),
    train_sum=finite,
    mon_sum=finite,
    m=st.integers(1, 10_000),
    k=st.integers(0, 10_000),
    c=st.one_of(st.floats(1e-3, 1e3), st.just(math.inf)),
    gamma=st.floats(0.0, 0.499),
    horizon=st.one_of(st.just(OPEN_END), st.floats(0.5, 10.0)),
    signaled=st.one_of(st.none(), st.integers(1, 100)),
)
def test_state_json_round_trip_is_bit_exact(v, sigma, train_sum, mon_sum, m, k, c, gamma, horizon, signaled):
    state = MonitorState(ProjectionVector(v), sigma, train_sum, m, c, BoundaryConfig(gamma, 0.1, horizon), k, mon_sum, signaled)
    back = MonitorState.from_json(state.to_json())
    assert back == state
    assert back.sigma0_hat.hex() == state.sigma0_hat.hex() and back.mon_sum.hex() == state.mon_sum.hex()


def test_state_invariants():
    with pytest.raises(MonitorError):
        MonitorState(ProjectionVector([1.0]), 0.0, 0.0, 10, 1.0, BoundaryConfig())


def test_seed_tree_is_path_dependent_and_stable():
    a = derive_seed(7, "x", 1).generate_state(2)
    assert np.array_equal(a, derive_seed(7, "x", 1).generate_state(2))
    assert not np.array_equal(a, derive_seed(7, "x", 2).generate_state(2))
    assert not np.array_equal(a, derive_seed(8, "x", 1).generate_state(2))
