import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from projmon.core import MonitorError
from projmon.lrv import LrvConfig, bandwidth, block_statistics, lrv_estimate


def two_pass_lrv(x, b):
    """Direct evaluation: every window summed from scratch, then a centered variance."""
    x = np.asarray(x, dtype=np.float64)
    m = x.size
    S = np.array([math.fsum(x[j : j + b]) / math.sqrt(b) for j in range(m - b + 1)])
    return float(np.mean((S - S.mean()) ** 2))


def test_bandwidth_rule():
    assert bandwidth(2000) == 20
    assert bandwidth(10) == 2
    assert bandwidth(100, LrvConfig(b_override=70)) == 50
    with pytest.raises(MonitorError):
        bandwidth(3)
    with pytest.raises(MonitorError):
        LrvConfig(rho=0.5)


def test_constant_sequence_is_degenerate():
    with pytest.raises(MonitorError, match="degenerate long-run variance"):
        lrv_estimate(np.full(100, 3.7))


def test_alternating_sequence_is_degenerate():
    x = np.tile([0.0, 2.0], 50)
    with pytest.raises(MonitorError, match="degenerate long-run variance"):
        lrv_estimate(x, LrvConfig(b_override=2))


@given(
    x=arrays(np.float64, st.integers(8, 300), elements=st.floats(-1e3, 1e3)),
    rho=st.floats(0.05, 0.49),
)
def test_sliding_matches_two_pass(x, rho):
    b = bandwidth(x.size, LrvConfig(rho))
    S = block_statistics(x, b)
    ref = np.array([math.fsum(x[j : j + b]) for j in range(x.size - b + 1)]) / math.sqrt(b)
    np.testing.assert_allclose(S, ref, rtol=0, atol=1e-10 * max(1.0, np.abs(x).max()) * b)


@given(seed=st.integers(0, 10_000), shift=st.floats(-100, 100), lam=st.floats(0.01, 100))
def test_location_and_scale(seed, shift, lam):
    x = np.random.default_rng(seed).standard_normal(400) ** 2
    base = lrv_estimate(x)
    assert lrv_estimate(x + shift) == pytest.approx(base, rel=1e-7)
    assert lrv_estimate(lam * x) == pytest.approx(lam**2 * base, rel=1e-9)


def test_matches_two_pass_oracle_on_chi2():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.standard_normal(2000) ** 2
        assert abs(lrv_estimate(x) - two_pass_lrv(x, 20)) < 1e-10


def test_consistency_median_error_shrinks():
    rng = np.random.default_rng(11)
    errs = []
    for m in (500, 2000, 8000):
        est = [lrv_estimate(rng.standard_normal(m) ** 2) for _ in range(200)]
        errs.append(np.median(np.abs(np.array(est) - 2.0)))
    assert errs[0] > errs[1] > errs[2]


def test_dependent_series_lrv_exceeds_variance():
    # AR(1)-filtered squares carry positive autocorrelation, so lrv > marginal variance
    rng = np.random.default_rng(0)
    e = rng.standard_normal(20000)
    x = np.empty_like(e)
    x[0] = e[0]
    for i in range(1, e.size):
        x[i] = 0.6 * x[i - 1] + e[i]
    assert lrv_estimate(x, LrvConfig(b_override=100)) > 2 * np.var(x)
