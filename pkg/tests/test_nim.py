import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from heavyspin import nim

# reference values from 50-digit arithmetic
F2_AT_2 = 0.153426409720027345
F2_AT_E = 0.359140914229522618
F3_AT_10 = 0.572641884724118122
Q3_AT_10 = 0.807218641677622893
THRESHOLDS = {3: 5.08380087533952757, 4: 19.6432598582730236,
              5: 78.5844927166175292, 6: 333.624890794683644}


def test_p2_closed_form_values():
    assert nim.f(2, 2.0) == pytest.approx(F2_AT_2, abs=1e-13)
    assert nim.f(2, math.e) == pytest.approx(F2_AT_E, abs=1e-13)
    for h in (0.0, 0.5, 0.9, 1.0):
        assert nim.f(2, h) == 0.0


def test_p3_value_and_maximizer():
    r = nim.f_closed(3, 10.0)
    assert r.value == pytest.approx(F3_AT_10, abs=1e-11)
    assert r.qstar == pytest.approx(Q3_AT_10, abs=1e-9)
    assert abs(nim.stationarity_residual(3, 10.0, r.qstar)) < 1e-8


@pytest.mark.parametrize("p", sorted(THRESHOLDS))
def test_thresholds(p):
    h = nim.threshold(p)
    assert h == pytest.approx(THRESHOLDS[p], rel=1e-10)
    assert nim.f(p, 0.999 * h) == 0.0 and nim.f(p, 1.001 * h) > 0.0


def test_threshold_p2_is_one():
    assert nim.threshold(2) == 1.0


@given(st.integers(2, 6), st.floats(1e-2, 1e3))
@settings(max_examples=80, deadline=None)
def test_closed_form_matches_grid_search(p, h):
    assert abs(nim.f_closed(p, h).value - nim.f_grid(p, h)) <= 1e-8


def test_monotone_and_nonnegative():
    for p in range(2, 6):
        vals = [nim.f(p, h) for h in np.geomspace(0.1, 1e3, 200)]
        assert min(vals) >= 0.0
        assert np.all(np.diff(vals) >= -1e-14)


def test_zero_temperature_limit():
    # f_p(beta h) / beta tends to g_p(h)
    for p in (2, 3, 4):
        h = 2.0
        beta = 1e6
        assert nim.f(p, beta * h) / beta == pytest.approx(nim.g(p, h), rel=1e-4)
    assert nim.g(3, 10.0) == pytest.approx(10 / 3 ** 1.5, rel=1e-15)


def test_golden_max_and_local_maxima():
    x, fx = nim.golden_max(lambda t: -(t - 0.3) ** 2, 0.0, 1.0, 1e-12)
    assert x == pytest.approx(0.3, abs=1e-6) and fx <= 0.0
    v = np.array([0.0, 2.0, 1.0, 3.0, 0.5, 3.0])
    assert nim.local_maxima(v) == [3, 5, 1]


def test_domain_errors():
    with pytest.raises(ValueError):
        nim.f_closed(1, 1.0)
    with pytest.raises(ValueError):
        nim.f_closed(2, -1.0)
