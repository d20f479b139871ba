import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from locoskills import cat

unit = st.floats(0, 1)
viol = st.floats(0, 10, allow_nan=False)


def _state(final=(0.2,), pmax=None, cmax=None):
    return cat.CatState([f"c{i}" for i in range(len(final))], final, p_max=pmax, c_max=cmax)


def test_delta_examples():
    s = _state(pmax=[0.2], cmax=[1.5])
    assert cat.delta(s, cat.positive_violation(np.array([-0.3]))) == 0.0
    assert cat.delta(s, np.array([1.5])) == pytest.approx(0.2, abs=1e-12)
    s = _state(final=(0.1,), pmax=[0.1], cmax=[2.0])
    assert cat.delta(s, np.array([1.0])) == pytest.approx(0.05, abs=1e-12)


def test_delta_takes_max_over_constraints():
    s = _state(final=(0.2, 0.1), pmax=[0.2, 0.1], cmax=[1.0, 1.0])
    assert cat.delta(s, np.array([0.25, 1.0])) == pytest.approx(0.1, abs=1e-15)
    assert cat.delta(s, np.array([[0.0, 0.0], [3.0, 0.0]])).tolist() == [0.0, 0.2]


@given(st.lists(viol, min_size=2, max_size=2), st.lists(unit, min_size=2, max_size=2),
       st.lists(st.floats(1e-6, 10), min_size=2, max_size=2), st.integers(0, 1), st.floats(0, 5))
def test_delta_bounds_and_monotonicity(c, pmax, cmax, i, bump):
    s = _state(final=(1.0, 1.0), pmax=pmax, cmax=cmax)
    c = np.array(c)
    d = cat.delta(s, c)
    assert 0.0 <= d <= max(pmax) + 1e-15
    more = c.copy()
    more[i] += bump
    assert cat.delta(s, more) >= d
    assert cat.delta(s, np.zeros(2)) == 0.0


def test_cmax_ema_examples():
    s = _state()
    assert cat.update_cmax(s, np.array([[1.0]])).c_max[0] == 1.0
    s = _state()
    assert cat.update_cmax(s, np.zeros((5, 1))).c_max[0] == pytest.approx(0.95, abs=1e-15)


def test_cmax_converges_geometrically():
    s = _state()
    expect = 1.0
    for _ in range(200):
        cat.update_cmax(s, np.array([[2.0]]))
        expect = 0.95 * expect + 0.05 * 2.0
        assert s.c_max[0] == pytest.approx(expect, abs=1e-12)
    assert abs(s.c_max[0] - 2.0) == pytest.approx(0.95**200, rel=1e-9)


def test_cmax_floor_and_empty_batch():
    s = _state(cmax=[1e-6])
    for _ in range(10):
        cat.update_cmax(s, np.zeros((1, 1)))
    assert s.c_max[0] == 1e-6
    assert _state(cmax=[0.0]).c_max[0] == 1e-6
    with pytest.raises(ValueError):
        cat.update_cmax(s, np.zeros((0, 1)))


@pytest.mark.parametrize("d, g, out", [(0.0, 0.99, 0.99), (1.0, 0.99, 0.0), (0.2, 0.99, 0.792)])
def test_effective_discount(d, g, out):
    assert cat.effective_discount(d, g) == pytest.approx(out, abs=1e-12)


def test_pmax_schedule_examples():
    assert cat.pmax_at(0.2, 0, 100) == 0.0
    assert cat.pmax_at(0.2, 69, 100) == 0.0
    assert cat.pmax_at(0.2, 100, 100) == pytest.approx(0.2, abs=1e-15)
    assert cat.pmax_at(0.2, 85, 100) == pytest.approx(0.1, abs=1e-12)
    with pytest.raises(ValueError):
        cat.pmax_at(0.2, 101, 100)


@given(st.integers(1, 2000), unit)
def test_pmax_is_nondecreasing(total, final):
    s = _state(final=(final,))
    prev = 0.0
    for e in range(0, total + 1, max(1, total // 37)):
        cat.schedule_pmax(s, e, total)
        assert prev <= s.p_max[0] <= final + 1e-15
        prev = s.p_max[0]


def test_state_validation():
    with pytest.raises(ValueError):
        _state(final=(1.5,))
    with pytest.raises(ValueError):
        cat.CatState(["a", "b"], [0.1])
