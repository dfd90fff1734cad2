import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heisenvar.group import (GroupParams, GroupPoint, compose, compose_arrays, dilate, gauge, gauge_arrays,
                             inverse, koranyi_distance_arrays, scaled_translate, scaled_translate_arrays)

coord = st.floats(-50, 50, allow_nan=False, allow_infinity=False)
points = st.builds(GroupPoint.from_xyt, coord, coord, coord)
scales = st.floats(1e-3, 1e3)


def close(a: GroupPoint, b: GroupPoint, rel=1e-12):
    va, vb = np.array(a.as_tuple()), np.array(b.as_tuple())
    scale = max(1.0, np.abs(va).max(), np.abs(vb).max())
    return np.abs(va - vb).max() <= rel * scale


def test_hand_values():
    e1, e2 = GroupPoint.from_xyt(1, 0, 0), GroupPoint.from_xyt(0, 1, 0)
    assert compose(e1, e2).as_tuple() == (1.0, 1.0, -2.0)
    assert compose(e2, e1).as_tuple() == (1.0, 1.0, 2.0)
    assert gauge(GroupPoint.from_xyt(1, 0, 0)) == 1.0
    assert gauge(GroupPoint.from_xyt(0, 0, 16)) == 4.0
    assert gauge(GroupPoint.from_xyt(1, 1, 2)) == pytest.approx(8.0**0.25)
    assert dilate(2.0, GroupPoint.from_xyt(1, -1, 3)).as_tuple() == (2.0, -2.0, 12.0)


def test_params_h1():
    p = GroupParams(1)
    assert p.Q == 4
    assert p.crit_exp == 4.0
    assert p.bubble_exponent == 1.0


def test_identity_and_validation():
    e = GroupPoint.identity()
    a = GroupPoint.from_xyt(0.3, -2.0, 5.0)
    assert compose(e, a) == a == compose(a, e)
    with pytest.raises(ValueError):
        GroupPoint.from_xyt(np.nan, 0, 0)
    with pytest.raises(ValueError):
        compose(a, GroupPoint.identity(2))
    with pytest.raises(ValueError):
        dilate(0.0, a)


@given(points, points, points)
def test_associativity(a, b, c):
    assert close(compose(compose(a, b), c), compose(a, compose(b, c)))


@given(points)
def test_inverse(a):
    e = GroupPoint.identity()
    assert close(compose(a, inverse(a)), e)
    assert close(compose(inverse(a), a), e)


@given(points, scales)
def test_gauge_homogeneity_and_symmetry(a, lam):
    assert gauge(dilate(lam, a)) == pytest.approx(lam * gauge(a), rel=1e-12, abs=1e-300)
    assert gauge(inverse(a)) == pytest.approx(gauge(a), rel=1e-12)


@given(points, points, scales)
def test_dilation_is_automorphism(a, b, lam):
    assert close(dilate(lam, compose(a, b)), compose(dilate(lam, a), dilate(lam, b)))


@given(points, points, scales)
@settings(max_examples=50)
def test_scaled_translate_arrays_match(c, p, lam):
    u, v, s = scaled_translate_arrays(lam, c, np.array(p.x), np.array(p.y), np.array(p.t))
    assert close(GroupPoint.from_xyt(u[0], v[0], s[0]), scaled_translate(lam, c, p))
    d = koranyi_distance_arrays(c, p.x[0], p.y[0], p.t)
    assert d == pytest.approx(gauge(compose(inverse(c), p)), rel=1e-12)


def test_arrays_agree_with_points(rng):
    a, b = rng.uniform(-5, 5, (2, 3, 100))
    x, y, t = compose_arrays(*a, *b)
    for i in range(100):
        p = compose(GroupPoint.from_xyt(*a[:, i]), GroupPoint.from_xyt(*b[:, i]))
        assert (x[i], y[i], t[i]) == pytest.approx(p.as_tuple(), rel=1e-14)
        assert gauge_arrays(x[i], y[i], t[i]) == pytest.approx(gauge(p), rel=1e-14)


def test_higher_dimensional_points():
    a = GroupPoint([1.0, 2.0], [0.5, -1.0], 3.0)
    b = GroupPoint([-1.0, 0.0], [2.0, 1.0], -1.0)
    c = compose(a, b)
    assert c.t == 3.0 - 1.0 + 2 * (0.5 * -1.0 + -1.0 * 0.0) - 2 * (1.0 * 2.0 + 2.0 * 1.0)
    assert close(compose(c, inverse(b)), a)
    assert GroupParams(2).Q == 6
