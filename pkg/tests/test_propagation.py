import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from rssvar.errors import SingularPosition
from rssvar.geometry import LinkGeometry
from rssvar.propagation import (
    PropagationParams,
    cassini_level,
    power,
    power_reflect,
    power_scatter,
)

FLAT = LinkGeometry((-1, 0, 0), (1, 0, 0))
coord = st.floats(-4.0, 4.0, allow_nan=False)


def _dist(p, q):
    return math.sqrt(sum((a - b) ** 2 for a, b in zip(p, q)))


def test_scatter_examples():
    p = PropagationParams(c_s=1.0)
    assert power_scatter(FLAT, (0, 0, 0), p) == 1.0
    assert power_scatter(FLAT, (0, 1, 0), p) == pytest.approx(0.25, rel=1e-15)
    raised = LinkGeometry((-1, 0, 0.1), (1, 0, 0.1))
    d = _dist((-1, 0, 0.1), (0, 0, 0))
    assert power_scatter(raised, (0, 0, 0), p) == pytest.approx(1.0 / (d * d * d * d), rel=1e-14)
    assert power_scatter(raised, (0, 0, 0), p) == pytest.approx(0.980296, rel=1e-6)


def test_reflect_examples():
    assert power_reflect(FLAT, (0, 0, 0), PropagationParams(n_p=2)) == 0.25
    assert power_reflect(FLAT, (0, 0, 0), PropagationParams(n_p=3)) == 0.125
    assert power_reflect(FLAT, (0, 1, 0), PropagationParams(n_p=2)) == pytest.approx(1 / 8, rel=1e-14)


def test_singular_positions_rejected():
    with pytest.raises(SingularPosition):
        power_scatter(FLAT, (-1, 0, 0), PropagationParams())
    with pytest.raises(SingularPosition):
        power_reflect(FLAT, (1, 5e-10, 0), PropagationParams())
    with pytest.raises(SingularPosition):
        power_scatter(FLAT, np.array([[0, 0, 0], [1, 0, 0]]), PropagationParams())


def test_params_validation():
    for bad in ({"c_s": 0}, {"c_r": -1}, {"n_p": 0.5}, {"c_s": math.inf}):
        with pytest.raises(ValueError):
            PropagationParams(**bad)


def test_cassini_examples():
    assert cassini_level(FLAT, (0, 0, 0)) == 1.0
    assert cassini_level(FLAT, (-1, 0, 0)) == 0.0
    assert cassini_level(FLAT, (0, 1, 0)) == pytest.approx(2.0, rel=1e-15)


def test_vectorized_points():
    pts = np.array([[0, 0, 0], [0, 1, 0], [3, -2, 0]], dtype=float)
    vals = power_scatter(FLAT, pts, PropagationParams())
    assert vals.shape == (3,)
    for k, x in enumerate(pts):
        assert vals[k] == power_scatter(FLAT, x, PropagationParams())


def test_dispatch():
    p = PropagationParams()
    assert power("scatter", FLAT, (0, 2, 0), p) == power_scatter(FLAT, (0, 2, 0), p)
    assert power("reflect", FLAT, (0, 2, 0), p) == power_reflect(FLAT, (0, 2, 0), p)
    with pytest.raises(ValueError):
        power("diffract", FLAT, (0, 2, 0), p)


@given(coord, coord, st.floats(0.0, 3.0), st.floats(0.1, 100.0))
def test_scatter_is_inverse_square_of_cassini_level(x, y, dz, c_s):
    link = LinkGeometry.standard(dz)
    lvl = cassini_level(link, (x, y, 0))
    assume(lvl > 1e-3)
    assert power_scatter(link, (x, y, 0), PropagationParams(c_s=c_s)) == pytest.approx(c_s / lvl**2, rel=1e-12)


@given(coord, coord, st.floats(0.0, 3.0), st.floats(1.0, 6.0))
def test_kernels_symmetric_under_swap(x, y, dz, n_p):
    link = LinkGeometry.standard(dz)
    pt = (x, y, 0.0)
    assume(min(_dist(pt, link.x_t), _dist(pt, link.x_r)) > 1e-3)
    p = PropagationParams(n_p=n_p)
    assert power_scatter(link, pt, p) == pytest.approx(power_scatter(link.swapped(), pt, p), rel=1e-14)
    assert power_reflect(link, pt, p) == pytest.approx(power_reflect(link.swapped(), pt, p), rel=1e-14)


@given(st.floats(0.0, 2 * math.pi), st.floats(0.0, 2.0))
def test_kernels_decrease_along_rays_beyond_segment(phi, dz):
    # rays from the midpoint, sampled outside the circle that contains the segment
    link = LinkGeometry.standard(dz)
    p = PropagationParams()
    r = np.linspace(1.05, 20.0, 60)
    pts = np.stack([r * math.cos(phi), r * math.sin(phi), np.zeros_like(r)], axis=1)
    assert np.all(np.diff(power_scatter(link, pts, p)) < 0)
    assert np.all(np.diff(power_reflect(link, pts, p)) < 0)


@given(st.floats(-5.0, 5.0), st.floats(1.0, 5.0))
def test_reflect_on_bisector(y, n_p):
    pt = (0.0, y, 0.0)
    assume(abs(y) > 1e-6)
    a = _dist(FLAT.x_t, pt)
    assert power_reflect(FLAT, pt, PropagationParams(n_p=n_p)) == pytest.approx((2 * a) ** -n_p, rel=1e-13)
