import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from rssvar.errors import DegenerateGeometry
from rssvar.geometry import (
    LinkGeometry,
    Person,
    Vec3,
    geometry_scalars,
    link_frame,
    normalize_coordinates,
    segment_shadowed,
    segments_shadowed,
    shadow_width,
)

coord = st.floats(-5.0, 5.0, allow_nan=False)
height = st.floats(0.0, 3.0, allow_nan=False)


def _angle_brute(u, v):
    """Angle between two vectors via the law of cosines on the triangle they span."""
    u, v = np.asarray(u, float), np.asarray(v, float)
    nu, nv, nw = np.linalg.norm(u), np.linalg.norm(v), np.linalg.norm(u - v)
    return math.acos(max(-1.0, min(1.0, (nu**2 + nv**2 - nw**2) / (2 * nu * nv))))


# -- geometry_scalars ---------------------------------------------------------


def test_perpendicular_bisector_point():
    g = geometry_scalars(LinkGeometry((-1, 0, 0), (1, 0, 0)), Person((0, 1, 0), 0.1))
    assert g.theta == pytest.approx(math.pi / 2, abs=1e-15)
    assert g.a == pytest.approx(math.sqrt(2)) and g.b == pytest.approx(math.sqrt(2))
    assert g.d_plus == pytest.approx(math.sqrt(2) / 2)
    assert g.d_minus == math.inf


def test_collinear_midpoint_gives_zero_angle():
    g = geometry_scalars(LinkGeometry((-1, 0, 0), (1, 0, 0)), Person((0, 0, 0), 0.1))
    assert g.theta == 0.0
    assert g.a == 1.0 and g.b == 1.0
    assert g.d_plus == 0.5


def test_raised_nodes_angle_matches_brute_force():
    link = LinkGeometry((-1, 0, 0.1), (1, 0, 0.1))
    g = geometry_scalars(link, Person((0, 1, 0), 0.1))
    assert g.a == pytest.approx(math.sqrt(2.01), rel=1e-15)
    assert g.b == pytest.approx(math.sqrt(2.01), rel=1e-15)
    expected = math.acos(-0.01 / 2.01)
    assert g.theta == pytest.approx(expected, rel=1e-13)
    assert g.theta == pytest.approx(_angle_brute((1, -1, 0.1), (1, 1, -0.1)), rel=1e-12)


def test_person_on_node_is_degenerate():
    link = LinkGeometry((-1, 0, 0), (1, 0, 0))
    with pytest.raises(DegenerateGeometry):
        geometry_scalars(link, Person((-1, 0, 0), 0.1))
    with pytest.raises(DegenerateGeometry):
        geometry_scalars(link, Person((1 + 1e-10, 0, 0), 0.1))


def test_link_and_person_validation():
    with pytest.raises(DegenerateGeometry):
        LinkGeometry((0, 0, 0), (0, 0, 0))
    with pytest.raises(ValueError):
        LinkGeometry((0, 0, 0), (1, 0, 0.5))
    with pytest.raises(ValueError):
        Person((0, 0, 0.2), 0.1)
    with pytest.raises(ValueError):
        Person((0, 0, 0), 0.0)
    with pytest.raises(ValueError):
        Vec3.of((0.0, math.inf))


@given(coord, coord, coord, coord, height, coord, coord)
def test_swap_exchanges_a_and_b(tx, ty, rx, ry, dz, ox, oy):
    assume(math.hypot(tx - rx, ty - ry) > 1e-3)
    link = LinkGeometry((tx, ty, dz), (rx, ry, dz))
    person = Person((ox, oy, 0.0), 0.1)
    assume(math.dist(link.x_t, person.x_o) > 1e-3 and math.dist(link.x_r, person.x_o) > 1e-3)
    g = geometry_scalars(link, person)
    h = geometry_scalars(link.swapped(), person)
    assert (h.a, h.b) == (g.a, g.b)[::-1]
    assert h.theta == pytest.approx(g.theta, abs=1e-12)
    assert h.d_plus == pytest.approx(g.d_plus, rel=1e-14)
    assert h.d_rt == g.d_rt


@given(coord, coord, height)
def test_d_plus_harmonic_bounds(ox, oy, dz):
    link = LinkGeometry.standard(dz)
    assume(min(math.dist(link.x_t, (ox, oy, 0)), math.dist(link.x_r, (ox, oy, 0))) > 1e-6)
    g = geometry_scalars(link, Person((ox, oy, 0.0), 0.1))
    m = min(g.a, g.b)
    assert m / 2 * (1 - 1e-14) <= g.d_plus <= m * (1 + 1e-14)
    assert 0.0 <= g.theta <= math.pi


@given(coord, coord, height)
def test_theta_agrees_with_law_of_cosines(ox, oy, dz):
    link = LinkGeometry.standard(dz)
    o = (ox, oy, 0.0)
    assume(min(math.dist(link.x_t, o), math.dist(link.x_r, o)) > 1e-3)
    g = geometry_scalars(link, Person(o, 0.1))
    u = np.subtract(link.x_r, o)
    v = np.subtract(o, link.x_t)
    assert g.theta == pytest.approx(_angle_brute(u, v), abs=1e-6)


# -- shadow_width -------------------------------------------------------------


def test_shadow_width_examples():
    p = Person((0.0, 0.0, 0.0), 0.25)
    assert shadow_width((3.0, 4.0, 1.0), p, 0.0) == 0.25
    assert shadow_width((1.0, 0.0, 0.0), Person((0, 0, 0), 0.2), 1.0) == pytest.approx(0.4)
    # similar triangles: base D at distance 2 from the apex, width at distance 2 + 3 = 5
    apex = (0.0, 2.0, 0.0)
    w = shadow_width(apex, Person((0, 0, 0), 0.3), 3.0)
    assert w == pytest.approx(0.3 * 5.0 / 2.0)
    assert w == pytest.approx(0.75)


def test_shadow_width_rejects_bad_input():
    with pytest.raises(DegenerateGeometry):
        shadow_width((0, 0, 0), Person((0, 0, 0), 0.1), 1.0)
    with pytest.raises(ValueError):
        shadow_width((1, 0, 0), Person((0, 0, 0), 0.1), -1.0)


@given(coord, coord, height, st.floats(0.01, 1.0))
def test_shadow_width_at_zero_is_diameter(ax, ay, az, D):
    assume(math.hypot(ax, ay, az) > 1e-6)
    assert shadow_width((ax, ay, az), Person((0, 0, 0), D), 0.0) == D


# -- segment_shadowed ---------------------------------------------------------


def test_segment_through_person_centre():
    assert segment_shadowed((-1, 0, 0.1), (2, 0, 0), Person((0.5, 0, 0), 0.2))


def test_segment_far_from_person():
    assert not segment_shadowed((-1, 0, 0.1), (2, 0, 0), Person((0, 5, 0), 0.2))


def test_tangent_segment_counts_as_shadowed():
    # distance from (1, 0.25) to the x axis is exactly D/2 in binary floating point
    person = Person((1.0, 0.25, 0.0), 0.5)
    assert segment_shadowed((0, 0, 0.1), (2, 0, 0), person)
    assert not segment_shadowed((0, 0, 0.1), (2, 0, 0), Person((1.0, 0.25 + 1e-12, 0.0), 0.5))


def test_closest_approach_outside_segment_is_not_shadowed():
    # person beyond the scatterer end of the segment, on its extension
    assert not segment_shadowed((0, 0, 0.1), (1, 0, 0), Person((1.5, 0, 0), 0.2))
    # but touching the end circle counts
    assert segment_shadowed((0, 0, 0.1), (1, 0, 0), Person((1.25, 0, 0), 0.5))


@given(coord, coord, coord, coord, coord, coord, st.floats(0.05, 1.0))
def test_shadow_mirror_symmetry(ex, ey, sx, sy, ox, oy, D):
    a = segment_shadowed((ex, ey, 0.1), (sx, sy, 0), Person((ox, oy, 0), D))
    b = segment_shadowed((ex, -ey, 0.1), (sx, -sy, 0), Person((ox, -oy, 0), D))
    assert a == b


@given(st.lists(st.tuples(coord, coord), min_size=1, max_size=20), coord, coord)
def test_vectorized_matches_scalar(pts, ox, oy):
    person = Person((ox, oy, 0.0), 0.4)
    arr = np.array([[x, y, 0.0] for x, y in pts])
    vec = segments_shadowed((0.3, -0.2, 0.5), arr, person)
    for k, p in enumerate(arr):
        assert vec[k] == segment_shadowed((0.3, -0.2, 0.5), p, person)


# -- normalize_coordinates ------------------------------------------------------


def test_normalize_half_turn_example():
    tf, out = normalize_coordinates(((3, 4), (7, 4)), [(5, 6)])
    assert np.allclose(tf.apply([(3, 4), (7, 4)]), [(1, 0), (-1, 0)], atol=1e-12)
    assert np.allclose(out, [(0, -1)], atol=1e-12)


def test_normalize_identity():
    pts = [(0.3, -0.7), (2.0, 5.0)]
    tf, out = normalize_coordinates(((1, 0), (-1, 0)), pts)
    assert np.allclose(out, pts, atol=1e-15)
    assert np.allclose(tf.matrix(), np.eye(3), atol=1e-15)


def test_normalize_vertical_link_is_orientation_preserving():
    tf, out = normalize_coordinates(((0, 0), (0, 2)), [(1, 1)])
    m = tf.matrix()[:2, :2]
    assert np.linalg.det(m) > 0
    assert np.allclose(m.T @ m, np.eye(2) * tf.scale**2, atol=1e-12)  # similarity
    assert np.allclose(tf.apply([(0, 0), (0, 2)]), [(1, 0), (-1, 0)], atol=1e-12)
    # the person sits on the perpendicular bisector, one half-spacing to the right of tx->rx
    assert np.allclose(out, [(0, 1)], atol=1e-12)
    again = normalize_coordinates(((0, 0), (0, 2)), [(1, 1)])[1]
    assert np.array_equal(out, again)


def test_normalize_coincident_nodes():
    with pytest.raises(DegenerateGeometry):
        normalize_coordinates(((1, 1), (1, 1)), [(0, 0)])


@given(coord, coord, coord, coord)
def test_link_frame_maps_nodes(tx, ty, rx, ry):
    assume(math.hypot(tx - rx, ty - ry) > 1e-2)
    tf = link_frame((tx, ty), (rx, ry))
    img = tf.apply([(tx, ty), (rx, ry)])
    assert np.allclose(img, [(1, 0), (-1, 0)], atol=1e-9)
    assert np.linalg.det(tf.matrix()[:2, :2]) > 0


@given(coord, coord, coord, coord, st.lists(st.tuples(coord, coord), min_size=3, max_size=3))
def test_link_frame_is_similarity(tx, ty, rx, ry, pts):
    assume(math.hypot(tx - rx, ty - ry) > 1e-2)
    tf = link_frame((tx, ty), (rx, ry))
    p = np.array(pts)
    q = tf.apply(p)
    for i in range(3):
        for j in range(3):
            assert np.linalg.norm(q[i] - q[j]) == pytest.approx(
                tf.scale * np.linalg.norm(p[i] - p[j]), rel=1e-9, abs=1e-9
            )


@given(coord, coord, coord, coord)
def test_normalization_is_idempotent(tx, ty, rx, ry):
    assume(math.hypot(tx - rx, ty - ry) > 1e-2)
    tf = link_frame((tx, ty), (rx, ry))
    t2, r2 = tf.apply([(tx, ty), (rx, ry)])
    again = link_frame(t2, r2)
    assert np.allclose(again.matrix(), np.eye(3), atol=1e-12)
