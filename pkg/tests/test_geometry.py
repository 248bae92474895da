import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from traytilt.geometry import (STEEL_SHEET_DENSITY, GeometryError, PartShape, Pose, RigidBody,
                               Tray, Wall, allen_key_shape, allen_key_vertices,
                               compute_mass_properties, in_free_space, load_shape,
                               normalize_angle, preset_shape, random_triangles, save_shape,
                               shipped_shapes, wall_penetrations, world_vertices)

UNIT_SQUARE = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=float)


def rect_props(x0, y0, w, h, rho):
    """Mass, centroid and centroidal polar inertia of an axis-aligned rectangle."""
    m = rho * w * h
    return m, np.array([x0 + w / 2, y0 + h / 2]), m * (w * w + h * h) / 12.0


def test_unit_square():
    m, com, j = compute_mass_properties(UNIT_SQUARE, 1.0)
    assert m == pytest.approx(1.0)
    np.testing.assert_allclose(com, [0.5, 0.5])
    assert j == pytest.approx(1 / 6)


def test_density_scales_linearly():
    m, _, j = compute_mass_properties(UNIT_SQUARE, 2.0)
    assert m == pytest.approx(2.0)
    assert j == pytest.approx(1 / 3)


def test_allen_key_matches_rectangle_decomposition():
    rho = 7800 * 0.005
    mm = 1e-3
    parts = [rect_props(0, 0, 77.5 * mm, 10 * mm, rho),
             rect_props(0, 10 * mm, 10 * mm, 17.5 * mm, rho)]
    mass = sum(p[0] for p in parts)
    com = sum(p[0] * p[1] for p in parts) / mass
    inertia = sum(p[2] + p[0] * np.sum((p[1] - com) ** 2) for p in parts)

    m, c, j = compute_mass_properties(allen_key_vertices(), rho)
    assert m == pytest.approx(mass, rel=1e-12)
    np.testing.assert_allclose(c, com, rtol=1e-12)
    assert j == pytest.approx(inertia, rel=1e-12)
    # the shipped shape is the same outline rotated, so mass and inertia carry over
    body = RigidBody.from_shape(allen_key_shape())
    assert body.mass == pytest.approx(mass, rel=1e-12)
    assert body.inertia == pytest.approx(inertia, rel=1e-9)
    assert STEEL_SHEET_DENSITY == pytest.approx(rho)


@pytest.mark.parametrize("verts", [
    [(0, 0), (1, 0), (2, 0)],                      # collinear
    [(0, 0), (0, 1), (1, 1), (1, 0)],              # clockwise
    [(0, 0), (1, 1), (1, 0), (0, 1)],              # bow tie
])
def test_bad_polygons_rejected(verts):
    with pytest.raises(GeometryError):
        compute_mass_properties(verts, 1.0)


def test_nonpositive_density_rejected():
    with pytest.raises(GeometryError):
        compute_mass_properties(UNIT_SQUARE, 0.0)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-10, 10), st.floats(0.1, 5))
def test_mass_properties_rigid_motion_invariant(dx, dy, angle, rho):
    c, s = math.cos(angle), math.sin(angle)
    moved = UNIT_SQUARE @ np.array([[c, s], [-s, c]]) + (dx, dy)
    m0, _, j0 = compute_mass_properties(UNIT_SQUARE, rho)
    m1, _, j1 = compute_mass_properties(moved, rho)
    assert m1 == pytest.approx(m0, rel=1e-9)
    assert j1 == pytest.approx(j0, rel=1e-9)


def test_shape_is_centered():
    shape = PartShape(UNIT_SQUARE + 3.0, 1.0)
    _, com, _ = compute_mass_properties(shape.vertices, 1.0)
    np.testing.assert_allclose(com, 0.0, atol=1e-12)
    assert not shape.vertices.flags.writeable


def test_transforms():
    shape = PartShape(UNIT_SQUARE, 1.0)
    np.testing.assert_allclose(world_vertices(shape, Pose(0, 0, 0)), shape.vertices)
    np.testing.assert_allclose(world_vertices(shape, Pose(1, 2, 0)), shape.vertices + (1, 2))
    rotated = world_vertices(shape, Pose(0, 0, math.pi / 2))
    # body vertex (0.5, -0.5) maps to (0.5, 0.5)
    assert np.any(np.all(np.isclose(rotated, [0.5, 0.5]), axis=1))
    np.testing.assert_allclose(rotated[1], [0.5, 0.5], atol=1e-15)


@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-7, 7),
       st.floats(-1, 1), st.floats(-1, 1), st.floats(-7, 7))
def test_pose_compose_inverse(x1, y1, t1, x2, y2, t2):
    a, b = Pose(x1, y1, t1), Pose(x2, y2, t2)
    ident = a.compose(a.inverse())
    assert abs(ident.x) < 1e-12 and abs(ident.y) < 1e-12
    assert min(ident.theta, 2 * math.pi - ident.theta) < 1e-12
    pts = np.array([[0.1, 0.2], [-0.3, 0.05]])
    from traytilt.geometry import transform_points
    np.testing.assert_allclose(transform_points(pts, a.compose(b)),
                               transform_points(transform_points(pts, b), a), atol=1e-12)


@given(st.floats(-100, 100))
def test_normalize_angle_range(theta):
    t = normalize_angle(theta)
    assert 0.0 <= t < 2 * math.pi
    assert math.isclose(math.cos(t), math.cos(theta), abs_tol=1e-9)


def test_wall_penetrations():
    tray = Tray(0.2, 0.2)
    assert wall_penetrations([(-0.001, 0.05)], tray) == [(0, Wall.LEFT, pytest.approx(0.001))]
    assert wall_penetrations([(0.1, 0.1), (0.05, 0.15)], tray) == []
    hits = wall_penetrations([(-0.001, -0.002)], tray)
    assert {(w, round(d, 12)) for _, w, d in hits} == {(Wall.LEFT, 0.001), (Wall.BOTTOM, 0.002)}


def test_in_free_space():
    tray = Tray(0.2, 0.2)
    square = PartShape(UNIT_SQUARE * 0.1, 1.0)
    assert in_free_space(square, Pose(0.1, 0.1, 0), tray)
    assert not in_free_space(square, Pose(0.04, 0.1, 0), tray)
    # rotated corner reaches 0.0707 from the centre
    assert not in_free_space(square, Pose(0.06, 0.1, math.pi / 4), tray)
    assert in_free_space(square, Pose(0.075, 0.1, math.pi / 4), tray)


def test_contains_excludes_notch():
    shape = allen_key_shape()
    # notch corner region: far from both arms in the axis-aligned outline
    from traytilt.geometry import canonical_heading
    raw = allen_key_vertices()
    probe = np.array([[0.05, 0.02], [0.005, 0.02], [0.05, 0.005]])
    both = canonical_heading(np.vstack([raw, probe]))
    _, com, _ = compute_mass_properties(both[:6], 1.0)
    inside = shape.contains(both[6:] - com)
    assert list(inside) == [False, True, True]


def test_random_triangles_reproducible_and_valid():
    a = random_triangles(15)
    b = random_triangles(15)
    assert len(a) == 15
    for s, t in zip(a, b):
        np.testing.assert_array_equal(s.vertices, t.vertices)
        mm2 = s.area * 1e6
        assert 400 <= mm2 <= 1600
        e = np.roll(s.vertices, -1, axis=0) - s.vertices
        lengths = np.sort(np.hypot(e[:, 0], e[:, 1])) * 1e3
        assert 40 <= lengths[-1] <= 80
        assert np.min(np.diff(lengths)) >= 3


def test_shipped_shapes_match_generators():
    names = shipped_shapes()
    assert "allen_key_l" in names and len(names) == 16
    np.testing.assert_allclose(preset_shape("allen-key").vertices, allen_key_shape().vertices,
                               atol=1e-15)
    for tri in random_triangles(15):
        np.testing.assert_allclose(preset_shape(tri.name).vertices, tri.vertices, atol=1e-15)


def test_shape_roundtrip(tmp_path):
    shape = random_triangles(1)[0]
    save_shape(shape, tmp_path / "t.shape")
    back = load_shape(tmp_path / "t.shape")
    # reloading re-centres, which may move vertices by float rounding only
    np.testing.assert_allclose(back.vertices, shape.vertices, rtol=0, atol=1e-15)
    assert back.density == shape.density and back.name == shape.name


def test_malformed_shape_file(tmp_path):
    p = tmp_path / "bad.shape"
    p.write_text("name: x\n")
    with pytest.raises(GeometryError):
        load_shape(p)


def test_rigid_body_validates():
    shape = PartShape(UNIT_SQUARE, 1.0)
    with pytest.raises(GeometryError):
        RigidBody(shape, 2.0, 1 / 6)


@settings(max_examples=50)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0, 1)), min_size=3, max_size=3))
def test_triangle_area_nonnegative_or_rejected(pts):
    v = np.array(pts)
    try:
        m, _, j = compute_mass_properties(v, 1.0)
    except GeometryError:
        return
    assert m > 0 and j > 0
