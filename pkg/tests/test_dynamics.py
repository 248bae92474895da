import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from traytilt.dynamics import (BodyState, ContactBlowupError, SimParams, SupportError,
                               TiltAction, floor_friction, kinetic_energy, project_into_tray,
                               simulate_tilt, support_points, trace_rows, wall_forces)
from traytilt.friction import generate_field, uniform_field
from traytilt.geometry import (PartShape, Pose, RigidBody, Tray, allen_key_shape,
                               in_free_space, preset_shape, shipped_shapes, world_vertices)

TRAY = Tray(0.2, 0.2)
SQUARE = RigidBody.from_shape(PartShape(np.array([(0, 0), (1, 0), (1, 1), (0, 1)]) * 0.04, 39.0))
L_KEY = RigidBody.from_shape(allen_key_shape())
TINY = RigidBody.from_shape(PartShape(np.array([(0, 0), (3, 0), (1, 2.5)]) * 1e-3, 39.0))
PLUS_X = TiltAction(0, math.radians(30))


def test_tilt_action():
    a = TiltAction(2)
    assert a.heading == pytest.approx(math.pi / 2)
    gx, gy = a.gravity(9.81)
    assert gx == pytest.approx(0.0, abs=1e-12) and gy == pytest.approx(9.81 * 0.5)
    for bad in (-1, 8, 1.5):
        with pytest.raises(ValueError):
            TiltAction(bad)
    with pytest.raises(ValueError):
        TiltAction(0, math.pi / 2)


def test_params_validation_and_roundtrip():
    p = SimParams()
    assert SimParams.from_dict(p.to_dict()) == p
    assert p.hold_steps == 250 and p.max_steps == 25_000
    assert p.stick_gain(0.7) < 2.0
    with pytest.raises(ValueError):
        SimParams(dt=0)
    with pytest.raises(ValueError):
        SimParams(dt=5e-3)
    with pytest.raises(ValueError):
        SimParams.from_dict({"bogus": 1})


def test_unit_square_supports():
    body = RigidBody.from_shape(PartShape(np.array([(0, 0), (1, 0), (1, 1), (0, 1)], float), 1.0))
    pts, shares = support_points(body, 4)
    assert len(pts) == 16
    np.testing.assert_allclose(shares, 1 / 16)
    np.testing.assert_allclose(pts.mean(axis=0), 0.0, atol=1e-12)


@pytest.mark.parametrize("name", shipped_shapes())
def test_supports_inside_and_normalized(name):
    body = RigidBody.from_shape(preset_shape(name))
    pts, shares = support_points(body)
    assert len(pts) >= 3
    assert math.fsum(shares) == pytest.approx(1.0, abs=1e-12)
    assert np.all(body.shape.contains(pts))


def test_supports_avoid_l_notch():
    pts, _ = support_points(L_KEY, 16)
    # every sample is inside the L outline, none in the notch it encloses
    assert np.all(L_KEY.shape.contains(pts))
    bbox_pts = len(pts)
    assert bbox_pts < 16 * 16


def test_supports_need_n_at_least_2():
    with pytest.raises(SupportError):
        support_points(SQUARE, 1)


def test_friction_at_rest_is_zero():
    sup = support_points(SQUARE)
    f, tq = floor_friction(SQUARE, BodyState(Pose(0.1, 0.1, 0)), sup, uniform_field(0.3),
                           PLUS_X, SimParams())
    assert np.all(f == 0.0) and tq == 0.0


def test_friction_pure_translation():
    sup = support_points(SQUARE)
    state = BodyState(Pose(0.1, 0.1, 0.3), vx=0.1)
    f, tq = floor_friction(SQUARE, state, sup, uniform_field(0.3), PLUS_X, SimParams())
    expected = 0.3 * SQUARE.mass * 9.81 * math.cos(math.radians(30))
    assert f[0] == pytest.approx(-expected, rel=1e-12)
    assert f[1] == pytest.approx(0.0, abs=1e-15)
    assert tq == pytest.approx(0.0, abs=1e-15)


def test_friction_pure_rotation_matches_support_sum():
    pts, shares = support_points(SQUARE)
    omega = 10.0
    state = BodyState(Pose(0.1, 0.1, 0.0), omega=omega)
    f, tq = floor_friction(SQUARE, state, (pts, shares), uniform_field(0.3), PLUS_X, SimParams())
    load = SQUARE.mass * 9.81 * math.cos(math.radians(30))
    r = np.hypot(pts[:, 0], pts[:, 1])
    # each sample slides tangentially at omega * r >> v_stick
    assert np.min(r) * omega > 10 * SimParams().v_stick
    expected = -0.3 * load * float(np.sum(shares * r))
    assert tq == pytest.approx(expected, rel=1e-12)
    np.testing.assert_allclose(f, 0.0, atol=1e-15)


def test_wall_forces():
    params = SimParams(k_wall=1e5, c_wall=50.0)
    far = BodyState(Pose(0.1, 0.1, 0.0))
    f, tq = wall_forces(SQUARE, far, TRAY, params)
    assert np.all(f == 0) and tq == 0
    # shift so a single corner of a 45-degree square pokes 1e-4 m past the right wall
    half_diag = 0.02 * math.sqrt(2)
    state = BodyState(Pose(0.2 - half_diag + 1e-4, 0.1, math.pi / 4))
    f, tq = wall_forces(SQUARE, state, TRAY, params)
    assert f[0] == pytest.approx(-10.0, rel=1e-6)
    assert abs(tq) < 1e-12
    # separating: damping is clamped, only the spring remains
    receding = BodyState(state.pose, vx=-0.05)
    f2, _ = wall_forces(SQUARE, receding, TRAY, params)
    assert f2[0] == pytest.approx(-10.0, rel=1e-6)
    approaching = BodyState(state.pose, vx=0.05)
    f3, _ = wall_forces(SQUARE, approaching, TRAY, params)
    assert f3[0] == pytest.approx(-10.0 - 50 * 0.05, rel=1e-6)
    deep = BodyState(Pose(0.2 - half_diag + 3e-3, 0.1, math.pi / 4))
    with pytest.raises(ContactBlowupError):
        wall_forces(SQUARE, deep, TRAY, params)


def test_wall_caps_do_not_depend_on_timestep():
    right = TINY.shape.vertices[:, 0].max()
    state = BodyState(Pose(0.2 - right + 1e-5, 0.1, 0.0), vx=0.05)
    f, tq = wall_forces(TINY, state, TRAY, SimParams())
    # a 3 mm triangle is far lighter than the nominal spring and damper allow
    assert abs(f[0]) < 2e4 * 1e-5 + 90 * 0.05
    f_fine, tq_fine = wall_forces(TINY, state, TRAY, SimParams(dt=1e-4))
    assert f_fine.tobytes() == f.tobytes() and tq_fine == tq


def test_point_part_slides_to_right_wall():
    out = simulate_tilt(TINY, Pose(0.1, 0.1, 0.0), PLUS_X, uniform_field(0.3), TRAY)
    assert out.settled
    xs = world_vertices(TINY, out.settled_pose)[:, 0]
    assert xs.max() == pytest.approx(0.2, abs=1e-3)
    assert out.max_penetration < 1e-3


def test_high_friction_sticks():
    start = Pose(0.1, 0.1, 0.7)
    out = simulate_tilt(TINY, start, PLUS_X, uniform_field(0.7), TRAY)
    assert out.settled
    assert math.hypot(out.settled_pose.x - start.x, out.settled_pose.y - start.y) < 1e-4


def test_opposite_tilts_and_determinism():
    start = Pose(0.1, 0.1, 1.0)
    field = generate_field(0.3, 0.03, 8, 4)
    right = simulate_tilt(L_KEY, start, TiltAction(0), field, TRAY)
    left = simulate_tilt(L_KEY, start, TiltAction(4), field, TRAY)
    assert world_vertices(L_KEY, right.settled_pose)[:, 0].max() > 0.199
    assert world_vertices(L_KEY, left.settled_pose)[:, 0].min() < 0.001
    again = simulate_tilt(L_KEY, start, TiltAction(0), field, TRAY)
    assert again.settled_pose == right.settled_pose
    assert again.steps == right.steps


def test_trace():
    out = simulate_tilt(TINY, Pose(0.1, 0.1, 0.0), PLUS_X, uniform_field(0.3), TRAY, trace=True)
    rows = trace_rows(out)
    assert len(rows) == out.steps and len(rows[0]) == 8
    assert rows[0][1:4] == [0.1, 0.1, 0.0]
    with pytest.raises(ValueError):
        trace_rows(simulate_tilt(TINY, Pose(0.1, 0.1, 0.0), PLUS_X, uniform_field(0.3), TRAY))


def test_timeout_flags_unsettled():
    params = SimParams(max_sim_time=0.01)
    out = simulate_tilt(L_KEY, Pose(0.1, 0.1, 0.0), PLUS_X, uniform_field(0.3), TRAY, params)
    assert not out.settled
    assert out.sim_time == pytest.approx(0.01)


def test_projection():
    pose = Pose(0.2 - 0.02 * math.sqrt(2) + 5e-4, 0.1, math.pi / 4)
    fixed = project_into_tray(SQUARE, pose, TRAY)
    assert in_free_space(SQUARE, fixed, TRAY)
    assert fixed.x < pose.x and fixed.y == pose.y


def test_kinetic_energy():
    assert kinetic_energy(SQUARE, 0, 0, 0) == 0
    assert kinetic_energy(SQUARE, 1, 0, 0) == pytest.approx(0.5 * SQUARE.mass)


@settings(max_examples=25)
@given(st.floats(0.05, 0.15), st.floats(0.05, 0.15), st.floats(0, 2 * math.pi),
       st.integers(0, 7))
def test_settled_pose_in_free_space(x, y, theta, direction):
    start = Pose(x, y, theta)
    if not in_free_space(L_KEY, start, TRAY):
        return
    out = simulate_tilt(L_KEY, start, TiltAction(direction), uniform_field(0.3), TRAY)
    assert in_free_space(L_KEY, out.settled_pose, TRAY)
    assert out.max_penetration <= 2e-3


@settings(max_examples=30)
@given(st.floats(0.06, 0.14), st.floats(0.06, 0.14), st.floats(0, 2 * math.pi),
       st.integers(0, 7))
def test_stick_dominance(x, y, theta, direction):
    start = Pose(x, y, theta)
    if not in_free_space(L_KEY, start, TRAY):
        return
    params = SimParams()
    out = simulate_tilt(L_KEY, start, TiltAction(direction), uniform_field(0.7), TRAY, params)
    moved = math.hypot(out.settled_pose.x - x, out.settled_pose.y - y)
    assert out.settled and moved <= params.v_stick * params.settle_hold


@settings(max_examples=30)
@given(st.floats(0.05, 0.15), st.floats(0.05, 0.15), st.floats(0, 2 * math.pi),
       st.integers(0, 7), st.integers(0, 2**32))
def test_terminal_energy_bound(x, y, theta, direction, seed):
    start = Pose(x, y, theta)
    if not in_free_space(L_KEY, start, TRAY):
        return
    params = SimParams()
    field = generate_field(0.3, 0.1, 8, seed)
    out = simulate_tilt(L_KEY, start, TiltAction(direction), field, TRAY, params)
    if out.settled:
        bound = 0.5 * L_KEY.mass * params.settle_v ** 2 + 0.5 * L_KEY.inertia * params.settle_w ** 2
        assert kinetic_energy(L_KEY, *out.terminal_velocity) < bound
