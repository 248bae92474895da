"""One tray tilt, simulated to rest.

The tray is tilted by ``tilt_angle`` toward one of eight compass headings and
held there. In the tray frame the part feels in-plane gravity
``g sin(tilt)`` along the heading and a floor load ``m g cos(tilt)`` spread
over interior support points. Walls push back with a spring-damper on each
penetrating vertex. The run ends once the part has been quiet for
``settle_hold`` seconds; the level-again motion is not simulated.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, fields
from functools import lru_cache

import numpy as np

from . import _kernels
from .friction import FrictionField
from .geometry import Pose, RigidBody, Tray, Wall, penetration_depths, points_in_polygon

DEFAULT_TILT = math.pi / 6
N_DIRECTIONS = 8
# vertex clearance left by the post-settle projection
PROJECTION_MARGIN = 1e-9


class ContactBlowupError(RuntimeError):
    """Wall penetration exceeded the allowed depth (stiffness/timestep too coarse)."""


class SupportError(ValueError):
    pass


@dataclass(frozen=True)
class TiltAction:
    direction: int
    tilt_angle: float = DEFAULT_TILT

    def __post_init__(self):
        if not (isinstance(self.direction, (int, np.integer)) and 0 <= self.direction < N_DIRECTIONS):
            raise ValueError(f"direction must be an integer in 0..7, got {self.direction!r}")
        object.__setattr__(self, "direction", int(self.direction))
        if not 0.0 < self.tilt_angle < math.pi / 2:
            raise ValueError(f"tilt_angle must lie in (0, pi/2), got {self.tilt_angle}")

    @property
    def heading(self) -> float:
        return self.direction * math.pi / 4

    def gravity(self, g: float) -> tuple[float, float]:
        """In-plane gravity acceleration in the tray frame."""
        a = g * math.sin(self.tilt_angle)
        return a * math.cos(self.heading), a * math.sin(self.heading)


@dataclass(frozen=True)
class BodyState:
    pose: Pose
    vx: float = 0.0
    vy: float = 0.0
    omega: float = 0.0

    def __post_init__(self):
        if not all(math.isfinite(v) for v in (self.pose.x, self.pose.y, self.vx, self.vy, self.omega)):
            raise ValueError("body state must be finite")


@dataclass(frozen=True)
class SimParams:
    dt: float = 2e-4
    # step at which wall stiffness and damping are capped for stability
    contact_dt: float = 2e-4
    g: float = 9.81
    k_wall: float = 2e4
    c_wall: float = 90.0
    mu_wall: float = 0.1
    v_stick: float = 1e-3
    n_support: int = 8
    settle_v: float = 9e-4
    settle_w: float = 0.02
    settle_hold: float = 0.05
    max_sim_time: float = 5.0
    max_penetration: float = 2e-3

    def __post_init__(self):
        for f in fields(self):
            value = getattr(self, f.name)
            if not (isinstance(value, (int, float)) and value > 0):
                raise ValueError(f"SimParams.{f.name} must be positive, got {value!r}")
        if self.dt > 1e-3:
            raise ValueError(f"dt must be <= 1e-3 s, got {self.dt}")
        if self.settle_v >= self.v_stick:
            raise ValueError("settle_v must be below v_stick")
        if int(self.n_support) != self.n_support or self.n_support < 2:
            raise ValueError("n_support must be an integer >= 2")

    @property
    def cap_dt(self) -> float:
        return max(self.dt, self.contact_dt)

    @property
    def hold_steps(self) -> int:
        return max(1, int(round(self.settle_hold / self.dt)))

    @property
    def max_steps(self) -> int:
        return int(round(self.max_sim_time / self.dt))

    def stick_gain(self, mu_max: float, tilt_angle: float = DEFAULT_TILT) -> float:
        """``dt`` times the stick-regime damping rate; explicit stepping needs < 2."""
        return mu_max * self.g * math.cos(tilt_angle) * self.dt / self.v_stick

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict | None) -> "SimParams":
        data = dict(data or {})
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ValueError(f"unknown sim parameter(s): {sorted(unknown)}")
        if "n_support" in data:
            data["n_support"] = int(data["n_support"])
        return cls(**{k: (v if k == "n_support" else float(v)) for k, v in data.items()})


@dataclass(frozen=True)
class TiltOutcome:
    settled_pose: Pose
    settled: bool
    sim_time: float
    max_penetration: float
    steps: int = 0
    terminal_velocity: tuple[float, float, float] = (0.0, 0.0, 0.0)
    trace: np.ndarray | None = None


def _grid_samples(shape_vertices: np.ndarray, n: int) -> np.ndarray:
    # regular n x n cell-centre grid over the bounding box in the frame of the
    # longest edge, returned in body coordinates
    edges = np.roll(shape_vertices, -1, axis=0) - shape_vertices
    k = int(np.argmax(np.hypot(edges[:, 0], edges[:, 1])))
    ang = math.atan2(edges[k, 1], edges[k, 0])
    c, s = math.cos(ang), math.sin(ang)
    local = shape_vertices @ np.array([[c, -s], [s, c]])
    lo, hi = local.min(axis=0), local.max(axis=0)
    u = lo[0] + (np.arange(n) + 0.5) * (hi[0] - lo[0]) / n
    v = lo[1] + (np.arange(n) + 0.5) * (hi[1] - lo[1]) / n
    uu, vv = np.meshgrid(u, v, indexing="ij")
    pts = np.column_stack([uu.ravel(), vv.ravel()])
    pts = pts[points_in_polygon(pts, local)]
    if len(pts) == 0:
        return pts
    # shift the lattice so its centroid sits on the COM when that keeps every
    # sample inside; uniform friction then exerts no spurious torque
    shifted = pts - pts.mean(axis=0)
    if np.all(points_in_polygon(shifted, local)):
        pts = shifted
    return pts @ np.array([[c, s], [-s, c]])


def support_points(body: RigidBody, n_support: int = 8) -> tuple[np.ndarray, np.ndarray]:
    """Interior floor-contact samples and their equal load shares.

    The grid is refined up to 4x when a thin part yields fewer than 3 samples.
    """
    if n_support < 2:
        raise SupportError(f"n_support must be >= 2, got {n_support}")
    verts = body.shape.vertices
    for n in (n_support, 2 * n_support, 3 * n_support, 4 * n_support):
        pts = _grid_samples(verts, n)
        if len(pts) >= 3:
            shares = np.full(len(pts), 1.0 / len(pts))
            pts.setflags(write=False)
            shares.setflags(write=False)
            return pts, shares
    raise SupportError(f"{body.shape.name}: fewer than 3 interior samples after 4x refinement")


_cached_supports = lru_cache(maxsize=128)(support_points)


def _uniform_mu(field: FrictionField) -> float:
    return float(field.grid[0, 0]) if field.is_uniform else -1.0


def floor_friction(body: RigidBody, state: BodyState, supports, field: FrictionField,
                   action: TiltAction, params: SimParams) -> tuple[np.ndarray, float]:
    """Summed floor friction force (N) and torque about the COM (N m)."""
    pts, shares = supports
    load = body.mass * params.g * math.cos(action.tilt_angle)
    p = state.pose
    fx, fy, tq = _kernels.floor_friction(
        p.x, p.y, math.cos(p.theta), math.sin(p.theta), state.vx, state.vy, state.omega,
        np.ascontiguousarray(pts), np.ascontiguousarray(shares), load,
        np.ascontiguousarray(field.grid), field.a, field.b, params.v_stick,
        _uniform_mu(field))
    return np.array([fx, fy]), tq


def wall_forces(body: RigidBody, state: BodyState, tray: Tray,
                params: SimParams) -> tuple[np.ndarray, float]:
    """Spring-damper wall contact force and torque; raises on deep penetration."""
    p = state.pose
    fx, fy, tq, deepest = _kernels.wall_forces(
        p.x, p.y, math.cos(p.theta), math.sin(p.theta), state.vx, state.vy, state.omega,
        np.ascontiguousarray(body.shape.vertices), tray.a, tray.b,
        params.k_wall, params.c_wall, params.mu_wall, params.v_stick,
        body.mass, body.inertia, params.cap_dt)
    if deepest > params.max_penetration:
        raise ContactBlowupError(
            f"penetration {deepest * 1e3:.3f} mm exceeds {params.max_penetration * 1e3:.3f} mm")
    return np.array([fx, fy]), tq


def project_into_tray(body: RigidBody, pose: Pose, tray: Tray) -> Pose:
    """Translate a resting pose out of any residual wall overlap."""
    hits = penetration_depths(body, pose, tray)
    if not hits:
        return pose
    push = {w: 0.0 for w in Wall}
    for _, wall, depth in hits:
        push[wall] = max(push[wall], depth + PROJECTION_MARGIN)
    dx = push[Wall.LEFT] - push[Wall.RIGHT]
    dy = push[Wall.BOTTOM] - push[Wall.TOP]
    return Pose(pose.x + dx, pose.y + dy, pose.theta)


def simulate_tilt(body: RigidBody, start_pose: Pose, action: TiltAction,
                  field: FrictionField, tray: Tray, params: SimParams | None = None,
                  trace: bool = False) -> TiltOutcome:
    """Run one tilt from rest at ``start_pose`` until the part settles.

    A run that hits ``max_sim_time`` returns ``settled=False`` with the last
    pose. With ``trace=True`` the outcome carries the per-step state array
    (columns t, x, y, theta, vx, vy, omega, penetration).
    """
    params = params or SimParams()
    pts, shares = _cached_supports(body, int(params.n_support))
    gx, gy = action.gravity(params.g)
    load = body.mass * params.g * math.cos(action.tilt_angle)
    buf = np.zeros((params.max_steps, 8)) if trace else _kernels.empty_trace()
    status, x, y, th, vx, vy, w, steps, max_pen = _kernels.run_tilt(
        np.ascontiguousarray(body.shape.vertices), pts, shares, body.mass, body.inertia,
        field.grid, field.a, field.b, tray.a, tray.b,
        gx, gy, load, params.dt, params.cap_dt, params.k_wall, params.c_wall, params.mu_wall,
        params.v_stick, params.settle_v, params.settle_w, params.hold_steps,
        params.max_steps, params.max_penetration,
        start_pose.x, start_pose.y, start_pose.theta, buf, _uniform_mu(field))
    if status == _kernels.BLOWUP:
        raise ContactBlowupError(
            f"penetration {max_pen * 1e3:.3f} mm exceeds "
            f"{params.max_penetration * 1e3:.3f} mm at t={steps * params.dt:.4f} s")
    pose = project_into_tray(body, Pose(x, y, th), tray)
    return TiltOutcome(
        settled_pose=pose,
        settled=status == _kernels.SETTLED,
        sim_time=steps * params.dt,
        max_penetration=max_pen,
        steps=int(steps),
        terminal_velocity=(vx, vy, w),
        trace=buf[:steps] if trace else None,
    )


def trace_rows(outcome: TiltOutcome):
    """Rows for the debugging trace CSV."""
    if outcome.trace is None:
        raise ValueError("outcome was produced without trace=True")
    return outcome.trace.tolist()


def kinetic_energy(body: RigidBody, vx: float, vy: float, omega: float) -> float:
    return 0.5 * body.mass * (vx * vx + vy * vy) + 0.5 * body.inertia * omega * omega

