"""Planar part geometry: polygons, mass properties, poses and tray containment.

All lengths are meters, angles radians. A :class:`PartShape` is stored in a
body frame whose origin is the area centroid, so a :class:`Pose` always
locates the center of mass.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import yaml

TWO_PI = 2.0 * math.pi
AREA_TOL = 1e-12


class GeometryError(ValueError):
    """Raised for degenerate or self-intersecting polygons."""


class Wall(enum.IntEnum):
    LEFT = 0
    RIGHT = 1
    BOTTOM = 2
    TOP = 3


def normalize_angle(theta: float) -> float:
    """Map an angle onto [0, 2*pi)."""
    t = math.fmod(theta, TWO_PI)
    if t < 0.0:
        t += TWO_PI
    # fmod of a tiny negative can round up to exactly 2*pi
    if t >= TWO_PI:
        t = 0.0
    return t


def _signed_area(v: np.ndarray) -> float:
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    return 0.5 * float(np.sum(x * yn - xn * y))


def _segments_cross(p1, p2, q1, q2) -> bool:
    def orient(a, b, c):
        return (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])

    d1 = orient(q1, q2, p1)
    d2 = orient(q1, q2, p2)
    d3 = orient(p1, p2, q1)
    d4 = orient(p1, p2, q2)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0 and d3 != 0 and d4 != 0:
        return True

    def on_seg(a, b, c):
        return (min(a[0], b[0]) <= c[0] <= max(a[0], b[0])
                and min(a[1], b[1]) <= c[1] <= max(a[1], b[1]))

    # collinear touching counts as an intersection for non-adjacent edges
    if d1 == 0 and on_seg(q1, q2, p1):
        return True
    if d2 == 0 and on_seg(q1, q2, p2):
        return True
    if d3 == 0 and on_seg(p1, p2, q1):
        return True
    if d4 == 0 and on_seg(p1, p2, q2):
        return True
    return False


def is_simple(vertices: np.ndarray) -> bool:
    """True when no two non-adjacent edges of the closed polygon touch."""
    n = len(vertices)
    for i in range(n):
        a1, a2 = vertices[i], vertices[(i + 1) % n]
        for j in range(i + 1, n):
            # skip edges that share a vertex
            if j == i or (j + 1) % n == i or (i + 1) % n == j:
                continue
            if _segments_cross(a1, a2, vertices[j], vertices[(j + 1) % n]):
                return False
    return True


def compute_mass_properties(vertices, density: float) -> tuple[float, np.ndarray, float]:
    """Mass, centroid and polar moment of inertia of a uniform lamina.

    Uses the Green's-theorem polygon integrals. The polygon must be simple and
    counter-clockwise.

    Returns
    -------
    mass : float
        ``density * area``.
    com : (2,) ndarray
        Area centroid in the input frame.
    inertia : float
        Second polar moment about the centroid times density (kg m^2).
    """
    v = np.asarray(vertices, dtype=float)
    if v.ndim != 2 or v.shape[1] != 2 or len(v) < 3:
        raise GeometryError("polygon needs at least 3 two-dimensional vertices")
    if not density > 0:
        raise GeometryError(f"density must be positive, got {density}")
    if not np.all(np.isfinite(v)):
        raise GeometryError("non-finite vertex coordinates")
    area = _signed_area(v)
    if area <= AREA_TOL:
        raise GeometryError(
            f"degenerate or clockwise polygon (signed area {area:.3e} m^2)")
    if not is_simple(v):
        raise GeometryError("polygon is self-intersecting")

    # shift to the first vertex to keep the sums well conditioned
    origin = v[0].copy()
    w = v - origin
    x, y = w[:, 0], w[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    cx = float(np.sum((x + xn) * cross)) / (6.0 * area)
    cy = float(np.sum((y + yn) * cross)) / (6.0 * area)
    j_origin = float(np.sum(cross * (x * x + x * xn + xn * xn + y * y + y * yn + yn * yn))) / 12.0
    j_com = j_origin - area * (cx * cx + cy * cy)
    com = np.array([cx, cy]) + origin
    return density * area, com, density * j_com


@dataclass(frozen=True, eq=False)
class PartShape:
    """A simple CCW polygon re-centered so its centroid is the origin.

    ``vertices`` passed in may live in any frame; the stored copy is shifted
    by the centroid and marked read-only.
    """

    vertices: np.ndarray
    density: float
    name: str = "part"
    area: float = field(init=False)

    def __post_init__(self):
        v = np.array(self.vertices, dtype=float)
        mass, com, _ = compute_mass_properties(v, self.density)
        v = v - com
        v.setflags(write=False)
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "area", mass / self.density)

    def __len__(self) -> int:
        return len(self.vertices)

    @property
    def radius(self) -> float:
        """Largest vertex distance from the center of mass."""
        return float(np.max(np.hypot(self.vertices[:, 0], self.vertices[:, 1])))

    def contains(self, points) -> np.ndarray:
        """Even-odd point-in-polygon test for body-frame points."""
        return points_in_polygon(np.atleast_2d(points), self.vertices)


def points_in_polygon(points: np.ndarray, vertices: np.ndarray) -> np.ndarray:
    px = points[:, 0][:, None]
    py = points[:, 1][:, None]
    x0, y0 = vertices[:, 0][None, :], vertices[:, 1][None, :]
    x1, y1 = np.roll(vertices[:, 0], -1)[None, :], np.roll(vertices[:, 1], -1)[None, :]
    straddle = (y0 > py) != (y1 > py)
    with np.errstate(divide="ignore", invalid="ignore"):
        x_cross = x0 + (py - y0) * (x1 - x0) / (y1 - y0)
    hits = straddle & (px < x_cross)
    return (np.count_nonzero(hits, axis=1) % 2) == 1


@dataclass(frozen=True, eq=False)
class RigidBody:
    shape: PartShape
    mass: float
    inertia: float

    def __post_init__(self):
        if not (self.mass > 0 and self.inertia > 0):
            raise GeometryError("mass and inertia must be positive")
        m, _, inertia = compute_mass_properties(self.shape.vertices, self.shape.density)
        if not (math.isclose(m, self.mass, rel_tol=1e-9)
                and math.isclose(inertia, self.inertia, rel_tol=1e-9)):
            raise GeometryError("mass properties disagree with the shape integrals")

    @classmethod
    def from_shape(cls, shape: PartShape) -> "RigidBody":
        m, _, inertia = compute_mass_properties(shape.vertices, shape.density)
        return cls(shape, m, inertia)


@dataclass(frozen=True)
class Tray:
    """Axis-aligned rectangular tray interior ``[0, a] x [0, b]``."""

    a: float = 0.2
    b: float = 0.2

    def __post_init__(self):
        if not (self.a > 0 and self.b > 0):
            raise ValueError(f"tray sides must be positive, got {self.a} x {self.b}")


@dataclass(frozen=True)
class Pose:
    x: float
    y: float
    theta: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        object.__setattr__(self, "theta", normalize_angle(float(self.theta)))

    def compose(self, other: "Pose") -> "Pose":
        """``self * other``: apply ``other`` in the frame of ``self``."""
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose(self.x + c * other.x - s * other.y,
                    self.y + s * other.x + c * other.y,
                    self.theta + other.theta)

    def inverse(self) -> "Pose":
        c, s = math.cos(self.theta), math.sin(self.theta)
        return Pose(-(c * self.x + s * self.y), s * self.x - c * self.y, -self.theta)

    def as_tuple(self) -> tuple[float, float, float]:
        return (self.x, self.y, self.theta)


def transform_points(points, pose: Pose) -> np.ndarray:
    p = np.asarray(points, dtype=float)
    c, s = math.cos(pose.theta), math.sin(pose.theta)
    out = np.empty_like(p)
    out[:, 0] = c * p[:, 0] - s * p[:, 1] + pose.x
    out[:, 1] = s * p[:, 0] + c * p[:, 1] + pose.y
    return out


def world_vertices(body: RigidBody | PartShape, pose: Pose) -> np.ndarray:
    """Body vertices rotated by ``pose.theta`` then shifted to ``(x, y)``."""
    shape = body.shape if isinstance(body, RigidBody) else body
    return transform_points(shape.vertices, pose)


def wall_penetrations(points, tray: Tray) -> list[tuple[int, Wall, float]]:
    """(point index, wall, depth) for every point outside the tray interior."""
    out = []
    for i, (px, py) in enumerate(np.atleast_2d(np.asarray(points, dtype=float))):
        if px < 0.0:
            out.append((i, Wall.LEFT, -px))
        if px > tray.a:
            out.append((i, Wall.RIGHT, px - tray.a))
        if py < 0.0:
            out.append((i, Wall.BOTTOM, -py))
        if py > tray.b:
            out.append((i, Wall.TOP, py - tray.b))
    return out


def penetration_depths(body, pose: Pose, tray: Tray) -> list[tuple[int, Wall, float]]:
    # The tray interior is convex, so vertices alone witness any overlap.
    return wall_penetrations(world_vertices(body, pose), tray)


def in_free_space(body, pose: Pose, tray: Tray) -> bool:
    return not penetration_depths(body, pose, tray)


# ---------------------------------------------------------------------------
# shape files and presets

STEEL_SHEET_DENSITY = 7800.0 * 0.005  # kg/m^2, 5 mm steel


def canonical_heading(vertices: np.ndarray, heading: float = math.pi / 4) -> np.ndarray:
    """Rotate vertices so the longest edge points along ``heading``.

    With the default 45 degrees, resting states with that edge flush against
    a wall land in the middle of a 90-degree orientation bin instead of on
    a bin edge.
    """
    v = np.asarray(vertices, dtype=float)
    edges = np.roll(v, -1, axis=0) - v
    lengths = np.hypot(edges[:, 0], edges[:, 1])
    k = int(np.argmax(lengths))
    angle = heading - math.atan2(edges[k, 1], edges[k, 0])
    c, s = math.cos(angle), math.sin(angle)
    rot = np.array([[c, -s], [s, c]])
    return v @ rot.T


def allen_key_vertices() -> np.ndarray:
    """Axis-aligned L outline: 77.5 x 10 mm arm fused with a 10 x 27.5 mm arm."""
    mm = 1e-3
    return np.array([
        (0.0, 0.0), (77.5, 0.0), (77.5, 10.0),
        (10.0, 10.0), (10.0, 27.5), (0.0, 27.5),
    ]) * mm


def allen_key_shape() -> PartShape:
    return PartShape(canonical_heading(allen_key_vertices()), STEEL_SHEET_DENSITY,
                     name="allen_key_l")


TRIANGLE_SEED = 20190512


def random_triangles(count: int = 15, seed: int = TRIANGLE_SEED,
                     density: float = STEEL_SHEET_DENSITY) -> list[PartShape]:
    """Reproducible irregular triangles of allen-key scale.

    Rejection sampling over vertices in an 80 x 40 mm box; kept when the
    longest edge is 40-80 mm, area 400-1600 mm^2, every angle >= 15 degrees
    and edge lengths differ pairwise by >= 3 mm (no near-isosceles parts).
    Triangle ``i`` uses its own stream ``SeedSequence([seed, i])``.
    """
    shapes = []
    for i in range(count):
        rng = np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, i])))
        while True:
            p = rng.uniform((0.0, 0.0), (80.0, 40.0), size=(3, 2))
            if _signed_area(p) < 0:
                p = p[::-1]
            edges = np.roll(p, -1, axis=0) - p
            lengths = np.sort(np.hypot(edges[:, 0], edges[:, 1]))
            area = _signed_area(p)
            if not (40.0 <= lengths[2] <= 80.0 and 400.0 <= area <= 1600.0):
                continue
            if np.min(np.diff(lengths)) < 3.0:
                continue
            a, b, c = lengths
            angles = np.arccos(np.clip([
                (b * b + c * c - a * a) / (2 * b * c),
                (a * a + c * c - b * b) / (2 * a * c),
                (a * a + b * b - c * c) / (2 * a * b)], -1, 1))
            if np.min(angles) < math.radians(15.0):
                continue
            break
        v = canonical_heading(p * 1e-3)
        shapes.append(PartShape(v, density, name=f"tri_{i + 1:02d}"))
    return shapes


def shape_to_dict(shape: PartShape) -> dict:
    return {
        "name": shape.name,
        "density": float(shape.density),
        "vertices": [[float(x), float(y)] for x, y in shape.vertices],
    }


def save_shape(shape: PartShape, path) -> None:
    Path(path).write_text(yaml.safe_dump(shape_to_dict(shape), sort_keys=False))


def load_shape(path) -> PartShape:
    data = yaml.safe_load(Path(path).read_text())
    try:
        return PartShape(np.asarray(data["vertices"], dtype=float), float(data["density"]),
                         name=str(data.get("name", Path(path).stem)))
    except (KeyError, TypeError) as exc:
        raise GeometryError(f"{path}: malformed shape file ({exc})") from exc


SHAPE_DIR = Path(__file__).with_name("shapes")


def preset_shape(name: str) -> PartShape:
    """Load a shipped shape by name (``allen_key_l``, ``tri_01`` ... ``tri_15``)."""
    key = name.replace("-", "_")
    if key == "allen_key":
        key = "allen_key_l"
    path = SHAPE_DIR / f"{key}.shape"
    if not path.exists():
        raise FileNotFoundError(f"no shipped shape named {name!r}")
    return load_shape(path)


def shipped_shapes() -> list[str]:
    return sorted(p.stem for p in SHAPE_DIR.glob("*.shape"))

