"""Spatially varying floor friction maps.

A field is an ``n x n`` lattice of node coefficients spanning the tray,
bilinearly interpolated in between. Node ``(i, j)`` sits at
``(i * a / (n - 1), j * b / (n - 1))``.
"""
from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import yaml

from .geometry import Tray

MU_FLOOR = 0.01
DEFAULT_MU0 = 0.30
DEFAULT_GRID_N = 8
_SEED_LIMIT = 2 ** 64


class NoiseLevel(enum.Enum):
    UNIFORM = "uniform"
    LOW = "low"
    MEDIUM = "medium"
    HIGH = "high"

    @property
    def amplitude(self) -> float:
        return NOISE_AMPLITUDES[self]

    @classmethod
    def parse(cls, value) -> "NoiseLevel":
        if isinstance(value, cls):
            return value
        return cls(str(value).lower())


NOISE_AMPLITUDES = {
    NoiseLevel.UNIFORM: 0.0,
    NoiseLevel.LOW: 0.03,
    NoiseLevel.MEDIUM: 0.30,
    NoiseLevel.HIGH: 0.60,
}


@dataclass(frozen=True, eq=False)
class FrictionField:
    mu0: float
    amplitude: float
    grid: np.ndarray
    seed: int
    a: float = 0.2
    b: float = 0.2
    clamped_nodes: int = 0

    def __post_init__(self):
        g = np.array(self.grid, dtype=float)
        if g.ndim != 2 or g.shape[0] != g.shape[1] or g.shape[0] < 2:
            raise ValueError(f"friction grid must be square with n >= 2, got {g.shape}")
        if np.any(g < MU_FLOOR) or not np.all(np.isfinite(g)):
            raise ValueError(f"friction node values must be finite and >= {MU_FLOOR}")
        g.setflags(write=False)
        object.__setattr__(self, "grid", g)

    @property
    def grid_n(self) -> int:
        return self.grid.shape[0]

    @property
    def is_uniform(self) -> bool:
        return bool(np.all(self.grid == self.grid[0, 0]))

    def __call__(self, x: float, y: float) -> float:
        return mu_at(self, (x, y))


def _node_uniform(seed: int, index: int) -> float:
    # Philox keyed by the field seed, counter set to the node index: each
    # node's draw is independent of generation order.
    bitgen = np.random.Philox(counter=index, key=seed)
    return float(np.random.Generator(bitgen).random())


def generate_field(mu0: float = DEFAULT_MU0, amplitude: float = 0.0,
                   grid_n: int = DEFAULT_GRID_N, seed: int = 0,
                   tray: Tray | None = None) -> FrictionField:
    """Random friction map with i.i.d. node offsets in ``[-amplitude, amplitude]``.

    Nodes falling below ``MU_FLOOR`` are clamped and a warning is issued.
    """
    tray = tray or Tray()
    if not mu0 > 0:
        raise ValueError(f"mu0 must be positive, got {mu0}")
    if amplitude < 0:
        raise ValueError(f"amplitude must be non-negative, got {amplitude}")
    if grid_n < 2:
        raise ValueError(f"grid_n must be >= 2, got {grid_n}")
    seed = int(seed)
    if not 0 <= seed < _SEED_LIMIT:
        raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")

    grid = np.full((grid_n, grid_n), float(mu0))
    if amplitude > 0:
        for idx in range(grid_n * grid_n):
            u = _node_uniform(seed, idx)
            grid.flat[idx] = mu0 + amplitude * (2.0 * u - 1.0)
    clamped = int(np.count_nonzero(grid < MU_FLOOR))
    if clamped:
        warnings.warn(f"friction field: {clamped} node(s) below {MU_FLOOR} clamped "
                      f"(mu0={mu0}, amplitude={amplitude})", RuntimeWarning, stacklevel=2)
        grid = np.maximum(grid, MU_FLOOR)
    return FrictionField(float(mu0), float(amplitude), grid, seed, tray.a, tray.b, clamped)


def uniform_field(mu: float, tray: Tray | None = None, grid_n: int = 2) -> FrictionField:
    return generate_field(mu, 0.0, grid_n, 0, tray)


def field_for_level(level, seed: int = 0, mu0: float = DEFAULT_MU0,
                    grid_n: int = DEFAULT_GRID_N, tray: Tray | None = None) -> FrictionField:
    level = NoiseLevel.parse(level)
    return generate_field(mu0, level.amplitude, grid_n, seed, tray)


def mu_at(field: FrictionField, point) -> float:
    """Bilinear interpolation of the node lattice; points outside are clamped."""
    x, y = float(point[0]), float(point[1])
    n = field.grid_n
    fx = min(max(x, 0.0), field.a) / field.a * (n - 1)
    fy = min(max(y, 0.0), field.b) / field.b * (n - 1)
    i = min(int(math.floor(fx)), n - 2)
    j = min(int(math.floor(fy)), n - 2)
    tx, ty = fx - i, fy - j
    g = field.grid
    return float((1 - tx) * (1 - ty) * g[i, j] + tx * (1 - ty) * g[i + 1, j]
                 + (1 - tx) * ty * g[i, j + 1] + tx * ty * g[i + 1, j + 1])


def field_to_dict(field: FrictionField) -> dict:
    return {
        "mu0": field.mu0,
        "amplitude": field.amplitude,
        "grid_n": field.grid_n,
        "seed": field.seed,
        "tray": [field.a, field.b],
        "grid": [[float(v) for v in row] for row in field.grid],
    }


def save_field(field: FrictionField, path) -> None:
    Path(path).write_text(yaml.safe_dump(field_to_dict(field), sort_keys=False))


def load_field(path) -> FrictionField:
    """Read a field file; the stored node grid is authoritative."""
    data = yaml.safe_load(Path(path).read_text())
    try:
        grid = np.asarray(data["grid"], dtype=float)
        a, b = data.get("tray", [0.2, 0.2])
        if grid.shape[0] != int(data["grid_n"]):
            raise ValueError("grid_n does not match the stored grid")
        return FrictionField(float(data["mu0"]), float(data["amplitude"]), grid,
                             int(data["seed"]), float(a), float(b))
    except (KeyError, TypeError) as exc:
        raise ValueError(f"{path}: malformed friction field file ({exc})") from exc
