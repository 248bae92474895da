"""Pose voxelization and parts entropy.

Poses ``(x, y, theta)`` in an ``a x b`` tray are binned on a regular
``alpha x beta x gamma`` grid. Bins are half-open ``[edge, next_edge)`` with
the top edge folded into the last bin; ``theta`` is normalized to
``[0, 2*pi)`` before binning. Entropy is in bits.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence

import numpy as np

from .geometry import TWO_PI, Pose, normalize_angle


class OutOfDomainError(ValueError):
    pass


@dataclass(frozen=True)
class VoxelGrid:
    a: float = 0.2
    b: float = 0.2
    alpha: int = 4
    beta: int = 4
    gamma: int = 4

    def __post_init__(self):
        for name in ("alpha", "beta", "gamma"):
            v = getattr(self, name)
            if int(v) != v or v < 1:
                raise ValueError(f"{name} must be a positive integer, got {v!r}")
            object.__setattr__(self, name, int(v))
        if not (self.a > 0 and self.b > 0):
            raise ValueError("tray sides must be positive")
        # one positional resolution for both axes
        if not math.isclose(self.a / self.alpha, self.b / self.beta, rel_tol=1e-9):
            raise ValueError(
                f"a/alpha ({self.a / self.alpha}) and b/beta ({self.b / self.beta}) differ")

    @classmethod
    def from_resolution(cls, a: float, b: float, eps_p: float, eps_r: float) -> "VoxelGrid":
        counts = [a / eps_p, b / eps_p, TWO_PI / eps_r]
        rounded = [round(c) for c in counts]
        if any(not math.isclose(c, r, rel_tol=1e-9) for c, r in zip(counts, rounded)):
            raise ValueError(f"resolutions do not divide the domain evenly: {counts}")
        return cls(a, b, *rounded)

    @property
    def eps_p(self) -> float:
        return self.a / self.alpha

    @property
    def eps_r(self) -> float:
        return TWO_PI / self.gamma

    @property
    def total(self) -> int:
        return self.alpha * self.beta * self.gamma

    def centers(self) -> np.ndarray:
        """(total, 3) voxel centres ordered by voxel id."""
        j, k, m = np.unravel_index(np.arange(self.total), (self.alpha, self.beta, self.gamma))
        return np.column_stack([(j + 0.5) * self.eps_p, (k + 0.5) * (self.b / self.beta),
                                (m + 0.5) * self.eps_r])


def voxel_index(pose: Pose, grid: VoxelGrid) -> int:
    """Voxel id ``(j * beta + k) * gamma + m`` of a pose."""
    x, y = pose.x, pose.y
    if not (0.0 <= x <= grid.a and 0.0 <= y <= grid.b):
        raise OutOfDomainError(f"pose ({x}, {y}) lies outside the {grid.a} x {grid.b} tray")
    theta = normalize_angle(pose.theta)
    j = min(int(x / (grid.a / grid.alpha)), grid.alpha - 1)
    k = min(int(y / (grid.b / grid.beta)), grid.beta - 1)
    m = min(int(theta / (TWO_PI / grid.gamma)), grid.gamma - 1)
    return (j * grid.beta + k) * grid.gamma + m


def voxel_indices(poses: np.ndarray, grid: VoxelGrid) -> np.ndarray:
    """Vectorized :func:`voxel_index` over an ``(n, 3)`` array."""
    p = np.asarray(poses, dtype=float).reshape(-1, 3)
    x, y = p[:, 0], p[:, 1]
    bad = ~((x >= 0.0) & (x <= grid.a) & (y >= 0.0) & (y <= grid.b))
    if np.any(bad):
        i = int(np.flatnonzero(bad)[0])
        raise OutOfDomainError(f"pose {i} ({x[i]}, {y[i]}) lies outside the tray")
    theta = np.mod(p[:, 2], TWO_PI)
    theta[theta >= TWO_PI] = 0.0
    j = np.minimum((x / (grid.a / grid.alpha)).astype(np.int64), grid.alpha - 1)
    k = np.minimum((y / (grid.b / grid.beta)).astype(np.int64), grid.beta - 1)
    m = np.minimum((theta / (TWO_PI / grid.gamma)).astype(np.int64), grid.gamma - 1)
    return (j * grid.beta + k) * grid.gamma + m


@dataclass(frozen=True, eq=False)
class PoseHistogram:
    grid: VoxelGrid
    counts: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.counts, dtype=np.int64)
        if c.shape != (self.grid.total,) or np.any(c < 0):
            raise ValueError("counts must be a non-negative vector with one entry per voxel")
        c.setflags(write=False)
        object.__setattr__(self, "counts", c)

    @property
    def M(self) -> int:
        return int(self.counts.sum())

    @property
    def f(self) -> np.ndarray:
        return self.counts / self.M

    @property
    def occupied(self) -> int:
        return int(np.count_nonzero(self.counts))

    def merge(self, other: "PoseHistogram") -> "PoseHistogram":
        if other.grid != self.grid:
            raise ValueError("cannot merge histograms on different grids")
        return PoseHistogram(self.grid, self.counts + other.counts)


def estimate_distribution(poses, grid: VoxelGrid) -> PoseHistogram:
    """Occupancy counts of a pose sample; accepts Pose objects or an (n, 3) array."""
    if len(poses) == 0:
        raise ValueError("cannot estimate a distribution from zero poses")
    if isinstance(poses[0], Pose):
        poses = np.array([p.as_tuple() for p in poses])
    ids = voxel_indices(poses, grid)
    return PoseHistogram(grid, np.bincount(ids, minlength=grid.total))


def entropy_of_counts(counts) -> float:
    c = np.asarray(counts, dtype=float)
    c = c[c > 0]
    if len(c) <= 1:
        return 0.0
    f = c / c.sum()
    return float(-np.sum(f * np.log2(f)))


def entropy_bits(histogram: PoseHistogram | Sequence[int]) -> float:
    """Shannon entropy ``-sum f log2 f`` over occupied voxels."""
    counts = histogram.counts if isinstance(histogram, PoseHistogram) else histogram
    return entropy_of_counts(counts)


@dataclass(frozen=True)
class EntropyTrend:
    values: tuple[float, ...]
    occupied: tuple[int, ...]
    samples: tuple[int, ...] = ()
    settled_fraction: tuple[float, ...] = ()

    def __len__(self) -> int:
        return len(self.values)

    @property
    def deltas(self) -> tuple[float, ...]:
        """Change in entropy relative to the initial step."""
        return tuple(h - self.values[0] for h in self.values)


def entropy_trend(poses_by_step: Sequence[np.ndarray], grid: VoxelGrid,
                  settled_by_step: Sequence[np.ndarray] | None = None) -> EntropyTrend:
    """H^0..H^N from per-step ``(M, 3)`` pose arrays."""
    values, occupied, samples, settled = [], [], [], []
    for i, poses in enumerate(poses_by_step):
        hist = estimate_distribution(poses, grid)
        values.append(entropy_bits(hist))
        occupied.append(hist.occupied)
        samples.append(hist.M)
        if settled_by_step is not None:
            settled.append(float(np.mean(settled_by_step[i])))
        else:
            settled.append(1.0)
    return EntropyTrend(tuple(values), tuple(occupied), tuple(samples), tuple(settled))


class RiceRule(NamedTuple):
    trials: int
    exact: float


def rice_rule_trials(total_voxels: int) -> RiceRule:
    """Trials M for which ``total_voxels = 2 M^(1/3)``."""
    if total_voxels < 1:
        raise ValueError("total_voxels must be >= 1")
    exact = (total_voxels / 2.0) ** 3
    return RiceRule(int(round(exact)), exact)


def expected_finite_sample_entropy(M: int, total_voxels: int, repetitions: int = 1000,
                                   seed: int = 0) -> float:
    """Mean entropy of ``M`` uniform draws into ``total_voxels`` bins (Monte Carlo)."""
    if M < 1 or total_voxels < 1 or repetitions < 1:
        raise ValueError("M, total_voxels and repetitions must be positive")
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))
    total = 0.0
    # chunk so large M * repetitions stays within memory
    chunk = max(1, min(repetitions, 2_000_000 // M))
    done = 0
    while done < repetitions:
        r = min(chunk, repetitions - done)
        draws = rng.integers(0, total_voxels, size=(r, M))
        flat = draws + (np.arange(r) * total_voxels)[:, None]
        counts = np.bincount(flat.ravel(), minlength=r * total_voxels).reshape(r, total_voxels)
        f = counts / M
        with np.errstate(divide="ignore", invalid="ignore"):
            terms = np.where(counts > 0, f * np.log2(np.where(counts > 0, f, 1.0)), 0.0)
        total += float(np.sum(-terms.sum(axis=1)))
        done += r
    return total / repetitions
