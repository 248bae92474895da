"""Monte Carlo tray-tilting studies.

A trial samples a collision-free initial pose, then applies every action of
a fixed sequence, recording the settled pose after each tilt. Repeating the
same sequence over ``M`` trials gives the per-step pose histograms whose
entropies form the trend.

Randomness is split by hashing ``(master_seed, stream, trial)`` through
``numpy.random.SeedSequence`` into a Philox generator, so each trial is a
pure function of the config and its index and can be replayed alone.
"""
from __future__ import annotations

import copy
import hashlib
import itertools
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import numpy as np
import yaml

from .dynamics import N_DIRECTIONS, SimParams, TiltAction, simulate_tilt, DEFAULT_TILT
from .entropy import EntropyTrend, VoxelGrid, entropy_trend
from .friction import (DEFAULT_GRID_N, DEFAULT_MU0, FrictionField, NoiseLevel,
                       generate_field, load_field, uniform_field)
from .geometry import (TWO_PI, PartShape, Pose, RigidBody, Tray, in_free_space,
                       load_shape, preset_shape)

log = logging.getLogger(__name__)

STREAM_INITIAL_POSE = 0
STREAM_SEQUENCE = 1
MAX_REJECTIONS = 10_000
FAILURE_BUDGET = 0.01
RECIPE_DIR = Path(__file__).with_name("recipes")


class ConfigError(ValueError):
    """Invalid or unresolvable experiment configuration."""


class SamplingError(RuntimeError):
    pass


class TrialError(RuntimeError):
    def __init__(self, trial_index: int, cause: BaseException):
        super().__init__(f"trial {trial_index}: {type(cause).__name__}: {cause}")
        self.trial_index = trial_index
        self.cause = cause


class FailureBudgetExceeded(RuntimeError):
    pass


def make_rng(*words: int) -> np.random.Generator:
    """Counter-based generator keyed by a hash of the integer words."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(w) for w in words])))


# ---------------------------------------------------------------------------
# sequences

@dataclass(frozen=True)
class ActionSequence:
    actions: tuple[TiltAction, ...]
    seed: int | None = None

    def __post_init__(self):
        if len(self.actions) < 1:
            raise ValueError("an action sequence needs at least one action")

    def __len__(self) -> int:
        return len(self.actions)

    def __iter__(self):
        return iter(self.actions)

    @property
    def directions(self) -> list[int]:
        return [a.direction for a in self.actions]

    @classmethod
    def from_directions(cls, directions: Sequence[int], tilt_angle: float = DEFAULT_TILT,
                        seed: int | None = None) -> "ActionSequence":
        return cls(tuple(TiltAction(int(d), tilt_angle) for d in directions), seed)

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "length": len(self),
            "tilt_angle": self.actions[0].tilt_angle,
            "directions": self.directions,
        }


def generate_sequence(N: int, seed: int, tilt_angle: float = DEFAULT_TILT) -> ActionSequence:
    """``N`` directions drawn uniformly with replacement from the eight headings."""
    if N < 1:
        raise ValueError(f"sequence length must be >= 1, got {N}")
    rng = make_rng(seed, STREAM_SEQUENCE)
    directions = rng.integers(0, N_DIRECTIONS, size=N)
    return ActionSequence.from_directions(directions.tolist(), tilt_angle, seed=seed)


def sample_initial_pose(body: RigidBody, tray: Tray, rng: np.random.Generator,
                        max_tries: int = MAX_REJECTIONS) -> Pose:
    """Uniform pose over the tray CSpace, rejecting wall collisions."""
    for _ in range(max_tries):
        x, y, th = rng.uniform((0.0, 0.0, 0.0), (tray.a, tray.b, TWO_PI))
        pose = Pose(x, y, th)
        if in_free_space(body, pose, tray):
            return pose
    raise SamplingError(f"{max_tries} consecutive rejections: "
                        f"{body.shape.name} likely does not fit the {tray.a} x {tray.b} tray")


# ---------------------------------------------------------------------------
# configuration

@dataclass(frozen=True, eq=False)
class ExperimentConfig:
    shape: PartShape
    sequence: ActionSequence
    trials: int
    field: FrictionField
    tray: Tray = field(default_factory=Tray)
    grid: VoxelGrid = field(default_factory=VoxelGrid)
    params: SimParams = field(default_factory=SimParams)
    master_seed: int = 0
    name: str = "experiment"
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        if int(self.trials) != self.trials or self.trials < 1:
            raise ConfigError(f"trials (M) must be a positive integer, got {self.trials!r}")
        if not (math.isclose(self.grid.a, self.tray.a) and math.isclose(self.grid.b, self.tray.b)):
            raise ConfigError("voxel grid extent must match the tray")

    @property
    def body(self) -> RigidBody:
        return _body_for(self.shape)

    @property
    def M(self) -> int:
        return int(self.trials)


_BODIES: dict[int, RigidBody] = {}


def _body_for(shape: PartShape) -> RigidBody:
    # one RigidBody per shape object keeps the support-point cache warm
    body = _BODIES.get(id(shape))
    if body is None or body.shape is not shape:
        body = RigidBody.from_shape(shape)
        _BODIES[id(shape)] = body
    return body


def _resolve_path(value: str, base: Path | None) -> Path:
    p = Path(value).expanduser()
    if not p.is_absolute() and base is not None:
        p = base / p
    return p


def resolve_shape(spec: Any, base: Path | None = None) -> PartShape:
    if isinstance(spec, PartShape):
        return spec
    if isinstance(spec, dict):
        if "vertices" in spec:
            return PartShape(np.asarray(spec["vertices"], dtype=float), float(spec["density"]),
                             name=str(spec.get("name", "part")))
        if "path" in spec:
            spec = spec["path"]
        elif "preset" in spec:
            return preset_shape(spec["preset"])
    if not isinstance(spec, str):
        raise ConfigError(f"cannot interpret shape spec {spec!r}")
    if spec.endswith(".shape") or "/" in spec:
        path = _resolve_path(spec, base)
        if not path.exists():
            raise ConfigError(f"shape file not found: {path}")
        return load_shape(path)
    try:
        return preset_shape(spec)
    except FileNotFoundError as exc:
        raise ConfigError(str(exc)) from exc


def resolve_field(spec: Any, tray: Tray, base: Path | None = None) -> FrictionField:
    if isinstance(spec, FrictionField):
        return spec
    if spec is None:
        return uniform_field(DEFAULT_MU0, tray)
    if isinstance(spec, (int, float)):
        return uniform_field(float(spec), tray)
    if isinstance(spec, str):
        spec = {"path": spec}
    if not isinstance(spec, dict):
        raise ConfigError(f"cannot interpret friction spec {spec!r}")
    if "path" in spec:
        path = _resolve_path(spec["path"], base)
        if not path.exists():
            raise ConfigError(f"friction field file not found: {path}")
        return load_field(path)
    mu0 = float(spec.get("mu0", DEFAULT_MU0))
    grid_n = int(spec.get("grid_n", DEFAULT_GRID_N))
    seed = int(spec.get("seed", 0))
    if "mu" in spec:
        return uniform_field(float(spec["mu"]), tray)
    if "level" in spec:
        try:
            level = NoiseLevel.parse(spec["level"])
        except ValueError as exc:
            raise ConfigError(f"unknown noise level {spec['level']!r}") from exc
        amplitude = float(spec.get("amplitude", level.amplitude))
        return generate_field(mu0, amplitude, grid_n, seed, tray)
    return generate_field(mu0, float(spec.get("amplitude", 0.0)), grid_n, seed, tray)


def resolve_sequence(spec: Any, base: Path | None = None) -> ActionSequence:
    if isinstance(spec, ActionSequence):
        return spec
    if isinstance(spec, str):
        path = _resolve_path(spec, base)
        if not path.exists():
            raise ConfigError(f"sequence file not found: {path}")
        spec = yaml.safe_load(path.read_text())
    if not isinstance(spec, dict):
        raise ConfigError(f"cannot interpret sequence spec {spec!r}")
    tilt = float(spec.get("tilt_angle", DEFAULT_TILT))
    if "directions" in spec:
        return ActionSequence.from_directions(spec["directions"], tilt, seed=spec.get("seed"))
    if "seed" in spec and "length" in spec:
        return generate_sequence(int(spec["length"]), int(spec["seed"]), tilt)
    raise ConfigError("sequence spec needs 'directions' or both 'seed' and 'length'")


def build_config(spec: dict, base: Path | None = None) -> ExperimentConfig:
    """Turn a parsed config mapping into an :class:`ExperimentConfig`."""
    try:
        tray = Tray(*[float(v) for v in spec.get("tray", [0.2, 0.2])])
        alpha, beta, gamma = spec.get("grid", [4, 4, 4])
        grid = VoxelGrid(tray.a, tray.b, int(alpha), int(beta), int(gamma))
        trials = spec.get("trials", spec.get("M"))
        if trials is None:
            raise ConfigError("config needs 'trials'")
        return ExperimentConfig(
            shape=resolve_shape(spec.get("shape", "allen_key_l"), base),
            sequence=resolve_sequence(spec.get("sequence", {"length": 50, "seed": 0}), base),
            trials=trials,
            field=resolve_field(spec.get("friction"), tray, base),
            tray=tray,
            grid=grid,
            params=SimParams.from_dict(spec.get("sim")),
            master_seed=int(spec.get("master_seed", 0)),
            name=str(spec.get("name", "experiment")),
            spec=copy.deepcopy(spec),
        )
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(str(exc)) from exc


def _member_name(key: str, value: Any, index: int) -> str:
    if key == "shape" and isinstance(value, str):
        return Path(value).stem
    if key == "sequence" and isinstance(value, dict) and "seed" in value:
        return f"seq_{value['seed']}"
    if key == "friction" and isinstance(value, dict) and "level" in value:
        return f"{value['level']}_{value.get('seed', 0)}"
    return f"{key}_{index:02d}"


def expand_study(spec: dict) -> list[dict]:
    """Expand a ``sweep`` block into member specs (cartesian product over keys)."""
    sweep = spec.get("sweep")
    base = {k: v for k, v in spec.items() if k != "sweep"}
    if not sweep:
        return [base]
    keys = list(sweep)
    members = []
    for combo in itertools.product(*[list(enumerate(sweep[k])) for k in keys]):
        member = copy.deepcopy(base)
        parts = []
        for key, (i, value) in zip(keys, combo):
            member[key] = copy.deepcopy(value)
            parts.append(_member_name(key, value, i))
        member["name"] = "__".join(parts)
        members.append(member)
    return members


def load_config_file(path) -> tuple[dict, bytes]:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    try:
        spec = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: {exc}") from exc
    if not isinstance(spec, dict):
        raise ConfigError(f"{path}: config must be a mapping")
    return spec, raw


def config_hash(raw: bytes) -> str:
    return hashlib.sha256(raw).hexdigest()


# ---------------------------------------------------------------------------
# trials

@dataclass(frozen=True, eq=False)
class TrialRecord:
    trial: int
    seed_words: tuple[int, ...]
    poses: np.ndarray          # (N + 1, 3)
    settled: np.ndarray        # (N,) bool
    sim_times: np.ndarray      # (N,)
    max_penetration: float

    @property
    def initial_pose(self) -> Pose:
        return Pose(*self.poses[0])


def run_trial(config: ExperimentConfig, trial_index: int) -> TrialRecord:
    """Run one trial; a pure function of ``(config, trial_index)``."""
    body = config.body
    words = (config.master_seed, STREAM_INITIAL_POSE, int(trial_index))
    rng = make_rng(*words)
    try:
        pose = sample_initial_pose(body, config.tray, rng)
        n = len(config.sequence)
        poses = np.empty((n + 1, 3))
        settled = np.zeros(n, dtype=bool)
        times = np.zeros(n)
        poses[0] = pose.as_tuple()
        max_pen = 0.0
        for i, action in enumerate(config.sequence):
            out = simulate_tilt(body, pose, action, config.field, config.tray, config.params)
            pose = out.settled_pose
            poses[i + 1] = pose.as_tuple()
            settled[i] = out.settled
            times[i] = out.sim_time
            max_pen = max(max_pen, out.max_penetration)
    except Exception as exc:  # tagged and re-raised for the caller's budget
        raise TrialError(int(trial_index), exc) from exc
    return TrialRecord(int(trial_index), words, poses, settled, times, max_pen)


def _run_chunk(config: ExperimentConfig, indices: Sequence[int]):
    out = []
    for i in indices:
        try:
            out.append(run_trial(config, i))
        except TrialError as exc:
            out.append(exc)
    return out


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list[TrialRecord]
    trend: EntropyTrend
    failures: list[TrialError] = field(default_factory=list)

    @property
    def unsettled_tilts(self) -> int:
        return int(sum(np.count_nonzero(~r.settled) for r in self.records))

    @property
    def max_penetration(self) -> float:
        return max((r.max_penetration for r in self.records), default=0.0)

    def poses_by_step(self) -> list[np.ndarray]:
        stack = np.stack([r.poses for r in self.records])  # (M, N + 1, 3)
        return [stack[:, i, :] for i in range(stack.shape[1])]


def trend_from_records(records: Sequence[TrialRecord], grid: VoxelGrid) -> EntropyTrend:
    stack = np.stack([r.poses for r in records])
    settled = np.stack([np.concatenate([[True], r.settled]) for r in records])
    return entropy_trend([stack[:, i, :] for i in range(stack.shape[1])], grid,
                         [settled[:, i] for i in range(settled.shape[1])])


def run_experiment(config: ExperimentConfig, workers: int = 1,
                   chunk_size: int | None = None) -> ExperimentResult:
    """Run all ``M`` trials and compute the per-step entropy trend.

    Output does not depend on ``workers``: records are re-ordered by trial
    index before any reduction.
    """
    indices = list(range(config.M))
    workers = max(1, int(workers))
    if workers == 1:
        results = _run_chunk(config, indices)
    else:
        size = chunk_size or max(1, math.ceil(len(indices) / (workers * 4)))
        chunks = [indices[i:i + size] for i in range(0, len(indices), size)]
        results = []
        with ProcessPoolExecutor(max_workers=workers) as pool:
            for part in pool.map(_run_chunk, itertools.repeat(config), chunks):
                results.extend(part)
    records = sorted((r for r in results if isinstance(r, TrialRecord)), key=lambda r: r.trial)
    failures = sorted((r for r in results if isinstance(r, TrialError)),
                      key=lambda e: e.trial_index)
    for f in failures:
        log.warning("%s", f)
    if len(failures) > FAILURE_BUDGET * config.M or not records:
        raise FailureBudgetExceeded(
            f"{len(failures)} of {config.M} trials failed (budget {FAILURE_BUDGET:.0%}); "
            f"first: {failures[0] if failures else 'n/a'}")
    trend = trend_from_records(records, config.grid)
    return ExperimentResult(config, records, trend, failures)


def default_workers() -> int:
    return max(1, len(os.sched_getaffinity(0)) if hasattr(os, "sched_getaffinity") else (os.cpu_count() or 1))


# ---------------------------------------------------------------------------
# trend analysis

def convergence_index(trend, threshold_bits: float = 0.0) -> int | None:
    """First step from which entropy stays at or below ``threshold_bits``."""
    values = trend.values if isinstance(trend, EntropyTrend) else list(trend)
    idx = None
    for i in range(len(values) - 1, -1, -1):
        if values[i] <= threshold_bits:
            idx = i
        else:
            break
    return idx


@dataclass(frozen=True)
class AggregateTrend:
    mean: np.ndarray
    q25: np.ndarray
    q75: np.ndarray
    convergence: tuple[int | None, ...]

    def __len__(self) -> int:
        return len(self.mean)


def aggregate_trends(trends, threshold_bits: float = 0.0) -> AggregateTrend:
    """Per-step mean and quartiles across a family of trends.

    Quartiles use linear interpolation between closest ranks
    (``numpy.percentile(method="linear")``).
    """
    rows = [np.asarray(t.values if isinstance(t, EntropyTrend) else t, dtype=float)
            for t in trends]
    if not rows:
        raise ValueError("need at least one trend")
    if len({len(r) for r in rows}) != 1:
        raise ValueError("trends have different lengths")
    # sort each column so the reduction is independent of trend order
    data = np.sort(np.stack(rows), axis=0)
    mean = np.array([math.fsum(col) / len(col) for col in data.T])
    q25, q75 = np.percentile(data, [25, 75], axis=0, method="linear")
    return AggregateTrend(mean, q25, q75,
                          tuple(convergence_index(r, threshold_bits) for r in rows))


def trend_slope(values) -> float:
    """Least-squares slope of entropy against step index."""
    y = np.asarray(values, dtype=float)
    x = np.arange(len(y), dtype=float)
    return float(np.polyfit(x, y, 1)[0])


# ---------------------------------------------------------------------------
# study recipes

def study_recipes() -> dict[str, Path]:
    """Shipped study templates by name (``recipe_a_desk``, ``recipe_a_full``, ...)."""
    return {p.stem: p for p in sorted(RECIPE_DIR.glob("*.yaml"))}


def load_recipe(name: str) -> dict:
    recipes = study_recipes()
    if name not in recipes:
        raise ConfigError(f"unknown recipe {name!r}; choose from {sorted(recipes)}")
    return yaml.safe_load(recipes[name].read_text())


def noise_amplitudes() -> dict[str, float]:
    return {lvl.value: lvl.amplitude for lvl in NoiseLevel}


