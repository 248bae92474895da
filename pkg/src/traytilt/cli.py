"""Command-line front end.

Exit codes: 0 ok, 2 configuration/validation error, 3 simulation failure
budget exceeded, 4 I/O error.
"""
from __future__ import annotations

import argparse
import datetime as _dt
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np
import yaml

from . import __version__, report
from .dynamics import ContactBlowupError, TiltAction, simulate_tilt
from .entropy import VoxelGrid, rice_rule_trials
from .experiment import (ConfigError, FailureBudgetExceeded, aggregate_trends, build_config,
                         config_hash, expand_study, generate_sequence, load_config_file,
                         resolve_field, resolve_shape, run_experiment, study_recipes)
from .friction import NoiseLevel, field_to_dict, generate_field
from .geometry import Pose, RigidBody, Tray, allen_key_shape, random_triangles, shape_to_dict

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_IO = 4

log = logging.getLogger("traytilt")


class UsageError(Exception):
    pass


def _now() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def _emit(text: str, out: str | None) -> None:
    if out in (None, "-"):
        sys.stdout.write(text)
    else:
        report.atomic_write_text(out, text)


# ---------------------------------------------------------------------------
# run

def _locate_config(arg: str) -> Path:
    path = Path(arg)
    if path.exists():
        return path
    recipes = study_recipes()
    if arg in recipes:
        return recipes[arg]
    raise ConfigError(f"config file not found: {arg}")


def _write_member(out_dir: Path, result, raw_hash: str, started: str, wall: float) -> list[str]:
    out_dir.mkdir(parents=True, exist_ok=True)
    report.write_trend_csv(out_dir / "trend.csv", result.trend)
    report.write_trials_csv(out_dir / "trials.csv", result.records)
    report.plot_trends([result.trend], out_dir / "entropy.svg", labels=[result.config.name])
    cfg = result.config
    manifest = {
        "name": cfg.name,
        "config_sha256": raw_hash,
        "tool_version": __version__,
        "started": started,
        "finished": _now(),
        "wall_time_s": round(wall, 3),
        "exit_status": EXIT_OK,
        "trials": cfg.M,
        "sequence": cfg.sequence.directions,
        "friction": {"mu0": cfg.field.mu0, "amplitude": cfg.field.amplitude,
                     "seed": cfg.field.seed, "grid_n": cfg.field.grid_n},
        "sim": cfg.params.to_dict(),
        "failed_trials": [f.trial_index for f in result.failures],
        "unsettled_tilts": result.unsettled_tilts,
        "max_penetration_m": result.max_penetration,
        "outputs": ["trend.csv", "trials.csv", "entropy.svg"],
    }
    report.write_manifest(out_dir / "manifest.json", manifest)
    return [str(out_dir / n) for n in manifest["outputs"] + ["manifest.json"]]


def cmd_run(args) -> int:
    started = _now()
    path = _locate_config(args.config)
    spec, raw = load_config_file(path)
    if args.seed is not None:
        spec["master_seed"] = int(args.seed)
    if args.trials is not None:
        spec["trials"] = int(args.trials)
    members = expand_study(spec)
    configs = [build_config(m, base=path.parent) for m in members]
    out = Path(args.out or f"runs/{spec.get('name', path.stem)}")
    digest = config_hash(raw)
    results = []
    for cfg in configs:
        t0 = time.perf_counter()
        log.info("running %s: M=%d, N=%d", cfg.name, cfg.M, len(cfg.sequence))
        res = run_experiment(cfg, workers=args.workers)
        results.append(res)
        target = out if len(configs) == 1 else out / cfg.name
        _write_member(target, res, digest, started, time.perf_counter() - t0)
        log.info("%s: H0=%.3f H_N=%.3f", cfg.name, res.trend.values[0], res.trend.values[-1])
    if len(configs) > 1:
        names = [c.name for c in configs]
        agg = aggregate_trends([r.trend for r in results])
        report.atomic_write_text(out / "aggregate.csv", report.aggregate_csv(agg))
        report.atomic_write_text(out / "summary.csv", report.summary_csv(names, results))
        report.plot_trends([r.trend for r in results], out / "entropy.svg",
                           title=spec.get("name"))
        report.write_manifest(out / "manifest.json", {
            "name": spec.get("name", path.stem),
            "config_sha256": digest,
            "tool_version": __version__,
            "started": started,
            "finished": _now(),
            "exit_status": EXIT_OK,
            "members": names,
            "outputs": ["aggregate.csv", "summary.csv", "entropy.svg"],
        })
    print(out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# entropy / plot / ricerule

def _grid_from_args(args) -> VoxelGrid:
    a, b = args.tray
    return VoxelGrid(a, b, *args.grid)


def cmd_entropy(args) -> int:
    trend = report.trend_from_pose_log(args.poses, _grid_from_args(args))
    _emit(report.trend_csv(trend), args.out)
    return EXIT_OK


def cmd_plot(args) -> int:
    if not args.trends:
        raise UsageError("plot needs at least one trend file")
    trends = [report.read_trend_csv(p) for p in args.trends]
    out = args.out or "entropy.svg"
    labels = [Path(p).parent.name or Path(p).stem for p in args.trends] if len(trends) == 1 else None
    report.plot_trends(trends, out, labels=labels, title=args.title)
    print(out)
    return EXIT_OK


def cmd_ricerule(args) -> int:
    total = int(np.prod(args.grid)) if args.voxels is None else args.voxels
    if total < 1:
        raise UsageError("voxel count must be >= 1")
    rule = rice_rule_trials(total)
    print(f"voxels={total} trials={rule.trials} exact={rule.exact:.6g}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# gen

def cmd_gen(args) -> int:
    seed = 0 if args.seed is None else int(args.seed)
    if args.kind == "shape":
        if args.preset:
            if args.preset.replace("-", "_") not in ("allen_key", "allen_key_l"):
                raise UsageError(f"unknown shape preset {args.preset!r}")
            shape = allen_key_shape()
        else:
            if not 1 <= args.index <= args.count:
                raise UsageError("--index must lie in 1..--count")
            kwargs = {} if args.seed is None else {"seed": seed}
            shape = random_triangles(args.count, **kwargs)[args.index - 1]
        text = yaml.safe_dump(shape_to_dict(shape), sort_keys=False)
    elif args.kind == "field":
        tray = Tray(*args.tray)
        if args.amplitude is not None:
            amplitude = args.amplitude
        else:
            try:
                amplitude = NoiseLevel.parse(args.level).amplitude
            except ValueError as exc:
                raise UsageError(f"unknown noise level {args.level!r}") from exc
        if args.grid_n < 2 or args.mu0 <= 0 or amplitude < 0:
            raise UsageError("need grid_n >= 2, mu0 > 0 and amplitude >= 0")
        field = generate_field(args.mu0, amplitude, args.grid_n, seed, tray)
        text = yaml.safe_dump(field_to_dict(field), sort_keys=False)
    else:
        if args.n < 1:
            raise UsageError("--n must be >= 1")
        text = yaml.safe_dump(generate_sequence(args.n, seed).to_dict(), sort_keys=False)
    _emit(text, args.out)
    return EXIT_OK


# ---------------------------------------------------------------------------
# trace

def cmd_trace(args) -> int:
    tray = Tray(*args.tray)
    body = RigidBody.from_shape(resolve_shape(args.shape))
    field = resolve_field({"mu": args.mu} if args.friction is None else args.friction, tray)
    if not 0 <= args.direction < 8:
        raise UsageError("--direction must lie in 0..7")
    action = TiltAction(args.direction, math.radians(args.tilt_deg))
    outcome = simulate_tilt(body, Pose(*args.pose), action, field, tray, trace=True)
    _emit(report.trace_csv(outcome.trace), args.out)
    p = outcome.settled_pose
    log.info("settled=%s t=%.4f pose=(%.6f, %.6f, %.6f)", outcome.settled, outcome.sim_time,
             p.x, p.y, p.theta)
    return EXIT_OK


# ---------------------------------------------------------------------------

def _common(sub: bool) -> argparse.ArgumentParser:
    # flags usable before or after the subcommand; SUPPRESS keeps the
    # subparser from clobbering values given up front
    d = argparse.SUPPRESS if sub else None
    p = argparse.ArgumentParser(add_help=False)
    p.add_argument("--seed", type=int, default=d, help="master seed / generator seed")
    p.add_argument("--out", default=d, help="output file or directory")
    p.add_argument("--workers", type=int, default=d if sub else 1, help="worker processes")
    p.add_argument("--verbose", "-v", action="count", default=d if sub else 0)
    return p


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="traytilt", parents=[_common(False)],
                                     description="Tray-tilting simulation and parts entropy.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    subs = parser.add_subparsers(dest="command", required=True)
    common = _common(True)

    p = subs.add_parser("run", parents=[common], help="run an experiment or study config")
    p.add_argument("config", help="config file or shipped recipe name")
    p.add_argument("--trials", type=int, help="override M")
    p.set_defaults(func=cmd_run)

    p = subs.add_parser("entropy", parents=[common], help="entropy trend of a pose log CSV")
    p.add_argument("poses")
    p.add_argument("--grid", type=int, nargs=3, default=[4, 4, 4], metavar=("ALPHA", "BETA", "GAMMA"))
    p.add_argument("--tray", type=float, nargs=2, default=[0.2, 0.2], metavar=("A", "B"))
    p.set_defaults(func=cmd_entropy)

    p = subs.add_parser("gen", parents=[common], help="generate shape, field or sequence files")
    gsubs = p.add_subparsers(dest="kind", required=True)
    g = gsubs.add_parser("shape", parents=[common])
    g.add_argument("--preset", help="allen-key")
    g.add_argument("--index", type=int, default=1, help="triangle number (1-based)")
    g.add_argument("--count", type=int, default=15)
    g.set_defaults(func=cmd_gen)
    g = gsubs.add_parser("field", parents=[common])
    g.add_argument("--level", default="low", help="uniform, low, medium or high")
    g.add_argument("--amplitude", type=float, help="overrides the level's amplitude")
    g.add_argument("--mu0", type=float, default=0.3)
    g.add_argument("--grid-n", type=int, default=8)
    g.add_argument("--tray", type=float, nargs=2, default=[0.2, 0.2])
    g.set_defaults(func=cmd_gen)
    g = gsubs.add_parser("sequence", parents=[common])
    g.add_argument("--n", type=int, default=50)
    g.set_defaults(func=cmd_gen)

    p = subs.add_parser("plot", parents=[common], help="plot one or more trend CSVs to SVG")
    p.add_argument("trends", nargs="*")
    p.add_argument("--title")
    p.set_defaults(func=cmd_plot)

    p = subs.add_parser("ricerule", parents=[common], help="trials suggested for a voxel count")
    p.add_argument("voxels", type=int, nargs="?")
    p.add_argument("--grid", type=int, nargs=3, default=[4, 4, 4])
    p.set_defaults(func=cmd_ricerule)

    p = subs.add_parser("trace", parents=[common], help="per-step CSV of a single tilt")
    p.add_argument("--shape", default="allen_key_l")
    p.add_argument("--pose", type=float, nargs=3, required=True, metavar=("X", "Y", "THETA"))
    p.add_argument("--direction", type=int, default=0)
    p.add_argument("--tilt-deg", type=float, default=30.0)
    p.add_argument("--mu", type=float, default=0.3)
    p.add_argument("--friction", help="friction field file (overrides --mu)")
    p.add_argument("--tray", type=float, nargs=2, default=[0.2, 0.2])
    p.set_defaults(func=cmd_trace)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.DEBUG if args.verbose > 1 else
                        logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, report.InputFormatError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FailureBudgetExceeded, ContactBlowupError) as exc:
        print(f"simulation failure: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"I/O error: {exc}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
