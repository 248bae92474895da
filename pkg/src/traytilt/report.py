"""Result files: trend/trial CSVs, run manifests and entropy figures.

Floats are written with 17 significant digits so a CSV round trip is
lossless. Figures are SVG rendered by matplotlib with the hash salt and
date metadata pinned, so identical inputs give identical bytes.
"""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from pathlib import Path
from typing import Sequence

import numpy as np

from .entropy import EntropyTrend, VoxelGrid, entropy_trend

TREND_COLUMNS = ["step", "H_bits", "occupied", "M", "settled_fraction"]
TRIAL_COLUMNS = ["trial", "step", "x", "y", "theta", "settled"]
AGGREGATE_COLUMNS = ["step", "mean", "q25", "q75"]
TRACE_COLUMNS = ["t", "x", "y", "theta", "vx", "vy", "omega", "penetration"]


class InputFormatError(ValueError):
    """Malformed or ragged input table."""


def fmt(value: float) -> str:
    return format(float(value), ".17g")


def atomic_write_text(path, text: str) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _table(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    writer.writerows(rows)
    return buf.getvalue()


def trend_csv(trend: EntropyTrend) -> str:
    rows = []
    for i, h in enumerate(trend.values):
        rows.append([i, fmt(h), trend.occupied[i], trend.samples[i], fmt(trend.settled_fraction[i])])
    return _table(TREND_COLUMNS, rows)


def write_trend_csv(path, trend: EntropyTrend) -> None:
    atomic_write_text(path, trend_csv(trend))


def read_trend_csv(path) -> EntropyTrend:
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None or "H_bits" not in reader.fieldnames:
            raise InputFormatError(f"{path}: not a trend file (missing H_bits column)")
        rows = list(reader)
    if not rows:
        raise InputFormatError(f"{path}: empty trend file")
    try:
        return EntropyTrend(
            tuple(float(r["H_bits"]) for r in rows),
            tuple(int(r.get("occupied") or 0) for r in rows),
            tuple(int(r.get("M") or 0) for r in rows),
            tuple(float(r.get("settled_fraction") or 1.0) for r in rows),
        )
    except ValueError as exc:
        raise InputFormatError(f"{path}: {exc}") from exc


def trials_csv(records) -> str:
    rows = []
    for rec in records:
        settled = np.concatenate([[True], rec.settled])
        for step, (x, y, th) in enumerate(rec.poses):
            rows.append([rec.trial, step, fmt(x), fmt(y), fmt(th), int(settled[step])])
    return _table(TRIAL_COLUMNS, rows)


def write_trials_csv(path, records) -> None:
    atomic_write_text(path, trials_csv(records))


def read_pose_log(path) -> tuple[list[np.ndarray], list[np.ndarray] | None]:
    """Per-step ``(M, 3)`` pose arrays from a ``trial, step, x, y, theta`` CSV.

    Every trial must cover the same steps ``0..N``. An optional ``settled``
    column is carried through.
    """
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        need = {"trial", "step", "x", "y", "theta"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise InputFormatError(f"{path}: pose log needs columns {sorted(need)}")
        has_settled = "settled" in reader.fieldnames
        table: dict[int, dict[int, tuple]] = {}
        try:
            for row in reader:
                t, s = int(row["trial"]), int(row["step"])
                pose = (float(row["x"]), float(row["y"]), float(row["theta"]))
                flag = bool(int(row["settled"])) if has_settled else True
                if s in table.setdefault(t, {}):
                    raise InputFormatError(f"{path}: duplicate row for trial {t} step {s}")
                table[t][s] = (pose, flag)
        except (ValueError, TypeError) as exc:
            raise InputFormatError(f"{path}: {exc}") from exc
    if not table:
        raise InputFormatError(f"{path}: no pose rows")
    trials = sorted(table)
    steps = sorted(table[trials[0]])
    if steps != list(range(len(steps))):
        raise InputFormatError(f"{path}: steps must run 0..N without gaps")
    for t in trials:
        if sorted(table[t]) != steps:
            raise InputFormatError(f"{path}: ragged input, trial {t} has steps "
                                   f"{min(table[t])}..{max(table[t])} ({len(table[t])} rows)")
    poses = [np.array([table[t][s][0] for t in trials]) for s in steps]
    settled = [np.array([table[t][s][1] for t in trials]) for s in steps] if has_settled else None
    return poses, settled


def trend_from_pose_log(path, grid: VoxelGrid) -> EntropyTrend:
    poses, settled = read_pose_log(path)
    return entropy_trend(poses, grid, settled)


def aggregate_csv(agg) -> str:
    rows = [[i, fmt(m), fmt(lo), fmt(hi)] for i, (m, lo, hi) in enumerate(zip(agg.mean, agg.q25, agg.q75))]
    return _table(AGGREGATE_COLUMNS, rows)


def summary_csv(names: Sequence[str], results) -> str:
    """One row per study member: convergence and final entropy."""
    from .experiment import convergence_index, trend_slope

    rows = []
    for name, res in zip(names, results):
        v = res.trend.values
        conv = convergence_index(res.trend)
        rows.append([name, fmt(v[0]), fmt(v[-1]), "" if conv is None else conv,
                     fmt(trend_slope(v)), res.unsettled_tilts, fmt(res.max_penetration)])
    return _table(["member", "H0", "H_final", "converged_at", "slope",
                   "unsettled_tilts", "max_penetration_m"], rows)


def trace_csv(trace: np.ndarray) -> str:
    return _table(TRACE_COLUMNS, [[fmt(v) for v in row] for row in trace])


def write_manifest(path, data: dict) -> None:
    atomic_write_text(path, json.dumps(data, indent=2, sort_keys=True) + "\n")


# ---------------------------------------------------------------------------
# figures

def plot_trends(trends: Sequence[EntropyTrend], out_path, labels: Sequence[str] | None = None,
                title: str | None = None, band_min: int = 4) -> None:
    """Entropy against tilt number: thin per-trend lines, bold mean, IQR band."""
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    from .experiment import aggregate_trends

    if not trends:
        raise ValueError("nothing to plot")
    agg = aggregate_trends(trends)
    steps = np.arange(len(agg))
    with matplotlib.rc_context({"svg.hashsalt": "traytilt", "svg.fonttype": "path",
                                "font.size": 9, "axes.spines.top": False,
                                "axes.spines.right": False}):
        fig, ax = plt.subplots(figsize=(6.0, 3.6))
        if len(trends) >= band_min:
            ax.fill_between(steps, agg.q25, agg.q75, color="tab:blue", alpha=0.25, lw=0,
                            label="interquartile range", gid="iqr-band")
        if len(trends) > 1:
            for i, t in enumerate(trends):
                ax.plot(steps, t.values, color="0.2", lw=0.6, alpha=0.7,
                        label="sequences" if i == 0 else None)
            ax.plot(steps, agg.mean, color="tab:red", lw=2.2, label="mean", gid="mean-line")
        else:
            ax.plot(steps, trends[0].values, color="k", lw=1.2,
                    label=labels[0] if labels else None, gid="trend-line")
        ax.set_xlim(0, max(1, len(agg) - 1))
        ax.set_ylim(bottom=0)
        ax.set_xlabel("tilt number")
        ax.set_ylabel("entropy (bits)")
        if title:
            ax.set_title(title)
        if len(trends) > 1 or labels:
            ax.legend(frameon=False, loc="upper right")
        fig.tight_layout()
        out_path = Path(out_path)
        out_path.parent.mkdir(parents=True, exist_ok=True)
        buf = io.StringIO()
        fig.savefig(buf, format="svg", metadata={"Date": None})
        plt.close(fig)
    atomic_write_text(out_path, buf.getvalue())
