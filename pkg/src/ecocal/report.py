"""Report rendering: delimited text plus figures.

Every data file is byte-deterministic for a given manifest and seed; floats
render with their shortest round-trip representation. Wall-clock metadata
goes to a separate run_meta.json sidecar so reruns can be compared byte for
byte. Figures are rasterized companions to the delimited files, never the
primary record.
"""
from __future__ import annotations

import json
import sys
import time
from pathlib import Path
from typing import Optional

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

from .calibrate import CalibrationResult
from .kernel import Trajectory


def ensure_dir(path) -> Path:
    p = Path(path)
    p.mkdir(parents=True, exist_ok=True)
    return p


def write_series_files(trajectory: Trajectory, outdir) -> list[Path]:
    """One time,value file per variable, named <Class>.<variable>.csv."""
    out = ensure_dir(outdir)
    times = trajectory.times
    written = []
    for (code, var), values in trajectory.series.items():
        name = f"{trajectory.names[code]}.{var}.csv"
        lines = ["time,value"]
        lines.extend(f"{t!r},{v!r}" for t, v in zip(times, values))
        path = out / name
        path.write_text("\n".join(lines) + "\n")
        written.append(path)
    return written


def render_trajectory_figure(trajectory: Trajectory, outdir, ranged_only=True) -> Path:
    out = ensure_dir(outdir)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    times_d = [t / 86400.0 for t in trajectory.times]
    for (code, var), values in trajectory.series.items():
        label = f"{trajectory.names[code]}.{var}"
        ax.plot(times_d, values, label=label, linewidth=1.2)
    ax.set_xlabel("time (days)")
    ax.set_ylabel("value")
    ax.legend(fontsize=7, ncol=2)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out / "trajectory.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def write_calibration_files(result: CalibrationResult, outdir, names: dict[int, str]) -> list[Path]:
    out = ensure_dir(outdir)
    written = []

    lines = ["round,aggregate_lof,adequacy,reliability,matched,total"]
    for i, rep in enumerate(result.rounds):
        lines.append(
            f"{i},{rep.aggregate_lof!r},{rep.adequacy!r},{rep.reliability!r},"
            f"{rep.matched},{rep.total}"
        )
    p = out / "rounds.csv"
    p.write_text("\n".join(lines) + "\n")
    written.append(p)

    lines = ["index,target,kind,class,parameter,via,expected_sign,candidates,chosen,accepted,lof"]
    for i, rec in enumerate(result.sweeps):
        code, pname = rec.driver.parameter
        via = ""
        if rec.driver.via is not None:
            via = f"{names.get(rec.driver.via[0], rec.driver.via[0])}.{rec.driver.via[1]}"
        chosen_lof = ""
        for value, rep in rec.tried:
            if value == rec.chosen and rep is not None:
                chosen_lof = repr(rep.aggregate_lof)
                break
        lines.append(
            f"{i},{rec.target},{rec.driver.kind},{names.get(code, code)},{pname},{via},"
            f"{rec.driver.expected_sign:+d},{len(rec.tried)},{rec.chosen!r},"
            f"{str(rec.accepted).lower()},{chosen_lof}"
        )
    p = out / "sweeps.csv"
    p.write_text("\n".join(lines) + "\n")
    written.append(p)

    lines = ["run,aggregate_lof"]
    lines.extend(f"{run},{lof!r}" for run, lof in result.lof_trace)
    p = out / "trace.csv"
    p.write_text("\n".join(lines) + "\n")
    written.append(p)

    lines = ["class,parameter,value"]
    for (cls, pname), value in sorted(result.best_parameters.items()):
        lines.append(f"{cls},{pname},{value!r}")
    p = out / "parameters.csv"
    p.write_text("\n".join(lines) + "\n")
    written.append(p)

    final = result.rounds[-1] if result.rounds else None
    summary = [
        f"stop_reason: {result.stop_reason}",
        f"rounds: {max(len(result.rounds) - 1, 0)}",
        f"sweeps: {len(result.sweeps)}",
        f"total_runs: {result.total_runs}",
    ]
    if result.rounds:
        summary.append(f"initial_aggregate_lof: {result.rounds[0].aggregate_lof!r}")
    if final is not None:
        summary.append(f"final_aggregate_lof: {final.aggregate_lof!r}")
        summary.append(f"final_adequacy: {final.adequacy!r}")
        summary.append(f"final_reliability: {final.reliability!r}")
    p = out / "calibration.txt"
    p.write_text("\n".join(summary) + "\n")
    written.append(p)
    return written


def render_calibration_figure(result: CalibrationResult, outdir) -> Optional[Path]:
    if not result.lof_trace:
        return None
    out = ensure_dir(outdir)
    fig, ax = plt.subplots(figsize=(8, 4.5))
    runs = [r for r, _ in result.lof_trace]
    lofs = [l for _, l in result.lof_trace]
    ax.plot(runs, lofs, ".", markersize=3, alpha=0.5, label="candidate runs")
    best = []
    acc = None
    for l in lofs:
        acc = l if acc is None else min(acc, l)
        best.append(acc)
    ax.plot(runs, best, "-", linewidth=1.5, label="best so far")
    ax.set_xlabel("model runs")
    ax.set_ylabel("aggregate lack of fit")
    if min(lofs) > 0:
        ax.set_yscale("log")
    ax.legend(fontsize=8)
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    path = out / "calibration.png"
    fig.savefig(path, dpi=110)
    plt.close(fig)
    return path


def write_baseline_comparison(rows: list[dict], agent_runs: int, agent_lof: float, outdir) -> Path:
    """Side-by-side table of agent vs per-seed random-search effort."""
    out = ensure_dir(outdir)
    lines = ["seed,runs,reached,best_lof"]
    for row in rows:
        lines.append(
            f"{row['seed']},{row['runs']},{str(row['reached']).lower()},{row['best_lof']!r}"
        )
    counted = sorted(row["runs"] for row in rows)
    median = counted[len(counted) // 2]
    lines.append(f"median,{median},,")
    lines.append(f"agent,{agent_runs},true,{agent_lof!r}")
    p = out / "baseline.csv"
    p.write_text("\n".join(lines) + "\n")
    return p


def write_run_meta(outdir, argv: list[str], extra: Optional[dict] = None) -> Path:
    """Timestamps and invocation data live here, outside the data files."""
    out = ensure_dir(outdir)
    meta = {
        "argv": argv,
        "python": sys.version.split()[0],
        "written_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
    }
    if extra:
        meta.update(extra)
    path = out / "run_meta.json"
    path.write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    return path
