"""Trajectory, pressure-network, and metrics persistence.

Formats (all little-endian / plain text, documented in the README):

* trajectory.csv  -- ``step,time,id,x,y,ux,uy,exited`` one row per disk per
  emitted frame; a disk's last row carries ``exited=1`` with the crossing
  position. Floats use shortest round-trip repr, so identical runs produce
  byte-identical files.
* pressures.csv   -- ``step,kind,i,j,lam,xi,yi,xj,yj`` one row per active
  contact per emitted frame; ``kind`` is ``pair`` (j = partner disk) or
  ``wall`` (j = wall index, xj/yj = closest wall point).
* metrics.json    -- key-value run summary.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .dynamics import ExitEvent, RunMetrics, TrajectoryFrame
from .geometry import KIND_PAIR, Configuration, WallSegment, min_gap

TRAJECTORY_HEADER = "step,time,id,x,y,ux,uy,exited"
PRESSURE_HEADER = "step,kind,i,j,lam,xi,yi,xj,yj"


def _f(v: float) -> str:
    return repr(float(v))


class TrajectoryWriter:
    """Streaming CSV writer for trajectory frames and exit events."""

    def __init__(self, path):
        self._fh = open(path, "w")
        self._fh.write(TRAJECTORY_HEADER + "\n")

    def write_frame(self, frame: TrajectoryFrame) -> None:
        rows = []
        for k in range(len(frame.ids)):
            rows.append(
                f"{frame.index},{_f(frame.t)},{frame.ids[k]},"
                f"{_f(frame.positions[k, 0])},{_f(frame.positions[k, 1])},"
                f"{_f(frame.u[k, 0])},{_f(frame.u[k, 1])},0"
            )
        self._fh.write("\n".join(rows) + ("\n" if rows else ""))

    def write_exit(self, ev: ExitEvent) -> None:
        self._fh.write(
            f"{ev.step + 1},{_f(ev.t)},{ev.disk_id},"
            f"{_f(ev.position[0])},{_f(ev.position[1])},"
            f"{_f(ev.velocity[0])},{_f(ev.velocity[1])},1\n"
        )

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class PressureWriter:
    """Streaming CSV writer for the per-contact multiplier network."""

    def __init__(self, path):
        self._fh = open(path, "w")
        self._fh.write(PRESSURE_HEADER + "\n")

    def write_frame(self, frame: TrajectoryFrame) -> None:
        rows = []
        for c, lam in zip(frame.contacts, frame.lam):
            gi = int(frame.ids[c.i])
            xi, yi = frame.positions[c.i]
            if c.kind == KIND_PAIR:
                gj = int(frame.ids[c.j])
                xj, yj = frame.positions[c.j]
            else:
                gj = int(c.j)
                xj, yj = c.point
            rows.append(
                f"{frame.index},{c.kind},{gi},{gj},{_f(lam)},"
                f"{_f(xi)},{_f(yi)},{_f(xj)},{_f(yj)}"
            )
        if rows:
            self._fh.write("\n".join(rows) + "\n")

    def close(self) -> None:
        self._fh.close()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


def write_trajectory(frames: Sequence[TrajectoryFrame], events: Sequence[ExitEvent], path) -> None:
    """Write collected frames (and exit events, merged in step order)."""
    pending = sorted(events, key=lambda e: e.step)
    k = 0
    with TrajectoryWriter(path) as w:
        for frame in frames:
            while k < len(pending) and pending[k].step < frame.index:
                w.write_exit(pending[k])
                k += 1
            w.write_frame(frame)
        while k < len(pending):
            w.write_exit(pending[k])
            k += 1


def write_trajectory_npz(frames: Sequence[TrajectoryFrame], events: Sequence[ExitEvent], path) -> None:
    """Binary variant of the trajectory table (single .npz archive)."""
    cols = {name: [] for name in ("step", "time", "id", "x", "y", "ux", "uy", "exited")}
    for frame in frames:
        for k in range(len(frame.ids)):
            cols["step"].append(frame.index)
            cols["time"].append(frame.t)
            cols["id"].append(int(frame.ids[k]))
            cols["x"].append(frame.positions[k, 0])
            cols["y"].append(frame.positions[k, 1])
            cols["ux"].append(frame.u[k, 0])
            cols["uy"].append(frame.u[k, 1])
            cols["exited"].append(0)
    for ev in events:
        cols["step"].append(ev.step + 1)
        cols["time"].append(ev.t)
        cols["id"].append(ev.disk_id)
        cols["x"].append(ev.position[0])
        cols["y"].append(ev.position[1])
        cols["ux"].append(ev.velocity[0])
        cols["uy"].append(ev.velocity[1])
        cols["exited"].append(1)
    np.savez(
        path,
        step=np.asarray(cols["step"], dtype=np.int64),
        time=np.asarray(cols["time"]),
        id=np.asarray(cols["id"], dtype=np.int64),
        x=np.asarray(cols["x"]),
        y=np.asarray(cols["y"]),
        ux=np.asarray(cols["ux"]),
        uy=np.asarray(cols["uy"]),
        exited=np.asarray(cols["exited"], dtype=np.int8),
    )


def write_pressures(frames: Sequence[TrajectoryFrame], path) -> None:
    with PressureWriter(path) as w:
        for frame in frames:
            w.write_frame(frame)


def write_metrics(metrics: RunMetrics, path, extra: Optional[dict] = None) -> None:
    doc = {
        "evacuation_time_s": metrics.evacuation_time,
        "exit_counts": metrics.exit_counts,
        "max_lambda": metrics.max_lambda,
        "mean_solver_iterations": metrics.mean_iterations,
        "n_steps": metrics.n_steps,
        "final_time_s": metrics.final_time,
        "n_remaining": metrics.n_remaining,
    }
    if extra:
        doc.update(extra)
    with open(path, "w") as f:
        json.dump(doc, f, indent=2, sort_keys=True)
        f.write("\n")


@dataclass
class TrajectoryTable:
    step: np.ndarray
    time: np.ndarray
    id: np.ndarray
    x: np.ndarray
    y: np.ndarray
    ux: np.ndarray
    uy: np.ndarray
    exited: np.ndarray


def read_trajectory(path) -> TrajectoryTable:
    raw = np.genfromtxt(path, delimiter=",", names=True, dtype=None, encoding=None)
    raw = np.atleast_1d(raw)
    return TrajectoryTable(
        step=raw["step"].astype(np.int64),
        time=raw["time"].astype(float),
        id=raw["id"].astype(np.int64),
        x=raw["x"].astype(float),
        y=raw["y"].astype(float),
        ux=raw["ux"].astype(float),
        uy=raw["uy"].astype(float),
        exited=raw["exited"].astype(np.int64),
    )


@dataclass
class TrajectoryFileReport:
    n_rows: int
    n_steps: int
    worst_gap: float
    eps: float
    violations: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_trajectory_file(
    path,
    radii_by_id: dict[int, float],
    walls: Sequence[WallSegment] = (),
    eps: float = 1e-6,
) -> TrajectoryFileReport:
    """Re-import a trajectory file and recheck the non-overlap invariant."""
    table = read_trajectory(path)
    worst = np.inf
    violations: list[str] = []
    steps = np.unique(table.step)
    for s in steps:
        sel = (table.step == s) & (table.exited == 0)
        if sel.sum() < 1:
            continue
        pos = np.stack([table.x[sel], table.y[sel]], axis=1)
        try:
            radii = np.array([radii_by_id[int(i)] for i in table.id[sel]])
        except KeyError as exc:
            violations.append(f"step {s}: unknown disk id {exc}")
            continue
        g = min_gap(Configuration(pos, radii), walls)
        worst = min(worst, g)
        if g < -eps:
            violations.append(f"step {s}: min gap {g:.3e} below -{eps:.1e}")
    return TrajectoryFileReport(
        n_rows=len(table.step),
        n_steps=len(steps),
        worst_gap=float(worst),
        eps=eps,
        violations=violations,
    )
