"""Prediction-correction time stepping and the evacuation run loop.

One step builds the candidate contact set at q_n, projects the spontaneous
velocity onto {v : D + h G v >= 0}, and advances q_{n+1} = q_n + h u_n.
The linearized set is an inner approximation of the exact feasible set, so
gaps stay nonnegative up to solver tolerance; if curvature (or a solver
failure) violates that, the step is retried with h/2 a bounded number of
times. The run loop removes disks whose centers reach an exit segment and
accumulates evacuation metrics.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Optional, Sequence

import numpy as np

from .geometry import (
    KIND_PAIR,
    Configuration,
    ContactConstraint,
    WallSegment,
    active_constraints,
    min_gap,
    point_segment_distance,
    segments_cross,
)
from .projection import ConstraintSystem, default_tolerance, uzawa_project


class InfeasibleConfigurationError(ValueError):
    """The input configuration already violates the overlap tolerance."""


class StepFailureError(RuntimeError):
    """Solver failure or feasibility violation that survived all retries."""


@dataclass
class StepParams:
    """Numerical parameters of one prediction-correction step."""

    h: float
    tol: Optional[float] = None          # None: 1e-8 * sqrt(N) m/s
    rho: Optional[float] = None          # None: auto 1/||B||^2
    max_iter: int = 100_000
    cutoff: Optional[float] = None       # None: 2*sqrt(2)*h*v_max (sound pruning)
    v_max: Optional[float] = None        # None: taken from the field
    max_halvings: int = 3
    warm_start: bool = True
    eps_overlap: float = 1e-8
    feas_factor: float = 10.0            # eps_feas = feas_factor * tol * h
    scale_wall_rows: bool = False

    def __post_init__(self) -> None:
        if self.h <= 0.0:
            raise ValueError("step h must be positive")

    def solver_tol(self, n_disks: int) -> float:
        return self.tol if self.tol is not None else default_tolerance(n_disks)


@dataclass
class TrajectoryFrame:
    """State at the start of step ``index`` plus the velocities applied."""

    index: int
    t: float
    positions: np.ndarray        # (N, 2)
    ids: np.ndarray              # (N,) stable disk ids
    u: np.ndarray                # (N, 2) actual velocities
    spontaneous: np.ndarray      # (N, 2) spontaneous velocities U(q_n)
    contacts: list               # active ContactConstraint list (frame-local indices)
    lam: np.ndarray              # multipliers, one per contact
    iterations: int
    h_used: float
    halvings: int = 0


@dataclass
class ExitEvent:
    """A disk center reached an exit during a step."""

    disk_id: int
    exit_index: int
    step: int                    # index of the step during which it left
    t: float                     # time at the end of that step
    position: np.ndarray         # final (post-step) center
    velocity: np.ndarray


@dataclass
class StepResult:
    frame: TrajectoryFrame
    config: Configuration
    warm: dict


@dataclass
class RunMetrics:
    evacuation_time: Optional[float]
    exit_counts: list[int]
    max_lambda: float
    mean_iterations: float
    n_steps: int
    final_time: float
    n_remaining: int


@dataclass
class RunResult:
    frames: list[TrajectoryFrame]
    exit_events: list[ExitEvent]
    metrics: RunMetrics


def _contact_key(c: ContactConstraint, ids: np.ndarray) -> tuple:
    if c.kind == KIND_PAIR:
        return (c.kind, int(ids[c.i]), int(ids[c.j]))
    return (c.kind, int(ids[c.i]), int(c.j))


def step(
    cfg: Configuration,
    velocity_field,
    walls: Sequence[WallSegment],
    params: StepParams,
    warm: Optional[dict] = None,
    ids: Optional[np.ndarray] = None,
    index: int = 0,
) -> StepResult:
    """Advance the configuration by one step (with h-halving retries)."""
    n = cfg.n
    if ids is None:
        ids = np.arange(n)
    if n and min_gap(cfg, walls) < -params.eps_overlap:
        raise InfeasibleConfigurationError(
            f"configuration infeasible beyond eps_overlap at t={cfg.time:g}"
        )
    U = velocity_field.evaluate_all(cfg)
    tol = params.solver_tol(n)
    v_max = params.v_max
    if v_max is None:
        v_max = getattr(velocity_field, "max_speed", None)
    if v_max is None:
        v_max = float(np.sqrt((U * U).sum(axis=1)).max(initial=0.0))

    h_try = params.h
    failure = "no attempt"
    for halvings in range(params.max_halvings + 1):
        cutoff = params.cutoff
        if cutoff is None:
            cutoff = 2.0 * math.sqrt(2.0) * h_try * v_max
        contacts = active_constraints(cfg, walls, cutoff)
        system = ConstraintSystem(contacts, h_try, n, params.scale_wall_rows)
        mu0 = None
        if params.warm_start and warm:
            mu0 = np.array(
                [warm.get(_contact_key(c, ids), 0.0) for c in contacts], dtype=float
            )
        res = uzawa_project(
            system,
            U.ravel(),
            rho=params.rho,
            tol=tol,
            max_iter=params.max_iter,
            mu0=mu0,
            eps_overlap=params.eps_overlap,
        )
        if not res.converged:
            failure = f"solver {res.status} after {res.iterations} iterations"
            h_try *= 0.5
            continue
        u = res.u.reshape(n, 2)
        new_positions = cfg.positions + h_try * u
        eps_feas = params.feas_factor * tol * h_try
        worst = min_gap(Configuration(new_positions, cfg.radii), walls) if n else math.inf
        if worst < -eps_feas:
            failure = f"linearization overshoot: min gap {worst:.3e} < {-eps_feas:.3e}"
            h_try *= 0.5
            continue
        frame = TrajectoryFrame(
            index=index,
            t=cfg.time,
            positions=cfg.positions.copy(),
            ids=ids.copy(),
            u=u,
            spontaneous=U,
            contacts=contacts,
            lam=res.lam,
            iterations=res.iterations,
            h_used=h_try,
            halvings=halvings,
        )
        new_cfg = Configuration(new_positions, cfg.radii, cfg.time + h_try)
        warm_out = {
            _contact_key(c, ids): float(lam) for c, lam in zip(contacts, res.lam)
        }
        return StepResult(frame, new_cfg, warm_out)
    raise StepFailureError(
        f"step {index} failed after {params.max_halvings} halvings: {failure}"
    )


def run(
    cfg: Configuration,
    velocity_field,
    walls: Sequence[WallSegment],
    exits: Sequence,
    params: StepParams,
    duration: float,
    ids: Optional[np.ndarray] = None,
    on_frame: Optional[Callable[[TrajectoryFrame], None]] = None,
    on_exit: Optional[Callable[[ExitEvent], None]] = None,
    collect: bool = True,
    stride: int = 1,
    max_steps: Optional[int] = None,
) -> RunResult:
    """Iterate steps until t >= duration or everyone has evacuated.

    A disk is evacuated when its center crosses an exit segment during a
    step, or ends the step within the field's capture radius of one. Frames
    are emitted every ``stride`` steps (exit events are always delivered);
    with ``collect`` they are also returned.
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    exits = [
        (np.asarray(seg[0], dtype=float), np.asarray(seg[1], dtype=float))
        for seg in exits
    ]
    ids = np.arange(cfg.n) if ids is None else np.asarray(ids).copy()
    capture = float(getattr(velocity_field, "capture_radius", 0.0))

    frames: list[TrajectoryFrame] = []
    events: list[ExitEvent] = []
    warm: dict = {}
    exit_counts = [0] * len(exits)
    max_lambda = 0.0
    iter_sum = 0
    n_steps = 0
    evac_time: Optional[float] = None

    def emit(frame: TrajectoryFrame) -> None:
        if on_frame is not None:
            on_frame(frame)
        if collect:
            frames.append(frame)

    while (
        cfg.n > 0
        and cfg.time < duration - 1e-12
        and (max_steps is None or n_steps < max_steps)
    ):
        result = step(cfg, velocity_field, walls, params, warm=warm, ids=ids, index=n_steps)
        frame = result.frame
        if frame.lam.size:
            max_lambda = max(max_lambda, float(frame.lam.max()))
        iter_sum += frame.iterations
        if n_steps % stride == 0:
            emit(frame)

        # exit detection on the motion segments of this step
        new_cfg = result.config
        gone = []
        for li in range(cfg.n):
            p0 = cfg.positions[li]
            p1 = new_cfg.positions[li]
            for e_idx, (ea, eb) in enumerate(exits):
                crossed = segments_cross(p0, p1, ea, eb)
                captured = capture > 0.0 and point_segment_distance(p1, ea, eb) <= capture
                if crossed or captured:
                    ev = ExitEvent(
                        disk_id=int(ids[li]),
                        exit_index=e_idx,
                        step=n_steps,
                        t=new_cfg.time,
                        position=p1.copy(),
                        velocity=frame.u[li].copy(),
                    )
                    events.append(ev)
                    if on_exit is not None:
                        on_exit(ev)
                    exit_counts[e_idx] += 1
                    gone.append(li)
                    break
        if gone:
            keep = np.ones(cfg.n, dtype=bool)
            keep[gone] = False
            gone_ids = {int(ids[li]) for li in gone}
            new_cfg = Configuration(
                new_cfg.positions[keep], new_cfg.radii[keep], new_cfg.time
            )
            ids = ids[keep]
            warm = {
                k: v
                for k, v in result.warm.items()
                if k[1] not in gone_ids and not (k[0] == KIND_PAIR and k[2] in gone_ids)
            }
        else:
            warm = result.warm

        cfg = new_cfg
        n_steps += 1
        if cfg.n == 0 and evac_time is None:
            evac_time = cfg.time

    if n_steps == 0:
        # degenerate horizon: record the initial state as a single frame
        emit(
            TrajectoryFrame(
                index=0,
                t=cfg.time,
                positions=cfg.positions.copy(),
                ids=ids.copy(),
                u=np.zeros((cfg.n, 2)),
                spontaneous=np.zeros((cfg.n, 2)),
                contacts=[],
                lam=np.zeros(0),
                iterations=0,
                h_used=0.0,
            )
        )

    metrics = RunMetrics(
        evacuation_time=evac_time,
        exit_counts=exit_counts,
        max_lambda=max_lambda,
        mean_iterations=iter_sum / n_steps if n_steps else 0.0,
        n_steps=n_steps,
        final_time=cfg.time,
        n_remaining=cfg.n,
    )
    return RunResult(frames, events, metrics)
