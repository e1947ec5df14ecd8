"""Disk configurations, walls, signed gaps, and active-contact detection.

A configuration of N disks lives in R^{2N}. Every gap is a signed clearance
in meters: zero means touching, negative means overlap. Gap gradients are
returned as sparse per-disk blocks; a disk-disk row has Euclidean norm
sqrt(2), a disk-wall row has norm 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

SQRT2 = math.sqrt(2.0)

KIND_PAIR = "pair"
KIND_WALL = "wall"


class CoincidentCentersError(ValueError):
    """Two disk centers coincide: the contact direction is undefined."""


class CenterOnWallError(ValueError):
    """A disk center lies exactly on a wall segment: the normal is undefined."""


@dataclass
class Configuration:
    """N rigid disks: centers and radii in meters, plus simulation time."""

    positions: np.ndarray
    radii: np.ndarray
    time: float = 0.0

    def __post_init__(self) -> None:
        self.positions = np.array(self.positions, dtype=float).reshape(-1, 2)
        radii = np.atleast_1d(np.array(self.radii, dtype=float))
        if radii.size == 1 and self.positions.shape[0] != 1:
            radii = np.full(self.positions.shape[0], float(radii[0]))
        self.radii = radii
        if self.radii.shape[0] != self.positions.shape[0]:
            raise ValueError("number of radii does not match number of positions")
        if np.any(self.radii <= 0.0):
            raise ValueError("all radii must be positive")

    @property
    def n(self) -> int:
        return self.positions.shape[0]

    def copy(self) -> "Configuration":
        return Configuration(self.positions.copy(), self.radii.copy(), self.time)


@dataclass
class WallSegment:
    """One straight wall segment; ``group`` ties segments of a polyline together."""

    a: np.ndarray
    b: np.ndarray
    group: int = 0

    def __post_init__(self) -> None:
        self.a = np.array(self.a, dtype=float).reshape(2)
        self.b = np.array(self.b, dtype=float).reshape(2)
        if np.all(self.a == self.b):
            raise ValueError("degenerate wall segment: endpoints coincide")

    def closest_point(self, p: np.ndarray) -> np.ndarray:
        d = self.b - self.a
        t = float(np.dot(p - self.a, d) / np.dot(d, d))
        t = min(1.0, max(0.0, t))
        return self.a + t * d


@dataclass
class ContactConstraint:
    """One candidate contact: its signed gap and the gradient of the gap.

    ``normal`` is the unit direction of the gradient block: for a disk-disk
    contact it points from disk ``i`` toward disk ``j`` (the blocks are
    ``-normal`` at i and ``+normal`` at j); for a disk-wall contact it points
    from the closest wall point toward the disk center (single block at i).
    """

    kind: str
    i: int
    j: int  # partner disk for "pair", wall index for "wall"
    gap: float
    normal: np.ndarray
    point: Optional[np.ndarray] = None  # closest wall point (wall contacts only)

    def key(self) -> tuple:
        """Stable identity used for warm-starting multipliers across steps."""
        return (self.kind, self.i, self.j)

    def grad_entries(self) -> tuple[list[int], list[float]]:
        """Column indices and values of the sparse gradient row over R^{2N}."""
        ex, ey = float(self.normal[0]), float(self.normal[1])
        if self.kind == KIND_PAIR:
            cols = [2 * self.i, 2 * self.i + 1, 2 * self.j, 2 * self.j + 1]
            vals = [-ex, -ey, ex, ey]
        else:
            cols = [2 * self.i, 2 * self.i + 1]
            vals = [ex, ey]
        return cols, vals


def gap_disk_disk(cfg: Configuration, i: int, j: int) -> float:
    """Signed clearance between disks i and j: |q_i - q_j| - (r_i + r_j)."""
    diff = cfg.positions[j] - cfg.positions[i]
    dist = float(np.hypot(diff[0], diff[1]))
    if dist == 0.0:
        raise CoincidentCentersError(f"disks {i} and {j} have coincident centers")
    return dist - (cfg.radii[i] + cfg.radii[j])


def gradient_disk_disk(cfg: Configuration, i: int, j: int) -> ContactConstraint:
    """Gap and gap gradient for disks i < j; gradient blocks (-e, +e), |row| = sqrt(2)."""
    diff = cfg.positions[j] - cfg.positions[i]
    dist = float(np.hypot(diff[0], diff[1]))
    if dist == 0.0:
        raise CoincidentCentersError(f"disks {i} and {j} have coincident centers")
    e = diff / dist
    gap = dist - (cfg.radii[i] + cfg.radii[j])
    return ContactConstraint(KIND_PAIR, i, j, gap, e)


def gap_and_gradient_disk_wall(
    cfg: Configuration, i: int, wall: WallSegment, wall_index: int = 0
) -> ContactConstraint:
    """Gap and gradient for disk i against a wall segment.

    Gap is the center-to-segment distance minus the radius; the gradient
    block at i is the unit vector from the closest segment point toward the
    center (norm-1 row).
    """
    p = cfg.positions[i]
    c = wall.closest_point(p)
    diff = p - c
    dist = float(np.hypot(diff[0], diff[1]))
    if dist == 0.0:
        raise CenterOnWallError(f"disk {i} center lies exactly on wall {wall_index}")
    e = diff / dist
    return ContactConstraint(KIND_WALL, i, wall_index, dist - cfg.radii[i], e, point=c)


def all_pair_constraints(cfg: Configuration, cutoff: float) -> list[ContactConstraint]:
    """Brute-force enumeration of all disk-disk constraints with gap <= cutoff."""
    out = []
    for i in range(cfg.n):
        for j in range(i + 1, cfg.n):
            c = gradient_disk_disk(cfg, i, j)
            if c.gap <= cutoff:
                out.append(c)
    return out


def _hashed_pair_constraints(cfg: Configuration, cutoff: float) -> list[ContactConstraint]:
    # Uniform spatial hash; cell >= 2*max_r + cutoff guarantees every pair with
    # gap <= cutoff lands in the 3x3 cell neighborhood.
    n = cfg.n
    if n < 2:
        return []
    cell = 2.0 * float(cfg.radii.max()) + cutoff
    if not np.isfinite(cell):
        return all_pair_constraints(cfg, cutoff)
    span = float((cfg.positions.max(axis=0) - cfg.positions.min(axis=0)).max())
    if cell >= span:
        # one cell would cover everything: hashing buys nothing
        return all_pair_constraints(cfg, cutoff)
    keys = np.floor(cfg.positions / cell).astype(np.int64)
    buckets: dict[tuple[int, int], list[int]] = {}
    for idx in range(n):
        buckets.setdefault((keys[idx, 0], keys[idx, 1]), []).append(idx)
    out = []
    for i in range(n):
        kx, ky = keys[i, 0], keys[i, 1]
        for dx in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for j in buckets.get((kx + dx, ky + dy), ()):
                    if j <= i:
                        continue
                    c = gradient_disk_disk(cfg, i, j)
                    if c.gap <= cutoff:
                        out.append(c)
    out.sort(key=lambda c: (c.i, c.j))
    return out


def active_constraints(
    cfg: Configuration,
    walls: Sequence[WallSegment] = (),
    cutoff: float = np.inf,
) -> list[ContactConstraint]:
    """Every disk-disk and disk-wall constraint with gap <= cutoff.

    Disk pairs are found with a uniform spatial hash grid (cell size
    2*max_radius + cutoff); with cutoff = +inf this reduces to the
    brute-force all-pairs enumeration. The returned list is deterministic:
    pair constraints sorted by (i, j), then wall constraints by (i, wall).
    """
    if cutoff < 0.0:
        raise ValueError("cutoff must be nonnegative")
    out = _hashed_pair_constraints(cfg, cutoff)
    wall_hits = []
    for w, wall in enumerate(walls):
        for i in range(cfg.n):
            c = gap_and_gradient_disk_wall(cfg, i, wall, w)
            if c.gap <= cutoff:
                wall_hits.append(c)
    wall_hits.sort(key=lambda c: (c.i, c.j))
    out.extend(wall_hits)
    return out


def min_gap(cfg: Configuration, walls: Sequence[WallSegment] = ()) -> float:
    """Smallest signed gap over all disk pairs and disk-wall pairs (+inf if none)."""
    best = np.inf
    n = cfg.n
    if n >= 2:
        diff = cfg.positions[:, None, :] - cfg.positions[None, :, :]
        dist = np.sqrt((diff * diff).sum(axis=2))
        gaps = dist - (cfg.radii[:, None] + cfg.radii[None, :])
        iu = np.triu_indices(n, k=1)
        best = float(gaps[iu].min())
    if walls and n >= 1:
        p = cfg.positions
        for wall in walls:
            d = wall.b - wall.a
            t = np.clip(((p - wall.a) @ d) / (d @ d), 0.0, 1.0)
            closest = wall.a + t[:, None] * d
            dist = np.sqrt(((p - closest) ** 2).sum(axis=1))
            best = min(best, float((dist - cfg.radii).min()))
    return best


def segments_cross(p0: np.ndarray, p1: np.ndarray, a: np.ndarray, b: np.ndarray) -> bool:
    """True when segment p0-p1 intersects segment a-b (endpoints inclusive)."""

    def orient(o, u, v):
        return (u[0] - o[0]) * (v[1] - o[1]) - (u[1] - o[1]) * (v[0] - o[0])

    d1 = orient(a, b, p0)
    d2 = orient(a, b, p1)
    d3 = orient(p0, p1, a)
    d4 = orient(p0, p1, b)
    if ((d1 > 0) != (d2 > 0)) and ((d3 > 0) != (d4 > 0)) and d1 != 0 and d2 != 0:
        return True

    def on_segment(o, u, v):
        return (
            min(o[0], u[0]) <= v[0] <= max(o[0], u[0])
            and min(o[1], u[1]) <= v[1] <= max(o[1], u[1])
        )

    if d1 == 0 and on_segment(a, b, p0):
        return True
    if d2 == 0 and on_segment(a, b, p1):
        return True
    if d3 == 0 and on_segment(p0, p1, a):
        return True
    if d4 == 0 and on_segment(p0, p1, b):
        return True
    return False


def point_segment_distance(p: np.ndarray, a: np.ndarray, b: np.ndarray) -> float:
    d = b - a
    t = float(np.dot(p - a, d) / np.dot(d, d))
    t = min(1.0, max(0.0, t))
    c = a + t * d
    return float(np.hypot(p[0] - c[0], p[1] - c[1]))
