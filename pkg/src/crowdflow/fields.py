"""Spontaneous-velocity fields.

Analytic fields (constant, point sink, corridor) serve as test fixtures;
the production field is the geodesic descent field u0(x) = -s grad(D)(x)
where D is the distance-to-nearest-exit solved on a regular grid by the
first-order fast marching method, with obstacle nodes pinned to a large
value so shortest paths route around them.
"""

from __future__ import annotations

import heapq
import math
import struct
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import ndimage

from .geometry import Configuration, WallSegment

LARGE_FACTOR = 1e6
GRID_MAGIC = b"CFDG"
GRID_VERSION = 1


class FieldDomainError(ValueError):
    """Query point lies outside the distance grid."""


class InsideObstacleError(ValueError):
    """Query point lies inside a hard obstacle."""


class NoExitError(ValueError):
    """The floor plan exposes no exit node on the grid."""


class ConstantField:
    """Uniform spontaneous velocity everywhere."""

    capture_radius = 0.0

    def __init__(self, velocity):
        self.velocity = np.array(velocity, dtype=float).reshape(2)
        self.max_speed = float(np.hypot(*self.velocity))

    def evaluate(self, cfg: Configuration, i: int) -> np.ndarray:
        return self.velocity.copy()

    def evaluate_all(self, cfg: Configuration) -> np.ndarray:
        return np.tile(self.velocity, (cfg.n, 1))


class PointSinkField:
    """Unit descent toward a target point, scaled to speed s (zero at the target)."""

    capture_radius = 0.0

    def __init__(self, target, speed: float):
        self.target = np.array(target, dtype=float).reshape(2)
        self.speed = float(speed)
        self.max_speed = abs(self.speed)

    def evaluate_all(self, cfg: Configuration) -> np.ndarray:
        diff = self.target[None, :] - cfg.positions
        dist = np.sqrt((diff * diff).sum(axis=1))
        out = np.zeros_like(diff)
        ok = dist > 0.0
        out[ok] = self.speed * diff[ok] / dist[ok, None]
        return out

    def evaluate(self, cfg: Configuration, i: int) -> np.ndarray:
        return self.evaluate_all(cfg)[i]


def constant(velocity) -> ConstantField:
    return ConstantField(velocity)


def point_sink(target, speed: float) -> PointSinkField:
    return PointSinkField(target, speed)


def corridor_1d(speed: float) -> ConstantField:
    return ConstantField((speed, 0.0))


@dataclass
class DistanceGrid:
    """Geodesic distance to the nearest exit on a regular node grid.

    ``values[i, j]`` is the distance at node (origin + (i, j) * dx); the
    obstacle mask marks nodes excluded from the solve (walls, obstacle
    interiors, and their inflation by the navigating disk radius), pinned
    to a large value. ``hard_obstacle`` is the un-inflated geometry and
    distinguishes "inside a wall" from "inside the inflation rim".
    """

    origin: np.ndarray
    dx: float
    values: np.ndarray
    obstacle: np.ndarray
    exit_mask: np.ndarray
    hard_obstacle: Optional[np.ndarray] = None
    acceptance_values: Optional[np.ndarray] = None

    @property
    def nx(self) -> int:
        return self.values.shape[0]

    @property
    def ny(self) -> int:
        return self.values.shape[1]

    @property
    def large(self) -> float:
        diam = self.dx * math.hypot(self.nx - 1, self.ny - 1)
        return LARGE_FACTOR * diam

    def node_xy(self, i: int, j: int) -> np.ndarray:
        return self.origin + self.dx * np.array([i, j], dtype=float)

    # -- persistence ------------------------------------------------------
    # Binary layout (little-endian), documented in the README:
    #   magic "CFDG" | u32 version | u32 nx | u32 ny | f64 origin_x |
    #   f64 origin_y | f64 dx | u32 flags (bit0: hard mask present) |
    #   f64 values[nx*ny] | u8 obstacle[nx*ny] | u8 exit[nx*ny]
    #   [| u8 hard[nx*ny]]
    # Arrays are C-order with the x index major (offset = i*ny + j).

    def save_binary(self, path) -> None:
        flags = 1 if self.hard_obstacle is not None else 0
        with open(path, "wb") as f:
            f.write(GRID_MAGIC)
            f.write(struct.pack("<III", GRID_VERSION, self.nx, self.ny))
            f.write(struct.pack("<ddd", self.origin[0], self.origin[1], self.dx))
            f.write(struct.pack("<I", flags))
            f.write(np.ascontiguousarray(self.values, dtype="<f8").tobytes())
            f.write(np.ascontiguousarray(self.obstacle, dtype=np.uint8).tobytes())
            f.write(np.ascontiguousarray(self.exit_mask, dtype=np.uint8).tobytes())
            if self.hard_obstacle is not None:
                f.write(np.ascontiguousarray(self.hard_obstacle, dtype=np.uint8).tobytes())

    @classmethod
    def load_binary(cls, path) -> "DistanceGrid":
        with open(path, "rb") as f:
            magic = f.read(4)
            if magic != GRID_MAGIC:
                raise ValueError(f"not a distance grid file (magic {magic!r})")
            version, nx, ny = struct.unpack("<III", f.read(12))
            if version != GRID_VERSION:
                raise ValueError(f"unsupported grid version {version}")
            ox, oy, dx = struct.unpack("<ddd", f.read(24))
            (flags,) = struct.unpack("<I", f.read(4))
            count = nx * ny
            values = np.frombuffer(f.read(8 * count), dtype="<f8").reshape(nx, ny).copy()
            obstacle = (
                np.frombuffer(f.read(count), dtype=np.uint8).reshape(nx, ny).astype(bool)
            )
            exit_mask = (
                np.frombuffer(f.read(count), dtype=np.uint8).reshape(nx, ny).astype(bool)
            )
            hard = None
            if flags & 1:
                hard = (
                    np.frombuffer(f.read(count), dtype=np.uint8).reshape(nx, ny).astype(bool)
                )
        return cls(np.array([ox, oy]), dx, values, obstacle, exit_mask, hard)

    def save_text(self, path) -> None:
        """Plain-text variant of the binary format, for diffing."""
        with open(path, "w") as f:
            f.write("crowdflow-distance-grid 1\n")
            f.write(f"nx {self.nx}\nny {self.ny}\n")
            f.write(f"origin {float(self.origin[0])!r} {float(self.origin[1])!r}\n")
            f.write(f"dx {float(self.dx)!r}\n")
            f.write(f"hard {1 if self.hard_obstacle is not None else 0}\n")
            for name, arr, fmt in (
                ("values", self.values, lambda v: repr(float(v))),
                ("obstacle", self.obstacle, lambda v: str(int(v))),
                ("exit", self.exit_mask, lambda v: str(int(v))),
            ):
                f.write(f"{name}\n")
                for i in range(self.nx):
                    f.write(" ".join(fmt(v) for v in arr[i]) + "\n")
            if self.hard_obstacle is not None:
                f.write("hard_obstacle\n")
                for i in range(self.nx):
                    f.write(" ".join(str(int(v)) for v in self.hard_obstacle[i]) + "\n")

    @classmethod
    def load_text(cls, path) -> "DistanceGrid":
        with open(path) as f:
            header = f.readline().split()
            if header[:1] != ["crowdflow-distance-grid"]:
                raise ValueError("not a distance grid text file")
            nx = int(f.readline().split()[1])
            ny = int(f.readline().split()[1])
            origin = np.array([float(t) for t in f.readline().split()[1:3]])
            dx = float(f.readline().split()[1])
            has_hard = bool(int(f.readline().split()[1]))

            def read_block(dtype):
                f.readline()  # section name
                rows = [f.readline().split() for _ in range(nx)]
                return np.array(rows, dtype=dtype).reshape(nx, ny)

            values = read_block(float)
            obstacle = read_block(int).astype(bool)
            exit_mask = read_block(int).astype(bool)
            hard = read_block(int).astype(bool) if has_hard else None
        return cls(origin, dx, values, obstacle, exit_mask, hard)


def _points_in_polygon(X: np.ndarray, Y: np.ndarray, poly: np.ndarray) -> np.ndarray:
    # even-odd crossing rule, vectorized over the whole grid
    inside = np.zeros(X.shape, dtype=bool)
    k = len(poly)
    for a in range(k):
        x1, y1 = poly[a]
        x2, y2 = poly[(a + 1) % k]
        if y1 == y2:
            continue
        cross = ((y1 > Y) != (y2 > Y)) & (X < (x2 - x1) * (Y - y1) / (y2 - y1) + x1)
        inside ^= cross
    return inside


def _segment_distance_field(X: np.ndarray, Y: np.ndarray, a, b) -> np.ndarray:
    ax, ay = float(a[0]), float(a[1])
    dx_, dy_ = float(b[0]) - ax, float(b[1]) - ay
    denom = dx_ * dx_ + dy_ * dy_
    if denom == 0.0:  # point-like segment
        return np.hypot(X - ax, Y - ay)
    t = np.clip(((X - ax) * dx_ + (Y - ay) * dy_) / denom, 0.0, 1.0)
    cx = ax + t * dx_
    cy = ay + t * dy_
    return np.hypot(X - cx, Y - cy)


def fmm_solve(
    bounds,
    exits: Sequence,
    walls: Sequence[WallSegment] = (),
    obstacles: Sequence[np.ndarray] = (),
    dx: float = 0.1,
    inflate_radius: float = 0.0,
    wall_thickness: Optional[float] = None,
    record_order: bool = False,
) -> DistanceGrid:
    """First-order fast marching solve of |grad D| = 1 toward the exits.

    ``bounds`` is (xmin, ymin, xmax, ymax); nodes sit at xmin + i*dx.
    Wall segments and obstacle-polygon edges are rasterized onto the grid
    (one to two cells thick so 4-neighbor propagation cannot leak through)
    and obstacle interiors are filled; the resulting mask is dilated by
    ``inflate_radius`` so that disk centers, not disk edges, navigate the
    free space. Exit nodes (free nodes within half a cell of an exit
    segment) start at distance zero; obstacle nodes are pinned to a large
    value and never accepted. Free nodes the front cannot reach keep the
    large value and trigger a warning.
    """
    if dx <= 0.0:
        raise ValueError("dx must be positive")
    xmin, ymin, xmax, ymax = (float(v) for v in bounds)
    nx = int(round((xmax - xmin) / dx)) + 1
    ny = int(round((ymax - ymin) / dx)) + 1
    origin = np.array([xmin, ymin])
    xs = xmin + dx * np.arange(nx)
    ys = ymin + dx * np.arange(ny)
    X, Y = np.meshgrid(xs, ys, indexing="ij")

    hard = np.zeros((nx, ny), dtype=bool)
    halfwidth = max((wall_thickness or 0.0) / 2.0, dx * (math.sqrt(2.0) / 2.0 + 1e-9))
    edge_list = [(w.a, w.b) for w in walls]
    for poly in obstacles:
        poly = np.asarray(poly, dtype=float)
        hard |= _points_in_polygon(X, Y, poly)
        for a in range(len(poly)):
            edge_list.append((poly[a], poly[(a + 1) % len(poly)]))
    for a, b in edge_list:
        hard |= _segment_distance_field(X, Y, a, b) <= halfwidth

    solve_mask = hard
    if inflate_radius > 0.0:
        rad = inflate_radius / dx
        r_i = int(math.floor(rad))
        di, dj = np.meshgrid(
            np.arange(-r_i, r_i + 1), np.arange(-r_i, r_i + 1), indexing="ij"
        )
        footprint = di * di + dj * dj <= rad * rad
        solve_mask = ndimage.binary_dilation(hard, structure=footprint)

    exit_mask = np.zeros((nx, ny), dtype=bool)
    for seg in exits:
        a, b = np.asarray(seg[0], dtype=float), np.asarray(seg[1], dtype=float)
        exit_mask |= _segment_distance_field(X, Y, a, b) <= dx / 2.0
    exit_mask &= ~solve_mask
    if not exit_mask.any():
        raise NoExitError("no free exit node on the grid (exit blocked or outside?)")

    diam = dx * math.hypot(nx - 1, ny - 1)
    large = LARGE_FACTOR * diam
    values = np.full((nx, ny), large)
    FAR, TRIAL, ACCEPTED, OBSTACLE = 0, 1, 2, 3
    status = np.zeros((nx, ny), dtype=np.int8)
    status[solve_mask] = OBSTACLE

    heap: list[tuple[float, int, int]] = []
    for i, j in zip(*np.nonzero(exit_mask)):
        values[i, j] = 0.0
        status[i, j] = TRIAL
        heapq.heappush(heap, (0.0, int(i), int(j)))

    def upwind_value(i: int, j: int) -> float:
        a = large
        if i > 0 and status[i - 1, j] == ACCEPTED:
            a = values[i - 1, j]
        if i < nx - 1 and status[i + 1, j] == ACCEPTED:
            a = min(a, values[i + 1, j])
        b = large
        if j > 0 and status[i, j - 1] == ACCEPTED:
            b = values[i, j - 1]
        if j < ny - 1 and status[i, j + 1] == ACCEPTED:
            b = min(b, values[i, j + 1])
        lo, hi = (a, b) if a <= b else (b, a)
        if hi - lo >= dx:
            return lo + dx
        return 0.5 * (a + b + math.sqrt(2.0 * dx * dx - (a - b) ** 2))

    order: list[float] = []
    while heap:
        val, i, j = heapq.heappop(heap)
        if status[i, j] == ACCEPTED or val != values[i, j]:
            continue  # stale heap entry
        status[i, j] = ACCEPTED
        if record_order:
            order.append(val)
        for ni, nj in ((i - 1, j), (i + 1, j), (i, j - 1), (i, j + 1)):
            if not (0 <= ni < nx and 0 <= nj < ny):
                continue
            st = status[ni, nj]
            if st in (ACCEPTED, OBSTACLE):
                continue
            cand = upwind_value(ni, nj)
            if cand < values[ni, nj]:
                values[ni, nj] = cand
                status[ni, nj] = TRIAL
                heapq.heappush(heap, (cand, ni, nj))

    unreached = (status == FAR).sum()
    if unreached:
        warnings.warn(
            f"{unreached} free grid nodes are unreachable from the exits",
            RuntimeWarning,
            stacklevel=2,
        )

    return DistanceGrid(
        origin,
        dx,
        values,
        solve_mask,
        exit_mask,
        hard_obstacle=hard,
        acceptance_values=np.asarray(order) if record_order else None,
    )


def eikonal_residual(grid: DistanceGrid) -> np.ndarray:
    """|grad D|_upwind - 1 on reachable free non-exit nodes (NaN elsewhere)."""
    v = grid.values
    large = grid.large
    pad = np.full((grid.nx + 2, grid.ny + 2), np.inf)
    pad[1:-1, 1:-1] = np.where(grid.obstacle, np.inf, v)
    a = np.minimum(pad[:-2, 1:-1], pad[2:, 1:-1])
    b = np.minimum(pad[1:-1, :-2], pad[1:-1, 2:])
    gx = np.maximum(v - a, 0.0)
    gy = np.maximum(v - b, 0.0)
    res = np.sqrt(gx * gx + gy * gy) / grid.dx - 1.0
    res[grid.obstacle | grid.exit_mask | (v >= large)] = np.nan
    return res


class GeodesicField:
    """Descent field u0(x) = -s grad(D)(x), renormalized to speed s.

    Node gradients are central differences (one-sided next to obstacle or
    boundary nodes), bilinearly interpolated to the query point, normalized
    to unit length and scaled by the speed. Within ``capture_radius``
    (default half a cell) of an exit node the field is zero: the descent
    target is reached.
    """

    def __init__(self, grid: DistanceGrid, speed: float, capture_radius: Optional[float] = None):
        self.grid = grid
        self.speed = float(speed)
        self.max_speed = abs(self.speed)
        self.capture_radius = grid.dx / 2.0 if capture_radius is None else float(capture_radius)
        self._gx, self._gy = self._node_gradients()

    def _node_gradients(self):
        g = self.grid
        v = g.values
        ok = ~g.obstacle
        pad_v = np.pad(v, 1, constant_values=np.nan)
        pad_ok = np.pad(ok, 1, constant_values=False)

        def axis_grad(shift_lo, shift_hi):
            lo_ok = pad_ok[shift_lo]
            hi_ok = pad_ok[shift_hi]
            lo_v = pad_v[shift_lo]
            hi_v = pad_v[shift_hi]
            central = (hi_v - lo_v) / (2.0 * g.dx)
            fwd = (hi_v - v) / g.dx
            bwd = (v - lo_v) / g.dx
            out = np.zeros_like(v)
            both = lo_ok & hi_ok
            out[both] = central[both]
            fo = hi_ok & ~lo_ok
            out[fo] = fwd[fo]
            bo = lo_ok & ~hi_ok
            out[bo] = bwd[bo]
            return out

        inner = (slice(1, -1), slice(1, -1))
        gx = axis_grad((slice(0, -2), inner[1]), (slice(2, None), inner[1]))
        gy = axis_grad((inner[0], slice(0, -2)), (inner[0], slice(2, None)))
        gx[g.obstacle] = 0.0
        gy[g.obstacle] = 0.0
        return gx, gy

    def evaluate_points(self, points: np.ndarray) -> np.ndarray:
        g = self.grid
        pts = np.atleast_2d(np.asarray(points, dtype=float))
        u = (pts - g.origin[None, :]) / g.dx
        eps = 1e-9
        if (
            (u[:, 0] < -eps).any()
            or (u[:, 1] < -eps).any()
            or (u[:, 0] > g.nx - 1 + eps).any()
            or (u[:, 1] > g.ny - 1 + eps).any()
        ):
            raise FieldDomainError("query point outside the distance grid")
        i0 = np.clip(np.floor(u[:, 0]).astype(int), 0, g.nx - 2)
        j0 = np.clip(np.floor(u[:, 1]).astype(int), 0, g.ny - 2)
        fx = np.clip(u[:, 0] - i0, 0.0, 1.0)
        fy = np.clip(u[:, 1] - j0, 0.0, 1.0)

        if g.hard_obstacle is not None:
            ni = np.clip(np.rint(u[:, 0]).astype(int), 0, g.nx - 1)
            nj = np.clip(np.rint(u[:, 1]).astype(int), 0, g.ny - 1)
            if g.hard_obstacle[ni, nj].any():
                raise InsideObstacleError("query point inside a wall or obstacle")

        w00 = (1 - fx) * (1 - fy)
        w10 = fx * (1 - fy)
        w01 = (1 - fx) * fy
        w11 = fx * fy
        corners = ((i0, j0, w00), (i0 + 1, j0, w10), (i0, j0 + 1, w01), (i0 + 1, j0 + 1, w11))
        gxv = np.zeros(len(pts))
        gyv = np.zeros(len(pts))
        at_exit = np.zeros(len(pts), dtype=bool)
        for ci, cj, w in corners:
            gxv += w * self._gx[ci, cj]
            gyv += w * self._gy[ci, cj]
            node = g.origin[None, :] + g.dx * np.stack([ci, cj], axis=1)
            dist = np.hypot(pts[:, 0] - node[:, 0], pts[:, 1] - node[:, 1])
            at_exit |= g.exit_mask[ci, cj] & (dist <= self.capture_radius)

        norm = np.hypot(gxv, gyv)
        out = np.zeros_like(pts)
        ok = (norm > 1e-14) & ~at_exit
        out[ok, 0] = -self.speed * gxv[ok] / norm[ok]
        out[ok, 1] = -self.speed * gyv[ok] / norm[ok]
        return out

    def evaluate_all(self, cfg: Configuration) -> np.ndarray:
        if cfg.n == 0:
            return np.zeros((0, 2))
        return self.evaluate_points(cfg.positions)

    def evaluate(self, cfg: Configuration, i: int) -> np.ndarray:
        return self.evaluate_points(cfg.positions[i][None, :])[0]


def geodesic_velocity(grid: DistanceGrid, speed: float, x) -> np.ndarray:
    """One-off evaluation of the geodesic descent velocity at point x."""
    return GeodesicField(grid, speed).evaluate_points(np.asarray(x, dtype=float)[None, :])[0]
