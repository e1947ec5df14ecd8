"""Scenario definition, validation, placement, and the full-run driver.

A scenario is a human-editable YAML file with explicit units (meters,
seconds) and a version field: floor-plan geometry (wall polylines,
obstacle polygons, exit segments), the population (count, radii, explicit
or seeded-random placement), the spontaneous-velocity field, step
parameters, and output options.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
import yaml

from . import fields
from .dynamics import StepParams
from .geometry import Configuration, WallSegment, min_gap

SCENARIO_VERSION = 1
HEX_PACKING = math.pi / math.sqrt(12.0)
MAX_PLACEMENT_ATTEMPTS_PER_DISK = 10_000


class ScenarioParseError(ValueError):
    """Scenario file missing, malformed, or of the wrong shape."""


class PlacementError(RuntimeError):
    """Random placement exhausted its attempt budget (density too high)."""


class ScenarioValidationError(ValueError):
    def __init__(self, report: "ValidationReport"):
        super().__init__("; ".join(report.violations))
        self.report = report


@dataclass
class PopulationSpec:
    count: int
    radii: np.ndarray                  # (count,)
    placement: str = "random"          # "random" | "explicit"
    seed: int = 0
    box: Optional[np.ndarray] = None   # ((xmin, ymin), (xmax, ymax))
    positions: Optional[np.ndarray] = None


@dataclass
class FieldSpec:
    kind: str = "geodesic"             # geodesic | constant | point_sink | corridor
    speed: float = 1.4
    dx: float = 0.1
    inflate: bool = True               # dilate obstacles by the max disk radius
    velocity: Optional[np.ndarray] = None
    target: Optional[np.ndarray] = None


@dataclass
class OutputSpec:
    stride: int = 1
    directory: Optional[str] = None


@dataclass
class Scenario:
    name: str
    wall_polylines: list[np.ndarray]
    obstacles: list[np.ndarray]
    exits: list[np.ndarray]            # each (2, 2): endpoints
    population: PopulationSpec
    field_spec: FieldSpec
    params: StepParams
    duration: float
    output: OutputSpec = field(default_factory=OutputSpec)
    version: int = SCENARIO_VERSION

    def polyline_segments(self) -> list[WallSegment]:
        """Contact segments of the wall polylines only."""
        segs = []
        for g, line in enumerate(self.wall_polylines):
            for k in range(len(line) - 1):
                segs.append(WallSegment(line[k], line[k + 1], group=g))
        return segs

    def wall_segments(self) -> list[WallSegment]:
        """All contact segments: wall polylines plus obstacle polygon edges."""
        segs = self.polyline_segments()
        base = len(self.wall_polylines)
        for g, poly in enumerate(self.obstacles):
            for k in range(len(poly)):
                segs.append(WallSegment(poly[k], poly[(k + 1) % len(poly)], group=base + g))
        return segs

    def bounds(self) -> tuple[float, float, float, float]:
        pts = [p for line in self.wall_polylines for p in line]
        pts += [p for poly in self.obstacles for p in poly]
        pts += [p for seg in self.exits for p in seg]
        if self.population.positions is not None:
            pts += list(self.population.positions)
        if not pts:
            raise ScenarioParseError("scenario has no geometry at all")
        arr = np.asarray(pts, dtype=float)
        return (
            float(arr[:, 0].min()),
            float(arr[:, 1].min()),
            float(arr[:, 0].max()),
            float(arr[:, 1].max()),
        )

    def build_field(self):
        spec = self.field_spec
        if spec.kind == "constant":
            return fields.constant(spec.velocity)
        if spec.kind == "corridor":
            return fields.corridor_1d(spec.speed)
        if spec.kind == "point_sink":
            return fields.point_sink(spec.target, spec.speed)
        if spec.kind == "geodesic":
            grid = self.build_distance_grid()
            return fields.GeodesicField(grid, spec.speed)
        raise ScenarioParseError(f"unknown field kind {spec.kind!r}")

    def build_distance_grid(self) -> fields.DistanceGrid:
        spec = self.field_spec
        inflate = float(self.population.radii.max()) if (
            spec.inflate and self.population.count
        ) else 0.0
        return fields.fmm_solve(
            self.bounds(),
            self.exits,
            walls=self.polyline_segments(),
            obstacles=self.obstacles,
            dx=spec.dx,
            inflate_radius=inflate,
        )

    def initial_configuration(self) -> Configuration:
        pop = self.population
        if pop.placement == "explicit":
            return Configuration(pop.positions.copy(), pop.radii.copy())
        return _place_random(self)


def _point_in_polygon(p, poly) -> bool:
    inside = False
    k = len(poly)
    for a in range(k):
        x1, y1 = poly[a]
        x2, y2 = poly[(a + 1) % k]
        if (y1 > p[1]) != (y2 > p[1]) and p[0] < (x2 - x1) * (p[1] - y1) / (y2 - y1) + x1:
            inside = not inside
    return inside


def _polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * abs(float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1))))


def _placement_box(scenario: Scenario) -> np.ndarray:
    pop = scenario.population
    if pop.box is not None:
        return pop.box
    xmin, ymin, xmax, ymax = scenario.bounds()
    r = float(pop.radii.max()) if pop.count else 0.0
    return np.array([[xmin + r, ymin + r], [xmax - r, ymax - r]])


def _place_random(scenario: Scenario) -> Configuration:
    pop = scenario.population
    walls = scenario.wall_segments()
    box = _placement_box(scenario)
    rng = np.random.default_rng(pop.seed)
    placed = np.empty((pop.count, 2))
    n_placed = 0
    budget = MAX_PLACEMENT_ATTEMPTS_PER_DISK * max(pop.count, 1)
    failures = 0
    while n_placed < pop.count:
        p = box[0] + rng.random(2) * (box[1] - box[0])
        r = pop.radii[n_placed]
        ok = not any(_point_in_polygon(p, poly) for poly in scenario.obstacles)
        if ok:
            for w in walls:
                c = w.closest_point(p)
                if np.hypot(p[0] - c[0], p[1] - c[1]) - r < 0.0:
                    ok = False
                    break
        if ok and n_placed:
            d = placed[:n_placed] - p[None, :]
            gaps = np.sqrt((d * d).sum(axis=1)) - (pop.radii[:n_placed] + r)
            ok = bool(gaps.min() >= 0.0)
        if ok:
            placed[n_placed] = p
            n_placed += 1
        else:
            failures += 1
            if failures > budget:
                raise PlacementError(
                    f"placed {n_placed}/{pop.count} disks after {failures} rejections: "
                    "density too high for this geometry"
                )
    return Configuration(placed, pop.radii.copy())


@dataclass
class ValidationReport:
    violations: list[str] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations


def validate_scenario(scenario: Scenario, check_placement: bool = True) -> ValidationReport:
    """Static checks plus (optionally) an actual placement attempt."""
    rep = ValidationReport()
    v = rep.violations
    pop = scenario.population

    if scenario.version != SCENARIO_VERSION:
        v.append(f"unsupported scenario version {scenario.version}")
    if scenario.params.h <= 0.0:
        v.append("step.h must be positive")
    if scenario.duration < 0.0:
        v.append("step.T must be nonnegative")
    if scenario.output.stride < 1:
        v.append("output.stride must be >= 1")
    if pop.count < 0:
        v.append("population.count must be nonnegative")
    if pop.count and (pop.radii <= 0).any():
        v.append("all radii must be positive")
    if pop.placement not in ("random", "explicit"):
        v.append(f"unknown placement {pop.placement!r}")
    if pop.placement == "explicit":
        if pop.positions is None or len(pop.positions) != pop.count:
            v.append("explicit placement needs population.positions with count entries")
    spec = scenario.field_spec
    if spec.kind == "geodesic":
        if spec.dx <= 0:
            v.append("field.dx must be positive")
        if not scenario.exits:
            v.append("geodesic field needs at least one exit")
        if pop.count and spec.dx > float(pop.radii.min()):
            rep.warnings.append(
                "field.dx is coarser than the smallest disk radius; "
                "wall rasterization may be inaccurate"
            )
    if spec.kind == "constant" and spec.velocity is None:
        v.append("constant field needs field.velocity")
    if spec.kind == "point_sink" and spec.target is None:
        v.append("point_sink field needs field.target")

    for k, seg in enumerate(scenario.exits):
        mid = 0.5 * (np.asarray(seg[0], float) + np.asarray(seg[1], float))
        if any(_point_in_polygon(mid, poly) for poly in scenario.obstacles):
            v.append(f"exit {k} lies inside an obstacle")

    if pop.count and pop.placement == "random":
        box = _placement_box(scenario)
        free = float((box[1][0] - box[0][0]) * (box[1][1] - box[0][1]))
        for poly in scenario.obstacles:
            lo, hi = poly.min(axis=0), poly.max(axis=0)
            if (lo >= box[0]).all() and (hi <= box[1]).all():
                free -= _polygon_area(poly)
        disk_area = float(np.pi * (pop.radii**2).sum())
        if free <= 0.0 or disk_area > HEX_PACKING * free:
            v.append(
                f"requested disk area {disk_area:.3g} m^2 exceeds the hexagonal "
                f"packing bound ({HEX_PACKING:.4f} x free area {max(free, 0.0):.3g} m^2)"
            )

    if rep.ok and pop.count and check_placement:
        try:
            cfg = scenario.initial_configuration()
        except PlacementError as exc:
            v.append(str(exc))
            return rep
        for i in range(cfg.n):
            if any(_point_in_polygon(cfg.positions[i], poly) for poly in scenario.obstacles):
                v.append(f"disk {i} center lies inside an obstacle")
        worst = min_gap(cfg, scenario.wall_segments())
        if worst < 0.0:
            v.append(f"initial configuration overlaps (min gap {worst:.3e} m)")
    return rep


# -- YAML front end --------------------------------------------------------


def _as_points(raw, where: str) -> np.ndarray:
    try:
        arr = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ScenarioParseError(f"{where}: expected a list of [x, y] points") from exc
    if arr.ndim != 2 or arr.shape[1] != 2:
        raise ScenarioParseError(f"{where}: expected a list of [x, y] points")
    return arr


def scenario_from_dict(doc: dict, name: str = "scenario") -> Scenario:
    if not isinstance(doc, dict):
        raise ScenarioParseError("scenario file must contain a mapping at top level")
    version = int(doc.get("version", SCENARIO_VERSION))
    name = str(doc.get("name", name))

    geo = doc.get("geometry", {}) or {}
    walls = [_as_points(line, f"geometry.walls[{k}]") for k, line in enumerate(geo.get("walls", []) or [])]
    obstacles = [
        _as_points(poly, f"geometry.obstacles[{k}]") for k, poly in enumerate(geo.get("obstacles", []) or [])
    ]
    exits = [_as_points(seg, f"geometry.exits[{k}]") for k, seg in enumerate(geo.get("exits", []) or [])]
    for k, seg in enumerate(exits):
        if seg.shape != (2, 2):
            raise ScenarioParseError(f"geometry.exits[{k}]: an exit is a 2-point segment")

    pop_doc = doc.get("population", {}) or {}
    count = int(pop_doc.get("count", 0))
    radius = pop_doc.get("radius", 0.25)
    radii = np.asarray(radius, dtype=float).reshape(-1)
    if radii.size == 1:
        radii = np.full(count, float(radii[0]))
    if count and radii.size != count:
        raise ScenarioParseError("population.radius must be a scalar or one value per disk")
    positions = pop_doc.get("positions")
    if positions is not None:
        positions = _as_points(positions, "population.positions")
    box = pop_doc.get("box")
    if box is not None:
        box = _as_points(box, "population.box")
        if box.shape != (2, 2):
            raise ScenarioParseError("population.box must be [[xmin, ymin], [xmax, ymax]]")
    population = PopulationSpec(
        count=count,
        radii=radii,
        placement=str(pop_doc.get("placement", "explicit" if positions is not None else "random")),
        seed=int(pop_doc.get("seed", 0)),
        box=box,
        positions=positions,
    )

    f_doc = doc.get("field", {}) or {}
    velocity = f_doc.get("velocity")
    target = f_doc.get("target")
    field_spec = FieldSpec(
        kind=str(f_doc.get("kind", "geodesic")),
        speed=float(f_doc.get("speed", 1.4)),
        dx=float(f_doc.get("dx", 0.1)),
        inflate=bool(f_doc.get("inflate", True)),
        velocity=None if velocity is None else np.asarray(velocity, dtype=float).reshape(2),
        target=None if target is None else np.asarray(target, dtype=float).reshape(2),
    )

    s_doc = doc.get("step", {}) or {}
    try:
        params = StepParams(
            h=float(s_doc.get("h", 0.01)),
            tol=None if s_doc.get("tol") is None else float(s_doc["tol"]),
            rho=None if s_doc.get("rho") in (None, "auto") else float(s_doc["rho"]),
            max_iter=int(s_doc.get("max_iter", 100_000)),
            cutoff=None if s_doc.get("cutoff") in (None, "auto") else float(s_doc["cutoff"]),
            max_halvings=int(s_doc.get("max_halvings", 3)),
            warm_start=bool(s_doc.get("warm_start", True)),
            scale_wall_rows=bool(s_doc.get("scale_wall_rows", False)),
        )
    except ValueError as exc:
        raise ScenarioParseError(f"step: {exc}") from exc
    duration = float(s_doc.get("T", 0.0))

    o_doc = doc.get("output", {}) or {}
    output = OutputSpec(
        stride=int(o_doc.get("stride", 1)),
        directory=o_doc.get("directory"),
    )
    return Scenario(
        name=name,
        wall_polylines=walls,
        obstacles=obstacles,
        exits=exits,
        population=population,
        field_spec=field_spec,
        params=params,
        duration=duration,
        output=output,
        version=version,
    )


def load_scenario(path) -> Scenario:
    path = Path(path)
    text = path.read_text()
    try:
        doc = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        mark = getattr(exc, "problem_mark", None)
        where = f" at line {mark.line + 1}, column {mark.column + 1}" if mark else ""
        raise ScenarioParseError(f"{path}: YAML parse error{where}: {exc}") from exc
    return scenario_from_dict(doc, name=path.stem)


def scenario_to_dict(s: Scenario) -> dict:
    pop = s.population
    doc = {
        "version": s.version,
        "name": s.name,
        "geometry": {
            "walls": [line.tolist() for line in s.wall_polylines],
            "obstacles": [poly.tolist() for poly in s.obstacles],
            "exits": [np.asarray(seg).tolist() for seg in s.exits],
        },
        "population": {
            "count": pop.count,
            "radius": pop.radii.tolist(),
            "placement": pop.placement,
            "seed": pop.seed,
        },
        "field": {
            "kind": s.field_spec.kind,
            "speed": s.field_spec.speed,
            "dx": s.field_spec.dx,
            "inflate": s.field_spec.inflate,
        },
        "step": {
            "h": s.params.h,
            "T": s.duration,
            "tol": s.params.tol,
            "rho": s.params.rho,
            "cutoff": s.params.cutoff,
            "max_iter": s.params.max_iter,
            "max_halvings": s.params.max_halvings,
            "warm_start": s.params.warm_start,
            "scale_wall_rows": s.params.scale_wall_rows,
        },
        "output": {"stride": s.output.stride, "directory": s.output.directory},
    }
    if pop.box is not None:
        doc["population"]["box"] = pop.box.tolist()
    if pop.positions is not None:
        doc["population"]["positions"] = pop.positions.tolist()
    if s.field_spec.velocity is not None:
        doc["field"]["velocity"] = s.field_spec.velocity.tolist()
    if s.field_spec.target is not None:
        doc["field"]["target"] = s.field_spec.target.tolist()
    return doc


def write_scenario(s: Scenario, path) -> None:
    with open(path, "w") as f:
        yaml.safe_dump(scenario_to_dict(s), f, sort_keys=False)
