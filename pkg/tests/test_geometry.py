import math

import numpy as np
import pytest

from crowdflow.geometry import (
    CenterOnWallError,
    CoincidentCentersError,
    Configuration,
    WallSegment,
    active_constraints,
    all_pair_constraints,
    gap_and_gradient_disk_wall,
    gap_disk_disk,
    gradient_disk_disk,
    min_gap,
)


def test_gap_touching_disks():
    cfg = Configuration([[0, 0], [2, 0]], [1.0, 1.0])
    assert gap_disk_disk(cfg, 0, 1) == 0.0


def test_gap_separated_disks():
    cfg = Configuration([[0, 0], [5, 0]], [1.0, 1.0])
    assert gap_disk_disk(cfg, 0, 1) == 3.0


def test_gap_diagonal():
    cfg = Configuration([[0, 0], [1, 1]], [0.5, 0.5])
    assert gap_disk_disk(cfg, 0, 1) == pytest.approx(math.sqrt(2) - 1, abs=1e-15)


def test_gradient_axis_aligned():
    cfg = Configuration([[0, 0], [2, 0]], [0.5, 0.5])
    c = gradient_disk_disk(cfg, 0, 1)
    assert np.allclose(c.normal, [1, 0])
    cols, vals = c.grad_entries()
    assert cols == [0, 1, 2, 3]
    assert vals == [-1.0, -0.0, 1.0, 0.0]

    cfg = Configuration([[0, 0], [0, 3]], [0.5, 0.5])
    c = gradient_disk_disk(cfg, 0, 1)
    assert np.allclose(c.normal, [0, 1])


def test_gradient_row_norm_is_sqrt2(rng):
    for _ in range(20):
        cfg = Configuration(rng.normal(size=(2, 2)) * 3, rng.uniform(0.2, 1.0, 2))
        c = gradient_disk_disk(cfg, 0, 1)
        _, vals = c.grad_entries()
        assert sum(v * v for v in vals) == pytest.approx(2.0, abs=1e-14)


def test_coincident_centers_raise():
    cfg = Configuration([[1, 1], [1, 1]], [0.5, 0.5])
    with pytest.raises(CoincidentCentersError):
        gap_disk_disk(cfg, 0, 1)
    with pytest.raises(CoincidentCentersError):
        gradient_disk_disk(cfg, 0, 1)


def test_wall_gap_perpendicular_foot():
    cfg = Configuration([[0, 1]], [0.5])
    wall = WallSegment([-1, 0], [1, 0])
    c = gap_and_gradient_disk_wall(cfg, 0, wall)
    assert c.gap == pytest.approx(0.5, abs=1e-15)
    assert np.allclose(c.normal, [0, 1])
    assert np.allclose(c.point, [0, 0])


def test_wall_gap_endpoint_closest():
    cfg = Configuration([[2, 2]], [1.0])
    wall = WallSegment([0, 0], [1, 0])
    c = gap_and_gradient_disk_wall(cfg, 0, wall)
    assert c.gap == pytest.approx(math.sqrt(5) - 1, abs=1e-15)
    assert np.allclose(c.normal, [1 / math.sqrt(5), 2 / math.sqrt(5)])


def test_wall_exact_touch():
    cfg = Configuration([[0, 0.5]], [0.5])
    wall = WallSegment([-2, 0], [2, 0])
    c = gap_and_gradient_disk_wall(cfg, 0, wall)
    assert c.gap == 0.0


def test_center_on_wall_raises():
    cfg = Configuration([[0.5, 0.0]], [0.3])
    with pytest.raises(CenterOnWallError):
        gap_and_gradient_disk_wall(cfg, 0, WallSegment([0, 0], [1, 0]))


def test_gradient_matches_finite_difference(rng):
    # |D(q+delta) - D(q) - G.delta| <= 1e-9 for |delta| = 1e-6
    for _ in range(30):
        pos = rng.normal(size=(3, 2)) * 2.0
        radii = rng.uniform(0.1, 0.4, 3)
        cfg = Configuration(pos, radii)
        c = gradient_disk_disk(cfg, 0, 2)
        delta = rng.normal(size=6)
        delta *= 1e-6 / np.linalg.norm(delta)
        cols, vals = c.grad_entries()
        g = np.zeros(6)
        g[cols] = vals
        cfg2 = Configuration(pos + delta.reshape(3, 2), radii)
        lin = gap_disk_disk(cfg, 0, 2) + g @ delta
        assert abs(gap_disk_disk(cfg2, 0, 2) - lin) <= 1e-9


def test_stored_gap_matches_recompute(rng):
    pos = rng.uniform(0, 5, size=(8, 2))
    cfg = Configuration(pos, np.full(8, 0.3))
    walls = [WallSegment([0, -1], [5, -1])]
    for c in active_constraints(cfg, walls, cutoff=np.inf):
        if c.kind == "pair":
            again = gap_disk_disk(cfg, c.i, c.j)
        else:
            again = gap_and_gradient_disk_wall(cfg, c.i, walls[c.j], c.j).gap
        assert abs(c.gap - again) <= 1e-12 * max(1.0, abs(again))


def test_active_constraints_far_pair_empty():
    cfg = Configuration([[0, 0], [12, 0]], [1.0, 1.0])
    assert active_constraints(cfg, cutoff=0.1) == []


def test_active_constraints_collinear_chain():
    cfg = Configuration([[0, 0], [1, 0], [2, 0]], [0.5, 0.5, 0.5])
    cons = active_constraints(cfg, cutoff=0.01)
    assert [(c.i, c.j) for c in cons] == [(0, 1), (1, 2)]


def test_active_constraints_infinite_cutoff_is_all_pairs(rng):
    pos = rng.uniform(0, 10, size=(12, 2))
    cfg = Configuration(pos, rng.uniform(0.1, 0.3, 12))
    cons = active_constraints(cfg, cutoff=np.inf)
    assert [(c.i, c.j) for c in cons] == [
        (i, j) for i in range(12) for j in range(i + 1, 12)
    ]


def test_hashed_matches_brute_force_on_random_disks(rng):
    pos = rng.uniform(0, 20, size=(50, 2))
    cfg = Configuration(pos, rng.uniform(0.2, 0.5, 50))
    cutoff = 0.8
    hashed = active_constraints(cfg, cutoff=cutoff)
    brute = all_pair_constraints(cfg, cutoff)
    assert [(c.i, c.j) for c in hashed] == [(c.i, c.j) for c in brute]
    for a, b in zip(hashed, brute):
        assert a.gap == b.gap
        assert np.array_equal(a.normal, b.normal)


def test_wall_constraints_included():
    cfg = Configuration([[1.0, 0.4]], [0.3])
    walls = [WallSegment([0, 0], [2, 0]), WallSegment([0, 5], [2, 5])]
    cons = active_constraints(cfg, walls, cutoff=0.2)
    assert [(c.kind, c.i, c.j) for c in cons] == [("wall", 0, 0)]
    assert cons[0].gap == pytest.approx(0.1, abs=1e-15)


def test_translation_invariance(rng):
    pos = rng.uniform(0, 5, size=(6, 2))
    cfg = Configuration(pos, np.full(6, 0.4))
    shift = np.array([3.7, -1.2])
    cfg2 = Configuration(pos + shift, cfg.radii)
    a = active_constraints(cfg, cutoff=np.inf)
    b = active_constraints(cfg2, cutoff=np.inf)
    for ca, cb in zip(a, b):
        assert ca.gap == pytest.approx(cb.gap, abs=1e-12)
        assert np.allclose(ca.normal, cb.normal, atol=1e-12)


def test_rotation_equivariance(rng):
    pos = rng.uniform(0, 5, size=(6, 2))
    cfg = Configuration(pos, np.full(6, 0.4))
    theta = 0.83
    rot = np.array(
        [[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]]
    )
    cfg2 = Configuration(pos @ rot.T, cfg.radii)
    a = active_constraints(cfg, cutoff=np.inf)
    b = active_constraints(cfg2, cutoff=np.inf)
    for ca, cb in zip(a, b):
        assert cb.gap == pytest.approx(ca.gap, abs=1e-12)
        assert np.allclose(cb.normal, rot @ ca.normal, atol=1e-12)


def test_min_gap_brute_force():
    cfg = Configuration([[0, 0], [2.5, 0]], [1.0, 1.0])
    walls = [WallSegment([-1.2, -5], [-1.2, 5])]
    assert min_gap(cfg, walls) == pytest.approx(0.2, abs=1e-15)


def test_configuration_validation():
    with pytest.raises(ValueError):
        Configuration([[0, 0]], [-1.0])
    with pytest.raises(ValueError):
        Configuration([[0, 0], [1, 1]], [0.5, 0.5, 0.5])
    with pytest.raises(ValueError):
        WallSegment([1, 1], [1, 1])
