"""Shared fixtures and independent oracles for the test suite."""

from __future__ import annotations

import math
from pathlib import Path

import numpy as np
import pytest

from crowdflow.geometry import Configuration, active_constraints
from crowdflow.projection import ConstraintSystem

SCENARIO_DIR = Path(__file__).resolve().parent.parent / "scenarios"


class PerDiskField:
    """Test field assigning a fixed spontaneous velocity to each disk."""

    capture_radius = 0.0

    def __init__(self, velocities):
        self.v = np.asarray(velocities, dtype=float).reshape(-1, 2)
        self.max_speed = float(np.sqrt((self.v**2).sum(axis=1)).max())

    def evaluate_all(self, cfg):
        return self.v[: cfg.n].copy()

    def evaluate(self, cfg, i):
        return self.v[i].copy()


def random_feasible_instance(rng, n_max=6, m_max=10, gap_scale=0.1):
    """A feasible disk cluster with its contact system and a random U.

    Disks are grown one at a time around random anchors at small positive
    gaps, so configurations are feasible by construction and carry a
    handful of near-active contacts.
    """
    while True:
        n = int(rng.integers(2, n_max + 1))
        radii = rng.uniform(0.3, 0.7, n)
        pos = np.zeros((n, 2))
        ok = True
        for i in range(1, n):
            placed = False
            for _ in range(60):
                anchor = int(rng.integers(0, i))
                angle = rng.uniform(0.0, 2.0 * math.pi)
                gap = rng.uniform(0.0, gap_scale)
                d = radii[anchor] + radii[i] + gap
                p = pos[anchor] + d * np.array([math.cos(angle), math.sin(angle)])
                dd = pos[:i] - p[None, :]
                gaps = np.sqrt((dd * dd).sum(axis=1)) - (radii[:i] + radii[i])
                if gaps.min() >= 0.0:
                    pos[i] = p
                    placed = True
                    break
            if not placed:
                ok = False
                break
        if not ok:
            continue
        cfg = Configuration(pos, radii)
        contacts = active_constraints(cfg, cutoff=2.0 * gap_scale)
        if not contacts or len(contacts) > m_max:
            continue
        h = float(rng.uniform(0.05, 0.2))
        system = ConstraintSystem(contacts, h, n)
        U = rng.normal(0.0, 1.5, 2 * n)
        return cfg, system, U


def two_disk_exact(q1_0, q2_0, U1, U2, radius_sum, t):
    """Closed-form two-disk motion under constant spontaneous velocities.

    Independent oracle for the single-contact projected dynamics: the sum
    q1 + q2 drifts with U1 + U2 (the projection never changes it), while the
    relative coordinate w = q2 - q1 is in free flight until |w| = R, then
    slides on the circle |w| = R with the angle phi between w and the
    relative drift V obeying R phi' = -|V| sin(phi), i.e.
    tan(phi/2) = tan(phi0/2) exp(-|V| (t - t1) / R), and detaches when
    phi reaches pi/2.
    """
    q1_0 = np.asarray(q1_0, dtype=float)
    q2_0 = np.asarray(q2_0, dtype=float)
    U1 = np.asarray(U1, dtype=float)
    U2 = np.asarray(U2, dtype=float)
    R = float(radius_sum)
    s0 = q1_0 + q2_0
    w0 = q2_0 - q1_0
    V = U2 - U1
    s = s0 + (U1 + U2) * t

    def free(w_start, t_elapsed):
        return w_start + V * t_elapsed

    vnorm = float(np.linalg.norm(V))
    if vnorm == 0.0:
        w = w0
        return (s - w) / 2.0, (s + w) / 2.0

    # first touching time: |w0 + V t|^2 = R^2
    a = vnorm**2
    b = 2.0 * float(w0 @ V)
    c = float(w0 @ w0) - R * R
    disc = b * b - 4.0 * a * c
    t1 = None
    if disc >= 0.0:
        root = (-b - math.sqrt(disc)) / (2.0 * a)
        if root >= -1e-12:
            t1 = max(root, 0.0)
    if t1 is None or t < t1:
        w = free(w0, t)
        return (s - w) / 2.0, (s + w) / 2.0

    w_t1 = free(w0, t1)
    w_hat = w_t1 / R
    v_hat = V / vnorm
    cos0 = float(w_hat @ v_hat)
    if cos0 >= 0.0:  # grazing: constraint never activates
        w = free(w0, t)
        return (s - w) / 2.0, (s + w) / 2.0

    n_raw = w_hat - cos0 * v_hat
    sin0 = float(np.linalg.norm(n_raw))
    if sin0 < 1e-14:
        # exactly head-on: locked at w(t1) forever
        w = w_t1
        return (s - w) / 2.0, (s + w) / 2.0
    n_hat = n_raw / sin0

    phi0 = math.atan2(sin0, cos0)
    t2 = t1 + (R / vnorm) * math.log(math.tan(phi0 / 2.0))
    if t <= t2:
        phi = 2.0 * math.atan(math.tan(phi0 / 2.0) * math.exp(-vnorm * (t - t1) / R))
        w = R * (math.cos(phi) * v_hat + math.sin(phi) * n_hat)
    else:
        w_t2 = R * (math.cos(math.pi / 2) * v_hat + math.sin(math.pi / 2) * n_hat)
        w = free(w_t2, t - t2)
    return (s - w) / 2.0, (s + w) / 2.0


def corridor_oracle(x0, radii, speed, h, n_steps, wall_x=None):
    """Greedy single-file integrator: each disk moves up to speed*h, clipped
    by the disk ahead (and optionally a wall at wall_x). Exact for the
    projected dynamics when every disk wants the same rightward speed."""
    x = np.asarray(x0, dtype=float).copy()
    order = np.argsort(-x)  # front first
    hist = [x.copy()]
    for _ in range(n_steps):
        new = x.copy()
        prev = None
        for idx in order:
            target = x[idx] + speed * h
            if prev is None:
                if wall_x is not None:
                    target = min(target, wall_x - radii[idx])
            else:
                target = min(target, new[prev] - (radii[prev] + radii[idx]))
            new[idx] = target
            prev = idx
        x = new
        hist.append(x.copy())
    return np.asarray(hist)


@pytest.fixture
def rng():
    return np.random.default_rng(42)
