"""Piecewise-linear device trajectories and geometric truth queries."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = ["Trajectory", "position_at", "distance_between", "first_time_within"]


@dataclass(frozen=True)
class Trajectory:
    """Waypoints (time_s, (x, y, z)) with linear interpolation between them.

    Outside the covered time range the position clamps to the nearest
    endpoint, so a single waypoint describes a stationary device.
    """

    waypoints: tuple

    def __post_init__(self):
        if not self.waypoints:
            raise ValueError("trajectory needs at least one waypoint")
        wps = tuple((float(t), tuple(float(c) for c in p)) for t, p in self.waypoints)
        times = [t for t, _ in wps]
        if any(b <= a for a, b in zip(times, times[1:])):
            raise ValueError("waypoint times must be strictly increasing")
        if any(len(p) != 3 for _, p in wps):
            raise ValueError("positions must be 3-dimensional")
        object.__setattr__(self, "waypoints", wps)

    @classmethod
    def stationary(cls, position) -> "Trajectory":
        return cls(((0.0, tuple(position)),))

    def position_at(self, true_time_s: float) -> tuple:
        wps = self.waypoints
        if true_time_s <= wps[0][0]:
            return wps[0][1]
        if true_time_s >= wps[-1][0]:
            return wps[-1][1]
        for (t0, p0), (t1, p1) in zip(wps, wps[1:]):
            if t0 <= true_time_s <= t1:
                f = (true_time_s - t0) / (t1 - t0)
                return tuple(a + f * (b - a) for a, b in zip(p0, p1))
        raise AssertionError("unreachable")

    @property
    def breakpoints(self) -> tuple:
        return tuple(t for t, _ in self.waypoints)


def position_at(trajectory: Trajectory, true_time_s: float) -> tuple:
    return trajectory.position_at(true_time_s)


def distance_between(a: Trajectory, b: Trajectory, true_time_s: float) -> float:
    return math.dist(a.position_at(true_time_s), b.position_at(true_time_s))


def first_time_within(a: Trajectory, b: Trajectory, threshold_m: float,
                      t_end_s: float, t_start_s: float = 0.0) -> float | None:
    """First true time in [t_start, t_end] at which |a - b| < threshold.

    Exact on the piecewise-linear model: within each interval between
    waypoint times the squared distance is a quadratic in t.
    """
    cuts = sorted({t_start_s, t_end_s, *a.breakpoints, *b.breakpoints})
    cuts = [t for t in cuts if t_start_s <= t <= t_end_s]
    if not cuts or cuts[0] != t_start_s:
        cuts.insert(0, t_start_s)
    if cuts[-1] != t_end_s:
        cuts.append(t_end_s)
    thr2 = threshold_m * threshold_m
    for t0, t1 in zip(cuts, cuts[1:]):
        if t1 <= t0:
            continue
        p0 = np.array(a.position_at(t0)) - np.array(b.position_at(t0))
        p1 = np.array(a.position_at(t1)) - np.array(b.position_at(t1))
        if float(p0 @ p0) < thr2:
            return t0
        # r(t) = p0 + (t-t0)/(t1-t0) * (p1-p0); |r|^2 quadratic in s=(t-t0)
        dt = t1 - t0
        v = (p1 - p0) / dt
        A = float(v @ v)
        B = 2.0 * float(p0 @ v)
        Cq = float(p0 @ p0) - thr2
        if A == 0.0:
            continue  # constant distance, already checked at t0
        disc = B * B - 4 * A * Cq
        if disc < 0:
            continue
        root = (-B - math.sqrt(disc)) / (2 * A)
        if 0.0 <= root <= dt:
            return t0 + root
    return None
