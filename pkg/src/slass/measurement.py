"""Range measurement model: likelihoods and sampling.

A distance measurement between two nodes at range r is Gaussian with mean
``alpha0 + alpha * r`` and variance ``r * sigma_z_sq``. Ranges are clamped
below at ``R_FLOOR`` in both moments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from itertools import combinations

import numpy as np

from .core import R_FLOOR, EnvParams, as_points

_LOG_2PI = math.log(2.0 * math.pi)


def robot_pairs(num_robots: int) -> list[tuple[int, int]]:
    """Index pairs (k1, k2), k1 < k2, in the order robot-robot measurements are stored."""
    return list(combinations(range(num_robots), 2))


@dataclass(frozen=True)
class MeasurementSet:
    source_to_robot: np.ndarray  # (K,)
    robot_to_robot: np.ndarray  # (K(K-1)/2,), ordered as robot_pairs(K)
    cycle: int = 0

    def __post_init__(self):
        s2r = np.asarray(self.source_to_robot, dtype=np.float64).reshape(-1)
        r2r = np.asarray(self.robot_to_robot, dtype=np.float64).reshape(-1)
        k = s2r.size
        if r2r.size != k * (k - 1) // 2:
            raise ValueError(
                f"{k} source links need {k * (k - 1) // 2} robot links, got {r2r.size}"
            )
        if not (np.all(np.isfinite(s2r)) and np.all(np.isfinite(r2r))):
            raise ValueError("measurements must be finite")
        object.__setattr__(self, "source_to_robot", s2r)
        object.__setattr__(self, "robot_to_robot", r2r)

    @property
    def num_robots(self) -> int:
        return self.source_to_robot.size

    def __len__(self):
        return self.source_to_robot.size + self.robot_to_robot.size


def range_log_likelihood(z, r, env: EnvParams):
    """Vectorised log N(z; alpha0 + alpha*r, r*sigma_z_sq) with r floored."""
    r = np.maximum(r, R_FLOOR)
    var = r * env.sigma_z_sq
    resid = z - (env.alpha0 + env.alpha * r)
    return -0.5 * (_LOG_2PI + np.log(var) + resid * resid / var)


def pair_log_likelihood(z: float, p1, p2, env: EnvParams) -> float:
    if not math.isfinite(z):
        raise ValueError(f"measurement must be finite, got {z}")
    a, b = as_points([p1, p2])
    return float(range_log_likelihood(float(z), float(np.linalg.norm(a - b)), env))


def joint_log_likelihood(z: MeasurementSet, x0, robots, env: EnvParams) -> float:
    """Sum of the source-robot and robot-robot log terms for one configuration."""
    robots = as_points(robots)
    x0 = as_points(x0)[0]
    k = robots.shape[0]
    if z.num_robots != k:
        raise ValueError(f"measurement set is for {z.num_robots} robots, got {k} positions")
    r0 = np.linalg.norm(robots - x0, axis=1)
    total = float(np.sum(range_log_likelihood(z.source_to_robot, r0, env)))
    if k > 1:
        i, j = np.array(robot_pairs(k)).T
        rr = np.linalg.norm(robots[i] - robots[j], axis=1)
        total += float(np.sum(range_log_likelihood(z.robot_to_robot, rr, env)))
    return total


def sample_measurements(
    x0, robots, env: EnvParams, rng: np.random.Generator, cycle: int = 0
) -> MeasurementSet:
    """Draw one measurement per link; always consumes K + K(K-1)/2 normals."""
    robots = as_points(robots)
    x0 = as_points(x0)[0]
    k = robots.shape[0]
    r0 = np.maximum(np.linalg.norm(robots - x0, axis=1), R_FLOOR)
    if k > 1:
        i, j = np.array(robot_pairs(k)).T
        rr = np.maximum(np.linalg.norm(robots[i] - robots[j], axis=1), R_FLOOR)
    else:
        rr = np.empty(0)
    r = np.concatenate([r0, rr])
    z = env.alpha0 + env.alpha * r + np.sqrt(r * env.sigma_z_sq) * rng.standard_normal(r.size)
    return MeasurementSet(z[:k], z[k:], cycle)
