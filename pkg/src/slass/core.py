"""Domain types, experiment configuration and seeded random streams."""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import NamedTuple, Sequence

import numpy as np

# Range floor (m) applied wherever a distance enters a mean or a variance.
R_FLOOR = 1e-3

ROLES = ("world", "filter", "control")


class Position(NamedTuple):
    x: float
    y: float


class Area(NamedTuple):
    xmin: float
    ymin: float
    xmax: float
    ymax: float

    @property
    def center(self) -> Position:
        return Position(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))

    def contains(self, p) -> bool:
        return self.xmin <= p[0] <= self.xmax and self.ymin <= p[1] <= self.ymax


@dataclass(frozen=True)
class EnvParams:
    """Distance measurement model: z ~ N(alpha0 + alpha*r, r*sigma_z_sq)."""

    alpha0: float = 0.0
    alpha: float = 1.0
    sigma_z_sq: float = 0.1

    def __post_init__(self):
        if not self.sigma_z_sq > 0:
            raise ValueError(f"sigma_z_sq must be > 0, got {self.sigma_z_sq}")
        if not self.alpha > 0:
            raise ValueError(f"alpha must be > 0, got {self.alpha}")


@dataclass(frozen=True)
class MotionParams:
    """Per-axis control error, per-axis source jitter and control step length."""

    sigma_c_sq: float = 0.025
    sigma_s_sq: float = 0.1
    step_len: float = 1.0

    def __post_init__(self):
        if self.sigma_c_sq < 0 or self.sigma_s_sq < 0:
            raise ValueError("motion variances must be >= 0")
        if not self.step_len > 0:
            raise ValueError(f"step_len must be > 0, got {self.step_len}")


@dataclass(frozen=True)
class PlannerParams:
    """Knobs of the projected gradient ascent on predicted mutual information.

    ``mixture_cap`` and ``robot_cap`` bound the number of source components and
    robot particles entering the objective; ``None`` disables a cap.
    """

    step_size: float = 0.2
    max_iters: int = 30
    tol: float = 1e-6
    mixture_cap: int | None = 64
    robot_cap: int | None = 12
    projection_sweeps: int = 50

    def __post_init__(self):
        if self.step_size <= 0 or self.max_iters < 0 or self.tol < 0:
            raise ValueError("invalid planner step size, iteration count or tolerance")


@dataclass(frozen=True)
class ExperimentConfig:
    num_robots: int
    source_true: Position
    robot_starts: tuple[Position, ...]
    area: Area
    env: EnvParams = field(default_factory=EnvParams)
    motion: MotionParams = field(default_factory=MotionParams)
    planner: PlannerParams = field(default_factory=PlannerParams)
    M_r: int = 100
    M_s: int = 100
    d_min: float = 4.0
    arrive_radius: float = 5.0
    max_cycles: int = 500
    ess_threshold: float = 0.5
    seed: int = 0
    num_trials: int = 50

    def __post_init__(self):
        object.__setattr__(self, "source_true", Position(*map(float, self.source_true)))
        object.__setattr__(
            self, "robot_starts", tuple(Position(*map(float, p)) for p in self.robot_starts)
        )
        object.__setattr__(self, "area", Area(*map(float, self.area)))
        self.validate()

    def validate(self) -> None:
        if self.num_robots < 1:
            raise ValueError("num_robots must be >= 1")
        if len(self.robot_starts) != self.num_robots:
            raise ValueError(
                f"expected {self.num_robots} robot starts, got {len(self.robot_starts)}"
            )
        for p in (self.source_true, *self.robot_starts):
            if not all(math.isfinite(v) for v in p):
                raise ValueError(f"non-finite position {p}")
        if not self.area.contains(self.source_true):
            raise ValueError(f"source {self.source_true} lies outside area {self.area}")
        if self.M_r < 1 or self.M_s < 1:
            raise ValueError("particle counts must be >= 1")
        if not 0 < self.ess_threshold <= 1:
            raise ValueError("ess_threshold must lie in (0, 1]")
        if self.max_cycles < 1 or self.num_trials < 1:
            raise ValueError("max_cycles and num_trials must be >= 1")
        starts = np.asarray(self.robot_starts, dtype=float)
        for a in range(self.num_robots):
            for b in range(a + 1, self.num_robots):
                if np.linalg.norm(starts[a] - starts[b]) < self.d_min:
                    raise ValueError(f"robots {a} and {b} start closer than d_min")

    def with_(self, **changes) -> "ExperimentConfig":
        return replace(self, **changes)


PUBLISHED_STARTS = (Position(0.0, 0.0), Position(5.0, 0.0), Position(0.0, 5.0))
PUBLISHED_PARTICLES = {1: (30, 30), 2: (100, 100), 3: (300, 300)}


def published_config(num_robots: int = 2) -> ExperimentConfig:
    """Simulation setup used for the published experiments with K robots (K in 1..3)."""
    if num_robots not in PUBLISHED_PARTICLES:
        raise ValueError(f"published configuration defined for 1..3 robots, got {num_robots}")
    m_r, m_s = PUBLISHED_PARTICLES[num_robots]
    return ExperimentConfig(
        num_robots=num_robots,
        source_true=Position(100.0, 100.0),
        robot_starts=PUBLISHED_STARTS[:num_robots],
        area=Area(0.0, 0.0, 150.0, 150.0),
        env=EnvParams(alpha0=0.0, alpha=1.0, sigma_z_sq=0.1),
        # E||n||^2 = 2 * sigma_c_sq = 0.05
        motion=MotionParams(sigma_c_sq=0.025, sigma_s_sq=0.1, step_len=1.0),
        M_r=m_r,
        M_s=m_s,
        d_min=4.0,
        arrive_radius=5.0,
        max_cycles=500,
        ess_threshold=0.5,
        seed=0,
        num_trials=50,
    )


def rng_stream(seed: int, trial: int, role: str) -> np.random.Generator:
    """Independent PCG64 stream keyed by (seed, trial, role)."""
    if role not in ROLES:
        raise ValueError(f"role must be one of {ROLES}, got {role!r}")
    ss = np.random.SeedSequence([int(seed) & 0xFFFFFFFFFFFFFFFF, int(trial), ROLES.index(role)])
    return np.random.Generator(np.random.PCG64(ss))


def as_points(points: Sequence) -> np.ndarray:
    """Stack positions into a float64 array of shape (n, 2)."""
    arr = np.asarray(points, dtype=np.float64).reshape(-1, 2)
    if not np.all(np.isfinite(arr)):
        raise ValueError("positions must be finite")
    return arr


def check_controls(controls: np.ndarray, active: np.ndarray, step_len: float, atol: float = 1e-9):
    """Raise ValueError unless active rows have norm step_len and the rest are zero."""
    norms = np.linalg.norm(controls, axis=1)
    active = np.asarray(active, dtype=bool)
    if np.any(np.abs(norms[active] - step_len) > atol):
        raise ValueError(f"active control norms {norms[active]} != {step_len}")
    if np.any(norms[~active] != 0.0):
        raise ValueError("arrived robots must have zero control")
