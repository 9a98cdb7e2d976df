"""Ground-truth world and the per-cycle loop.

Cycle order: measure, reweight, resample, plan, move, predict. The world
stream is consumed identically by every policy: K + K(K-1)/2 normals for the
measurements and 2K normals for the control error, each cycle.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .core import ExperimentConfig, as_points, rng_stream
from .measurement import robot_pairs, sample_measurements
from .policies import Policy, make_policy
from .rbpf import DegenerateBeliefError

log = logging.getLogger(__name__)

CONSTRAINT_TOL = 1e-6
NORM_TOL = 1e-9


@dataclass
class WorldState:
    true_source: np.ndarray  # (2,)
    true_robots: np.ndarray  # (K, 2)
    arrived: np.ndarray  # (K,) bool
    cycle: int = 0


@dataclass(frozen=True)
class CycleRecord:
    cycle: int
    true_robots: np.ndarray
    true_source: np.ndarray
    source_estimate: np.ndarray
    robot_estimates: np.ndarray
    control: np.ndarray
    distances: np.ndarray  # true robot-source distances after this cycle's move
    objective: float
    ess_outer: float
    active: np.ndarray
    min_gap: float  # smallest predicted gap between estimated robots, pairs with a mover
    constraint_ok: bool

    @property
    def source_error(self) -> float:
        return float(np.linalg.norm(self.source_estimate - self.true_source))


@dataclass
class Streams:
    world: np.random.Generator
    filter: np.random.Generator
    control: np.random.Generator

    @classmethod
    def for_trial(cls, seed: int, trial: int) -> "Streams":
        return cls(*(rng_stream(seed, trial, role) for role in ("world", "filter", "control")))


@dataclass
class TrialResult:
    trial: int
    records: list[CycleRecord]
    termination: str  # all_arrived | max_cycles | aborted
    final_robots: np.ndarray
    message: str = ""
    max_cycles: int = field(default=0, repr=False)

    @property
    def num_cycles(self) -> int:
        return len(self.records)

    def _clamp(self, values: list[float] | np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=np.float64)
        out = np.empty(self.max_cycles)
        if values.size == 0:
            out.fill(np.nan)
            return out
        out[: values.size] = values
        out[values.size :] = values[-1]
        return out

    def error_series(self) -> np.ndarray:
        """Source-estimate error per cycle, extended to max_cycles with the last value."""
        return self._clamp([r.source_error for r in self.records])

    def distance_series(self, robot: int = 0) -> np.ndarray:
        """True distance of one robot to the source per cycle, extended likewise."""
        return self._clamp([r.distances[robot] for r in self.records])

    @property
    def constraint_violations(self) -> int:
        return sum(not r.constraint_ok for r in self.records)


def init_world(cfg: ExperimentConfig) -> WorldState:
    k = cfg.num_robots
    return WorldState(
        true_source=np.asarray(cfg.source_true, dtype=np.float64),
        true_robots=as_points(cfg.robot_starts).copy(),
        arrived=np.zeros(k, bool),
        cycle=0,
    )


def check_executed_control(controls, positions, active, d_min, step_len):
    """Norm and separation check on an executed control; returns (ok, min_gap)."""
    norms = np.linalg.norm(controls, axis=1)
    ok = bool(np.all(np.abs(norms[active] - step_len) <= NORM_TOL))
    ok &= bool(np.all(norms[~active] == 0.0))
    q = positions + controls
    gaps = [
        np.linalg.norm(q[a] - q[b])
        for a, b in robot_pairs(len(active))
        if active[a] or active[b]
    ]
    min_gap = float(min(gaps)) if gaps else math.inf
    ok &= min_gap >= d_min - CONSTRAINT_TOL
    return ok, min_gap


def step(world: WorldState, belief, policy: Policy, cfg: ExperimentConfig, streams: Streams):
    """Advance world and belief by one control cycle; returns (world, belief, record)."""
    n = world.cycle + 1
    z = sample_measurements(world.true_source, world.true_robots, cfg.env, streams.world, cycle=n)

    belief = policy.update(belief, z, cfg, streams.filter)
    src_hat, rob_hat = policy.estimates(belief)

    active = ~world.arrived
    result = policy.control(belief, cfg, active, streams.control)
    controls = np.array(result.controls, dtype=np.float64)
    controls[~active] = 0.0
    ok, min_gap = check_executed_control(controls, rob_hat, active, cfg.d_min, cfg.motion.step_len)
    if not ok:
        log.warning("cycle %d: executed control violates constraints (min gap %.6f)", n, min_gap)

    noise = math.sqrt(cfg.motion.sigma_c_sq) * streams.world.standard_normal(world.true_robots.shape)
    moved = world.true_robots + (controls + noise) * active[:, None]
    distances = np.linalg.norm(moved - world.true_source, axis=1)
    arrived = world.arrived | (distances <= cfg.arrive_radius)
    new_world = WorldState(world.true_source, moved, arrived, n)

    record = CycleRecord(
        cycle=n,
        true_robots=world.true_robots.copy(),
        true_source=world.true_source.copy(),
        source_estimate=np.asarray(src_hat, dtype=np.float64),
        robot_estimates=np.asarray(rob_hat, dtype=np.float64),
        control=controls,
        distances=distances,
        objective=float(result.objective),
        ess_outer=float(policy.ess(belief)),
        active=active.copy(),
        min_gap=min_gap,
        constraint_ok=ok,
    )

    belief = policy.predict(belief, controls, cfg, streams.filter, active)
    return new_world, belief, record


def run_trial(cfg: ExperimentConfig, policy, trial: int) -> TrialResult:
    """Run one trial until every robot has arrived or max_cycles is reached."""
    policy = policy if isinstance(policy, Policy) else make_policy(policy)
    streams = Streams.for_trial(cfg.seed, trial)
    world = init_world(cfg)
    belief = policy.init_belief(cfg, streams.filter)
    records: list[CycleRecord] = []
    termination, message = "max_cycles", ""
    while world.cycle < cfg.max_cycles:
        try:
            world, belief, record = step(world, belief, policy, cfg, streams)
        except DegenerateBeliefError as exc:
            termination, message = "aborted", str(exc)
            log.warning("trial %d aborted: %s", trial, exc)
            break
        records.append(record)
        if world.arrived.all():
            termination = "all_arrived"
            break
    return TrialResult(
        trial=trial,
        records=records,
        termination=termination,
        final_robots=world.true_robots.copy(),
        message=message,
        max_cycles=cfg.max_cycles,
    )
