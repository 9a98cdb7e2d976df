"""Control policies: the information-theoretic scheme and the two benchmarks.

Every policy owns its belief representation and exposes the same per-cycle
hooks (update, estimates, control, predict) so the simulator can run them on
identical world realizations.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass

import numpy as np

from .core import ExperimentConfig, as_points
from .infocontrol import ControlResult, heading_controls, project_controls, solve_control
from .measurement import MeasurementSet
from .rbpf import (
    BeliefState,
    DegenerateBeliefError,
    effective_sample_size,
    init_belief,
    predict,
    resample,
    robot_estimate,
    robot_link_loglik,
    source_estimate,
    source_link_loglik,
    systematic_resample,
    update_weights,
)


class PolicyKind(str, enum.Enum):
    PROPOSED = "proposed"
    FLOCKING = "flocking"
    TWO_STAGE = "two_stage"


def flocking_control(belief: BeliefState, cfg: ExperimentConfig, active) -> ControlResult:
    """Head every active robot straight at the estimated source, then enforce d_min."""
    active = np.asarray(active, bool)
    c = heading_controls(belief, cfg.motion.step_len, active)
    moving = active & (np.linalg.norm(c, axis=1) > 0)
    proj = project_controls(
        c, robot_estimate(belief), cfg.d_min, cfg.motion.step_len, moving, cfg.planner.projection_sweeps
    )
    return ControlResult(proj.controls, math.nan, 0, proj.feasible)


@dataclass
class TwoStageBelief:
    """Separate robot-only and source-only particle filters."""

    robots: np.ndarray  # (M_r, K, 2)
    robot_weights: np.ndarray  # (M_r,)
    sources: np.ndarray  # (M_s, 2)
    source_weights: np.ndarray  # (M_s,)
    cycle: int = 0

    def robot_estimate(self) -> np.ndarray:
        return np.einsum("i,ikd->kd", self.robot_weights, self.robots)

    def source_estimate(self) -> np.ndarray:
        return self.source_weights @ self.sources

    def as_rbpf(self) -> BeliefState:
        """Single-robot-particle view at the Stage-1 estimate, for planning."""
        return BeliefState(
            self.robot_estimate()[None],
            np.ones(1),
            self.sources[None],
            self.source_weights[None],
            self.cycle,
        )


def init_two_stage(cfg: ExperimentConfig, rng: np.random.Generator) -> TwoStageBelief:
    k = cfg.num_robots
    starts = as_points(cfg.robot_starts)
    lo = np.array([cfg.area.xmin, cfg.area.ymin])
    hi = np.array([cfg.area.xmax, cfg.area.ymax])
    return TwoStageBelief(
        robots=np.broadcast_to(starts, (cfg.M_r, k, 2)).copy(),
        robot_weights=np.full(cfg.M_r, 1.0 / cfg.M_r),
        sources=lo + (hi - lo) * rng.random((cfg.M_s, 2)),
        source_weights=np.full(cfg.M_s, 1.0 / cfg.M_s),
    )


def _reweight(weights, loglik, cycle, stage):
    with np.errstate(divide="ignore"):
        logw = np.log(weights) + loglik
    top = np.max(logw)
    if not np.isfinite(top):
        raise DegenerateBeliefError(cycle, f"stage {stage}: all particle likelihoods vanished")
    w = np.exp(logw - top)
    return w / w.sum()


def _maybe_resample(weights, threshold, rng):
    m = weights.size
    if effective_sample_size(weights) < threshold * m:
        return systematic_resample(weights, rng), np.full(m, 1.0 / m)
    return None, weights


def two_stage_update(
    belief: TwoStageBelief, z: MeasurementSet, cfg: ExperimentConfig, rng: np.random.Generator
) -> TwoStageBelief:
    """Stage 1 on robot-robot links, then Stage 2 on source links at the Stage-1 estimate."""
    robots = belief.robots
    w_r = _reweight(belief.robot_weights, robot_link_loglik(robots, z, cfg.env), z.cycle, 1)
    idx, w_r = _maybe_resample(w_r, cfg.ess_threshold, rng)
    if idx is not None:
        robots = robots[idx]
    x_hat = np.einsum("i,ikd->kd", w_r, robots)

    sources = belief.sources
    ll = source_link_loglik(x_hat[None], sources[None], z, cfg.env)[0]
    w_s = _reweight(belief.source_weights, ll, z.cycle, 2)
    idx, w_s = _maybe_resample(w_s, cfg.ess_threshold, rng)
    if idx is not None:
        sources = sources[idx]
    return TwoStageBelief(robots, w_r, sources, w_s, z.cycle)


def two_stage_cycle(
    belief: TwoStageBelief,
    z: MeasurementSet,
    cfg: ExperimentConfig,
    active,
    rng: np.random.Generator,
) -> tuple[TwoStageBelief, ControlResult]:
    """One filtering + planning cycle of the two-stage benchmark.

    Planning uses the proposed objective with a single robot hypothesis at the
    Stage-1 estimate, i.e. the estimated robot positions are taken as truth.
    """
    belief = two_stage_update(belief, z, cfg, rng)
    return belief, solve_control(belief.as_rbpf(), cfg, active, rng)


def two_stage_predict(
    belief: TwoStageBelief, controls, cfg: ExperimentConfig, rng: np.random.Generator, moving=None
) -> TwoStageBelief:
    m = cfg.motion
    noise = math.sqrt(m.sigma_c_sq) * rng.standard_normal(belief.robots.shape)
    step = np.asarray(controls)[None] + noise
    if moving is not None:
        step = step * np.asarray(moving, bool)[None, :, None]
    jitter = math.sqrt(m.sigma_s_sq) * rng.standard_normal(belief.sources.shape)
    return TwoStageBelief(
        belief.robots + step,
        belief.robot_weights.copy(),
        belief.sources + jitter,
        belief.source_weights.copy(),
        belief.cycle,
    )


class Policy:
    """Per-cycle hooks shared by the RBPF-based policies."""

    kind: PolicyKind

    def init_belief(self, cfg, rng):
        return init_belief(cfg, rng)

    def update(self, belief, z, cfg, rng):
        belief = update_weights(belief, z, cfg.env)
        return resample(belief, cfg.ess_threshold, rng)

    def estimates(self, belief):
        return source_estimate(belief), robot_estimate(belief)

    def ess(self, belief) -> float:
        return effective_sample_size(belief.weights)

    def control(self, belief, cfg, active, rng) -> ControlResult:
        raise NotImplementedError

    def predict(self, belief, controls, cfg, rng, moving):
        return predict(belief, controls, cfg.motion, rng, moving)


class ProposedPolicy(Policy):
    kind = PolicyKind.PROPOSED

    def control(self, belief, cfg, active, rng):
        return solve_control(belief, cfg, active, rng)


class FlockingPolicy(Policy):
    kind = PolicyKind.FLOCKING

    def control(self, belief, cfg, active, rng):
        return flocking_control(belief, cfg, active)


class TwoStagePolicy(Policy):
    kind = PolicyKind.TWO_STAGE

    def init_belief(self, cfg, rng):
        return init_two_stage(cfg, rng)

    def update(self, belief, z, cfg, rng):
        return two_stage_update(belief, z, cfg, rng)

    def estimates(self, belief):
        return belief.source_estimate(), belief.robot_estimate()

    def ess(self, belief) -> float:
        return effective_sample_size(belief.robot_weights)

    def control(self, belief, cfg, active, rng):
        return solve_control(belief.as_rbpf(), cfg, active, rng)

    def predict(self, belief, controls, cfg, rng, moving):
        return two_stage_predict(belief, controls, cfg, rng, moving)


_POLICIES = {
    PolicyKind.PROPOSED: ProposedPolicy,
    PolicyKind.FLOCKING: FlockingPolicy,
    PolicyKind.TWO_STAGE: TwoStagePolicy,
}


def make_policy(kind) -> Policy:
    return _POLICIES[PolicyKind(kind)]()
