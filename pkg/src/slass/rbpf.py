"""Rao-Blackwellized particle filter over robot and source positions.

Outer particles hypothesize the joint position of all K robots. Each outer
particle carries its own weighted set of source particles, i.e. a particle
approximation of the source posterior conditioned on that robot hypothesis.
All arrays are float64 and vectorised over both particle levels.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from . import _kernels
from .core import EnvParams, ExperimentConfig, MotionParams, as_points
from .measurement import MeasurementSet, range_log_likelihood, robot_pairs


class DegenerateBeliefError(RuntimeError):
    def __init__(self, cycle: int, detail: str = "all particle likelihoods vanished"):
        super().__init__(f"degenerate belief at cycle {cycle}: {detail}")
        self.cycle = cycle


@dataclass(frozen=True)
class RobotParticle:
    robots: np.ndarray  # (K, 2)
    weight: float
    sources: np.ndarray  # (M_s, 2)
    source_weights: np.ndarray  # (M_s,)


@dataclass
class BeliefState:
    robots: np.ndarray  # (M_r, K, 2)
    weights: np.ndarray  # (M_r,)
    sources: np.ndarray  # (M_r, M_s, 2)
    source_weights: np.ndarray  # (M_r, M_s)
    cycle: int = 0

    @property
    def num_robot_particles(self) -> int:
        return self.robots.shape[0]

    @property
    def num_source_particles(self) -> int:
        return self.sources.shape[1]

    @property
    def num_robots(self) -> int:
        return self.robots.shape[1]

    def particle(self, i: int) -> RobotParticle:
        return RobotParticle(
            self.robots[i], float(self.weights[i]), self.sources[i], self.source_weights[i]
        )

    def copy(self) -> "BeliefState":
        return BeliefState(
            self.robots.copy(),
            self.weights.copy(),
            self.sources.copy(),
            self.source_weights.copy(),
            self.cycle,
        )

    def check(self, atol: float = 1e-12) -> None:
        m_r, k, _ = self.robots.shape
        if self.weights.shape != (m_r,) or self.sources.shape[0] != m_r:
            raise ValueError("inconsistent outer particle count")
        if self.source_weights.shape != self.sources.shape[:2]:
            raise ValueError("inconsistent source particle count")
        if abs(self.weights.sum() - 1.0) > atol:
            raise ValueError("outer weights not normalized")
        if np.any(np.abs(self.source_weights.sum(axis=1) - 1.0) > atol):
            raise ValueError("inner weights not normalized")


def init_belief(cfg: ExperimentConfig, rng: np.random.Generator) -> BeliefState:
    """Dirac prior on the robots at their known starts, uniform source prior over the area."""
    m_r, m_s, k = cfg.M_r, cfg.M_s, cfg.num_robots
    starts = as_points(cfg.robot_starts)
    robots = np.broadcast_to(starts, (m_r, k, 2)).copy()
    lo = np.array([cfg.area.xmin, cfg.area.ymin])
    hi = np.array([cfg.area.xmax, cfg.area.ymax])
    sources = lo + (hi - lo) * rng.random((m_r, m_s, 2))
    return BeliefState(
        robots=robots,
        weights=np.full(m_r, 1.0 / m_r),
        sources=sources,
        source_weights=np.full((m_r, m_s), 1.0 / m_s),
        cycle=0,
    )


def predict(
    belief: BeliefState,
    controls: np.ndarray,
    motion: MotionParams,
    rng: np.random.Generator,
    moving: np.ndarray | None = None,
) -> BeliefState:
    """Propagate robot particles through the motion model and jitter source particles.

    ``moving`` masks robots that physically move this cycle; stopped robots get
    neither control nor control error. Noise is drawn for every robot anyway so
    that stream consumption does not depend on the mask.
    """
    m_r, k, _ = belief.robots.shape
    controls = np.asarray(controls, dtype=np.float64).reshape(k, 2)
    noise = np.sqrt(motion.sigma_c_sq) * rng.standard_normal((m_r, k, 2))
    step = controls + noise
    if moving is not None:
        step = step * np.asarray(moving, dtype=bool)[None, :, None]
    jitter = np.sqrt(motion.sigma_s_sq) * rng.standard_normal(belief.sources.shape)
    return BeliefState(
        belief.robots + step,
        belief.weights.copy(),
        belief.sources + jitter,
        belief.source_weights.copy(),
        belief.cycle,
    )


def source_link_loglik(robots: np.ndarray, sources: np.ndarray, z: MeasurementSet, env: EnvParams):
    """Source-robot log-likelihood per (outer, inner) particle: shape (M_r, M_s)."""
    return _kernels.source_link_loglik(
        np.ascontiguousarray(robots, dtype=np.float64),
        np.ascontiguousarray(sources, dtype=np.float64),
        z.source_to_robot,
        env.alpha0,
        env.alpha,
        env.sigma_z_sq,
    )


def robot_link_loglik(robots: np.ndarray, z: MeasurementSet, env: EnvParams):
    """Robot-robot log-likelihood per outer particle: shape (M_r,)."""
    m_r, k, _ = robots.shape
    if k < 2:
        return np.zeros(m_r)
    a, b = np.array(robot_pairs(k)).T
    r = np.linalg.norm(robots[:, a] - robots[:, b], axis=2)
    return range_log_likelihood(z.robot_to_robot, r, env).sum(axis=1)


def update_weights(belief: BeliefState, z: MeasurementSet, env: EnvParams) -> BeliefState:
    """Reweight both levels with the measurement set of the current cycle.

    inner: w_ij <- w_ij * p(z | x_i, s_ij)
    outer: w_i  <- w_i * sum_j w_ij * p(z | x_i, s_ij)
    Both are computed in log-space; the inner marginal uses log-sum-exp.
    """
    if z.num_robots != belief.num_robots:
        raise ValueError("measurement set does not match the number of robots")
    ll = source_link_loglik(belief.robots, belief.sources, z, env)
    ll_rr = robot_link_loglik(belief.robots, z, env)

    with np.errstate(divide="ignore"):
        log_inner = np.log(belief.source_weights) + ll
        log_outer_prev = np.log(belief.weights)
    marginal = logsumexp(log_inner, axis=1)  # log sum_j w_ij p(z_src | .)

    log_outer = log_outer_prev + ll_rr + marginal
    total = logsumexp(log_outer)
    if not np.isfinite(total):
        raise DegenerateBeliefError(z.cycle)
    weights = np.exp(log_outer - total)
    weights /= weights.sum()

    dead = ~np.isfinite(marginal)
    marginal = np.where(dead, 0.0, marginal)
    source_weights = np.exp(log_inner - marginal[:, None])
    # rows whose inner mass vanished already carry zero outer weight
    source_weights[dead] = 1.0
    source_weights /= source_weights.sum(axis=1, keepdims=True)

    return BeliefState(
        belief.robots, weights, belief.sources, source_weights, z.cycle
    )


def effective_sample_size(weights) -> np.ndarray | float:
    """1 / sum(w^2) along the last axis."""
    w = np.asarray(weights, dtype=np.float64)
    ess = 1.0 / np.sum(w * w, axis=-1)
    return float(ess) if np.ndim(ess) == 0 else ess


def systematic_indices(weights: np.ndarray, offsets: np.ndarray) -> np.ndarray:
    """Row-wise systematic resampling.

    ``weights`` has shape (R, M) and ``offsets`` shape (R,) with values in
    [0, 1). Returns ancestor indices of shape (R, M).
    """
    weights = np.atleast_2d(weights)
    n_rows, m = weights.shape
    cum = np.cumsum(weights, axis=1)
    cum /= cum[:, -1:]
    cum[:, -1] = 1.0
    u = (offsets[:, None] + np.arange(m)) / m
    rows = np.arange(n_rows)[:, None]
    # one flat search: shift row r into [r, r+1]
    flat = np.searchsorted((cum + rows).ravel(), (u + rows).ravel(), side="right")
    idx = flat.reshape(n_rows, m) - rows * m
    return np.minimum(idx, m - 1)


def systematic_resample(weights, rng: np.random.Generator) -> np.ndarray:
    w = np.asarray(weights, dtype=np.float64)
    return systematic_indices(w[None, :], rng.random(1))[0]


def resample(belief: BeliefState, threshold: float, rng: np.random.Generator) -> BeliefState:
    """ESS-gated systematic resampling, outer level first, then each inner set.

    Selected outer particles are copied together with their inner sets.
    """
    robots, weights = belief.robots, belief.weights
    sources, source_weights = belief.sources, belief.source_weights
    m_r, m_s = sources.shape[:2]

    if effective_sample_size(weights) < threshold * m_r:
        idx = systematic_resample(weights, rng)
        robots = robots[idx]
        sources = sources[idx]
        source_weights = source_weights[idx]
        weights = np.full(m_r, 1.0 / m_r)
    else:
        robots, weights = robots.copy(), weights.copy()
        sources, source_weights = sources.copy(), source_weights.copy()

    rows = np.flatnonzero(effective_sample_size(source_weights) < threshold * m_s)
    if rows.size:
        idx = systematic_indices(source_weights[rows], rng.random(rows.size))
        sources[rows] = np.take_along_axis(sources[rows], idx[:, :, None], axis=1)
        source_weights[rows] = 1.0 / m_s

    return BeliefState(robots, weights, sources, source_weights, belief.cycle)


def source_estimate(belief: BeliefState) -> np.ndarray:
    """Posterior mean of the source position."""
    inner = np.einsum("ij,ijd->id", belief.source_weights, belief.sources)
    return belief.weights @ inner


def robot_estimate(belief: BeliefState) -> np.ndarray:
    """Posterior mean of each robot position, shape (K, 2).

    Summed as offsets from the heaviest particle so that identical particles
    return their common position exactly.
    """
    ref = belief.robots[int(np.argmax(belief.weights))]
    return ref + np.einsum("i,ikd->kd", belief.weights, belief.robots - ref)
