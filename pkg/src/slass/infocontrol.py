"""Information-theoretic control: predicted mutual information and its ascent.

The objective is the particle-weighted mutual information between the source
position and the next cycle's source-robot range measurements, conditioned on
each robot particle. For a fixed robot particle the predicted measurement
density is a Gaussian mixture with one diagonal component per source
particle. Controls are chosen by projected gradient ascent under unit-norm
and pairwise-separation constraints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy.special import logsumexp

from ._kernels import mi_value_grad
from .core import R_FLOOR, EnvParams, ExperimentConfig, PlannerParams
from .measurement import robot_pairs
from .rbpf import BeliefState, RobotParticle, robot_estimate, source_estimate

_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class GaussianMixture:
    """Diagonal Gaussian mixture over the K source-robot measurements."""

    weights: np.ndarray  # (M,)
    means: np.ndarray  # (M, K)
    variances: np.ndarray  # (M, K)

    def __post_init__(self):
        if np.any(self.variances <= 0):
            raise ValueError("mixture variances must be positive")
        if abs(self.weights.sum() - 1.0) > 1e-9:
            raise ValueError("mixture weights must sum to 1")

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def __len__(self):
        return self.weights.size

    def log_pdf(self, z: np.ndarray) -> np.ndarray:
        """Log density at points z of shape (S, K)."""
        z = np.atleast_2d(z)
        d = z[:, None, :] - self.means[None]
        comp = -0.5 * np.sum(_LOG_2PI + np.log(self.variances) + d * d / self.variances, axis=2)
        with np.errstate(divide="ignore"):
            return logsumexp(comp + np.log(self.weights), axis=1)

    def sample(self, n: int, rng: np.random.Generator) -> np.ndarray:
        idx = rng.choice(self.weights.size, size=n, p=self.weights)
        return self.means[idx] + np.sqrt(self.variances[idx]) * rng.standard_normal(
            (n, self.dim)
        )


def build_mixture(particle: RobotParticle, controls, env: EnvParams) -> GaussianMixture:
    """Predicted source-robot measurement mixture for one robot particle."""
    controls = np.asarray(controls, dtype=np.float64)
    if controls.shape != particle.robots.shape:
        raise ValueError(f"controls shape {controls.shape} != robots {particle.robots.shape}")
    q = particle.robots + controls
    r = np.linalg.norm(particle.sources[:, None, :] - q[None], axis=2)
    r = np.maximum(r, R_FLOOR)
    w = np.asarray(particle.source_weights, dtype=np.float64)
    return GaussianMixture(w / w.sum(), env.alpha0 + env.alpha * r, env.sigma_z_sq * r)


def gaussian_conditional_entropy(mix: GaussianMixture) -> float:
    """Weighted mean of the component entropies, in nats."""
    k = mix.dim
    comp = 0.5 * (k * math.log(2 * math.pi * math.e) + np.sum(np.log(mix.variances), axis=1))
    return float(mix.weights @ comp)


def mixture_entropy_pairwise(mix: GaussianMixture) -> float:
    """Pairwise-convolution entropy approximation

        -sum_j w_j log sum_l w_l N(mu_j; mu_l, diag(v_j + v_l)).

    Exact up to a known offset: for a single component it returns
    0.5 * log((2 pi)^K prod(2 v)), i.e. K/2 * (ln 2 - 1) nats from the truth.
    """
    s = mix.variances[:, None, :] + mix.variances[None, :, :]
    d = mix.means[:, None, :] - mix.means[None, :, :]
    log_n = -0.5 * np.sum(_LOG_2PI + np.log(s) + d * d / s, axis=2)
    with np.errstate(divide="ignore"):
        inner = logsumexp(log_n + np.log(mix.weights)[None, :], axis=1)
    nz = mix.weights > 0
    return float(-mix.weights[nz] @ inner[nz])


def mixture_entropy_montecarlo(
    mix: GaussianMixture, rng: np.random.Generator, n_samples: int = 50_000, chunk: int = 100_000
) -> float:
    """Sample estimate -(1/S) sum_s log p(z_s) of the mixture entropy."""
    total = 0.0
    done = 0
    while done < n_samples:
        n = min(chunk, n_samples - done)
        total += float(np.sum(mix.log_pdf(mix.sample(n, rng))))
        done += n
    return -total / n_samples


# Single-component offset of the pairwise estimator, per measurement dimension.
PAIRWISE_OFFSET = 0.5 * (math.log(2.0) - 1.0)


def systematic_subset(weights: np.ndarray, cap: int | None) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic weight-proportional subset of at most ``cap`` members.

    Returns (indices, weights). Members drawn more than once are merged, so
    weights are multiples of 1/cap. With no cap, or fewer members than the cap,
    all positive-weight members are returned unchanged.
    """
    weights = np.asarray(weights, dtype=np.float64)
    if cap is None or weights.size <= cap:
        idx = np.flatnonzero(weights > 0)
        w = weights[idx]
        return idx, w / w.sum()
    cum = np.cumsum(weights)
    cum /= cum[-1]
    u = (np.arange(cap) + 0.5) / cap
    picks = np.minimum(np.searchsorted(cum, u, side="right"), weights.size - 1)
    idx, counts = np.unique(picks, return_counts=True)
    return idx, counts / cap


@dataclass
class MIObjectiveContext:
    """Frozen belief snapshot that the control objective is evaluated on.

    Inner sets are padded to a common length with zero-weight members when
    caps produce ragged subsets.
    """

    robots: np.ndarray  # (R, K, 2)
    weights: np.ndarray  # (R,)
    sources: np.ndarray  # (R, M, 2)
    source_weights: np.ndarray  # (R, M)
    controls: np.ndarray  # (K, 2)
    env: EnvParams
    active: np.ndarray  # (K,) bool

    @classmethod
    def from_belief(
        cls,
        belief: BeliefState,
        controls,
        env: EnvParams,
        active=None,
        mixture_cap: int | None = None,
        robot_cap: int | None = None,
    ) -> "MIObjectiveContext":
        k = belief.num_robots
        active = np.ones(k, bool) if active is None else np.asarray(active, bool)
        controls = np.asarray(controls, dtype=np.float64).reshape(k, 2)
        outer_idx, outer_w = systematic_subset(belief.weights, robot_cap)
        subsets = [systematic_subset(belief.source_weights[i], mixture_cap) for i in outer_idx]
        m = max(len(idx) for idx, _ in subsets)
        sources = np.zeros((outer_idx.size, m, 2))
        sweights = np.zeros((outer_idx.size, m))
        for row, (i, (idx, w)) in enumerate(zip(outer_idx, subsets)):
            sources[row, : idx.size] = belief.sources[i, idx]
            # pad with a real member so every padded slot has a finite range
            sources[row, idx.size :] = belief.sources[i, idx[0]]
            sweights[row, : idx.size] = w
        return cls(
            robots=belief.robots[outer_idx].copy(),
            weights=outer_w,
            sources=sources,
            source_weights=sweights,
            controls=controls,
            env=env,
            active=active,
        )

    def with_controls(self, controls) -> "MIObjectiveContext":
        return MIObjectiveContext(
            self.robots,
            self.weights,
            self.sources,
            self.source_weights,
            np.asarray(controls, dtype=np.float64).reshape(self.controls.shape),
            self.env,
            self.active,
        )

    def particle(self, i: int) -> RobotParticle:
        keep = self.source_weights[i] > 0
        return RobotParticle(
            self.robots[i], float(self.weights[i]), self.sources[i, keep], self.source_weights[i, keep]
        )

    def value_and_gradient(self, want_grad: bool = True) -> tuple[float, np.ndarray]:
        """Compiled objective (pairwise estimator) and its gradient w.r.t. controls."""
        env = self.env
        value, grad = mi_value_grad(
            self.robots,
            self.weights,
            self.sources,
            self.source_weights,
            self.controls,
            env.alpha0,
            env.alpha,
            env.sigma_z_sq,
            want_grad,
        )
        grad[~self.active] = 0.0
        return value, grad


def predicted_mutual_information(
    ctx: MIObjectiveContext,
    estimator: str = "pairwise",
    rng: np.random.Generator | None = None,
    n_samples: int = 50_000,
) -> float:
    """Particle-weighted predicted conditional mutual information, in nats.

    Evaluated mixture by mixture as H(z) - H(z | source). With the pairwise
    estimator H(z) is offset-corrected so that a collapsed source belief
    gives exactly zero; ``estimator="montecarlo"`` samples H(z) instead.
    """
    total = 0.0
    for i in range(ctx.weights.size):
        p = ctx.particle(i)
        mix = build_mixture(p, ctx.controls, ctx.env)
        h_cond = gaussian_conditional_entropy(mix)
        if estimator == "pairwise":
            h = mixture_entropy_pairwise(mix) - mix.dim * PAIRWISE_OFFSET
        elif estimator == "montecarlo":
            if rng is None:
                raise ValueError("Monte-Carlo estimator needs a random stream")
            h = mixture_entropy_montecarlo(mix, rng, n_samples)
        else:
            raise ValueError(f"unknown estimator {estimator!r}")
        total += p.weight * (h - h_cond)
    return total


def mi_gradient(ctx: MIObjectiveContext) -> np.ndarray:
    """Analytic gradient of the pairwise objective w.r.t. each robot's control, (K, 2)."""
    return ctx.value_and_gradient(True)[1]


class ProjectionResult(NamedTuple):
    controls: np.ndarray
    feasible: bool
    min_gap: float


def _pair_gaps(controls, positions, pairs):
    if not pairs:
        return np.empty(0)
    a, b = np.array(pairs).T
    q = positions + controls
    return np.linalg.norm(q[a] - q[b], axis=1)


def _rotate(v, angle):
    c, s = math.cos(angle), math.sin(angle)
    return np.array([c * v[0] - s * v[1], s * v[0] + c * v[1]])


def _signed_angle(v, target):
    return math.atan2(v[0] * target[1] - v[1] * target[0], v[0] * target[0] + v[1] * target[1])


def _repair_pair(pa, pb, ca, cb, move_a, move_b, d_min):
    """Rotate ca toward, and cb away from, the a-b separation direction by equal
    angles, using the smallest angle that restores d_min (bisection)."""
    sep = pa - pb
    n = np.linalg.norm(sep)
    u = sep / n if n > 1e-12 else np.array([1.0, 0.0])
    phi_a = _signed_angle(ca, u) if move_a else 0.0
    phi_b = _signed_angle(cb, -u) if move_b else 0.0

    def at(t):
        ra = _rotate(ca, math.copysign(min(t, abs(phi_a)), phi_a)) if move_a else ca
        rb = _rotate(cb, math.copysign(min(t, abs(phi_b)), phi_b)) if move_b else cb
        return ra, rb

    def gap(t):
        ra, rb = at(t)
        return np.linalg.norm((pa + ra) - (pb + rb))

    hi = max(abs(phi_a), abs(phi_b))
    target = d_min + 1e-9
    if gap(hi) < target:
        return at(hi)
    lo = 0.0
    for _ in range(60):
        mid = 0.5 * (lo + hi)
        if gap(mid) >= target:
            hi = mid
        else:
            lo = mid
    return at(hi)


def project_controls(
    candidate,
    positions,
    d_min: float,
    step_len: float,
    active=None,
    sweeps: int = 50,
) -> ProjectionResult:
    """Project controls onto {|c_k| = step_len, pairwise predicted gaps >= d_min}.

    Norms are fixed first; violated pairs are then repaired by rotating both
    controls apart, sweeping over pairs until feasible. If no feasible iterate
    is reached the one with the largest minimum gap is returned and
    ``feasible`` is False.
    """
    c = np.array(candidate, dtype=np.float64).reshape(-1, 2)
    positions = np.asarray(positions, dtype=np.float64).reshape(-1, 2)
    k = c.shape[0]
    active = np.ones(k, bool) if active is None else np.asarray(active, bool)
    c[~active] = 0.0
    norms = np.linalg.norm(c, axis=1)
    for i in np.flatnonzero(active):
        c[i] = c[i] * (step_len / norms[i]) if norms[i] > 1e-12 else (step_len, 0.0)

    pairs = [(a, b) for a, b in robot_pairs(k) if active[a] or active[b]]
    gaps = _pair_gaps(c, positions, pairs)
    min_gap = float(gaps.min()) if gaps.size else math.inf
    if min_gap >= d_min:
        return ProjectionResult(c, True, min_gap)

    best, best_gap = c.copy(), min_gap
    for _ in range(sweeps):
        for a, b in pairs:
            qa, qb = positions[a] + c[a], positions[b] + c[b]
            if np.linalg.norm(qa - qb) >= d_min:
                continue
            c[a], c[b] = _repair_pair(
                positions[a], positions[b], c[a], c[b], active[a], active[b], d_min
            )
        min_gap = float(_pair_gaps(c, positions, pairs).min())
        if min_gap >= d_min:
            return ProjectionResult(c, True, min_gap)
        if min_gap > best_gap:
            best, best_gap = c.copy(), min_gap
    return ProjectionResult(best, False, best_gap)


class ControlResult(NamedTuple):
    controls: np.ndarray
    objective: float
    iterations: int
    feasible: bool


def heading_controls(belief: BeliefState, step_len: float, active) -> np.ndarray:
    """Unit-norm controls from each estimated robot position toward the estimated source.

    Robots already at the estimate (within 1e-9 m) get a zero control.
    """
    x_hat = robot_estimate(belief)
    d = source_estimate(belief)[None, :] - x_hat
    n = np.linalg.norm(d, axis=1)
    c = np.zeros_like(d)
    ok = np.asarray(active, bool) & (n > 1e-9)
    c[ok] = step_len * d[ok] / n[ok, None]
    return c


def solve_control(
    belief: BeliefState,
    cfg: ExperimentConfig,
    active=None,
    rng: np.random.Generator | None = None,
    planner: PlannerParams | None = None,
) -> ControlResult:
    """Projected gradient ascent on the predicted mutual information.

    Starts from the heading toward the estimated source. Each iteration takes
    a normalized gradient step of length ``step_size`` and projects; a step
    that does not improve the objective halves the step length instead of
    being accepted. Stops after ``max_iters`` evaluations or once an accepted
    step improves by less than ``tol``. The best feasible iterate is returned.
    """
    planner = planner or cfg.planner
    k = belief.num_robots
    active = np.ones(k, bool) if active is None else np.asarray(active, bool)
    x_hat = robot_estimate(belief)
    step_len = cfg.motion.step_len

    c0 = heading_controls(belief, step_len, active)
    stuck = active & (np.linalg.norm(c0, axis=1) == 0.0)
    c0[stuck] = (step_len, 0.0)
    ctx = MIObjectiveContext.from_belief(
        belief, c0, cfg.env, active, planner.mixture_cap, planner.robot_cap
    )

    def project(c):
        return project_controls(c, x_hat, cfg.d_min, step_len, active, planner.projection_sweeps)

    proj = project(c0)
    c = proj.controls
    f, g = ctx.with_controls(c).value_and_gradient()
    best = (proj.feasible, f, c)
    if not active.any():
        return ControlResult(c, f, 0, proj.feasible)

    step = planner.step_size
    iters = 0
    while iters < planner.max_iters:
        gn = float(np.linalg.norm(g))
        if gn < 1e-12:
            break
        iters += 1
        proj = project(c + step * g / gn)
        f_new, g_new = ctx.with_controls(proj.controls).value_and_gradient()
        if f_new > f:
            improvement = f_new - f
            c, f, g = proj.controls, f_new, g_new
            if (proj.feasible, f) > best[:2]:
                best = (proj.feasible, f, c)
            if improvement < planner.tol:
                break
        else:
            step *= 0.5
            if step < 1e-4:
                break
    feasible, f, c = best
    return ControlResult(c, f, iters, feasible)
