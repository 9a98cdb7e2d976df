"""Shared random-instance builders for the objective and gradient tests."""

import numpy as np

from slass.core import EnvParams
from slass.infocontrol import MIObjectiveContext
from slass.rbpf import BeliefState

ENV = EnvParams(0.0, 1.0, 0.1)
STARTS = np.array([[0.0, 0.0], [5.0, 0.0], [0.0, 5.0]])


def random_belief(rng, k, m_r, m_s, robot_spread=1.0, source_spread=15.0):
    robots = STARTS[:k] + robot_spread * rng.standard_normal((m_r, k, 2))
    center = rng.uniform(15.0, 40.0, size=2)
    sources = center + source_spread * rng.standard_normal((m_r, m_s, 2))
    w = rng.random(m_r) + 0.05
    sw = rng.random((m_r, m_s)) + 0.05
    return BeliefState(robots, w / w.sum(), sources, sw / sw.sum(axis=1, keepdims=True))


def random_controls(rng, k):
    ang = rng.uniform(0, 2 * np.pi, size=k)
    return np.stack([np.cos(ang), np.sin(ang)], axis=1)


def random_context(rng, k, m_r, m_s, env=ENV):
    belief = random_belief(rng, k, m_r, m_s)
    return MIObjectiveContext.from_belief(
        belief, random_controls(rng, k), env, mixture_cap=None, robot_cap=None
    )


def fd_gradient(ctx, h=1e-5):
    """Central finite differences of the objective w.r.t. each control coordinate."""
    c = ctx.controls
    g = np.zeros_like(c)
    for k in range(c.shape[0]):
        for d in range(2):
            cp, cm = c.copy(), c.copy()
            cp[k, d] += h
            cm[k, d] -= h
            fp = ctx.with_controls(cp).value_and_gradient(False)[0]
            fm = ctx.with_controls(cm).value_and_gradient(False)[0]
            g[k, d] = (fp - fm) / (2 * h)
    return g


def gradient_rel_error(ctx, h=1e-5):
    g = ctx.value_and_gradient(True)[1]
    fd = fd_gradient(ctx, h)
    scale = max(np.linalg.norm(fd), np.linalg.norm(g))
    if scale < 1e-9:
        return 0.0
    return float(np.linalg.norm(g - fd) / scale)
