"""Compiled kernel for the predicted mutual information and its gradient.

For robot particle i with predicted robot positions q_k = x_ik + c_k, source
particle j induces a diagonal Gaussian over the K source-robot ranges with
mean mu_jk = a0 + a*r_jk and variance v_jk = s2*r_jk, r_jk = |s_ij - q_k|.
Per particle the objective is

    H_pair - H_cond + K/2 (1 - ln 2)

where H_pair = -sum_j w_j log sum_l w_l N(mu_j; mu_l, v_j + v_l) and H_cond is
the exact conditional entropy. The constant cancels the pairwise estimator's
single-component offset so that a point-mass source belief scores zero.

Zero-weight components (padding) are skipped.
"""

import math

import numpy as np
from numba import njit

from .core import R_FLOOR

_LOG_2PI = math.log(2.0 * math.pi)
_LOG_2PIE = math.log(2.0 * math.pi * math.e)
_HALF_OFFSET = 0.5 * (1.0 - math.log(2.0))


@njit(cache=True)
def mi_value_grad(robots, weights, sources, source_weights, controls, a0, a, s2, want_grad):
    n_r, k_rob, _ = robots.shape
    m_max = sources.shape[1]
    total = 0.0
    grad = np.zeros((k_rob, 2))

    r = np.empty((m_max, k_rob))
    ux = np.empty((m_max, k_rob))
    uy = np.empty((m_max, k_rob))
    live = np.empty((m_max, k_rob))  # 0 where the range is floored
    mu = np.empty((m_max, k_rob))
    var = np.empty((m_max, k_rob))
    sym = np.empty((m_max, m_max))  # -0.5 * (log prod s + quad), symmetric
    ex = np.empty((m_max, m_max))
    inv_s = np.empty((m_max, m_max, k_rob))
    dif = np.empty((m_max, m_max, k_rob))
    lse = np.empty(m_max)
    g_mu = np.empty((m_max, k_rob))
    g_var = np.empty((m_max, k_rob))
    idx = np.empty(m_max, dtype=np.int64)
    logw = np.empty(m_max)

    for i in range(n_r):
        wi = weights[i]
        if wi == 0.0:
            continue
        w_all = source_weights[i]
        m = 0
        for j in range(m_max):
            if w_all[j] > 0.0:
                idx[m] = j
                logw[m] = math.log(w_all[j])
                m += 1

        for jj in range(m):
            j = idx[jj]
            for k in range(k_rob):
                dx = sources[i, j, 0] - (robots[i, k, 0] + controls[k, 0])
                dy = sources[i, j, 1] - (robots[i, k, 1] + controls[k, 1])
                rr = math.sqrt(dx * dx + dy * dy)
                if rr < R_FLOOR:
                    r[jj, k] = R_FLOOR
                    ux[jj, k] = 0.0
                    uy[jj, k] = 0.0
                    live[jj, k] = 0.0
                else:
                    r[jj, k] = rr
                    # d r / d c_k = (q_k - s) / r
                    ux[jj, k] = -dx / rr
                    uy[jj, k] = -dy / rr
                    live[jj, k] = 1.0
                mu[jj, k] = a0 + a * r[jj, k]
                var[jj, k] = s2 * r[jj, k]

        h_cond = 0.0
        for jj in range(m):
            acc = 0.0
            for k in range(k_rob):
                acc += _LOG_2PIE + math.log(var[jj, k])
            h_cond += w_all[idx[jj]] * 0.5 * acc

        for jj in range(m):
            for ll in range(jj, m):
                quad = 0.0
                prod = 1.0
                for k in range(k_rob):
                    s = var[jj, k] + var[ll, k]
                    d = mu[jj, k] - mu[ll, k]
                    inv = 1.0 / s
                    quad += d * d * inv
                    prod *= s
                    inv_s[jj, ll, k] = inv
                    inv_s[ll, jj, k] = inv
                    dif[jj, ll, k] = d
                    dif[ll, jj, k] = -d
                t = -0.5 * (math.log(prod) + quad)
                sym[jj, ll] = t
                sym[ll, jj] = t

        h_pair = 0.0
        for jj in range(m):
            best = -np.inf
            for ll in range(m):
                v = sym[jj, ll] + logw[ll]
                ex[jj, ll] = v
                if v > best:
                    best = v
            acc = 0.0
            for ll in range(m):
                t = math.exp(ex[jj, ll] - best)
                ex[jj, ll] = t
                acc += t
            lse[jj] = best + math.log(acc)
            # ex now holds w_j * softmax_l
            scale = w_all[idx[jj]] / acc
            for ll in range(m):
                ex[jj, ll] *= scale
            h_pair -= w_all[idx[jj]] * (lse[jj] - 0.5 * k_rob * _LOG_2PI)

        total += wi * (h_pair - h_cond + k_rob * _HALF_OFFSET)

        if not want_grad:
            continue

        for jj in range(m):
            for k in range(k_rob):
                g_mu[jj, k] = 0.0
                g_var[jj, k] = 0.0
        for jj in range(m):
            for ll in range(jj, m):
                b = ex[jj, ll] + ex[ll, jj]
                if ll == jj:
                    for k in range(k_rob):
                        g_var[jj, k] += b * 0.5 * inv_s[jj, jj, k]
                    continue
                for k in range(k_rob):
                    inv = inv_s[jj, ll, k]
                    d = dif[jj, ll, k]
                    gm = b * d * inv
                    gv = b * 0.5 * (inv - d * d * inv * inv)
                    g_mu[jj, k] += gm
                    g_mu[ll, k] -= gm
                    g_var[jj, k] += gv
                    g_var[ll, k] += gv
        for k in range(k_rob):
            gx = 0.0
            gy = 0.0
            for jj in range(m):
                gv = g_var[jj, k] - w_all[idx[jj]] / (2.0 * var[jj, k])
                g_r = live[jj, k] * (a * g_mu[jj, k] + s2 * gv)
                gx += g_r * ux[jj, k]
                gy += g_r * uy[jj, k]
            grad[k, 0] += wi * gx
            grad[k, 1] += wi * gy

    return total, grad


@njit(cache=True)
def source_link_loglik(robots, sources, z, a0, a, s2):
    """sum_k log N(z_k; a0 + a*r_ijk, s2*r_ijk) for every (outer i, inner j)."""
    n_r, m, _ = sources.shape
    k_rob = robots.shape[1]
    out = np.empty((n_r, m))
    for i in range(n_r):
        for j in range(m):
            acc = 0.0
            for k in range(k_rob):
                dx = sources[i, j, 0] - robots[i, k, 0]
                dy = sources[i, j, 1] - robots[i, k, 1]
                rr = max(math.sqrt(dx * dx + dy * dy), R_FLOOR)
                v = s2 * rr
                e = z[k] - (a0 + a * rr)
                acc += _LOG_2PI + math.log(v) + e * e / v
            out[i, j] = -0.5 * acc
    return out
