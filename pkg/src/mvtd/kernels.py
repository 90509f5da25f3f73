"""Compiled inner loop of the critic.

The kernel consumes pre-drawn uniforms so that the random stream stays in
numpy and results are identical to the per-step reference implementation
in :mod:`mvtd.critic`.
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def _first_above(cdf, u):
    n = cdf.shape[0]
    for j in range(n):
        if u < cdf[j]:
            return j
    return n - 1


@njit(cache=True, nogil=True)
def td_kernel(
    w, acc, step0, u, chi_cdf, pi_cdf, p_cdf, rewards, phi_v, phi_u,
    gamma, beta, zeta, h_radius, rec_steps, out_w, out_acc, out_proj, proj0,
):
    """Run ``len(u)`` TD updates in place on ``w``.

    ``acc`` holds the running sum of all iterates w_1..w_step.  Whenever the
    step counter hits an entry of ``rec_steps`` the current iterate, running
    sum and projection count are written to the matching output row.
    ``h_radius <= 0`` disables projection.  Returns the projection count.
    """
    q = phi_v.shape[1]
    shrink = 1.0 - beta * zeta
    g2 = gamma * gamma
    proj = proj0
    r_ptr = 0
    n_rec = rec_steps.shape[0]
    while r_ptr < n_rec and rec_steps[r_ptr] <= step0:
        r_ptr += 1
    for i in range(u.shape[0]):
        s = _first_above(chi_cdf, u[i, 0])
        a = _first_above(pi_cdf[s], u[i, 1])
        s1 = _first_above(p_cdf[s, a], u[i, 2])
        r = rewards[s, a]
        vs = 0.0
        vs1 = 0.0
        us = 0.0
        us1 = 0.0
        for j in range(q):
            vs += w[j] * phi_v[s, j]
            vs1 += w[j] * phi_v[s1, j]
            us += w[q + j] * phi_u[s, j]
            us1 += w[q + j] * phi_u[s1, j]
        delta = r + gamma * vs1 - vs
        eps = r * r + 2.0 * gamma * r * vs1 + g2 * us1 - us
        for j in range(q):
            w[j] = shrink * w[j] + beta * delta * phi_v[s, j]
            w[q + j] = shrink * w[q + j] + beta * eps * phi_u[s, j]
        if h_radius > 0.0:
            nrm = 0.0
            for j in range(2 * q):
                nrm += w[j] * w[j]
            nrm = np.sqrt(nrm)
            if nrm > h_radius:
                scale = h_radius / nrm
                for j in range(2 * q):
                    w[j] *= scale
                proj += 1
        for j in range(2 * q):
            acc[j] += w[j]
        step = step0 + i + 1
        while r_ptr < n_rec and rec_steps[r_ptr] == step:
            for j in range(2 * q):
                out_w[r_ptr, j] = w[j]
                out_acc[r_ptr, j] = acc[j]
            out_proj[r_ptr] = proj
            r_ptr += 1
    return proj
