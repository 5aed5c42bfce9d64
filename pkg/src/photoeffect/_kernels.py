"""Compiled inner loops for the Numerov recurrence on a uniform mapped grid.

All kernels solve ``w'' = Q w`` with ``Q = P - E*S`` sampled on a uniform grid
of step ``h``.
"""

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def numerov_outward(P, S, energy, h, w0, w1, n_stop):
    c = h * h / 12.0
    w = np.empty(n_stop)
    w[0] = w0
    w[1] = w1
    f_prev = 1.0 - c * (P[0] - energy * S[0])
    f_cur = 1.0 - c * (P[1] - energy * S[1])
    for i in range(1, n_stop - 1):
        f_next = 1.0 - c * (P[i + 1] - energy * S[i + 1])
        w[i + 1] = ((12.0 - 10.0 * f_cur) * w[i] - f_prev * w[i - 1]) / f_next
        f_prev = f_cur
        f_cur = f_next
    return w


@njit(cache=True, nogil=True)
def numerov_outward_batch(P, S, energies, h, w0, w1, n_stop):
    nq = energies.size
    out = np.empty((nq, n_stop))
    c = h * h / 12.0
    for k in range(nq):
        e = energies[k]
        out[k, 0] = w0[k]
        out[k, 1] = w1[k]
        f_prev = 1.0 - c * (P[0] - e * S[0])
        f_cur = 1.0 - c * (P[1] - e * S[1])
        for i in range(1, n_stop - 1):
            f_next = 1.0 - c * (P[i + 1] - e * S[i + 1])
            out[k, i + 1] = ((12.0 - 10.0 * f_cur) * out[k, i] - f_prev * out[k, i - 1]) / f_next
            f_prev = f_cur
            f_cur = f_next
    return out


@njit(cache=True, nogil=True)
def numerov_inward(P, S, energy, h, i_end, i_stop, w_end, w_before):
    """Integrate from ``i_end`` down to ``i_stop``; returns values on i_stop..i_end."""
    c = h * h / 12.0
    n = i_end - i_stop + 1
    w = np.empty(n)
    w[n - 1] = w_end
    w[n - 2] = w_before
    f_next = 1.0 - c * (P[i_end] - energy * S[i_end])
    f_cur = 1.0 - c * (P[i_end - 1] - energy * S[i_end - 1])
    for j in range(n - 2, 0, -1):
        i = i_stop + j
        f_prev = 1.0 - c * (P[i - 1] - energy * S[i - 1])
        w[j - 1] = ((12.0 - 10.0 * f_cur) * w[j] - f_next * w[j + 1]) / f_prev
        f_next = f_cur
        f_cur = f_prev
    return w


@njit(cache=True, nogil=True)
def numerov_node_count(P, S, energy, h, w0, w1):
    """Sign changes of the outward Numerov solution over the whole grid.

    Uses the ratio form ``R_i = w_{i+1}/w_i`` so that exponential growth in
    forbidden regions never overflows.  For a Dirichlet condition at the last
    node this equals the number of discrete eigenvalues below ``energy``.
    """
    c = h * h / 12.0
    n = P.size
    ratio = w1 / w0
    count = 1 if ratio < 0.0 else 0
    f_prev = 1.0 - c * (P[0] - energy * S[0])
    f_cur = 1.0 - c * (P[1] - energy * S[1])
    for i in range(1, n - 1):
        f_next = 1.0 - c * (P[i + 1] - energy * S[i + 1])
        if ratio == 0.0:
            ratio = 1e-300
        ratio = ((12.0 - 10.0 * f_cur) - f_prev / ratio) / f_next
        if ratio < 0.0:
            count += 1
        f_prev = f_cur
        f_cur = f_next
    return count
