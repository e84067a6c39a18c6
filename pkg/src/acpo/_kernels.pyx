# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled inner loops. Must stay bit-identical to ``_kernels_py``."""

import numpy as np

cimport cython


cdef inline Py_ssize_t _draw(const double[:] cdf, double u) noexcept nogil:
    cdef Py_ssize_t i, n = cdf.shape[0]
    for i in range(n - 1):
        if u < cdf[i]:
            return i
    return n - 1


def tabular_rollout(const double[:, ::1] policy_cdf,
                    const double[:, :, ::1] transition_cdf,
                    Py_ssize_t start_state,
                    const double[::1] uniforms):
    """Walk one continuing trajectory; consumes two uniforms per step."""
    cdef Py_ssize_t n = uniforms.shape[0] // 2
    states_arr = np.empty(n, dtype=np.int64)
    actions_arr = np.empty(n, dtype=np.int64)
    next_arr = np.empty(n, dtype=np.int64)
    cdef long long[::1] states = states_arr
    cdef long long[::1] actions = actions_arr
    cdef long long[::1] nexts = next_arr
    cdef Py_ssize_t t, s = start_state, a, sp
    with nogil:
        for t in range(n):
            a = _draw(policy_cdf[s], uniforms[2 * t])
            sp = _draw(transition_cdf[s, a], uniforms[2 * t + 1])
            states[t] = s
            actions[t] = a
            nexts[t] = sp
            s = sp
    return states_arr, actions_arr, next_arr


def backward_accumulate(const double[::1] deltas, double coef):
    """out[t] = deltas[t] + coef * out[t + 1], with out[N] = 0."""
    cdef Py_ssize_t n = deltas.shape[0], t
    out_arr = np.empty(n, dtype=np.float64)
    cdef double[::1] out = out_arr
    cdef double acc = 0.0
    with nogil:
        for t in range(n - 1, -1, -1):
            acc = deltas[t] + coef * acc
            out[t] = acc
    return out_arr
