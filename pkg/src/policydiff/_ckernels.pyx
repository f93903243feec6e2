# cython: boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels for the 32x82 policy forward pass.

The same matrix layout as policy.py: columns 0..74 are hidden<-observation
weights, columns 75..81 are hidden->action weights. The numpy fallback in
backend.py mirrors these routines.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport tanh

cnp.import_array()


def policy_logits(double[:, ::1] mat, double[::1] obs):
    """Action logits of the one-hidden-layer tanh policy for one observation."""
    cdef Py_ssize_t hidden = mat.shape[0]
    cdef Py_ssize_t n_obs = obs.shape[0]
    cdef Py_ssize_t n_act = mat.shape[1] - n_obs
    cdef cnp.ndarray[double, ndim=1] out = np.zeros(n_act, dtype=np.float64)
    cdef double[::1] logits = out
    cdef double h
    cdef Py_ssize_t i, j, a
    for i in range(hidden):
        h = 0.0
        for j in range(n_obs):
            h += mat[i, j] * obs[j]
        h = tanh(h)
        for a in range(n_act):
            logits[a] += mat[i, n_obs + a] * h
    return out


def greedy_actions(double[:, :, ::1] stack, double[::1] obs):
    """Greedy action per policy (first index wins ties) for a policy stack."""
    cdef Py_ssize_t n_pol = stack.shape[0]
    cdef Py_ssize_t hidden = stack.shape[1]
    cdef Py_ssize_t n_obs = obs.shape[0]
    cdef Py_ssize_t n_act = stack.shape[2] - n_obs
    cdef cnp.ndarray[long, ndim=1] out = np.zeros(n_pol, dtype=np.int64)
    cdef long[::1] votes = out
    cdef double h, best, logit
    cdef Py_ssize_t p, i, j, a, best_a
    cdef double[::1] logits = np.zeros(n_act, dtype=np.float64)
    for p in range(n_pol):
        for a in range(n_act):
            logits[a] = 0.0
        for i in range(hidden):
            h = 0.0
            for j in range(n_obs):
                h += stack[p, i, j] * obs[j]
            h = tanh(h)
            for a in range(n_act):
                logits[a] += stack[p, i, n_obs + a] * h
        best = logits[0]
        best_a = 0
        for a in range(1, n_act):
            if logits[a] > best:
                best = logits[a]
                best_a = a
        votes[p] = best_a
    return out
