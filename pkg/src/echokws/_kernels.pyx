# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops; see _kernels_py for the reference semantics."""

import numpy as np
cimport numpy as cnp
from libc.math cimport exp

cnp.import_array()


def fused_accuracy(const double[:, ::1] logp_v, const double[:, ::1] logp_e,
                   const double[:, ::1] ind, const long[::1] cat_v, const long[::1] cat_e,
                   const long[::1] labels, const double[:, ::1] params, long silence_id):
    cdef Py_ssize_t G = params.shape[0]
    cdef Py_ssize_t T = logp_v.shape[0]
    cdef Py_ssize_t C = logp_v.shape[1]
    cdef Py_ssize_t g, t, c, best
    cdef double lam, z, s, top
    cdef double a0, a1, a2, a3
    cdef bint rv, re
    cdef long correct
    out = np.empty(G, dtype=np.float64)
    cdef double[::1] acc = out
    for g in range(G):
        correct = 0
        for t in range(T):
            rv = ind[t, 0] > params[g, 0] and ind[t, 1] > params[g, 1]
            re = ind[t, 2] > params[g, 2] and ind[t, 3] > params[g, 3]
            if not rv and not re:
                if labels[t] == silence_id:
                    correct += 1
                continue
            best = 0
            if rv and not re:
                top = logp_v[t, 0]
                for c in range(1, C):
                    if logp_v[t, c] > top:
                        top = logp_v[t, c]
                        best = c
            elif re and not rv:
                top = logp_e[t, 0]
                for c in range(1, C):
                    if logp_e[t, c] > top:
                        top = logp_e[t, c]
                        best = c
            else:
                a0 = 1.0
                a1 = 1.0
                a2 = 1.0
                a3 = 1.0
                if cat_v[t] == 1:
                    a0 = params[g, 8]
                    a1 = params[g, 8]
                elif cat_v[t] == 2:
                    a0 = params[g, 9]
                    a1 = params[g, 9]
                if cat_e[t] == 1:
                    a2 = params[g, 10]
                    a3 = params[g, 10]
                elif cat_e[t] == 2:
                    a2 = params[g, 11]
                    a3 = params[g, 11]
                z = (params[g, 4] * a0 * ind[t, 0] + params[g, 5] * a1 * ind[t, 1]
                     + params[g, 6] * a2 * ind[t, 2] + params[g, 7] * a3 * ind[t, 3])
                lam = 1.0 / (1.0 + exp(-z))
                top = lam * logp_v[t, 0] + (1.0 - lam) * logp_e[t, 0]
                for c in range(1, C):
                    s = lam * logp_v[t, c] + (1.0 - lam) * logp_e[t, c]
                    if s > top:
                        top = s
                        best = c
            if best == labels[t]:
                correct += 1
        acc[g] = correct / <double>T if T else 0.0
    return out


def edit_counts(const long[::1] ref, const long[::1] hyp):
    cdef Py_ssize_t n = ref.shape[0]
    cdef Py_ssize_t m = hyp.shape[0]
    cdef Py_ssize_t i, j
    cdef long sub, dele, ins, best
    cdef long S = 0, D = 0, I = 0, C = 0
    dist_arr = np.empty((n + 1, m + 1), dtype=np.int64)
    cdef long[:, ::1] dist = dist_arr
    for i in range(n + 1):
        dist[i, 0] = i
    for j in range(m + 1):
        dist[0, j] = j
    for i in range(1, n + 1):
        for j in range(1, m + 1):
            sub = dist[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1)
            dele = dist[i - 1, j] + 1
            ins = dist[i, j - 1] + 1
            best = sub
            if dele < best:
                best = dele
            if ins < best:
                best = ins
            dist[i, j] = best
    i = n
    j = m
    while i > 0 or j > 0:
        if i > 0 and j > 0 and dist[i, j] == dist[i - 1, j - 1] + (0 if ref[i - 1] == hyp[j - 1] else 1):
            if ref[i - 1] == hyp[j - 1]:
                C += 1
            else:
                S += 1
            i -= 1
            j -= 1
        elif i > 0 and dist[i, j] == dist[i - 1, j] + 1:
            D += 1
            i -= 1
        else:
            I += 1
            j -= 1
    return S, D, I, C
