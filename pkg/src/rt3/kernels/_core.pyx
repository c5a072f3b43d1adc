# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled versions of the hot loops in ``rt3.kernels._fallback``.

Semantics (including tie-breaking and the floating-point order of the
battery drain) must stay identical to the fallback; the test-suite runs
both side by side.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


def block_line_norms(const double[:, ::1] w, Py_ssize_t bh, Py_ssize_t bw, bint by_column):
    cdef Py_ssize_t rows = w.shape[0], cols = w.shape[1]
    cdef Py_ssize_t nbr = rows // bh, nbc = cols // bw
    cdef Py_ssize_t lines = bw if by_column else bh
    out_arr = np.zeros((nbr, nbc, lines), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t br, bc, i, j
    cdef double v
    for br in range(nbr):
        for bc in range(nbc):
            for i in range(bh):
                for j in range(bw):
                    v = w[br * bh + i, bc * bw + j]
                    if by_column:
                        out[br, bc, j] += v * v
                    else:
                        out[br, bc, i] += v * v
            for i in range(lines):
                out[br, bc, i] = sqrt(out[br, bc, i])
    return out_arr


def assign_block_patterns(const double[:, ::1] w, const unsigned char[:, :, ::1] patterns):
    cdef Py_ssize_t m = patterns.shape[0], p = patterns.shape[1]
    cdef Py_ssize_t nbr = w.shape[0] // p, nbc = w.shape[1] // p
    out_arr = np.zeros((nbr, nbc), dtype=np.int64)
    cdef cnp.int64_t[:, ::1] out = out_arr
    # patterns as 0/1 doubles, flattened per pattern
    pat_arr = np.ascontiguousarray(np.asarray(patterns).reshape(m, p * p), dtype=np.float64)
    cdef const double[:, ::1] pat = pat_arr
    sq_arr = np.empty(p * p, dtype=np.float64)
    cdef double[::1] sq = sq_arr
    cdef Py_ssize_t br, bc, q, i, j, t, best, n = p * p
    cdef double score, best_score, v
    for br in range(nbr):
        for bc in range(nbc):
            for i in range(p):
                for j in range(p):
                    v = w[br * p + i, bc * p + j]
                    sq[i * p + j] = v * v
            best = 0
            best_score = -1.0
            for q in range(m):
                # adding an exact 0.0 for unkept cells leaves the sum unchanged
                score = 0.0
                for t in range(n):
                    score += pat[q, t] * sq[t]
                if score > best_score:
                    best_score = score
                    best = q
            out[br, bc] = best
    return out_arr


def drain(double remaining, double energy, double capacity, double stop_fraction, long long max_runs):
    cdef long long count = 0
    while count < max_runs and remaining >= energy:
        remaining -= energy
        count += 1
        if remaining / capacity < stop_fraction:
            break
    return count, remaining
