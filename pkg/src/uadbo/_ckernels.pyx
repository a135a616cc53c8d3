# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot kernels: strided conv1d and Pareto ranking."""
import numpy as np
cimport numpy as cnp
from libc.math cimport INFINITY

cnp.import_array()


def conv1d_forward(const double[:, :, ::1] xp, const double[:, :, ::1] w,
                   const double[::1] b, int stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], lp = xp.shape[2]
    cdef Py_ssize_t o = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t lout = (lp - k) // stride + 1
    # output channels innermost and contiguous so the update loop vectorizes
    cdef double[:, :, ::1] wt = np.ascontiguousarray(np.transpose(w, (1, 2, 0)))
    out_arr = np.empty((n, lout, o), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t i, j, ci, t, kk
    cdef double xv
    cdef double *row
    cdef const double *wrow
    with nogil:
        for i in range(n):
            for t in range(lout):
                row = &out[i, t, 0]
                for j in range(o):
                    row[j] = b[j]
                for ci in range(c):
                    for kk in range(k):
                        xv = xp[i, ci, t * stride + kk]
                        wrow = &wt[ci, kk, 0]
                        for j in range(o):
                            row[j] += wrow[j] * xv
    return np.ascontiguousarray(out_arr.transpose(0, 2, 1))


def conv1d_backward(const double[:, :, ::1] xp, const double[:, :, ::1] w,
                    const double[:, :, ::1] gout, int stride):
    cdef Py_ssize_t n = xp.shape[0], c = xp.shape[1], lp = xp.shape[2]
    cdef Py_ssize_t o = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t lout = gout.shape[2]
    cdef double[:, :, ::1] wt = np.ascontiguousarray(np.transpose(w, (1, 2, 0)))
    gt_arr = np.ascontiguousarray(np.transpose(gout, (0, 2, 1)))
    cdef double[:, :, ::1] gt = gt_arr
    dxp_arr = np.zeros((n, c, lp), dtype=np.float64)
    dwt_arr = np.zeros((c, k, o), dtype=np.float64)
    cdef double[:, :, ::1] dxp = dxp_arr
    cdef double[:, :, ::1] dwt = dwt_arr
    cdef Py_ssize_t i, j, ci, t, kk
    cdef double xv, acc
    cdef const double *grow
    cdef const double *wrow
    cdef double *dwrow
    with nogil:
        for i in range(n):
            for t in range(lout):
                grow = &gt[i, t, 0]
                for ci in range(c):
                    for kk in range(k):
                        xv = xp[i, ci, t * stride + kk]
                        wrow = &wt[ci, kk, 0]
                        dwrow = &dwt[ci, kk, 0]
                        acc = 0.0
                        for j in range(o):
                            dwrow[j] += grow[j] * xv
                            acc += grow[j] * wrow[j]
                        dxp[i, ci, t * stride + kk] += acc
    db_arr = gt_arr.sum(axis=(0, 1))
    return dxp_arr, np.ascontiguousarray(dwt_arr.transpose(2, 0, 1)), db_arr


cdef inline bint _dominates(const double[:, ::1] f, Py_ssize_t a, Py_ssize_t b) noexcept nogil:
    cdef Py_ssize_t m
    cdef bint strict = False
    for m in range(f.shape[1]):
        if f[a, m] > f[b, m]:
            return False
        if f[a, m] < f[b, m]:
            strict = True
    return strict


def nondominated_ranks(const double[:, ::1] f):
    cdef Py_ssize_t n = f.shape[0], i, j, front_size, nxt
    ranks_arr = np.full(n, -1, dtype=np.int64)
    cdef long[::1] ranks = ranks_arr
    count_arr = np.zeros(n, dtype=np.int64)
    cdef long[::1] count = count_arr
    dom_arr = np.zeros((n, n), dtype=np.uint8)
    cdef unsigned char[:, ::1] dom = dom_arr
    for i in range(n):
        for j in range(n):
            if i != j and _dominates(f, i, j):
                dom[i, j] = 1
                count[j] += 1
    cdef long r = 0
    cdef Py_ssize_t assigned = 0
    while assigned < n:
        front = [i for i in range(n) if ranks[i] < 0 and count[i] == 0]
        for i in front:
            ranks[i] = r
        assigned += len(front)
        for i in front:
            count[i] = -1
            for j in range(n):
                if dom[i, j]:
                    count[j] -= 1
        r += 1
    return ranks_arr


def crowding_distance(const double[:, ::1] f):
    cdef Py_ssize_t n = f.shape[0], m_count = f.shape[1], m, q
    dist_arr = np.zeros(n, dtype=np.float64)
    cdef double[::1] dist = dist_arr
    cdef double span
    if n <= 2:
        dist_arr[:] = INFINITY
        return dist_arr
    f_arr = np.asarray(f)
    for m in range(m_count):
        order = np.argsort(f_arr[:, m], kind="stable")
        dist[order[0]] = INFINITY
        dist[order[n - 1]] = INFINITY
        span = f[order[n - 1], m] - f[order[0], m]
        if span <= 0.0:
            continue
        for q in range(1, n - 1):
            dist[order[q]] += (f[order[q + 1], m] - f[order[q - 1], m]) / span
    return dist_arr
