# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled kernels for edge evaluation. Must agree bit-for-bit with _kernels_py."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def candidate_pairs(const unsigned char[:, ::1] pred, const unsigned char[:, ::1] gt, double max_dist):
    """All (pred, gt) pixel pairs within ``max_dist``, as raster indices plus squared distance."""
    cdef Py_ssize_t H = pred.shape[0], W = pred.shape[1]
    cdef int R = <int>floor(max_dist)
    cdef double r2 = max_dist * max_dist
    cdef Py_ssize_t y, x, yy, xx
    cdef int dy, dx, d2
    cdef Py_ssize_t n = 0, cap = 1024
    cdef cnp.ndarray[cnp.int64_t, ndim=1] pi = np.empty(cap, np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] gi = np.empty(cap, np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] dd = np.empty(cap, np.int64)
    for y in range(H):
        for x in range(W):
            if not pred[y, x]:
                continue
            for dy in range(-R, R + 1):
                yy = y + dy
                if yy < 0 or yy >= H:
                    continue
                for dx in range(-R, R + 1):
                    xx = x + dx
                    if xx < 0 or xx >= W or not gt[yy, xx]:
                        continue
                    d2 = dy * dy + dx * dx
                    if d2 > r2:
                        continue
                    if n == cap:
                        cap *= 2
                        pi = np.resize(pi, cap)
                        gi = np.resize(gi, cap)
                        dd = np.resize(dd, cap)
                    pi[n] = y * W + x
                    gi[n] = yy * W + xx
                    dd[n] = d2
                    n += 1
    return pi[:n], gi[:n], dd[:n]


def greedy_assign(cnp.int64_t[::1] pi, cnp.int64_t[::1] gi, Py_ssize_t size):
    """Walk pre-sorted pairs, keeping each one whose endpoints are both still free.

    Returns partner arrays (raster index of the matched pixel, -1 if free).
    """
    cdef cnp.ndarray[cnp.int64_t, ndim=1] match_p = np.full(size, -1, np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] match_g = np.full(size, -1, np.int64)
    cdef Py_ssize_t k, n = pi.shape[0]
    cdef cnp.int64_t a, b
    for k in range(n):
        a = pi[k]
        b = gi[k]
        if match_p[a] >= 0 or match_g[b] >= 0:
            continue
        match_p[a] = b
        match_g[b] = a
    return match_p, match_g


def augment(cnp.int64_t[::1] indptr, cnp.int64_t[::1] adj, cnp.int64_t[::1] match_p, cnp.int64_t[::1] match_g):
    """Grow the matching along augmenting paths (Kuhn) until none is left; edits the partner arrays in place.

    ``adj[indptr[u]:indptr[u + 1]]`` lists the human pixels reachable from
    predicted pixel ``u``. Returns the number of augmentations.
    """
    cdef Py_ssize_t size = match_p.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stamp = np.zeros(size, np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stack_u = np.empty(size + 1, np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] stack_e = np.empty(size + 1, np.int64)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] via = np.empty(size + 1, np.int64)
    cdef Py_ssize_t root, top, e, u, v, w, i
    cdef cnp.int64_t current = 0
    cdef Py_ssize_t n_aug = 0
    cdef bint found
    for root in range(size):
        if match_p[root] >= 0 or indptr[root] == indptr[root + 1]:
            continue
        current += 1
        top = 0
        stack_u[0] = root
        stack_e[0] = indptr[root]
        found = False
        while top >= 0 and not found:
            u = stack_u[top]
            e = stack_e[top]
            if e == indptr[u + 1]:
                top -= 1
                continue
            stack_e[top] = e + 1
            v = adj[e]
            if stamp[v] == current:
                continue
            stamp[v] = current
            via[top] = v
            w = match_g[v]
            if w < 0:
                found = True
            else:
                top += 1
                stack_u[top] = w
                stack_e[top] = indptr[w]
        if found:
            for i in range(top, -1, -1):
                u = stack_u[i]
                v = via[i]
                match_p[u] = v
                match_g[v] = u
            n_aug += 1
    return n_aug


cdef inline double _interp(const double[:, ::1] E, Py_ssize_t H, Py_ssize_t W, double y, double x) nogil:
    cdef double fy, fx
    cdef Py_ssize_t y0, x0, y1, x1
    if y < 0:
        y = 0
    elif y > H - 1.001:
        y = H - 1.001
    if x < 0:
        x = 0
    elif x > W - 1.001:
        x = W - 1.001
    y0 = <Py_ssize_t>y
    x0 = <Py_ssize_t>x
    y1 = y0 + 1
    x1 = x0 + 1
    fy = y - y0
    fx = x - x0
    return ((1.0 - fy) * ((1.0 - fx) * E[y0, x0] + fx * E[y0, x1])
            + fy * ((1.0 - fx) * E[y1, x0] + fx * E[y1, x1]))


def nms_suppress(const double[:, ::1] E, const double[:, ::1] cos_t, const double[:, ::1] sin_t, int radius):
    """Zero every pixel lying below an interpolated neighbour along its unit normal (cos_t, sin_t)."""
    cdef Py_ssize_t H = E.shape[0], W = E.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((H, W), np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t y, x
    cdef int d
    cdef double e, c, s
    cdef bint keep
    with nogil:
        for y in range(H):
            for x in range(W):
                e = E[y, x]
                if e <= 0:
                    continue
                c = cos_t[y, x]
                s = sin_t[y, x]
                keep = True
                for d in range(1, radius + 1):
                    if e < _interp(E, H, W, y + d * s, x + d * c) or e < _interp(E, H, W, y - d * s, x - d * c):
                        keep = False
                        break
                if keep:
                    o[y, x] = e
    return out
