# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled implementations of the hot kernels.

Mirrors ``_reference`` exactly: Grunert P3P (quartic roots via the
companion matrix and LAPACK dgeev), pose inlier scoring, and bilinear
grid sampling.
"""

import numpy as np

cimport numpy as cnp
from libc.math cimport fabs, floor, sqrt

from scipy.linalg.cython_lapack cimport dgeev

cnp.import_array()

NAME = "native"

cdef double _MIN_DEPTH = 1e-9


cdef inline double _dot3(const double* a, const double* b) nogil:
    return a[0] * b[0] + a[1] * b[1] + a[2] * b[2]


cdef inline void _cross3(const double* a, const double* b, double* out) nogil:
    out[0] = a[1] * b[2] - a[2] * b[1]
    out[1] = a[2] * b[0] - a[0] * b[2]
    out[2] = a[0] * b[1] - a[1] * b[0]


cdef inline double _norm3(const double* a) nogil:
    return sqrt(_dot3(a, a))


cdef inline double _polyval(const double* p, int n, double v) nogil:
    cdef double acc = 0.0
    cdef int i
    for i in range(n):
        acc = acc * v + p[i]
    return acc


cdef int _quartic_real_roots(double* poly, double* out) nogil:
    """Real, polished, deduplicated roots of poly (5 coeffs, descending)."""
    cdef double lead = 0.0
    cdef int i, j
    for i in range(5):
        if fabs(poly[i]) > lead:
            lead = fabs(poly[i])
    if lead == 0.0:
        return 0
    cdef double p[5]
    for i in range(5):
        p[i] = poly[i] / lead
    # strip leading zeros down to the true degree
    cdef int off = 0
    while off < 4 and p[off] == 0.0:
        off += 1
    cdef int deg = 4 - off
    if deg < 1:
        return 0

    # monic coefficients c[0..deg-1] for v^deg + c0 v^(deg-1) + ...
    cdef double mono[4]
    for i in range(deg):
        mono[i] = p[off + 1 + i] / p[off]

    # companion matrix, column-major for LAPACK
    cdef double a[16]
    for i in range(16):
        a[i] = 0.0
    for i in range(deg - 1):
        a[(i + 1) + deg * i] = 1.0
    for i in range(deg):
        a[i + deg * (deg - 1)] = -mono[deg - 1 - i]

    cdef double wr[4]
    cdef double wi[4]
    cdef double work[64]
    cdef int n = deg, lda = deg, ldv = 1, lwork = 64, info = 0
    cdef char jobv = b'N'
    dgeev(&jobv, &jobv, &n, a, &lda, wr, wi, NULL, &ldv, NULL, &ldv,
          work, &lwork, &info)
    if info != 0:
        return 0

    cdef double deriv[4]
    for i in range(deg):
        deriv[i] = p[off + i] * (deg - i)

    cdef int count = 0
    cdef double v, fv, dv
    cdef bint dup
    for i in range(deg):
        if fabs(wi[i]) > 1e-6 * (1.0 + fabs(wr[i])):
            continue
        v = wr[i]
        for j in range(3):
            fv = _polyval(&p[off], deg + 1, v)
            dv = _polyval(deriv, deg, v)
            if dv == 0.0:
                break
            v -= fv / dv
        dup = False
        for j in range(count):
            if fabs(v - out[j]) <= 1e-9 * (1.0 + fabs(v)):
                dup = True
                break
        if not dup:
            out[count] = v
            count += 1
    return count


cdef bint _solve3(double* J, double* g, double* out) nogil:
    """Solve a 3x3 linear system with partial pivoting."""
    cdef double M[12]
    cdef int i, j, k, piv
    cdef double best, f
    for i in range(3):
        for j in range(3):
            M[4 * i + j] = J[3 * i + j]
        M[4 * i + 3] = g[i]
    for k in range(3):
        piv = k
        best = fabs(M[4 * k + k])
        for i in range(k + 1, 3):
            if fabs(M[4 * i + k]) > best:
                best = fabs(M[4 * i + k])
                piv = i
        if best < 1e-300:
            return False
        if piv != k:
            for j in range(4):
                f = M[4 * k + j]
                M[4 * k + j] = M[4 * piv + j]
                M[4 * piv + j] = f
        for i in range(k + 1, 3):
            f = M[4 * i + k] / M[4 * k + k]
            for j in range(k, 4):
                M[4 * i + j] -= f * M[4 * k + j]
    for k in range(2, -1, -1):
        f = M[4 * k + 3]
        for j in range(k + 1, 3):
            f -= M[4 * k + j] * out[j]
        out[k] = f / M[4 * k + k]
    return True


cdef void _polish_distances(double* s, double a, double b, double c,
                            double cos_al, double cos_be, double cos_ga) nogil:
    """Newton on the law-of-cosines system (see _reference)."""
    cdef double g[3]
    cdef double J[9]
    cdef double step[3]
    cdef int it
    for it in range(3):
        g[0] = s[1] * s[1] + s[2] * s[2] - 2.0 * s[1] * s[2] * cos_al - a * a
        g[1] = s[0] * s[0] + s[2] * s[2] - 2.0 * s[0] * s[2] * cos_be - b * b
        g[2] = s[0] * s[0] + s[1] * s[1] - 2.0 * s[0] * s[1] * cos_ga - c * c
        J[0] = 0.0
        J[1] = 2.0 * (s[1] - s[2] * cos_al)
        J[2] = 2.0 * (s[2] - s[1] * cos_al)
        J[3] = 2.0 * (s[0] - s[2] * cos_be)
        J[4] = 0.0
        J[5] = 2.0 * (s[2] - s[0] * cos_be)
        J[6] = 2.0 * (s[0] - s[1] * cos_ga)
        J[7] = 2.0 * (s[1] - s[0] * cos_ga)
        J[8] = 0.0
        if not _solve3(J, g, step):
            return
        s[0] -= step[0]
        s[1] -= step[1]
        s[2] -= step[2]


cdef bint _orthonormal_triad(const double* P1, const double* P2,
                             const double* P3, double* cols) nogil:
    """Columns e1,e2,e3 written into cols as a row-major 3x3 matrix."""
    cdef double e1[3]
    cdef double w[3]
    cdef double e2[3]
    cdef double e3[3]
    cdef double n1, wn, d
    cdef int i
    for i in range(3):
        e1[i] = P2[i] - P1[i]
    n1 = _norm3(e1)
    if n1 < 1e-12:
        return False
    for i in range(3):
        e1[i] /= n1
        w[i] = P3[i] - P1[i]
    d = _dot3(w, e1)
    for i in range(3):
        e2[i] = w[i] - d * e1[i]
    wn = _norm3(e2)
    if wn < 1e-12:
        return False
    for i in range(3):
        e2[i] /= wn
    _cross3(e1, e2, e3)
    for i in range(3):
        cols[3 * i + 0] = e1[i]
        cols[3 * i + 1] = e2[i]
        cols[3 * i + 2] = e3[i]
    return True


def p3p_solve(bearings, points):
    """See priorloc.kernels._reference.p3p_solve."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] F = \
        np.ascontiguousarray(bearings, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] X = \
        np.ascontiguousarray(points, dtype=np.float64)

    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] Rs = \
        np.empty((4, 3, 3), dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] ts = \
        np.empty((4, 3), dtype=np.float64)

    cdef double d12[3]
    cdef double d13[3]
    cdef double d23[3]
    cdef double crossv[3]
    cdef int i, j, k
    for i in range(3):
        d23[i] = X[1, i] - X[2, i]
        d13[i] = X[0, i] - X[2, i]
        d12[i] = X[0, i] - X[1, i]
    cdef double a = _norm3(d23)
    cdef double b = _norm3(d13)
    cdef double c = _norm3(d12)
    cdef double side_max = max(a, max(b, c))
    if a < 1e-12 or b < 1e-12 or c < 1e-12:
        return Rs[:0], ts[:0]
    cdef double e21[3]
    cdef double e31[3]
    for i in range(3):
        e21[i] = X[1, i] - X[0, i]
        e31[i] = X[2, i] - X[0, i]
    _cross3(e21, e31, crossv)
    if _norm3(crossv) < 1e-12 * side_max * side_max:
        return Rs[:0], ts[:0]

    cdef double cos_al = _dot3(&F[1, 0], &F[2, 0])
    cdef double cos_be = _dot3(&F[0, 0], &F[2, 0])
    cdef double cos_ga = _dot3(&F[0, 0], &F[1, 0])

    cdef double A = (a * a) / (b * b)
    cdef double E = (c * c) / (b * b)
    cdef double q = A - E

    cdef double n2 = q - 1.0, n1 = -2.0 * q * cos_be, n0 = q + 1.0
    cdef double dd1 = -2.0 * cos_al, dd0 = 2.0 * cos_ga
    cdef double w2 = -E, w1 = 2.0 * E * cos_be, w0 = 1.0 - E

    # quartic = N^2 - 2 cos_ga N D + D^2 W, coefficients descending
    cdef double poly[5]
    cdef double g = 2.0 * cos_ga
    cdef double D2_2 = dd1 * dd1, D2_1 = 2.0 * dd1 * dd0, D2_0 = dd0 * dd0
    poly[0] = n2 * n2 + D2_2 * w2
    poly[1] = 2.0 * n2 * n1 - g * (n2 * dd1) + D2_2 * w1 + D2_1 * w2
    poly[2] = (n1 * n1 + 2.0 * n2 * n0 - g * (n2 * dd0 + n1 * dd1)
               + D2_2 * w0 + D2_1 * w1 + D2_0 * w2)
    poly[3] = 2.0 * n1 * n0 - g * (n1 * dd0 + n0 * dd1) + D2_1 * w0 + D2_0 * w1
    poly[4] = n0 * n0 - g * (n0 * dd0) + D2_0 * w0

    cdef double roots[4]
    cdef int nroots = _quartic_real_roots(poly, roots)

    cdef int count = 0
    cdef double v, denom, u, s1sq, s1
    cdef double sdist[3]
    cdef double Y1[3]
    cdef double Y2[3]
    cdef double Y3[3]
    cdef double Mw[9]
    cdef double Mc[9]
    cdef double R[9]
    cdef double t[3]
    cdef double y[3]
    cdef double ny
    cdef bint ok
    for i in range(nroots):
        v = roots[i]
        if v <= 0.0:
            continue
        denom = dd1 * v + dd0
        if fabs(denom) < 1e-12:
            continue
        u = (n2 * v * v + n1 * v + n0) / denom
        if u <= 0.0:
            continue
        s1sq = 1.0 + v * v - 2.0 * v * cos_be
        if s1sq <= 0.0:
            continue
        s1 = b / sqrt(s1sq)
        sdist[0] = s1
        sdist[1] = u * s1
        sdist[2] = v * s1
        _polish_distances(sdist, a, b, c, cos_al, cos_be, cos_ga)
        if sdist[0] <= 0.0 or sdist[1] <= 0.0 or sdist[2] <= 0.0:
            continue
        for j in range(3):
            Y1[j] = sdist[0] * F[0, j]
            Y2[j] = sdist[1] * F[1, j]
            Y3[j] = sdist[2] * F[2, j]
        if not _orthonormal_triad(&X[0, 0], &X[1, 0], &X[2, 0], Mw):
            continue
        if not _orthonormal_triad(Y1, Y2, Y3, Mc):
            continue
        # R = Mc @ Mw^T
        for j in range(3):
            for k in range(3):
                R[3 * j + k] = (Mc[3 * j + 0] * Mw[3 * k + 0]
                                + Mc[3 * j + 1] * Mw[3 * k + 1]
                                + Mc[3 * j + 2] * Mw[3 * k + 2])
        for j in range(3):
            t[j] = Y1[j] - (R[3 * j + 0] * X[0, 0] + R[3 * j + 1] * X[0, 1]
                            + R[3 * j + 2] * X[0, 2])
        ok = True
        for j in range(3):
            for k in range(3):
                y[k] = (R[3 * k + 0] * X[j, 0] + R[3 * k + 1] * X[j, 1]
                        + R[3 * k + 2] * X[j, 2] + t[k])
            ny = _norm3(y)
            if ny < _MIN_DEPTH or 1.0 - _dot3(&F[j, 0], y) / ny > 1e-10:
                ok = False
                break
        if not ok:
            continue
        for j in range(3):
            for k in range(3):
                Rs[count, j, k] = R[3 * j + k]
            ts[count, j] = t[j]
        count += 1
    return Rs[:count].copy(), ts[:count].copy()


def score_pose(R, t, double fx, double fy, double cx, double cy,
               points, pixels, double threshold):
    """See priorloc.kernels._reference.score_pose."""
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] Rm = \
        np.ascontiguousarray(R, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] tv = \
        np.ascontiguousarray(t, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] P = \
        np.ascontiguousarray(points, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] px = \
        np.ascontiguousarray(pixels, dtype=np.float64)
    cdef Py_ssize_t n = P.shape[0]
    cdef cnp.ndarray[cnp.uint8_t, ndim=1, mode="c"] mask = \
        np.zeros(n, dtype=np.uint8)
    cdef double thr2 = threshold * threshold
    cdef double x, y, z, du, dv
    cdef Py_ssize_t i
    with nogil:
        for i in range(n):
            x = Rm[0, 0] * P[i, 0] + Rm[0, 1] * P[i, 1] + Rm[0, 2] * P[i, 2] + tv[0]
            y = Rm[1, 0] * P[i, 0] + Rm[1, 1] * P[i, 1] + Rm[1, 2] * P[i, 2] + tv[1]
            z = Rm[2, 0] * P[i, 0] + Rm[2, 1] * P[i, 1] + Rm[2, 2] * P[i, 2] + tv[2]
            if z <= _MIN_DEPTH:
                continue
            du = fx * x / z + cx - px[i, 0]
            dv = fy * y / z + cy - px[i, 1]
            if du * du + dv * dv < thr2:
                mask[i] = 1
    return np.asarray(mask)


def bilinear_sample(grid, x, y):
    """See priorloc.kernels._reference.bilinear_sample."""
    cdef cnp.ndarray[cnp.float64_t, ndim=3, mode="c"] G = \
        np.ascontiguousarray(grid, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] xs = \
        np.ascontiguousarray(x, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1, mode="c"] ys = \
        np.ascontiguousarray(y, dtype=np.float64)
    cdef Py_ssize_t H = G.shape[0], W = G.shape[1], C = G.shape[2]
    cdef Py_ssize_t m = xs.shape[0]
    cdef cnp.ndarray[cnp.float64_t, ndim=2, mode="c"] out = \
        np.empty((m, C), dtype=np.float64)
    cdef double xv, yv, wx, wy, w00, w01, w10, w11
    cdef Py_ssize_t i, ch, x0, y0, x1, y1
    with nogil:
        for i in range(m):
            xv = xs[i]
            yv = ys[i]
            if xv < 0.0:
                xv = 0.0
            elif xv > W - 1.0:
                xv = W - 1.0
            if yv < 0.0:
                yv = 0.0
            elif yv > H - 1.0:
                yv = H - 1.0
            x0 = <Py_ssize_t>floor(xv)
            y0 = <Py_ssize_t>floor(yv)
            x1 = x0 + 1
            if x1 > W - 1:
                x1 = W - 1
            y1 = y0 + 1
            if y1 > H - 1:
                y1 = H - 1
            wx = xv - x0
            wy = yv - y0
            w00 = (1.0 - wx) * (1.0 - wy)
            w01 = wx * (1.0 - wy)
            w10 = (1.0 - wx) * wy
            w11 = wx * wy
            for ch in range(C):
                out[i, ch] = (w00 * G[y0, x0, ch] + w01 * G[y0, x1, ch]
                              + w10 * G[y1, x0, ch] + w11 * G[y1, x1, ch])
    return np.asarray(out)
