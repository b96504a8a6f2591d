# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled kernels; see ``_pykernels`` for the reference semantics."""
import numpy as np
cimport numpy as cnp
from libc.math cimport exp, fabs, INFINITY

cnp.import_array()


def lwt_forward(const double[:, ::1] centers, const double[:, ::1] translations,
                const double[::1] widths, z):
    cdef double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(3)
    cdef double y0 = zv[0], y1 = zv[1], y2 = zv[2]
    cdef double d0, d1, d2, k, w
    cdef Py_ssize_t j, K = widths.shape[0]
    for j in range(K):
        w = widths[j]
        d0 = y0 - centers[j, 0]
        d1 = y1 - centers[j, 1]
        d2 = y2 - centers[j, 2]
        k = exp(-(d0 * d0 + d1 * d1 + d2 * d2) / (2.0 * w * w))
        y0 += k * translations[j, 0]
        y1 += k * translations[j, 1]
        y2 += k * translations[j, 2]
    out[0] = y0
    out[1] = y1
    out[2] = y2
    return out


def lwt_forward_jacobian(const double[:, ::1] centers,
                         const double[:, ::1] translations,
                         const double[::1] widths, z):
    cdef double[::1] zv = np.ascontiguousarray(z, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] y_out = np.empty(3)
    cdef cnp.ndarray[cnp.float64_t, ndim=2] J_out = np.empty((3, 3))
    cdef double y[3]
    cdef double J[3][3]
    cdef double g[3]
    cdef double row[3]
    cdef double k, w, s
    cdef Py_ssize_t j, a, b, K = widths.shape[0]
    for a in range(3):
        y[a] = zv[a]
        for b in range(3):
            J[a][b] = 1.0 if a == b else 0.0
    for j in range(K):
        w = widths[j]
        s = 0.0
        for a in range(3):
            g[a] = y[a] - centers[j, a]
            s += g[a] * g[a]
        k = exp(-s / (2.0 * w * w))
        for a in range(3):
            g[a] *= -k / (w * w)
        # J <- (I + t g^T) J
        for b in range(3):
            s = g[0] * J[0][b] + g[1] * J[1][b] + g[2] * J[2][b]
            row[b] = s
        for a in range(3):
            for b in range(3):
                J[a][b] += translations[j, a] * row[b]
            y[a] += k * translations[j, a]
    for a in range(3):
        y_out[a] = y[a]
        for b in range(3):
            J_out[a, b] = J[a][b]
    return y_out, J_out


cdef bint _invert_step(double c0, double c1, double c2,
                       double t0, double t1, double t2, double w,
                       double y0, double y1, double y2,
                       double tol, int max_iter, double* a_out) nogil:
    cdef double inv_2w2 = 1.0 / (2.0 * w * w)
    cdef double lo = 0.0, hi = 1.0
    cdef double r0 = y0 - c0, r1 = y1 - c1, r2 = y2 - c2
    cdef double a = exp(-(r0 * r0 + r1 * r1 + r2 * r2) * inv_2w2)
    cdef double k, g, dg, a_new
    cdef double g_prev = INFINITY
    cdef int it
    for it in range(max_iter):
        r0 = y0 - a * t0 - c0
        r1 = y1 - a * t1 - c1
        r2 = y2 - a * t2 - c2
        k = exp(-(r0 * r0 + r1 * r1 + r2 * r2) * inv_2w2)
        g = a - k
        # stagnation at the rounding floor of g counts as converged
        if g == 0.0 or hi - lo <= tol or (fabs(g) < 1e-10 and fabs(g) > 0.5 * g_prev):
            a_out[0] = a
            return True
        g_prev = fabs(g)
        if g < 0.0:
            lo = a
        else:
            hi = a
        dg = 1.0 - k * (r0 * t0 + r1 * t1 + r2 * t2) / (w * w)
        if dg > 0.0:
            a_new = a - g / dg
        else:
            a_new = 0.5 * (lo + hi)
        if a_new < lo or a_new > hi:
            a_new = 0.5 * (lo + hi)
        if fabs(a_new - a) <= tol:
            a_out[0] = a_new
            return True
        a = a_new
    a_out[0] = a
    return False


def lwt_inverse(const double[:, ::1] centers, const double[:, ::1] translations,
                const double[::1] widths, y, double tol=1e-15, int max_iter=200):
    cdef double[::1] yv = np.ascontiguousarray(y, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(3)
    cdef double z0 = yv[0], z1 = yv[1], z2 = yv[2]
    cdef double a = 0.0
    cdef bint ok = True
    cdef Py_ssize_t j
    for j in range(widths.shape[0] - 1, -1, -1):
        ok = _invert_step(centers[j, 0], centers[j, 1], centers[j, 2],
                          translations[j, 0], translations[j, 1], translations[j, 2],
                          widths[j], z0, z1, z2, tol, max_iter, &a)
        if not ok:
            break
        z0 -= a * translations[j, 0]
        z1 -= a * translations[j, 1]
        z2 -= a * translations[j, 2]
    out[0] = z0
    out[1] = z1
    out[2] = z2
    return out, bool(ok)


def gmr_mean(x, const double[:, ::1] mu_in, const double[:, :, ::1] prec,
             const double[:, :, ::1] A, const double[:, ::1] b,
             const double[::1] log_c):
    cdef double[::1] xv = np.ascontiguousarray(x, dtype=np.float64)
    cdef Py_ssize_t K = log_c.shape[0], i, p, q
    cdef cnp.ndarray[cnp.float64_t, ndim=1] lw_arr = np.empty(K)
    cdef double[::1] lw = lw_arr
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.zeros(3)
    cdef double d[3]
    cdef double m, s, quad, total = 0.0, o0 = 0.0, o1 = 0.0, o2 = 0.0
    for i in range(K):
        for p in range(3):
            d[p] = xv[p] - mu_in[i, p]
        quad = 0.0
        for p in range(3):
            s = 0.0
            for q in range(3):
                s += prec[i, p, q] * d[q]
            quad += d[p] * s
        lw[i] = log_c[i] - 0.5 * quad
    m = lw[0]
    for i in range(1, K):
        if lw[i] > m:
            m = lw[i]
    for i in range(K):
        s = exp(lw[i] - m)
        total += s
        o0 += s * (A[i, 0, 0] * xv[0] + A[i, 0, 1] * xv[1] + A[i, 0, 2] * xv[2] + b[i, 0])
        o1 += s * (A[i, 1, 0] * xv[0] + A[i, 1, 1] * xv[1] + A[i, 1, 2] * xv[2] + b[i, 1])
        o2 += s * (A[i, 2, 0] * xv[0] + A[i, 2, 1] * xv[1] + A[i, 2, 2] * xv[2] + b[i, 2])
    out[0] = o0 / total
    out[1] = o1 / total
    out[2] = o2 / total
    return out


def wsaqf_value_grad(eps, const double[:, ::1] P0, const double[:, :, ::1] P,
                     const double[:, ::1] mu):
    cdef double[::1] x = np.ascontiguousarray(eps, dtype=np.float64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] grad = np.empty(3)
    cdef double g[3]
    cdef double dx[3]
    cdef double Pd[3]
    cdef double PTx[3]
    cdef double V = 0.0, s, q
    cdef Py_ssize_t l, a, c
    for a in range(3):
        s = P0[a, 0] * x[0] + P0[a, 1] * x[1] + P0[a, 2] * x[2]
        V += x[a] * s
        g[a] = 2.0 * s
    for l in range(P.shape[0]):
        for a in range(3):
            dx[a] = x[a] - mu[l, a]
        q = 0.0
        for a in range(3):
            Pd[a] = 0.0
            PTx[a] = 0.0
            for c in range(3):
                Pd[a] += P[l, a, c] * dx[c]
                PTx[a] += P[l, c, a] * x[c]
            q += x[a] * Pd[a]
        if q > 0.0:
            V += q * q
            for a in range(3):
                g[a] += 2.0 * q * (Pd[a] + PTx[a])
    for a in range(3):
        grad[a] = g[a]
    return V, grad
