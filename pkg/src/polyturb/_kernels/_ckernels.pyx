# cython: language_level=3
"""Compiled hot loops.  Each function mirrors one in ``_pykernels``."""

import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, sin, cos, floor, fabs, isfinite

cnp.import_array()


def corrector_partial(const double[:, ::1] k, const double[:, ::1] dirs,
                      const double[::1] amp, const int[::1] phase,
                      const double[::1] x, const double[::1] r):
    cdef Py_ssize_t n = k.shape[0], d = k.shape[1], m, i, j
    cdef double kx, kr, g
    cdef double v[3]
    out = np.zeros((d, d))
    cdef double[:, ::1] o = out
    with nogil:
        for m in range(n):
            kx = 0.0
            kr = 0.0
            for i in range(d):
                kx += k[m, i] * x[i]
                kr += k[m, i] * r[i]
            if phase[m] == 0:
                g = -amp[m] * kr * sin(kx)
            else:
                g = amp[m] * kr * cos(kx)
            for i in range(d):
                v[i] = g * dirs[m, i]
            for i in range(d):
                for j in range(d):
                    o[i, j] += v[i] * v[j]
    return out


cdef inline void _diffusion_apply(const double* rv, const double* xi, Py_ssize_t d,
                                  double b, double* out) noexcept nogil:
    cdef double s = 0.0, p = 0.0, a, c, nr
    cdef Py_ssize_t i
    for i in range(d):
        s += rv[i] * rv[i]
    if s == 0.0:
        for i in range(d):
            out[i] = xi[i]
        return
    nr = sqrt(s)
    for i in range(d):
        p += rv[i] * xi[i]
    p /= nr
    a = sqrt(1.0 + 0.5 * s)
    c = sqrt(1.0 + 0.5 * (b + 1.0) * s)
    for i in range(d):
        out[i] = a * p * rv[i] / nr + c * (xi[i] - p * rv[i] / nr)


def limit_sde_update(const double[:, ::1] R, const double[:, ::1] xi,
                     const double[:, ::1] M, double dt, double inv_beta,
                     double noise, double b):
    cdef Py_ssize_t n = R.shape[0], d = R.shape[1], p, i, j
    cdef double sdt = sqrt(dt)
    cdef double bx[3]
    cdef double drift
    out = np.empty((n, d))
    cdef double[:, ::1] o = out
    with nogil:
        for p in range(n):
            _diffusion_apply(&R[p, 0], &xi[p, 0], d, b, bx)
            for i in range(d):
                drift = -inv_beta * R[p, i]
                for j in range(d):
                    drift += M[i, j] * R[p, j]
                o[p, i] = R[p, i] + dt * drift + noise * sdt * bx[i]
    return out


cdef inline double _fene_radius(double rs, double c, double bf) noexcept nogil:
    # root in (0, sqrt(bf)) of rho - rs + c*rho^3/(bf - rho^2), increasing and convex
    cdef double root = sqrt(bf), lo = 0.0, hi = root, rho, q, g, dg, nxt
    cdef int it
    rho = rs if rs < root else 0.5 * (rs if rs < 2.0 * root else 2.0 * root)
    if rho >= root:
        rho = 0.5 * (lo + hi)
    for it in range(200):
        q = bf - rho * rho
        g = rho - rs + c * rho * rho * rho / q
        if g == 0.0:
            return rho
        if g > 0.0:
            hi = rho
        else:
            lo = rho
        dg = 1.0 + c * rho * rho * (3.0 * bf - rho * rho) / (q * q)
        nxt = rho - g / dg
        if fabs(nxt - rho) <= 1e-15 * root:
            return nxt
        if not (nxt > lo and nxt < hi):
            nxt = 0.5 * (lo + hi)
        rho = nxt
    return rho


cdef inline int _fene_sub(double* rv, const double* dw, Py_ssize_t d,
                          const double* M, double h, double inv_beta,
                          double noise, double b, double bf) noexcept nogil:
    cdef double bx[3]
    cdef double tmp[3]
    cdef double rs = 0.0, rho, drift
    cdef Py_ssize_t i, j
    _diffusion_apply(rv, dw, d, b, bx)
    for i in range(d):
        drift = -inv_beta * rv[i]
        for j in range(d):
            drift += M[i * d + j] * rv[j]
        tmp[i] = rv[i] + h * drift + noise * bx[i]
        rs += tmp[i] * tmp[i]
    rs = sqrt(rs)
    if not isfinite(rs):
        return 1
    if rs == 0.0:
        for i in range(d):
            rv[i] = 0.0
        return 0
    rho = _fene_radius(rs, h * inv_beta, bf)
    if not (rho * rho < bf * (1.0 - 1e-14)):
        return 1
    for i in range(d):
        rv[i] = tmp[i] * (rho / rs)
    return 0


def fene_update(const double[:, ::1] R, const double[:, ::1] xi,
                const double[:, ::1] M, double dt, double inv_beta,
                double noise, double b, double bf, int max_retry):
    cdef Py_ssize_t n = R.shape[0], d = R.shape[1], p, i, s, nsub
    cdef double sdt = sqrt(dt), h
    cdef double rv[3]
    cdef double dw[3]
    cdef int level, bad, retries = 0, failed = 0
    cdef double m[9]
    out = np.empty((n, d))
    cdef double[:, ::1] o = out
    for i in range(d):
        for s in range(d):
            m[i * d + s] = M[i, s]
    with nogil:
        for p in range(n):
            level = 0
            while True:
                nsub = 1 << level
                h = dt / nsub
                for i in range(d):
                    rv[i] = R[p, i]
                    dw[i] = xi[p, i] * sdt / nsub
                bad = 0
                for s in range(nsub):
                    if _fene_sub(rv, dw, d, m, h, inv_beta, noise, b, bf):
                        bad = 1
                        break
                if not bad:
                    break
                level += 1
                retries += 1
                if level > max_retry:
                    failed = 1
                    break
            if failed:
                break
            for i in range(d):
                o[p, i] = rv[i]
    if failed:
        return None, retries
    return out, retries


cdef inline void _cubic_weights(double t, double* w) noexcept nogil:
    w[0] = -t * (t - 1.0) * (t - 2.0) / 6.0
    w[1] = (t + 1.0) * (t - 1.0) * (t - 2.0) / 2.0
    w[2] = -(t + 1.0) * t * (t - 2.0) / 2.0
    w[3] = (t + 1.0) * t * (t - 1.0) / 6.0


def interp_periodic(const double[:, :, ::1] f, const double[::1] q1,
                    const double[::1] q2, bint clip):
    cdef Py_ssize_t n1 = f.shape[0], n2 = f.shape[1], nc = f.shape[2]
    cdef Py_ssize_t m = q1.shape[0], p, a, bb, c, i0, j0, ii, jj
    cdef double t1, t2, acc, lo, hi, val
    cdef double w1[4]
    cdef double w2[4]
    cdef Py_ssize_t idx1[4]
    cdef Py_ssize_t idx2[4]
    out = np.empty((m, nc))
    cdef double[:, ::1] o = out
    with nogil:
        for p in range(m):
            i0 = <Py_ssize_t>floor(q1[p])
            j0 = <Py_ssize_t>floor(q2[p])
            t1 = q1[p] - i0
            t2 = q2[p] - j0
            _cubic_weights(t1, w1)
            _cubic_weights(t2, w2)
            for a in range(4):
                idx1[a] = ((i0 - 1 + a) % n1 + n1) % n1
                idx2[a] = ((j0 - 1 + a) % n2 + n2) % n2
            for c in range(nc):
                acc = 0.0
                for a in range(4):
                    ii = idx1[a]
                    val = 0.0
                    for bb in range(4):
                        val += w2[bb] * f[ii, idx2[bb], c]
                    acc += w1[a] * val
                if clip:
                    lo = f[idx1[1], idx2[1], c]
                    hi = lo
                    for a in range(1, 3):
                        for bb in range(1, 3):
                            val = f[idx1[a], idx2[bb], c]
                            if val < lo:
                                lo = val
                            if val > hi:
                                hi = val
                    if acc < lo:
                        acc = lo
                    elif acc > hi:
                        acc = hi
                o[p, c] = acc
    return out
