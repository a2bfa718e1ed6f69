# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled twins of the routines in ``_fallback.py``."""
import numpy as np
cimport numpy as cnp
from libc.math cimport fabs, sqrt, copysign

cnp.import_array()

ctypedef fused real_t:
    float
    double


def arma_filter(eps, double phi, double theta):
    cdef cnp.ndarray[cnp.float64_t, ndim=1] e = np.ascontiguousarray(eps, dtype=np.float64)
    cdef Py_ssize_t n = e.shape[0], t
    cdef cnp.ndarray[cnp.float64_t, ndim=1] out = np.empty(n, dtype=np.float64)
    cdef double x_prev = 0.0, e_prev = 0.0
    for t in range(n):
        x_prev = e[t] + (theta * e_prev + phi * x_prev)
        out[t] = x_prev
        e_prev = e[t]
    return out


def hessenberg(a):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] h_arr = np.array(a, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] h = h_arr
    cdef Py_ssize_t n = h.shape[0], k, i, j
    cdef double xnorm, alpha, vnorm, acc
    cdef double[::1] v = np.zeros(n, dtype=np.float64)
    for k in range(n - 2):
        xnorm = 0.0
        for i in range(k + 1, n):
            xnorm += h[i, k] * h[i, k]
        xnorm = sqrt(xnorm)
        if xnorm == 0.0:
            continue
        alpha = -copysign(xnorm, h[k + 1, k])
        for i in range(k + 1, n):
            v[i] = h[i, k]
        v[k + 1] -= alpha
        vnorm = 0.0
        for i in range(k + 1, n):
            vnorm += v[i] * v[i]
        vnorm = sqrt(vnorm)
        if vnorm == 0.0:
            continue
        for i in range(k + 1, n):
            v[i] /= vnorm
        # left: H[k+1:, k:] -= 2 v (v^T H[k+1:, k:])
        for j in range(k, n):
            acc = 0.0
            for i in range(k + 1, n):
                acc += v[i] * h[i, j]
            acc *= 2.0
            for i in range(k + 1, n):
                h[i, j] -= acc * v[i]
        # right: H[:, k+1:] -= 2 (H[:, k+1:] v) v^T
        for i in range(n):
            acc = 0.0
            for j in range(k + 1, n):
                acc += h[i, j] * v[j]
            acc *= 2.0
            for j in range(k + 1, n):
                h[i, j] -= acc * v[j]
        for i in range(k + 2, n):
            h[i, k] = 0.0
    return h_arr


def hqr(h, Py_ssize_t max_iter):
    cdef cnp.ndarray[cnp.float64_t, ndim=2] a_arr = np.array(h, dtype=np.float64, copy=True, order="C")
    cdef double[:, ::1] a = a_arr
    cdef Py_ssize_t n = a.shape[0]
    wr_arr = np.full(n, np.nan)
    wi_arr = np.full(n, np.nan)
    cdef double[::1] wr = wr_arr
    cdef double[::1] wi = wi_arr
    if n == 0:
        return wr_arr, wi_arr, True
    cdef Py_ssize_t nn, l, m, k, i, j, mmin, its, sweeps = 0
    cdef double anorm = 0.0, t = 0.0
    cdef double p = 0.0, q = 0.0, r = 0.0, s, w, x, y, z, u, vv
    for i in range(n):
        for j in range(i - 1 if i > 0 else 0, n):
            anorm += fabs(a[i, j])
    nn = n - 1
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = fabs(a[l - 1, l - 1]) + fabs(a[l, l])
                if s == 0.0:
                    s = anorm
                if fabs(a[l, l - 1]) + s == s:
                    a[l, l - 1] = 0.0
                    break
                l -= 1
            x = a[nn, nn]
            if l == nn:
                wr[nn] = x + t
                wi[nn] = 0.0
                nn -= 1
                break
            y = a[nn - 1, nn - 1]
            w = a[nn, nn - 1] * a[nn - 1, nn]
            if l == nn - 1:
                p = 0.5 * (y - x)
                q = p * p + w
                z = sqrt(fabs(q))
                x += t
                if q >= 0.0:
                    z = p + copysign(z, p)
                    wr[nn - 1] = x + z
                    wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = 0.0
                    wi[nn] = 0.0
                else:
                    wr[nn - 1] = x + p
                    wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if sweeps >= max_iter:
                return wr_arr, wi_arr, False
            if its == 10 or its == 20:
                t += x
                for i in range(nn + 1):
                    a[i, i] -= x
                s = fabs(a[nn, nn - 1]) + fabs(a[nn - 1, nn - 2])
                x = 0.75 * s
                y = x
                w = -0.4375 * s * s
            its += 1
            sweeps += 1
            m = nn - 2
            while m >= l:
                z = a[m, m]
                r = x - z
                s = y - z
                p = (r * s - w) / a[m + 1, m] + a[m, m + 1]
                q = a[m + 1, m + 1] - z - r - s
                r = a[m + 2, m + 1]
                s = fabs(p) + fabs(q) + fabs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = fabs(a[m, m - 1]) * (fabs(q) + fabs(r))
                vv = fabs(p) * (fabs(a[m - 1, m - 1]) + fabs(z) + fabs(a[m + 1, m + 1]))
                if u + vv == vv:
                    break
                m -= 1
            for i in range(m + 2, nn + 1):
                a[i, i - 2] = 0.0
                if i != m + 2:
                    a[i, i - 3] = 0.0
            for k in range(m, nn):
                if k != m:
                    p = a[k, k - 1]
                    q = a[k + 1, k - 1]
                    r = a[k + 2, k - 1] if k != nn - 1 else 0.0
                    x = fabs(p) + fabs(q) + fabs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = copysign(sqrt(p * p + q * q + r * r), p)
                if s == 0.0:
                    continue
                if k == m:
                    if l != m:
                        a[k, k - 1] = -a[k, k - 1]
                else:
                    a[k, k - 1] = -s * x
                p += s
                x = p / s
                y = q / s
                z = r / s
                q /= p
                r /= p
                for j in range(k, nn + 1):
                    p = a[k, j] + q * a[k + 1, j]
                    if k != nn - 1:
                        p += r * a[k + 2, j]
                        a[k + 2, j] -= p * z
                    a[k + 1, j] -= p * y
                    a[k, j] -= p * x
                mmin = nn if nn < k + 3 else k + 3
                for i in range(l, mmin + 1):
                    p = x * a[i, k] + y * a[i, k + 1]
                    if k != nn - 1:
                        p += z * a[i, k + 2]
                        a[i, k + 2] -= p * r
                    a[i, k + 1] -= p * q
                    a[i, k] -= p
    return wr_arr, wi_arr, True


cdef void _im2col(real_t[:, :, ::1] xp, real_t[:, :, :, ::1] out,
                  Py_ssize_t ksize, Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t b, o, c, j, base
    for b in range(out.shape[0]):
        for o in range(out.shape[1]):
            base = o * stride
            for c in range(out.shape[2]):
                for j in range(ksize):
                    out[b, o, c, j] = xp[b, c, base + j]


cdef void _col2im(real_t[:, :, :, ::1] cols, real_t[:, :, ::1] out,
                  Py_ssize_t stride) noexcept nogil:
    cdef Py_ssize_t b, o, c, j, base
    for b in range(cols.shape[0]):
        for o in range(cols.shape[1]):
            base = o * stride
            for c in range(cols.shape[2]):
                for j in range(cols.shape[3]):
                    out[b, c, base + j] += cols[b, o, c, j]


def im2col(xp, Py_ssize_t ksize, Py_ssize_t stride, Py_ssize_t l_out):
    xp = np.ascontiguousarray(xp)
    out = np.empty((xp.shape[0], l_out, xp.shape[1], ksize), dtype=xp.dtype)
    if xp.dtype == np.float32:
        _im2col[float](xp, out, ksize, stride)
    elif xp.dtype == np.float64:
        _im2col[double](xp, out, ksize, stride)
    else:
        raise TypeError(f"unsupported dtype {xp.dtype}")
    return out


def col2im(cols, Py_ssize_t lp, Py_ssize_t stride):
    cols = np.ascontiguousarray(cols)
    out = np.zeros((cols.shape[0], cols.shape[2], lp), dtype=cols.dtype)
    if cols.dtype == np.float32:
        _col2im[float](cols, out, stride)
    elif cols.dtype == np.float64:
        _col2im[double](cols, out, stride)
    else:
        raise TypeError(f"unsupported dtype {cols.dtype}")
    return out
