"""Pure-Python/numpy versions of the hot kernels.

Every function here has a twin with the same signature in ``_kernels.pyx``.
"""
import math

import numpy as np


def arma_filter(eps, phi, theta):
    """x[t] = eps[t] + (theta * eps[t-1] + phi * x[t-1]), zero initial state."""
    eps = np.ascontiguousarray(eps, dtype=np.float64)
    out = np.empty_like(eps)
    x_prev = 0.0
    e_prev = 0.0
    for t, e in enumerate(eps.tolist()):
        x_prev = e + (theta * e_prev + phi * x_prev)
        out[t] = x_prev
        e_prev = e
    return out


def hessenberg(a):
    """Householder reduction to upper Hessenberg form (returns a new array)."""
    h = np.array(a, dtype=np.float64, copy=True)
    n = h.shape[0]
    for k in range(n - 2):
        x = h[k + 1:, k]
        xnorm = math.sqrt(float(x @ x))
        if xnorm == 0.0:
            continue
        alpha = -math.copysign(xnorm, x[0])
        v = x.copy()
        v[0] -= alpha
        vnorm = math.sqrt(float(v @ v))
        if vnorm == 0.0:
            continue
        v /= vnorm
        h[k + 1:, k:] -= 2.0 * np.outer(v, v @ h[k + 1:, k:])
        h[:, k + 1:] -= 2.0 * np.outer(h[:, k + 1:] @ v, v)
        h[k + 2:, k] = 0.0
    return h


def hqr(h, max_iter):
    """Eigenvalues of an upper Hessenberg matrix by Francis double-shift QR.

    Returns ``(wr, wi, ok)``. ``ok`` is False when the total sweep count
    reaches ``max_iter``; eigenvalues not yet deflated are left as NaN.
    """
    a = np.array(h, dtype=np.float64, copy=True)
    n = a.shape[0]
    wr = np.full(n, np.nan)
    wi = np.full(n, np.nan)
    if n == 0:
        return wr, wi, True
    anorm = 0.0
    for i in range(n):
        for j in range(max(i - 1, 0), n):
            anorm += abs(a[i, j])
    nn = n - 1
    t = 0.0
    sweeps = 0
    while nn >= 0:
        its = 0
        while True:
            l = nn
            while l >= 1:
                s = abs(a[l - 1, l - 1]) + abs(a[l, l])
                if s == 0.0:
                    s = anorm
                if abs(a[l, l - 1]) + s == s:
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
                z = math.sqrt(abs(q))
                x += t
                if q >= 0.0:
                    z = p + math.copysign(z, p)
                    wr[nn - 1] = wr[nn] = x + z
                    if z != 0.0:
                        wr[nn] = x - w / z
                    wi[nn - 1] = wi[nn] = 0.0
                else:
                    wr[nn - 1] = wr[nn] = x + p
                    wi[nn - 1] = -z
                    wi[nn] = z
                nn -= 2
                break
            if sweeps >= max_iter:
                return wr, wi, False
            if its == 10 or its == 20:
                t += x
                for i in range(nn + 1):
                    a[i, i] -= x
                s = abs(a[nn, nn - 1]) + abs(a[nn - 1, nn - 2])
                x = y = 0.75 * s
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
                s = abs(p) + abs(q) + abs(r)
                p /= s
                q /= s
                r /= s
                if m == l:
                    break
                u = abs(a[m, m - 1]) * (abs(q) + abs(r))
                v = abs(p) * (abs(a[m - 1, m - 1]) + abs(z) + abs(a[m + 1, m + 1]))
                if u + v == v:
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
                    x = abs(p) + abs(q) + abs(r)
                    if x != 0.0:
                        p /= x
                        q /= x
                        r /= x
                s = math.copysign(math.sqrt(p * p + q * q + r * r), p)
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
    return wr, wi, True


def im2col(xp, ksize, stride, l_out):
    """[B, C, Lp] padded input -> [B, L_out, C, K] patches (contiguous copy)."""
    win = np.lib.stride_tricks.sliding_window_view(xp, ksize, axis=2)
    win = win[:, :, : stride * (l_out - 1) + 1 : stride, :]
    return np.ascontiguousarray(win.transpose(0, 2, 1, 3))


def col2im(cols, lp, stride):
    """Adjoint of im2col: scatter-add [B, L_out, C, K] patches into [B, C, Lp]."""
    b, l_out, c, k = cols.shape
    out = np.zeros((b, c, lp), dtype=cols.dtype)
    stop = stride * (l_out - 1) + 1
    for j in range(k):
        out[:, :, j : j + stop : stride] += cols[:, :, :, j].transpose(0, 2, 1)
    return out
