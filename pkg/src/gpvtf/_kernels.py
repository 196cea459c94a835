"""Compiled pairwise loops for mini-batch discrimination."""
import numba
import numpy as np


# exp(-x) for x >= 0 that vectorizes (libm's exp does not): Cody-Waite
# reduction, degree-13 Taylor polynomial, exponent assembled from bits.
# Within 1 ulp of np.exp; arguments past 708 are clamped (result ~1e-308).
_LN2_HI = 6.93147180369123816490e-01
_LN2_LO = 1.90821492927058770002e-10
_INV_LN2 = 1.44269504088896338700e+00


@numba.njit(cache=True, error_model="numpy")
def exp_neg_inplace(x, n, bits):
    """Overwrite x[:n] with exp(-x[:n]); ``bits`` is int64 scratch of at least n entries."""
    for j in range(n):
        xj = min(x[j], 708.0)
        nf = np.floor(xj * _INV_LN2 + 0.5)
        r = (nf * _LN2_HI - xj) + nf * _LN2_LO
        p = 1.0 / 6227020800.0
        p = p * r + 1.0 / 479001600.0
        p = p * r + 1.0 / 39916800.0
        p = p * r + 1.0 / 3628800.0
        p = p * r + 1.0 / 362880.0
        p = p * r + 1.0 / 40320.0
        p = p * r + 1.0 / 5040.0
        p = p * r + 1.0 / 720.0
        p = p * r + 1.0 / 120.0
        p = p * r + 1.0 / 24.0
        p = p * r + 1.0 / 6.0
        p = p * r + 0.5
        p = p * r + 1.0
        p = p * r + 1.0
        x[j] = p
        bits[j] = (1023 - np.int64(nf)) << 52
    scale = bits.view(np.float64)
    for j in range(n):
        x[j] *= scale[j]


@numba.njit(cache=True, error_model="numpy")
def minibatch_forward(m):
    """m: B x C x b (kernels, kernel dims, samples). Returns o (b x B) and e (B x b x b).

    Only the i < j half of e is written; the inner loops run over contiguous j.
    """
    nk, nc, b = m.shape
    e = np.empty((nk, b, b))
    o = np.zeros((b, nk))
    dist = np.empty(b)
    bits = np.empty(b, np.int64)
    for k in range(nk):
        for i in range(b - 1):
            n = b - i - 1
            for j in range(n):
                dist[j] = 0.0
            for c in range(nc):
                a = m[k, c, i]
                row = m[k, c]
                for j in range(n):
                    dist[j] += abs(a - row[i + 1 + j])
            exp_neg_inplace(dist, n, bits)
            total = 0.0
            for j in range(n):
                v = dist[j]
                e[k, i, i + 1 + j] = v
                total += v
                o[i + 1 + j, k] += v
            o[i, k] += total
    return o, e


@numba.njit(cache=True, error_model="numpy")
def minibatch_backward(m, e, upstream):
    """Gradient w.r.t. m (same B x C x b layout) given dL/do; each pair enters both o[i] and o[j]."""
    nk, nc, b = m.shape
    g = np.zeros((nk, nc, b))
    w = np.empty(b)
    s = np.empty(b)
    for k in range(nk):
        for i in range(b - 1):
            n = b - i - 1
            ui = upstream[i, k]
            for j in range(n):
                w[j] = (ui + upstream[i + 1 + j, k]) * e[k, i, i + 1 + j]
            for c in range(nc):
                a = m[k, c, i]
                row = m[k, c]
                grow = g[k, c]
                # no reduction in this loop so it vectorizes; row i's share is summed below
                for j in range(n):
                    d = a - row[i + 1 + j]
                    v = w[j] * ((d > 0) - (d < 0))  # sign(d) * w, sign(0) = 0
                    s[j] = v
                    grow[i + 1 + j] += v
                acc = 0.0
                for j in range(n):
                    acc += s[j]
                grow[i] -= acc
    return g


@numba.njit(cache=True, error_model="numpy")
def adam_inplace(p, g, m, v, lr, beta1, beta2, eps, step):
    """Bias-corrected Adam on flat contiguous buffers, all updated in place."""
    c1 = 1.0 - beta1 ** step
    c2 = 1.0 - beta2 ** step
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + (1.0 - beta1) * gi
        vi = beta2 * v[i] + (1.0 - beta2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        p[i] -= lr * (mi / c1) / (np.sqrt(vi / c2) + eps)
