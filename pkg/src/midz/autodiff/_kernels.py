"""Compiled inner loops. Each loop runs in a fixed sequential order, so
results are bit-identical from run to run."""

import numba
import numpy as np


@numba.njit(cache=True)
def im2col(xp, kh, kw, stride, Ho, Wo):
    B, _, _, C = xp.shape
    cols = np.empty((B, Ho, Wo, kh, kw, C), dtype=xp.dtype)
    for b in range(B):
        for oh in range(Ho):
            for ow in range(Wo):
                for i in range(kh):
                    for j in range(kw):
                        r = oh * stride + i
                        q = ow * stride + j
                        for c in range(C):
                            cols[b, oh, ow, i, j, c] = xp[b, r, q, c]
    return cols


@numba.njit(cache=True)
def col2im(dcols, Hp, Wp, stride):
    B, Ho, Wo, kh, kw, C = dcols.shape
    out = np.zeros((B, Hp, Wp, C), dtype=dcols.dtype)
    for b in range(B):
        for oh in range(Ho):
            for ow in range(Wo):
                for i in range(kh):
                    for j in range(kw):
                        r = oh * stride + i
                        q = ow * stride + j
                        for c in range(C):
                            out[b, r, q, c] += dcols[b, oh, ow, i, j, c]
    return out


@numba.njit(cache=True)
def adam_update(p, g, m, v, beta1, beta2, inv_bc2, eps, step_size):
    one = np.float32(1.0)
    for i in range(p.size):
        gi = g[i]
        mi = beta1 * m[i] + (one - beta1) * gi
        vi = beta2 * v[i] + (one - beta2) * (gi * gi)
        m[i] = mi
        v[i] = vi
        p[i] -= step_size * mi / (np.sqrt(vi * inv_bc2) + eps)
