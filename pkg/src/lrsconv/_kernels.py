"""Compiled inner loops for the convolution paths.

Every path is built from one primitive: add ``v * plane`` into an output
plane shifted by ``(-dx, -dy)``, with the write window clipped at the
borders (zero padding). Planes are passed flattened to ``H * W`` and rows of
the input are read contiguously.
"""

import numba
import numpy as np


@numba.njit(cache=True, inline="always")
def _shift_add(dst, src, v, H, W, dx, dy):
    h0 = max(0, -dx)
    h1 = min(H, H - dx)
    if dy == 0:
        # full-width rows are adjacent in memory: one flat run
        s = src[(h0 + dx) * W:(h1 + dx) * W]
        d = dst[h0 * W:h1 * W]
        for q in range(s.size):
            d[q] += v * s[q]
        return
    w0 = max(0, -dy)
    n = min(W, W - dy) - w0
    for h in range(h0, h1):
        # offset-free inner loop so LLVM vectorizes it
        s = src[(h + dx) * W + w0 + dy:(h + dx) * W + w0 + dy + n]
        d = dst[h * W + w0:h * W + w0 + n]
        for q in range(n):
            d[q] += v * s[q]


@numba.njit(cache=True)
def dense_direct(x, w, H, W, out):
    # x: (I, H*W), w: (I, J, K, T), out: (J, H*W)
    I, J, K, T = w.shape
    cx = K // 2
    cy = T // 2
    for i in range(I):
        src = x[i]
        for j in range(J):
            dst = out[j]
            for kx in range(K):
                for ky in range(T):
                    _shift_add(dst, src, w[i, j, kx, ky], H, W, kx - cx, ky - cy)


@numba.njit(cache=True)
def sparse_scatter(x, offsets, values, packed, K, T, H, W, out):
    KT = K * T
    cx = K // 2
    cy = T // 2
    for i in range(offsets.size - 1):
        src = x[i]
        for e in range(offsets[i], offsets[i + 1]):
            p = np.int64(packed[e])
            j = p // KT
            pos = p - j * KT
            kx = pos // T
            ky = pos - kx * T
            _shift_add(out[j], src, values[e], H, W, kx - cx, ky - cy)


@numba.njit(cache=True)
def pointwise(x, m, out):
    # out[co] += m[ci, co] * x[ci]
    n = x.shape[1]
    for ci in range(m.shape[0]):
        src = x[ci]
        for co in range(m.shape[1]):
            dst = out[co]
            v = m[ci, co]
            for q in range(n):
                dst[q] += v * src[q]


@numba.njit(cache=True)
def depthwise(x, f, H, W, along_x, out):
    # f is (taps, R); tap k of rank channel r shifts along one spatial axis
    taps = f.shape[0]
    c = taps // 2
    for r in range(f.shape[1]):
        for k in range(taps):
            if along_x:
                _shift_add(out[r], x[r], f[k, r], H, W, k - c, 0)
            else:
                _shift_add(out[r], x[r], f[k, r], H, W, 0, k - c)
