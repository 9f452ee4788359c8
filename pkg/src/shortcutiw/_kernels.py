"""Compiled hot-path kernels for the channel-last convolution stack.

Every output element is written or accumulated by exactly one thread in a
fixed loop order, so results are bitwise deterministic regardless of the
thread count.  Zero padding is fused into the gathers (no padded copies).
"""

import os

os.environ.setdefault("NUMBA_THREADING_LAYER", "omp")

from numba import njit, prange  # noqa: E402


@njit(parallel=True, cache=True)
def im2col_nhwc(x, kh, kw, stride, padding, out):
    """Patch matrix of (N,H,W,C) input: rows (n,yo,xo), columns (kh,kw,c)."""
    n, h, w, c = x.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    for ni in prange(n):
        for yo in range(ho):
            for xo in range(wo):
                row = (ni * ho + yo) * wo + xo
                col = 0
                for i in range(kh):
                    yi = yo * stride + i - padding
                    for j in range(kw):
                        xi = xo * stride + j - padding
                        if 0 <= yi < h and 0 <= xi < w:
                            for ci in range(c):
                                out[row, col + ci] = x[ni, yi, xi, ci]
                        else:
                            for ci in range(c):
                                out[row, col + ci] = 0.0
                        col += c
    return out


@njit(parallel=True, cache=True)
def col2im_nhwc(dcol, kh, kw, stride, padding, out):
    """Adjoint of im2col_nhwc: scatter-add patches back; out is overwritten."""
    n, h, w, c = out.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (w + 2 * padding - kw) // stride + 1
    for ni in prange(n):
        out[ni] = 0.0
        for yo in range(ho):
            for xo in range(wo):
                row = (ni * ho + yo) * wo + xo
                col = 0
                for i in range(kh):
                    yi = yo * stride + i - padding
                    for j in range(kw):
                        xi = xo * stride + j - padding
                        if 0 <= yi < h and 0 <= xi < w:
                            for ci in range(c):
                                out[ni, yi, xi, ci] += dcol[row, col + ci]
                        col += c
    return out


@njit(parallel=True, cache=True)
def maxpool2x2_nhwc(x, out, idx):
    """2x2/2 max pooling; idx records the winning slot (row-major, first max)."""
    n, h, w, c = x.shape
    ho, wo = h // 2, w // 2
    for ni in prange(n):
        for yo in range(ho):
            for xo in range(wo):
                for ci in range(c):
                    best = x[ni, 2 * yo, 2 * xo, ci]
                    slot = 0
                    v = x[ni, 2 * yo, 2 * xo + 1, ci]
                    if v > best:
                        best = v
                        slot = 1
                    v = x[ni, 2 * yo + 1, 2 * xo, ci]
                    if v > best:
                        best = v
                        slot = 2
                    v = x[ni, 2 * yo + 1, 2 * xo + 1, ci]
                    if v > best:
                        best = v
                        slot = 3
                    out[ni, yo, xo, ci] = best
                    idx[ni, yo, xo, ci] = slot
    return out


@njit(parallel=True, cache=True)
def maxpool2x2_nhwc_backward(g, idx, out):
    """Route each pooled gradient to its recorded slot; out is overwritten."""
    n, ho, wo, c = g.shape
    for ni in prange(n):
        out[ni] = 0.0
        for yo in range(ho):
            for xo in range(wo):
                for ci in range(c):
                    slot = idx[ni, yo, xo, ci]
                    yi = 2 * yo + (1 if slot >= 2 else 0)
                    xi = 2 * xo + (slot & 1)
                    out[ni, yi, xi, ci] = g[ni, yo, xo, ci]
    return out
