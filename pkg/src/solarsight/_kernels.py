"""numba-compiled inner loops for the convolution operator.

Direct convolution beats GEMM-over-im2col on this package's target (one
core, modest memory bandwidth) because it writes no large intermediates.
Kernels are cached to disk, so each process pays at most a cache load.

``fastmath`` appears only on reduction kernels where strict IEEE ordering
would block vectorization; the reassociated order is fixed at compile
time, so results stay bitwise reproducible run to run on one machine.
"""

import numpy as np
from numba import njit


@njit(cache=True)
def conv_fwd(xp, w, stride, oh, ow):
    n_n, n_c, _, _ = xp.shape
    n_f, _, k, _ = w.shape
    out = np.zeros((n_n, n_f, oh, ow), dtype=xp.dtype)
    for n in range(n_n):
        for f in range(n_f):
            for c in range(n_c):
                for i in range(k):
                    for j in range(k):
                        wv = w[f, c, i, j]
                        for y in range(oh):
                            xrow = xp[n, c, y * stride + i]
                            orow = out[n, f, y]
                            if stride == 1:
                                for z in range(ow):
                                    orow[z] += wv * xrow[z + j]
                            else:
                                for z in range(ow):
                                    orow[z] += wv * xrow[z * stride + j]
    return out


@njit(cache=True)
def conv_bwd_dx(g, w, stride, hp, wp):
    n_n, n_f, oh, ow = g.shape
    _, n_c, k, _ = w.shape
    dxp = np.zeros((n_n, n_c, hp, wp), dtype=g.dtype)
    for n in range(n_n):
        for c in range(n_c):
            for f in range(n_f):
                for i in range(k):
                    for j in range(k):
                        wv = w[f, c, i, j]
                        for y in range(oh):
                            grow = g[n, f, y]
                            drow = dxp[n, c, y * stride + i]
                            if stride == 1:
                                for z in range(ow):
                                    drow[z + j] += grow[z] * wv
                            else:
                                for z in range(ow):
                                    drow[z * stride + j] += grow[z] * wv
    return dxp


@njit(cache=True, fastmath=True)
def conv_bwd_dw(g, xp, k, stride):
    n_n, n_f, oh, ow = g.shape
    n_c = xp.shape[1]
    dw = np.zeros((n_f, n_c, k, k), dtype=g.dtype)
    for f in range(n_f):
        for c in range(n_c):
            for i in range(k):
                for j in range(k):
                    acc = 0.0
                    for n in range(n_n):
                        for y in range(oh):
                            grow = g[n, f, y]
                            xrow = xp[n, c, y * stride + i]
                            if stride == 1:
                                for z in range(ow):
                                    acc += grow[z] * xrow[z + j]
                            else:
                                for z in range(ow):
                                    acc += grow[z] * xrow[z * stride + j]
                    dw[f, c, i, j] = acc
    return dw
