"""Direct-loop convolution kernels compiled with numba.

Same interface as :mod:`gmbinet.kernels_numpy`.  Each output element is
accumulated sequentially inside its own loop body, so results are
deterministic under ``prange`` parallelism.
"""

import numpy as np
from numba import njit, prange


@njit(parallel=True, cache=True)
def _forward(xp, w, stride, dilation, groups, y):
    n, cin, hp, wp = xp.shape
    cout, cg, k, _ = w.shape
    oh, ow = y.shape[2], y.shape[3]
    og = cout // groups
    for bo in prange(n * cout):
        b = bo // cout
        oc = bo % cout
        g = oc // og
        c0 = g * cg
        for i in range(oh):
            for j in range(ow):
                acc = 0.0
                for c in range(cg):
                    for ki in range(k):
                        for kj in range(k):
                            acc += (w[oc, c, ki, kj]
                                    * xp[b, c0 + c, i * stride + ki * dilation,
                                         j * stride + kj * dilation])
                y[b, oc, i, j] = acc


@njit(parallel=True, cache=True)
def _backward_input(gy, w, stride, dilation, groups, gxp):
    n, cout, oh, ow = gy.shape
    _, cg, k, _ = w.shape
    cin, hp, wp = gxp.shape[1], gxp.shape[2], gxp.shape[3]
    og = cout // groups
    for bc in prange(n * cin):
        b = bc // cin
        ci = bc % cin
        g = ci // cg
        cl = ci % cg
        for ih in range(hp):
            for iw in range(wp):
                acc = 0.0
                for ki in range(k):
                    num = ih - ki * dilation
                    if num < 0 or num % stride != 0:
                        continue
                    i = num // stride
                    if i >= oh:
                        continue
                    for kj in range(k):
                        num2 = iw - kj * dilation
                        if num2 < 0 or num2 % stride != 0:
                            continue
                        j = num2 // stride
                        if j >= ow:
                            continue
                        for o in range(og):
                            oc = g * og + o
                            acc += w[oc, cl, ki, kj] * gy[b, oc, i, j]
                gxp[b, ci, ih, iw] = acc


@njit(parallel=True, cache=True)
def _backward_weight(gy, xp, groups, stride, dilation, gw):
    n, cout, oh, ow = gy.shape
    _, cg, k, _ = gw.shape
    og = cout // groups
    for oc in prange(cout):
        g = oc // og
        c0 = g * cg
        for c in range(cg):
            for ki in range(k):
                for kj in range(k):
                    acc = 0.0
                    for b in range(n):
                        for i in range(oh):
                            for j in range(ow):
                                acc += (gy[b, oc, i, j]
                                        * xp[b, c0 + c, i * stride + ki * dilation,
                                             j * stride + kj * dilation])
                    gw[oc, c, ki, kj] = acc


def conv2d_forward(xp, w, stride, dilation, groups, oh, ow):
    n, cout = xp.shape[0], w.shape[0]
    y = np.empty((n, cout, oh, ow), dtype=xp.dtype)
    _forward(xp, w, stride, dilation, groups, y)
    return y


def conv2d_backward_input(gy, w, xp_shape, stride, dilation, groups):
    gxp = np.empty(xp_shape, dtype=gy.dtype)
    _backward_input(gy, w, stride, dilation, groups, gxp)
    return gxp


def conv2d_backward_weight(gy, xp, w_shape, stride, dilation, groups):
    gw = np.empty(w_shape, dtype=gy.dtype)
    _backward_weight(gy, xp, groups, stride, dilation, gw)
    return gw
