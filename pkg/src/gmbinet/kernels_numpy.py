"""Pure-numpy convolution kernels (im2col lowering).

All kernels take an already zero-padded input ``xp`` of shape
``(n, cin, hp, wp)`` and weights ``(cout, cin // groups, k, k)``.
They serve both as the fallback backend and as the reference the
numba backend is checked against.
"""

import numpy as np


def _gather_indices(k, oh, ow, stride, dilation):
    # row/col index grids of shape (k*k, oh*ow)
    ki = np.repeat(np.arange(k) * dilation, k)
    kj = np.tile(np.arange(k) * dilation, k)
    oi = np.repeat(np.arange(oh) * stride, ow)
    oj = np.tile(np.arange(ow) * stride, oh)
    rows = ki[:, None] + oi[None, :]
    cols = kj[:, None] + oj[None, :]
    return rows, cols


def _im2col(xp, k, oh, ow, stride, dilation):
    rows, cols = _gather_indices(k, oh, ow, stride, dilation)
    n, c = xp.shape[:2]
    # (n, c, k*k, oh*ow) -> (n, c*k*k, oh*ow)
    patches = xp[:, :, rows, cols]
    return patches.reshape(n, c * k * k, oh * ow)


def conv2d_forward(xp, w, stride, dilation, groups, oh, ow):
    n, cin = xp.shape[:2]
    cout, cg, k, _ = w.shape
    og = cout // groups
    y = np.empty((n, cout, oh, ow), dtype=xp.dtype)
    for g in range(groups):
        xg = xp[:, g * cg:(g + 1) * cg]
        wg = w[g * og:(g + 1) * og].reshape(og, cg * k * k)
        cols = _im2col(xg, k, oh, ow, stride, dilation)
        y[:, g * og:(g + 1) * og] = (wg @ cols).reshape(n, og, oh, ow)
    return y


def conv2d_backward_input(gy, w, xp_shape, stride, dilation, groups):
    n, cout, oh, ow = gy.shape
    _, cg, k, _ = w.shape
    og = cout // groups
    gxp = np.zeros(xp_shape, dtype=gy.dtype)
    rows, cols = _gather_indices(k, oh, ow, stride, dilation)
    for g in range(groups):
        wg = w[g * og:(g + 1) * og].reshape(og, cg * k * k)
        gyg = gy[:, g * og:(g + 1) * og].reshape(n, og, oh * ow)
        gcols = np.einsum("oc,nol->ncl", wg, gyg).reshape(n, cg, k * k, oh * ow)
        np.add.at(gxp[:, g * cg:(g + 1) * cg], (slice(None), slice(None), rows, cols), gcols)
    return gxp


def conv2d_backward_weight(gy, xp, w_shape, stride, dilation, groups):
    n, cout, oh, ow = gy.shape
    _, cg, k, _ = w_shape
    og = cout // groups
    gw = np.empty(w_shape, dtype=gy.dtype)
    for g in range(groups):
        xg = xp[:, g * cg:(g + 1) * cg]
        cols = _im2col(xg, k, oh, ow, stride, dilation)
        gyg = gy[:, g * og:(g + 1) * og].reshape(n, og, oh * ow)
        gwg = np.einsum("nol,ncl->oc", gyg, cols)
        gw[g * og:(g + 1) * og] = gwg.reshape(og, cg, k, k)
    return gw
