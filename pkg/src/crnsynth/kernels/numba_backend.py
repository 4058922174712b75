"""Numba-compiled kernels.

Same contracts as :mod:`crnsynth.kernels.numpy_backend`. Loops are written
so that under ``parallel=True`` each thread owns a disjoint slice of the
output (rows for convolutions, channels for the bilinear scatter), which
keeps results bitwise reproducible for a fixed thread count. fastmath is
off: accumulation order is part of the determinism contract.
"""

import numpy as np
from numba import njit, prange

from .numpy_backend import _axis_weights, _pad, conv2d_out_shape

NAME = "numba"


@njit(cache=True, parallel=True, fastmath=False)
def _conv2d_fwd(xp, w, b, stride, dilation, ho, wo):
    kh, kw, cin, cout = w.shape
    y = np.empty((ho, wo, cout), dtype=xp.dtype)
    for oy in prange(ho):
        acc = np.empty(cout, dtype=xp.dtype)
        for ox in range(wo):
            for co in range(cout):
                acc[co] = b[co]
            for ky in range(kh):
                iy = oy * stride + ky * dilation
                for kx in range(kw):
                    ix = ox * stride + kx * dilation
                    for ci in range(cin):
                        xv = xp[iy, ix, ci]
                        for co in range(cout):
                            acc[co] += xv * w[ky, kx, ci, co]
            for co in range(cout):
                y[oy, ox, co] = acc[co]
    return y


def conv2d_forward(x, w, b, stride=1, dilation=1):
    kh, kw, _, _ = w.shape
    h, wd, _ = x.shape
    ho, wo, ph, pw = conv2d_out_shape(h, wd, kh, kw, stride, dilation)
    xp = _pad(x, ph, pw)
    return _conv2d_fwd(xp, w, b, stride, dilation, ho, wo)


@njit(cache=True, parallel=True, fastmath=False)
def _conv2d_bwd_input(dy, wt, in_h, in_w, stride, dilation, ph, pw):
    kh, kw, cout, cin = wt.shape
    ho, wo = dy.shape[0], dy.shape[1]
    dx = np.empty((in_h, in_w, cin), dtype=dy.dtype)
    for iy in prange(in_h):
        acc = np.empty(cin, dtype=dy.dtype)
        for ix in range(in_w):
            for ci in range(cin):
                acc[ci] = 0.0
            for ky in range(kh):
                ty = iy + ph - ky * dilation
                if ty % stride != 0:
                    continue
                oy = ty // stride
                if oy < 0 or oy >= ho:
                    continue
                for kx in range(kw):
                    tx = ix + pw - kx * dilation
                    if tx % stride != 0:
                        continue
                    ox = tx // stride
                    if ox < 0 or ox >= wo:
                        continue
                    for co in range(cout):
                        dv = dy[oy, ox, co]
                        for ci in range(cin):
                            acc[ci] += dv * wt[ky, kx, co, ci]
            for ci in range(cin):
                dx[iy, ix, ci] = acc[ci]
    return dx


def conv2d_backward_input(dy, w, in_h, in_w, stride=1, dilation=1):
    kh, kw, _, _ = w.shape
    _, _, ph, pw = conv2d_out_shape(in_h, in_w, kh, kw, stride, dilation)
    wt = np.ascontiguousarray(w.transpose(0, 1, 3, 2))
    return _conv2d_bwd_input(dy, wt, in_h, in_w, stride, dilation, ph, pw)


@njit(cache=True, parallel=True, fastmath=False)
def _conv2d_bwd_weight(x, dy, kh, kw, stride, dilation, ph, pw):
    h, wd, cin = x.shape
    ho, wo, cout = dy.shape
    dw = np.zeros((kh, kw, cin, cout), dtype=dy.dtype)
    for kk in prange(kh * kw):
        ky = kk // kw
        kx = kk % kw
        for oy in range(ho):
            iy = oy * stride + ky * dilation - ph
            if iy < 0 or iy >= h:
                continue
            for ox in range(wo):
                ix = ox * stride + kx * dilation - pw
                if ix < 0 or ix >= wd:
                    continue
                for ci in range(cin):
                    xv = x[iy, ix, ci]
                    for co in range(cout):
                        dw[ky, kx, ci, co] += xv * dy[oy, ox, co]
    return dw


def conv2d_backward_params(x, dy, kh, kw, stride=1, dilation=1):
    h, wd, _ = x.shape
    _, _, ph, pw = conv2d_out_shape(h, wd, kh, kw, stride, dilation)
    dw = _conv2d_bwd_weight(x, dy, kh, kw, stride, dilation, ph, pw)
    db = dy.sum(axis=(0, 1))
    return dw, db


@njit(cache=True, parallel=True, fastmath=False)
def _bilinear_fwd(x, y0, y1, fy, x0, x1, fx):
    in_h, in_w, c = x.shape
    oh = y0.shape[0]
    ow = x0.shape[0]
    out = np.empty((oh, ow, c), dtype=x.dtype)
    for oy in prange(oh):
        iy0 = y0[oy]
        iy1 = y1[oy]
        gy = fy[oy]
        for ox in range(ow):
            ix0 = x0[ox]
            ix1 = x1[ox]
            gx = fx[ox]
            for ch in range(c):
                top = x[iy0, ix0, ch] * (1 - gx) + x[iy0, ix1, ch] * gx
                bot = x[iy1, ix0, ch] * (1 - gx) + x[iy1, ix1, ch] * gx
                out[oy, ox, ch] = top * (1 - gy) + bot * gy
    return out


def bilinear_forward(x, out_h, out_w):
    in_h, in_w, _ = x.shape
    y0, y1, fy = _axis_weights(in_h, out_h, x.dtype)
    x0, x1, fx = _axis_weights(in_w, out_w, x.dtype)
    return _bilinear_fwd(x, y0, y1, fy, x0, x1, fx)


@njit(cache=True, parallel=True, fastmath=False)
def _bilinear_bwd(dy, y0, y1, fy, x0, x1, fx, in_h, in_w):
    oh, ow, c = dy.shape
    dx = np.zeros((in_h, in_w, c), dtype=dy.dtype)
    # One thread per channel: scatter targets never collide across threads.
    for ch in prange(c):
        for oy in range(oh):
            gy = fy[oy]
            for ox in range(ow):
                gx = fx[ox]
                d = dy[oy, ox, ch]
                dx[y0[oy], x0[ox], ch] += d * (1 - gy) * (1 - gx)
                dx[y0[oy], x1[ox], ch] += d * (1 - gy) * gx
                dx[y1[oy], x0[ox], ch] += d * gy * (1 - gx)
                dx[y1[oy], x1[ox], ch] += d * gy * gx
    return dx


def bilinear_backward(dy, in_h, in_w):
    out_h, out_w, _ = dy.shape
    y0, y1, fy = _axis_weights(in_h, out_h, dy.dtype)
    x0, x1, fx = _axis_weights(in_w, out_w, dy.dtype)
    return _bilinear_bwd(dy, y0, y1, fy, x0, x1, fx, in_h, in_w)
