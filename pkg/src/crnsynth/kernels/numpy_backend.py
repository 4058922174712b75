"""Pure-numpy kernels.

Convolutions are evaluated as a sum of nine (kernel-tap) matmuls over
shifted views of the padded input, which keeps everything inside BLAS.
Backward passes are exact adjoints of the forward slicing, so gradient
checks hold to float precision.

Array layout is channel-last: (H, W, C). Kernels are (kh, kw, cin, cout)
with odd spatial extents and zero "same" padding of ((k-1)*dilation)//2.
"""

import numpy as np

NAME = "numpy"


def conv2d_out_shape(h, w, kh, kw, stride, dilation):
    ph = ((kh - 1) * dilation) // 2
    pw = ((kw - 1) * dilation) // 2
    ho = (h + 2 * ph - ((kh - 1) * dilation + 1)) // stride + 1
    wo = (w + 2 * pw - ((kw - 1) * dilation + 1)) // stride + 1
    return ho, wo, ph, pw


def _pad(x, ph, pw):
    if ph == 0 and pw == 0:
        return x
    h, w, c = x.shape
    xp = np.zeros((h + 2 * ph, w + 2 * pw, c), dtype=x.dtype)
    xp[ph:ph + h, pw:pw + w] = x
    return xp


def conv2d_forward(x, w, b, stride=1, dilation=1):
    kh, kw, cin, cout = w.shape
    h, wd, _ = x.shape
    ho, wo, ph, pw = conv2d_out_shape(h, wd, kh, kw, stride, dilation)
    xp = _pad(x, ph, pw)
    y = np.broadcast_to(b, (ho, wo, cout)).astype(x.dtype, copy=True)
    for ky in range(kh):
        for kx in range(kw):
            sl = xp[ky * dilation: ky * dilation + (ho - 1) * stride + 1: stride,
                    kx * dilation: kx * dilation + (wo - 1) * stride + 1: stride]
            y += sl @ w[ky, kx]
    return y


def conv2d_backward_input(dy, w, in_h, in_w, stride=1, dilation=1):
    kh, kw, cin, cout = w.shape
    ho, wo, ph, pw = conv2d_out_shape(in_h, in_w, kh, kw, stride, dilation)
    dxp = np.zeros((in_h + 2 * ph, in_w + 2 * pw, cin), dtype=dy.dtype)
    for ky in range(kh):
        for kx in range(kw):
            dxp[ky * dilation: ky * dilation + (ho - 1) * stride + 1: stride,
                kx * dilation: kx * dilation + (wo - 1) * stride + 1: stride] += dy @ w[ky, kx].T
    return np.ascontiguousarray(dxp[ph:ph + in_h, pw:pw + in_w])


def conv2d_backward_params(x, dy, kh, kw, stride=1, dilation=1):
    h, wd, cin = x.shape
    ho, wo, ph, pw = conv2d_out_shape(h, wd, kh, kw, stride, dilation)
    cout = dy.shape[2]
    xp = _pad(x, ph, pw)
    dw = np.empty((kh, kw, cin, cout), dtype=dy.dtype)
    dyf = dy.reshape(-1, cout)
    for ky in range(kh):
        for kx in range(kw):
            sl = xp[ky * dilation: ky * dilation + (ho - 1) * stride + 1: stride,
                    kx * dilation: kx * dilation + (wo - 1) * stride + 1: stride]
            dw[ky, kx] = sl.reshape(-1, cin).T @ dyf
    db = dy.sum(axis=(0, 1))
    return dw, db


def _axis_weights(in_size, out_size, dtype):
    """Half-pixel-center source coordinates for 1-D linear interpolation."""
    s = (np.arange(out_size, dtype=np.float64) + 0.5) * (in_size / out_size) - 0.5
    i0f = np.floor(s)
    frac = s - i0f
    i0 = np.clip(i0f, 0, in_size - 1).astype(np.int64)
    i1 = np.clip(i0f + 1, 0, in_size - 1).astype(np.int64)
    return i0, i1, frac.astype(dtype)


def bilinear_forward(x, out_h, out_w):
    in_h, in_w, c = x.shape
    y0, y1, fy = _axis_weights(in_h, out_h, x.dtype)
    x0, x1, fx = _axis_weights(in_w, out_w, x.dtype)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    top = x[y0][:, x0] * (1 - fx) + x[y0][:, x1] * fx
    bot = x[y1][:, x0] * (1 - fx) + x[y1][:, x1] * fx
    return top * (1 - fy) + bot * fy


def bilinear_backward(dy, in_h, in_w):
    out_h, out_w, c = dy.shape
    y0, y1, fy = _axis_weights(in_h, out_h, dy.dtype)
    x0, x1, fx = _axis_weights(in_w, out_w, dy.dtype)
    fy = fy[:, None, None]
    fx = fx[None, :, None]
    dx = np.zeros((in_h, in_w, c), dtype=dy.dtype)
    yy0 = np.broadcast_to(y0[:, None], (out_h, out_w))
    yy1 = np.broadcast_to(y1[:, None], (out_h, out_w))
    xx0 = np.broadcast_to(x0[None, :], (out_h, out_w))
    xx1 = np.broadcast_to(x1[None, :], (out_h, out_w))
    np.add.at(dx, (yy0, xx0), dy * (1 - fy) * (1 - fx))
    np.add.at(dx, (yy0, xx1), dy * (1 - fy) * fx)
    np.add.at(dx, (yy1, xx0), dy * fy * (1 - fx))
    np.add.at(dx, (yy1, xx1), dy * fy * fx)
    return dx
