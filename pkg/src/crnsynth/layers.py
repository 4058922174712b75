"""Differentiable building blocks over (H, W, C) arrays.

Layers hold their parameters but never cache activations on ``self``:
``forward`` is pure, and ``backward`` takes whatever forward context it
needs explicitly. That keeps concurrent inference on a shared model safe
and makes the gradient path easy to audit.
"""

import numpy as np

from . import kernels
from .errors import DimensionError

LRELU_SLOPE = 0.2
LAYERNORM_EPS = 1e-5


class Conv2d:
    """2-D convolution, zero same-padding, odd kernels only."""

    def __init__(self, ksize, cin, cout, *, stride=1, dilation=1, rng=None,
                 dtype=np.float32, gain=None):
        if ksize % 2 == 0:
            raise DimensionError(f"kernel size must be odd, got {ksize}")
        self.ksize = ksize
        self.cin = cin
        self.cout = cout
        self.stride = stride
        self.dilation = dilation
        fan_in = ksize * ksize * cin
        if gain is None:
            # Kaiming-style gain for the LReLU slope used throughout.
            gain = np.sqrt(2.0 / (1.0 + LRELU_SLOPE ** 2))
        bound = gain * np.sqrt(3.0 / fan_in)
        if rng is None:
            rng = np.random.default_rng(0)
        self.w = rng.uniform(-bound, bound, (ksize, ksize, cin, cout)).astype(dtype)
        self.b = np.zeros(cout, dtype=dtype)

    def out_shape(self, h, w):
        ho, wo, _, _ = kernels.conv2d_out_shape(h, w, self.ksize, self.ksize,
                                                self.stride, self.dilation)
        return ho, wo

    def forward(self, x):
        if x.shape[2] != self.cin:
            raise DimensionError(f"conv expects {self.cin} input channels, got {x.shape[2]}")
        return kernels.conv2d_forward(x, self.w, self.b, stride=self.stride,
                                      dilation=self.dilation)

    def backward(self, x, dy):
        """Returns (dx, dw, db) for the forward call on ``x``."""
        dw, db = kernels.conv2d_backward_params(x, dy, self.ksize, self.ksize,
                                                stride=self.stride, dilation=self.dilation)
        dx = kernels.conv2d_backward_input(dy, self.w, x.shape[0], x.shape[1],
                                           stride=self.stride, dilation=self.dilation)
        return dx, dw, db

    def params(self):
        return {"weight": self.w, "bias": self.b}

    def param_count(self):
        return self.w.size + self.b.size


class LayerNorm:
    """Normalizes over all positions and channels, per-channel affine."""

    def __init__(self, channels, *, dtype=np.float32):
        self.gain = np.ones(channels, dtype=dtype)
        self.offset = np.zeros(channels, dtype=dtype)

    def forward(self, x):
        y, _ = self.forward_cache(x)
        return y

    def forward_cache(self, x):
        mu = x.mean(dtype=x.dtype)
        centered = x - mu
        var = np.mean(centered * centered, dtype=x.dtype)
        inv = (1.0 / np.sqrt(var + x.dtype.type(LAYERNORM_EPS))).astype(x.dtype)
        xhat = centered * inv
        return xhat * self.gain + self.offset, (xhat, inv)

    def backward(self, cache, dy):
        xhat, inv = cache
        dxhat = dy * self.gain
        dgain = (dy * xhat).sum(axis=(0, 1))
        doffset = dy.sum(axis=(0, 1))
        m1 = dxhat.mean(dtype=dy.dtype)
        m2 = (dxhat * xhat).mean(dtype=dy.dtype)
        dx = inv * (dxhat - m1 - xhat * m2)
        return dx, dgain, doffset

    def params(self):
        return {"gain": self.gain, "offset": self.offset}

    def param_count(self):
        return self.gain.size + self.offset.size


def leaky_relu(x, slope=LRELU_SLOPE):
    return np.where(x >= 0, x, x * x.dtype.type(slope))


def leaky_relu_backward(x, dy, slope=LRELU_SLOPE):
    return np.where(x >= 0, dy, dy * dy.dtype.type(slope))


def maxpool2x2(x):
    h, w, c = x.shape
    if h % 2 or w % 2:
        raise DimensionError(f"maxpool2x2 needs even dims, got {h}x{w}")
    windows = x.reshape(h // 2, 2, w // 2, 2, c).transpose(0, 2, 4, 1, 3).reshape(h // 2, w // 2, c, 4)
    idx = windows.argmax(axis=3)
    y = np.take_along_axis(windows, idx[..., None], axis=3)[..., 0]
    return y, idx


def maxpool2x2_backward(idx, dy, in_h, in_w):
    ho, wo, c = dy.shape
    dwindows = np.zeros((ho, wo, c, 4), dtype=dy.dtype)
    np.put_along_axis(dwindows, idx[..., None], dy[..., None], axis=3)
    return dwindows.reshape(ho, wo, c, 2, 2).transpose(0, 3, 1, 4, 2).reshape(in_h, in_w, c)


def bilinear_upsample(x, out_h, out_w):
    """Bilinear resize to (out_h, out_w) with half-pixel sample centers."""
    if out_h < x.shape[0] or out_w < x.shape[1]:
        raise DimensionError(
            f"bilinear_upsample target {out_h}x{out_w} is smaller than source "
            f"{x.shape[0]}x{x.shape[1]}")
    return kernels.bilinear_forward(x, out_h, out_w)


def bilinear_upsample_backward(dy, in_h, in_w):
    return kernels.bilinear_backward(dy, in_h, in_w)


class Adam:
    """Adam over a name->array parameter dict; state keyed by name."""

    def __init__(self, params, lr=1e-4, beta1=0.9, beta2=0.999, eps=1e-8):
        self.params = params
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = {k: np.zeros_like(v) for k, v in params.items()}
        self.v = {k: np.zeros_like(v) for k, v in params.items()}

    def step(self, grads):
        self.t += 1
        b1t = 1.0 - self.beta1 ** self.t
        b2t = 1.0 - self.beta2 ** self.t
        for name, g in grads.items():
            p = self.params[name]
            g = g.astype(p.dtype, copy=False)
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            mhat = m / p.dtype.type(b1t)
            vhat = v / p.dtype.type(b2t)
            p -= p.dtype.type(self.lr) * mhat / (np.sqrt(vhat) + p.dtype.type(self.eps))


class Sgd:
    """Plain gradient descent; mainly for tests and ablations."""

    def __init__(self, params, lr=1e-4):
        self.params = params
        self.lr = lr

    def step(self, grads):
        for name, g in grads.items():
            p = self.params[name]
            p -= p.dtype.type(self.lr) * g.astype(p.dtype, copy=False)


def make_optimizer(kind, params, lr):
    if kind == "adam":
        return Adam(params, lr=lr)
    if kind == "sgd":
        return Sgd(params, lr=lr)
    raise ValueError(f"unknown optimizer {kind!r}")
