"""The cascaded refinement network.

A stack of refinement modules doubles resolution from a coarse base
(default 4x8) up to the output size. Module i consumes the layout
downsampled to its resolution, concatenated with the bilinearly
upsampled features of module i-1, and applies two conv3x3 + layernorm +
LReLU stages; the final module's second conv is left bare and a 1x1
projection maps its features to 3k output channels (k images).
"""

from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, DimensionError
from .layers import Conv2d, LayerNorm, LRELU_SLOPE, bilinear_upsample, \
    bilinear_upsample_backward, leaky_relu, leaky_relu_backward
from .layout import downsample_layout


@dataclass
class CascadeConfig:
    module_count: int
    channels: list
    num_classes: int
    base_h: int = 4
    base_w: int = 8
    output_multiplicity: int = 1
    lrelu_slope: float = LRELU_SLOPE

    def __post_init__(self):
        if self.module_count < 1:
            raise ConfigError("module_count must be >= 1")
        if len(self.channels) != self.module_count:
            raise ConfigError(f"channels has {len(self.channels)} entries for "
                              f"{self.module_count} modules")
        if self.output_multiplicity < 1:
            raise ConfigError("output_multiplicity must be >= 1")
        if self.base_h < 1 or self.base_w < 1 or self.num_classes < 1:
            raise ConfigError("base resolution and num_classes must be positive")

    @property
    def output_resolution(self):
        scale = 2 ** (self.module_count - 1)
        return self.base_h * scale, self.base_w * scale

    def module_resolution(self, i):
        return self.base_h * 2 ** i, self.base_w * 2 ** i

    def module_in_channels(self, i):
        if i == 0:
            return self.num_classes
        return self.channels[i - 1] + self.num_classes

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        known = set(cls.__dataclass_fields__)
        unknown = set(obj) - known
        if unknown:
            raise ConfigError(f"unknown cascade config keys {sorted(unknown)}")
        return cls(**obj)


def head_bias_init(k, dtype=np.float32):
    """Projection bias: mid-gray, with per-head brightness offsets for k > 1.

    Hindsight-style losses update only the winning hypothesis, so heads
    must start distinguishable or a single head can win every step and
    starve the rest. Spreading the initial DC level of the k heads breaks
    that symmetry deterministically.
    """
    bias = np.full(3 * k, 0.5, dtype=dtype)
    if k > 1:
        spread = np.linspace(-0.25, 0.25, k).astype(dtype)
        bias += np.repeat(spread, 3)
    return bias


def param_count(config):
    """Closed-form parameter total; must equal enumeration exactly."""
    total = 0
    for i in range(config.module_count):
        cin = config.module_in_channels(i)
        d = config.channels[i]
        total += 9 * cin * d + d      # conv1
        total += 2 * d                # norm1
        total += 9 * d * d + d        # conv2
        if i != config.module_count - 1:
            total += 2 * d            # norm2 (final module output is bare)
    d_last = config.channels[-1]
    k = config.output_multiplicity
    total += d_last * 3 * k + 3 * k   # 1x1 projection
    return total


class RefinementModule:
    def __init__(self, index, config, rng, dtype):
        self.index = index
        self.final = index == config.module_count - 1
        self.slope = config.lrelu_slope
        cin = config.module_in_channels(index)
        d = config.channels[index]
        self.conv1 = Conv2d(3, cin, d, rng=rng, dtype=dtype)
        self.norm1 = LayerNorm(d, dtype=dtype)
        self.conv2 = Conv2d(3, d, d, rng=rng, dtype=dtype)
        self.norm2 = None if self.final else LayerNorm(d, dtype=dtype)

    def forward(self, x):
        y, _ = self.forward_cache(x)
        return y

    def forward_cache(self, x):
        a = self.conv1.forward(x)
        n1, st1 = self.norm1.forward_cache(a)
        h = leaky_relu(n1, self.slope)
        b = self.conv2.forward(h)
        if self.final:
            return b, (x, st1, n1, h, None, None)
        n2, st2 = self.norm2.forward_cache(b)
        out = leaky_relu(n2, self.slope)
        return out, (x, st1, n1, h, st2, n2)

    def backward(self, cache, dy):
        x, st1, n1, h, st2, n2 = cache
        grads = {}
        if not self.final:
            dy = leaky_relu_backward(n2, dy, self.slope)
            dy, dgain2, doff2 = self.norm2.backward(st2, dy)
            grads["norm2.gain"] = dgain2
            grads["norm2.offset"] = doff2
        dh, dw2, db2 = self.conv2.backward(h, dy)
        grads["conv2.weight"] = dw2
        grads["conv2.bias"] = db2
        dn1 = leaky_relu_backward(n1, dh, self.slope)
        da, dgain1, doff1 = self.norm1.backward(st1, dn1)
        grads["norm1.gain"] = dgain1
        grads["norm1.offset"] = doff1
        dx, dw1, db1 = self.conv1.backward(x, da)
        grads["conv1.weight"] = dw1
        grads["conv1.bias"] = db1
        return dx, grads

    def params(self):
        out = {}
        for sub, layer in (("conv1", self.conv1), ("norm1", self.norm1),
                           ("conv2", self.conv2), ("norm2", self.norm2)):
            if layer is None:
                continue
            for pname, arr in layer.params().items():
                out[f"{sub}.{pname}"] = arr
        return out


class CascadeModel:
    kind = "cascade"

    def __init__(self, config, *, seed=0, dtype=np.float32):
        self.config = config
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        self.modules = [RefinementModule(i, config, rng, dtype)
                        for i in range(config.module_count)]
        d_last = config.channels[-1]
        self.projection = Conv2d(1, d_last, 3 * config.output_multiplicity,
                                 rng=rng, dtype=dtype, gain=0.1)
        self.projection.b[...] = head_bias_init(config.output_multiplicity, dtype)

    def params(self):
        out = {}
        for i, mod in enumerate(self.modules):
            for name, arr in mod.params().items():
                out[f"modules.{i}.{name}"] = arr
        for pname, arr in self.projection.params().items():
            out[f"projection.{pname}"] = arr
        return out

    def load_params(self, tensors):
        own = self.params()
        missing = set(own) - set(tensors)
        if missing:
            raise DimensionError(f"checkpoint missing tensors {sorted(missing)[:4]}...")
        for name, arr in own.items():
            src = tensors[name]
            if src.shape != arr.shape:
                raise DimensionError(f"tensor {name} has shape {src.shape}, expected {arr.shape}")
            arr[...] = src

    def param_count(self):
        return sum(arr.size for arr in self.params().values())

    def _check_layout(self, layout):
        h, w = self.config.output_resolution
        if layout.shape != (h, w, self.config.num_classes):
            raise DimensionError(
                f"layout shape {layout.shape} does not match model resolution "
                f"({h}, {w}, {self.config.num_classes})")

    def _level_layouts(self, layout):
        layout = layout.astype(self.dtype, copy=False)
        return [downsample_layout(layout, *self.config.module_resolution(i))
                for i in range(self.config.module_count)]

    def refinement_forward(self, i, layout, prev=None):
        """Runs module i alone: layout at the module's resolution, prev
        features at the previous module's resolution (None for i = 0)."""
        h_i, w_i = self.config.module_resolution(i)
        if layout.shape != (h_i, w_i, self.config.num_classes):
            raise DimensionError(
                f"module {i} expects a {(h_i, w_i, self.config.num_classes)} "
                f"layout, got {layout.shape}")
        if i == 0:
            if prev is not None:
                raise DimensionError("module 0 takes no previous features")
            x = layout.astype(self.dtype, copy=False)
        else:
            h_p, w_p = self.config.module_resolution(i - 1)
            if prev is None or prev.shape != (h_p, w_p, self.config.channels[i - 1]):
                raise DimensionError(
                    f"module {i} expects previous features of shape "
                    f"{(h_p, w_p, self.config.channels[i - 1])}")
            up = bilinear_upsample(prev, h_i, w_i)
            x = np.concatenate([layout.astype(self.dtype, copy=False), up], axis=2)
        return self.modules[i].forward(x)

    def forward(self, layout):
        """Returns the k synthesized images for a full-resolution layout."""
        images, _ = self.forward_cache(layout, keep=False)
        return images

    def forward_cache(self, layout, keep=True):
        self._check_layout(layout)
        levels = self._level_layouts(layout)
        feats = None
        caches = []
        for i, mod in enumerate(self.modules):
            if i == 0:
                x = levels[0]
            else:
                h_i, w_i = self.config.module_resolution(i)
                up = bilinear_upsample(feats, h_i, w_i)
                x = np.concatenate([levels[i], up], axis=2)
            feats, cache = mod.forward_cache(x)
            caches.append(cache if keep else None)
        proj_in = feats
        out = self.projection.forward(proj_in)
        k = self.config.output_multiplicity
        images = [np.ascontiguousarray(out[:, :, 3 * u: 3 * u + 3]) for u in range(k)]
        return images, (caches, proj_in)

    def backward(self, cache, dimages):
        """Backprop from per-image gradients to a name->grad dict."""
        caches, proj_in = cache
        dout = np.concatenate(dimages, axis=2)
        dfeat, dwp, dbp = self.projection.backward(proj_in, dout)
        grads = {"projection.weight": dwp, "projection.bias": dbp}
        for i in range(self.config.module_count - 1, -1, -1):
            dx, mod_grads = self.modules[i].backward(caches[i], dfeat)
            for name, g in mod_grads.items():
                grads[f"modules.{i}.{name}"] = g
            if i == 0:
                break
            c = self.config.num_classes
            dup = dx[:, :, c:]
            h_prev, w_prev = self.config.module_resolution(i - 1)
            dfeat = bilinear_upsample_backward(np.ascontiguousarray(dup), h_prev, w_prev)
        return grads


def paper_scale_config(num_classes=20, output_multiplicity=1):
    """The 1024x2048 configuration: 9 modules, d = 1024x5, 512x2, 128, 32."""
    return CascadeConfig(module_count=9,
                         channels=[1024] * 5 + [512] * 2 + [128, 32],
                         num_classes=num_classes,
                         output_multiplicity=output_multiplicity)


def activation_numel(config):
    """Floats held by all layer outputs for one forward pass (analytic)."""
    total = 0
    for i in range(config.module_count):
        h, w = config.module_resolution(i)
        cin = config.module_in_channels(i)
        d = config.channels[i]
        total += h * w * (cin + d + d)
    h, w = config.output_resolution
    total += h * w * 3 * config.output_multiplicity
    return total
