"""Baseline synthesis architectures trained under the same losses.

Two controls for the cascade's architecture: a full-resolution dilated
network (capacity in dilation instead of multi-scale features, all
intermediate tensors at image resolution) and an encoder-decoder with
skip connections. Both take the same layouts and emit the same k-image
output as the cascade, so the trainer and study tooling treat all three
uniformly.
"""

from dataclasses import dataclass, asdict

import numpy as np

from .cascade import activation_numel as cascade_activation_numel, head_bias_init
from .errors import CapacityError, ConfigError, DimensionError
from .layers import Conv2d, LayerNorm, LRELU_SLOPE, bilinear_upsample, \
    bilinear_upsample_backward, leaky_relu, leaky_relu_backward


@dataclass
class FullResConfig:
    layer_count: int = 10
    feature_maps: int = 256
    max_h: int = 256
    max_w: int = 512
    num_classes: int = 20
    output_multiplicity: int = 1
    lrelu_slope: float = LRELU_SLOPE

    def __post_init__(self):
        if self.layer_count < 1 or self.feature_maps < 1:
            raise ConfigError("layer_count and feature_maps must be positive")

    def base_dilations(self):
        """Uncapped schedule: halves from 2^(layers-1) down to 1."""
        return [2 ** (self.layer_count - 1 - i) for i in range(self.layer_count)]

    def dilations_for(self, h, w):
        """First-layer dilation capped at half the smaller input dimension,
        halving thereafter and holding at 1."""
        cap = max(1, min(h, w) // 2)
        out = []
        d = min(2 ** (self.layer_count - 1), cap)
        for _ in range(self.layer_count):
            out.append(d)
            d = max(1, d // 2)
        return out

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown fullres config keys {sorted(unknown)}")
        return cls(**obj)


def param_count_fullres(config):
    fm = config.feature_maps
    c = config.num_classes
    k = config.output_multiplicity
    total = 9 * c * fm + fm + 2 * fm
    total += (config.layer_count - 1) * (9 * fm * fm + fm + 2 * fm)
    total += fm * 3 * k + 3 * k
    return total


def fullres_activation_numel(config, resolution):
    h, w = resolution
    fm = config.feature_maps
    total = config.layer_count * h * w * fm
    total += h * w * 3 * config.output_multiplicity
    return total


class FullResModel:
    """Dilated full-resolution network; built for one operating resolution."""

    kind = "fullres"

    def __init__(self, config, resolution, *, seed=0, dtype=np.float32):
        h, w = resolution
        if h > config.max_h or w > config.max_w:
            raise CapacityError(
                f"resolution {h}x{w} exceeds the configured maximum "
                f"{config.max_h}x{config.max_w} for the full-resolution network")
        self.config = config
        self.resolution = (h, w)
        self.dilations = config.dilations_for(h, w)
        rng = np.random.default_rng(seed)
        fm = config.feature_maps
        self.convs = []
        self.norms = []
        cin = config.num_classes
        for dil in self.dilations:
            self.convs.append(Conv2d(3, cin, fm, dilation=dil, rng=rng, dtype=dtype))
            self.norms.append(LayerNorm(fm, dtype=dtype))
            cin = fm
        self.projection = Conv2d(1, fm, 3 * config.output_multiplicity,
                                 rng=rng, dtype=dtype, gain=0.1)
        self.projection.b[...] = head_bias_init(config.output_multiplicity, dtype)

    def params(self):
        out = {}
        for i, (conv, norm) in enumerate(zip(self.convs, self.norms)):
            out[f"layers.{i}.conv.weight"] = conv.w
            out[f"layers.{i}.conv.bias"] = conv.b
            out[f"layers.{i}.norm.gain"] = norm.gain
            out[f"layers.{i}.norm.offset"] = norm.offset
        out["projection.weight"] = self.projection.w
        out["projection.bias"] = self.projection.b
        return out

    def load_params(self, tensors):
        _load_into(self.params(), tensors)

    def param_count(self):
        return sum(a.size for a in self.params().values())

    def _check_layout(self, layout):
        if layout.shape != (*self.resolution, self.config.num_classes):
            raise DimensionError(f"layout shape {layout.shape} does not match model "
                                 f"({self.resolution} x {self.config.num_classes})")

    def forward(self, layout):
        images, _ = self.forward_cache(layout, keep=False)
        return images

    def forward_cache(self, layout, keep=True):
        self._check_layout(layout)
        x = layout
        caches = []
        slope = self.config.lrelu_slope
        for conv, norm in zip(self.convs, self.norms):
            pre = conv.forward(x)
            normed, st = norm.forward_cache(pre)
            out = leaky_relu(normed, slope)
            caches.append((x, st, normed) if keep else None)
            x = out
        out = self.projection.forward(x)
        k = self.config.output_multiplicity
        images = [np.ascontiguousarray(out[:, :, 3 * u: 3 * u + 3]) for u in range(k)]
        return images, (caches, x)

    def backward(self, cache, dimages):
        caches, proj_in = cache
        dout = np.concatenate(dimages, axis=2)
        d, dwp, dbp = self.projection.backward(proj_in, dout)
        grads = {"projection.weight": dwp, "projection.bias": dbp}
        slope = self.config.lrelu_slope
        for i in range(len(self.convs) - 1, -1, -1):
            x, st, normed = caches[i]
            d = leaky_relu_backward(normed, d, slope)
            d, dgain, doff = self.norms[i].backward(st, d)
            grads[f"layers.{i}.norm.gain"] = dgain
            grads[f"layers.{i}.norm.offset"] = doff
            d, dw, db = self.convs[i].backward(x, d)
            grads[f"layers.{i}.conv.weight"] = dw
            grads[f"layers.{i}.conv.bias"] = db
        return grads


def build_fullres(config, num_classes=None, resolution=None, *, seed=0, dtype=np.float32):
    if num_classes is not None and num_classes != config.num_classes:
        config = FullResConfig(**{**config.to_json(), "num_classes": num_classes})
    if resolution is None:
        resolution = (config.max_h, config.max_w)
    return FullResModel(config, resolution, seed=seed, dtype=dtype)


@dataclass
class EncoderDecoderConfig:
    depth: int = 5
    base_channels: int = 64
    max_channels: int = 512
    num_classes: int = 20
    output_multiplicity: int = 1
    lrelu_slope: float = LRELU_SLOPE

    def __post_init__(self):
        if self.depth < 1 or self.base_channels < 1:
            raise ConfigError("depth and base_channels must be positive")

    def level_channels(self):
        return [min(self.base_channels * 2 ** d, self.max_channels)
                for d in range(self.depth)]

    def to_json(self):
        return asdict(self)

    @classmethod
    def from_json(cls, obj):
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown encoder-decoder config keys {sorted(unknown)}")
        return cls(**obj)


class EncoderDecoderModel:
    """Contracting/expanding path with skip connections (u-net style).

    Encoder level d halves resolution with a stride-2 conv; the decoder
    mirrors it with bilinear upsampling and concatenates the encoder-side
    activation at the same resolution.
    """

    kind = "encdec"

    def __init__(self, config, resolution, *, seed=0, dtype=np.float32):
        h, w = resolution
        if h % 2 ** config.depth or w % 2 ** config.depth:
            raise DimensionError(f"resolution {h}x{w} not divisible by 2^{config.depth}")
        self.config = config
        self.resolution = (h, w)
        rng = np.random.default_rng(seed)
        ch = config.level_channels()
        c = config.num_classes
        self.enc = []
        cin = c
        for d in range(config.depth):
            self.enc.append((Conv2d(3, cin, ch[d], stride=2, rng=rng, dtype=dtype),
                             LayerNorm(ch[d], dtype=dtype)))
            cin = ch[d]
        self.mid = (Conv2d(3, ch[-1], ch[-1], rng=rng, dtype=dtype),
                    LayerNorm(ch[-1], dtype=dtype))
        self.dec = []
        feat = ch[-1]
        for d in range(config.depth - 1, -1, -1):
            skip_ch = c if d == 0 else ch[d - 1]
            out_ch = config.base_channels if d == 0 else ch[d - 1]
            self.dec.append((Conv2d(3, feat + skip_ch, out_ch, rng=rng, dtype=dtype),
                             LayerNorm(out_ch, dtype=dtype)))
            feat = out_ch
        self.head = Conv2d(1, config.base_channels, 3 * config.output_multiplicity,
                           rng=rng, dtype=dtype, gain=0.1)
        self.head.b[...] = head_bias_init(config.output_multiplicity, dtype)

    def params(self):
        out = {}
        for i, (conv, norm) in enumerate(self.enc):
            out.update(_layer_params(f"enc.{i}", conv, norm))
        out.update(_layer_params("mid", *self.mid))
        for i, (conv, norm) in enumerate(self.dec):
            out.update(_layer_params(f"dec.{i}", conv, norm))
        out["head.weight"] = self.head.w
        out["head.bias"] = self.head.b
        return out

    def load_params(self, tensors):
        _load_into(self.params(), tensors)

    def param_count(self):
        return sum(a.size for a in self.params().values())

    def forward(self, layout):
        images, _ = self.forward_cache(layout, keep=False)
        return images

    def forward_cache(self, layout, keep=True):
        if layout.shape != (*self.resolution, self.config.num_classes):
            raise DimensionError(f"layout shape {layout.shape} does not match model "
                                 f"({self.resolution} x {self.config.num_classes})")
        slope = self.config.lrelu_slope
        skips = [layout]
        x = layout
        enc_caches = []
        for conv, norm in self.enc:
            pre = conv.forward(x)
            normed, st = norm.forward_cache(pre)
            out = leaky_relu(normed, slope)
            enc_caches.append((x, st, normed) if keep else None)
            skips.append(out)
            x = out
        pre = self.mid[0].forward(x)
        normed, st = self.mid[1].forward_cache(pre)
        mid_cache = (x, st, normed) if keep else None
        x = leaky_relu(normed, slope)
        dec_caches = []
        for j, (conv, norm) in enumerate(self.dec):
            level = self.config.depth - 1 - j
            skip = skips[level]
            up = bilinear_upsample(x, skip.shape[0], skip.shape[1])
            xin = np.concatenate([skip, up], axis=2)
            pre = conv.forward(xin)
            normed, st = norm.forward_cache(pre)
            out = leaky_relu(normed, slope)
            dec_caches.append((xin, st, normed, x.shape[:2]) if keep else None)
            x = out
        out = self.head.forward(x)
        k = self.config.output_multiplicity
        images = [np.ascontiguousarray(out[:, :, 3 * u: 3 * u + 3]) for u in range(k)]
        return images, (enc_caches, mid_cache, dec_caches, x)

    def backward(self, cache, dimages):
        enc_caches, mid_cache, dec_caches, head_in = cache
        slope = self.config.lrelu_slope
        dout = np.concatenate(dimages, axis=2)
        d, dwh, dbh = self.head.backward(head_in, dout)
        grads = {"head.weight": dwh, "head.bias": dbh}
        dskips = [None] * (self.config.depth + 1)
        for j in range(len(self.dec) - 1, -1, -1):
            conv, norm = self.dec[j]
            xin, st, normed, prev_hw = dec_caches[j]
            level = self.config.depth - 1 - j
            d = leaky_relu_backward(normed, d, slope)
            d, dgain, doff = norm.backward(st, d)
            grads[f"dec.{j}.norm.gain"] = dgain
            grads[f"dec.{j}.norm.offset"] = doff
            dxin, dw, db = conv.backward(xin, d)
            grads[f"dec.{j}.conv.weight"] = dw
            grads[f"dec.{j}.conv.bias"] = db
            n_skip = self.config.num_classes if level == 0 else self.config.level_channels()[level - 1]
            dskip = dxin[:, :, :n_skip]
            dup = np.ascontiguousarray(dxin[:, :, n_skip:])
            dskips[level] = dskip
            d = bilinear_upsample_backward(dup, prev_hw[0], prev_hw[1])
        x, st, normed = mid_cache
        d = leaky_relu_backward(normed, d, slope)
        d, dgain, doff = self.mid[1].backward(st, d)
        grads["mid.norm.gain"] = dgain
        grads["mid.norm.offset"] = doff
        d, dw, db = self.mid[0].backward(x, d)
        grads["mid.conv.weight"] = dw
        grads["mid.conv.bias"] = db
        for i in range(len(self.enc) - 1, -1, -1):
            conv, norm = self.enc[i]
            x, st, normed = enc_caches[i]
            if dskips[i + 1] is not None:
                d = d + dskips[i + 1]
            d = leaky_relu_backward(normed, d, slope)
            d, dgain, doff = norm.backward(st, d)
            grads[f"enc.{i}.norm.gain"] = dgain
            grads[f"enc.{i}.norm.offset"] = doff
            d, dw, db = conv.backward(x, d)
            grads[f"enc.{i}.conv.weight"] = dw
            grads[f"enc.{i}.conv.bias"] = db
        return grads


def build_encoder_decoder(config, num_classes=None, resolution=(64, 128), *,
                          seed=0, dtype=np.float32):
    if num_classes is not None and num_classes != config.num_classes:
        config = EncoderDecoderConfig(**{**config.to_json(), "num_classes": num_classes})
    return EncoderDecoderModel(config, resolution, seed=seed, dtype=dtype)


def param_count_encdec(config):
    ch = config.level_channels()
    c = config.num_classes
    k = config.output_multiplicity
    total = 0
    cin = c
    for d in range(config.depth):
        total += 9 * cin * ch[d] + ch[d] + 2 * ch[d]
        cin = ch[d]
    total += 9 * ch[-1] * ch[-1] + ch[-1] + 2 * ch[-1]
    feat = ch[-1]
    for d in range(config.depth - 1, -1, -1):
        skip_ch = c if d == 0 else ch[d - 1]
        out_ch = config.base_channels if d == 0 else ch[d - 1]
        total += 9 * (feat + skip_ch) * out_ch + out_ch + 2 * out_ch
        feat = out_ch
    total += config.base_channels * 3 * k + 3 * k
    return total


def memory_footprint_exceeds_cascade(fullres_config, cascade_config, resolution):
    """Analytic check of the full-resolution network's memory drawback."""
    if cascade_config.output_resolution != tuple(resolution):
        raise DimensionError("cascade config resolution does not match comparison point")
    return fullres_activation_numel(fullres_config, resolution) > \
        cascade_activation_numel(cascade_config)


def _layer_params(prefix, conv, norm):
    return {f"{prefix}.conv.weight": conv.w, f"{prefix}.conv.bias": conv.b,
            f"{prefix}.norm.gain": norm.gain, f"{prefix}.norm.offset": norm.offset}


def _load_into(own, tensors):
    missing = set(own) - set(tensors)
    if missing:
        raise DimensionError(f"checkpoint missing tensors {sorted(missing)[:4]}...")
    for name, arr in own.items():
        src = tensors[name]
        if src.shape != arr.shape:
            raise DimensionError(f"tensor {name} has shape {src.shape}, expected {arr.shape}")
        arr[...] = src
