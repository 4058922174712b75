"""Frozen perception networks whose layer activations ("taps") drive the
feature-matching loss.

Tap 0 is always the raw input image. Two perceivers are provided:

* ``RandomPerceiver`` — a small fixed-seed conv stack (three conv taps at
  cumulative strides 1/2/4). Weights are arbitrary but frozen; the loss
  machinery is indifferent to what the perceiver was trained on, so this
  stands in for a pretrained network in tests and desk-scale runs.
* ``VggPerceiver`` — the VGG-19 tap set (conv1_2 .. conv5_2, activations
  taken after the ReLU), fed from a converted weight archive.

Gradients never flow *into* perceiver parameters, only *through* the
taps to the input image.
"""

from dataclasses import dataclass

import numpy as np

from .archive import load_archive, save_archive
from .errors import DimensionError, SchemaError
from .layers import Conv2d, leaky_relu, leaky_relu_backward, maxpool2x2, \
    maxpool2x2_backward

VGG_TAP_NAMES = ("input", "conv1_2", "conv2_2", "conv3_2", "conv4_2", "conv5_2")

# Conv layers up to conv5_2; (name, cin, cout, tap?, pool-after?).
_VGG_LAYERS = (
    ("conv1_1", 3, 64, False, False),
    ("conv1_2", 64, 64, True, True),
    ("conv2_1", 64, 128, False, False),
    ("conv2_2", 128, 128, True, True),
    ("conv3_1", 128, 256, False, False),
    ("conv3_2", 256, 256, True, False),
    ("conv3_3", 256, 256, False, False),
    ("conv3_4", 256, 256, False, True),
    ("conv4_1", 256, 512, False, False),
    ("conv4_2", 512, 512, True, False),
    ("conv4_3", 512, 512, False, False),
    ("conv4_4", 512, 512, False, True),
    ("conv5_1", 512, 512, False, False),
    ("conv5_2", 512, 512, True, False),
)


@dataclass(frozen=True)
class PerceiverSpec:
    """Structure of a perceiver's taps, independent of its weights."""
    tap_names: tuple
    tap_channels: tuple      # per tap, tap 0 = 3
    tap_strides: tuple       # cumulative downsampling factor per tap
    source: str              # "random:<seed>" or "archive:<path>"

    def __post_init__(self):
        if not (len(self.tap_names) == len(self.tap_channels) == len(self.tap_strides)):
            raise SchemaError("tap names/channels/strides disagree in length")
        if self.tap_strides[0] != 1 or self.tap_channels[0] != 3:
            raise SchemaError("tap 0 must be the raw 3-channel image at stride 1")
        if list(self.tap_strides) != sorted(self.tap_strides):
            raise SchemaError("taps must be ordered by decreasing resolution")

    @property
    def num_taps(self):
        return len(self.tap_names)

    def check_resolution(self, h, w):
        stride = max(self.tap_strides)
        if h % stride or w % stride:
            raise DimensionError(
                f"input {h}x{w} not divisible by cumulative stride {stride}")

    def tap_shapes(self, h, w):
        self.check_resolution(h, w)
        return [(h // s, w // s, c)
                for s, c in zip(self.tap_strides, self.tap_channels)]


class RandomPerceiver:
    """Fixed-seed conv stack: taps at cumulative strides 1, 2, 4."""

    def __init__(self, seed=0, channels=(16, 24, 32), *, dtype=np.float32, slope=0.2):
        rng = np.random.default_rng(seed)
        self.slope = slope
        cin = 3
        self.convs = []
        cumulative = []
        factor = 1
        for i, cout in enumerate(channels):
            stride = 1 if i == 0 else 2
            factor *= stride
            cumulative.append(factor)
            self.convs.append(Conv2d(3, cin, cout, stride=stride, rng=rng, dtype=dtype))
            cin = cout
        self.spec = PerceiverSpec(
            tap_names=("input",) + tuple(f"tap{i + 1}" for i in range(len(channels))),
            tap_channels=(3,) + tuple(channels),
            tap_strides=(1,) + tuple(cumulative),
            source=f"random:{seed}")

    def params(self):
        out = {}
        for i, conv in enumerate(self.convs):
            out[f"convs.{i}.weight"] = conv.w
            out[f"convs.{i}.bias"] = conv.b
        return out

    def extract_taps(self, image):
        taps, _ = self.extract_taps_cache(image)
        return taps

    def extract_taps_cache(self, image):
        self.spec.check_resolution(image.shape[0], image.shape[1])
        taps = [image]
        caches = []
        x = image
        for conv in self.convs:
            pre = conv.forward(x)
            out = leaky_relu(pre, self.slope)
            caches.append((x, pre))
            taps.append(out)
            x = out
        return taps, caches

    def backward_to_image(self, caches, tap_grads):
        """Maps per-tap gradients back to a gradient on the input image."""
        d = None
        for i in range(len(self.convs) - 1, -1, -1):
            x, pre = caches[i]
            tg = tap_grads[i + 1]
            if tg is not None:
                d = tg if d is None else d + tg
            if d is None:
                continue
            d = leaky_relu_backward(pre, d, self.slope)
            d, _, _ = self.convs[i].backward(x, d)
        dimage = tap_grads[0]
        if d is not None:
            dimage = d if dimage is None else dimage + d
        return dimage if dimage is not None else np.zeros_like(caches[0][0])


class VggPerceiver:
    """VGG-19 tap extractor running on converted weights.

    ``preprocess`` holds the published normalization convention of the
    weight source (recorded in the archive header, applied before the
    conv stack; tap 0 stays the raw image).
    """

    def __init__(self, tensors, preprocess=None, *, dtype=np.float32):
        self.layers = []
        for name, cin, cout, tap, pool in _VGG_LAYERS:
            wname, bname = f"{name}.weight", f"{name}.bias"
            if wname not in tensors:
                raise SchemaError(f"perceiver archive missing tensor {wname!r}")
            if bname not in tensors:
                raise SchemaError(f"perceiver archive missing tensor {bname!r}")
            w = tensors[wname]
            b = tensors[bname]
            if w.shape != (3, 3, cin, cout):
                raise SchemaError(f"tensor {wname!r} has shape {w.shape}, expected "
                                  f"{(3, 3, cin, cout)}")
            if b.shape != (cout,):
                raise SchemaError(f"tensor {bname!r} has shape {b.shape}, expected {(cout,)}")
            conv = Conv2d(3, cin, cout, dtype=dtype)
            conv.w[...] = w.astype(dtype)
            conv.b[...] = b.astype(dtype)
            self.layers.append((name, conv, tap, pool))
        pre = preprocess or {}
        self.mean = np.asarray(pre.get("mean", [0.0, 0.0, 0.0]), dtype=dtype)
        self.std = np.asarray(pre.get("std", [1.0, 1.0, 1.0]), dtype=dtype)
        self.spec = PerceiverSpec(
            tap_names=VGG_TAP_NAMES,
            tap_channels=(3, 64, 128, 256, 512, 512),
            tap_strides=(1, 1, 2, 4, 8, 16),
            source="archive:vgg19")

    def params(self):
        out = {}
        for name, conv, _, _ in self.layers:
            out[f"{name}.weight"] = conv.w
            out[f"{name}.bias"] = conv.b
        return out

    def extract_taps(self, image):
        taps, _ = self.extract_taps_cache(image)
        return taps

    def extract_taps_cache(self, image):
        self.spec.check_resolution(image.shape[0], image.shape[1])
        x = ((image - self.mean) / self.std).astype(image.dtype)
        taps = [image]
        caches = []
        for name, conv, tap, pool in self.layers:
            pre = conv.forward(x)
            out = np.maximum(pre, 0)
            if tap:
                taps.append(out)
            pool_idx = None
            pool_in_shape = None
            if pool:
                pool_in_shape = out.shape
                out, pool_idx = maxpool2x2(out)
            caches.append((x, pre, pool_idx, pool_in_shape))
            x = out
        return taps, caches

    def backward_to_image(self, caches, tap_grads):
        tap_positions = [i for i, layer in enumerate(self.layers) if layer[2]]
        d = None
        next_tap = len(tap_positions) - 1
        for i in range(len(self.layers) - 1, -1, -1):
            name, conv, tap, pool = self.layers[i]
            x, pre, pool_idx, pool_in_shape = caches[i]
            if d is not None and pool:
                d = maxpool2x2_backward(pool_idx, d, pool_in_shape[0], pool_in_shape[1])
            if tap:
                tg = tap_grads[next_tap + 1]
                next_tap -= 1
                if tg is not None:
                    d = tg if d is None else d + tg
            if d is None:
                continue
            d = np.where(pre > 0, d, 0).astype(d.dtype)
            d, _, _ = conv.backward(x, d)
        dimage = tap_grads[0]
        if d is not None:
            d = (d / self.std).astype(d.dtype)
            dimage = d if dimage is None else dimage + d
        return dimage if dimage is not None else np.zeros_like(caches[0][0])


def save_perceiver_weights(path, tensors, preprocess=None):
    header = {"kind": "vgg19_perceiver", "taps": list(VGG_TAP_NAMES)}
    if preprocess:
        header["preprocess"] = preprocess
    return save_archive(path, tensors, header)


def load_perceiver_weights(archive_path, *, dtype=np.float32):
    """Loads a converted archive and validates names/shapes."""
    tensors, header = load_archive(archive_path)
    taps = header.get("taps")
    if taps is not None and tuple(taps) != VGG_TAP_NAMES:
        raise SchemaError(f"archive taps {taps} do not match {list(VGG_TAP_NAMES)}")
    return VggPerceiver(tensors, header.get("preprocess"), dtype=dtype)


def convert_torch_vgg19(state_dict_path, out_path):
    """Converts a torchvision VGG-19 ``features`` state dict to an archive.

    Accepts either a torch checkpoint (requires torch) or an ``.npz``
    with the same tensor naming. Torch conv weights (cout, cin, kh, kw)
    are transposed to our (kh, kw, cin, cout).
    """
    arrays = _load_state_arrays(state_dict_path)
    conv_indices = sorted({_conv_index(k) for k in arrays})
    names = [layer[0] for layer in _VGG_LAYERS]
    if len(conv_indices) < len(names):
        raise SchemaError(f"state dict has {len(conv_indices)} conv layers, "
                          f"need {len(names)} (through conv5_2)")
    tensors = {}
    for name, idx in zip(names, conv_indices):
        w = arrays[f"features.{idx}.weight"]
        b = arrays[f"features.{idx}.bias"]
        tensors[f"{name}.weight"] = np.ascontiguousarray(
            np.asarray(w).transpose(2, 3, 1, 0).astype(np.float32))
        tensors[f"{name}.bias"] = np.asarray(b).astype(np.float32)
    preprocess = {"mean": [0.485, 0.456, 0.406], "std": [0.229, 0.224, 0.225],
                  "channel_order": "rgb", "input_range": [0.0, 1.0]}
    return save_perceiver_weights(out_path, tensors, preprocess)


def _conv_index(key):
    parts = key.split(".")
    if len(parts) != 3 or parts[0] != "features" or not parts[1].isdigit():
        raise SchemaError(f"unexpected state dict key {key!r}; expected "
                          f"'features.<i>.weight/bias'")
    return int(parts[1])


def _load_state_arrays(path):
    path = str(path)
    if path.endswith(".npz"):
        with np.load(path) as data:
            return {k: data[k] for k in data.files}
    try:
        import torch
    except ImportError as exc:
        raise SchemaError("converting a torch checkpoint requires torch; "
                          "alternatively provide an .npz export") from exc
    state = torch.load(path, map_location="cpu", weights_only=True)
    if hasattr(state, "state_dict"):
        state = state.state_dict()
    return {k: v.numpy() for k, v in state.items() if k.startswith("features.")}
