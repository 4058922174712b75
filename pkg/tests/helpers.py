"""Shared test utilities: oracle implementations and fixture builders.

Oracles here are deliberately naive (explicit loops, direct formulas) and
independent of the library's vectorized/compiled paths.
"""

import numpy as np

from crnsynth.objectives import LayerWeights


def bilinear_oracle(x, out_h, out_w):
    """Direct per-pixel half-pixel-center bilinear interpolation."""
    in_h, in_w, c = x.shape
    out = np.zeros((out_h, out_w, c), dtype=np.float64)
    for oy in range(out_h):
        sy = (oy + 0.5) * in_h / out_h - 0.5
        y0 = int(np.floor(sy))
        fy = sy - y0
        y0c = min(max(y0, 0), in_h - 1)
        y1c = min(max(y0 + 1, 0), in_h - 1)
        for ox in range(out_w):
            sx = (ox + 0.5) * in_w / out_w - 0.5
            x0 = int(np.floor(sx))
            fx = sx - x0
            x0c = min(max(x0, 0), in_w - 1)
            x1c = min(max(x0 + 1, 0), in_w - 1)
            for ch in range(c):
                top = x[y0c, x0c, ch] * (1 - fx) + x[y0c, x1c, ch] * fx
                bot = x[y1c, x0c, ch] * (1 - fx) + x[y1c, x1c, ch] * fx
                out[oy, ox, ch] = top * (1 - fy) + bot * fy
    return out


def conv2d_oracle(x, w, b, stride=1, dilation=1):
    """Loop-based same-padded convolution."""
    kh, kw, cin, cout = w.shape
    h, wd, _ = x.shape
    ph = ((kh - 1) * dilation) // 2
    pw = ((kw - 1) * dilation) // 2
    ho = (h + 2 * ph - ((kh - 1) * dilation + 1)) // stride + 1
    wo = (wd + 2 * pw - ((kw - 1) * dilation + 1)) // stride + 1
    y = np.zeros((ho, wo, cout), dtype=np.float64)
    for oy in range(ho):
        for ox in range(wo):
            acc = b.astype(np.float64).copy()
            for ky in range(kh):
                iy = oy * stride + ky * dilation - ph
                if iy < 0 or iy >= h:
                    continue
                for kx in range(kw):
                    ix = ox * stride + kx * dilation - pw
                    if ix < 0 or ix >= wd:
                        continue
                    acc += x[iy, ix].astype(np.float64) @ w[ky, kx].astype(np.float64)
            y[oy, ox] = acc
    return y


def eq1_oracle(taps_ref, taps_syn, lambdas):
    """Brute-force elementwise summation of the feature-matching loss."""
    total = 0.0
    for lam, ref, syn in zip(lambdas, taps_ref, taps_syn):
        s = 0.0
        for a, b in zip(np.asarray(ref).ravel(), np.asarray(syn).ravel()):
            s += abs(float(b) - float(a))
        total += lam * s
    return total


def eq1_oracle_fast(taps_ref, taps_syn, lambdas):
    """Same quantity, vectorized; for case counts where loops are too slow."""
    return float(sum(lam * np.abs(np.asarray(s, dtype=np.float64) -
                                  np.asarray(r, dtype=np.float64)).sum()
                     for lam, r, s in zip(lambdas, taps_ref, taps_syn)))


def eq3_oracle(taps_ref, hypotheses, lambdas, masks):
    """Enumerates every per-class hypothesis assignment (k**C total)."""
    import itertools
    num_classes = masks[0].shape[0]
    k = len(hypotheses)

    def class_term(p, u):
        total = 0.0
        for l, (lam, ref) in enumerate(zip(lambdas, taps_ref)):
            diff = np.abs(np.asarray(hypotheses[u][l], dtype=np.float64) -
                          np.asarray(ref, dtype=np.float64))
            total += lam * float((masks[l][p][:, :, None] * diff).sum())
        return total

    best = None
    for assignment in itertools.product(range(k), repeat=num_classes):
        val = sum(class_term(p, u) for p, u in enumerate(assignment))
        if best is None or val < best:
            best = val
    return best


def random_taps(rng, spec_shapes, dtype=np.float64):
    return [rng.standard_normal(s).astype(dtype) for s in spec_shapes]


def margin_reference_taps(rng, taps_syn_sets, margin=1e-3):
    """Reference taps with every elementwise diff at least ``margin`` from
    zero for every hypothesis: per element, sit above the max or below the
    min of all hypotheses."""
    refs = []
    n_taps = len(taps_syn_sets[0])
    for l in range(n_taps):
        stack = np.stack([np.asarray(ts[l], dtype=np.float64) for ts in taps_syn_sets])
        above = rng.random(stack.shape[1:]) < 0.5
        offset = margin + rng.random(stack.shape[1:])
        ref = np.where(above, stack.max(axis=0) + offset, stack.min(axis=0) - offset)
        refs.append(ref)
    return refs


def finite_difference(f, arrays, eps=1e-6):
    """Central differences of scalar f w.r.t. every element of each array."""
    grads = []
    for arr in arrays:
        g = np.zeros_like(arr, dtype=np.float64)
        flat = arr.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            old = flat[i]
            flat[i] = old + eps
            f1 = f()
            flat[i] = old - eps
            f0 = f()
            flat[i] = old
            gflat[i] = (f1 - f0) / (2 * eps)
        grads.append(g)
    return grads


def max_rel_err(a, b, floor=1e-10):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    return float((np.abs(a - b) / denom).max())


def uniform_lambda(n):
    return LayerWeights(np.ones(n))


class ArrayDataset:
    """Minimal in-memory dataset for trainer tests."""

    def __init__(self, pairs):
        self.pairs = list(pairs)

    def __len__(self):
        return len(self.pairs)

    def __getitem__(self, i):
        return self.pairs[i]

    def mean_image(self):
        return np.mean(np.stack([img for _, img in self.pairs]), axis=0)
