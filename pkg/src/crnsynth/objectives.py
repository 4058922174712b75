"""Training objectives.

All four losses are weighted L1 distances between perceiver taps of a
synthesized image and a reference image:

* feature matching — sum over taps of lambda_l * ||ref_l - syn_l||_1
* hindsight — min over the k synthesized hypotheses of the above
* class-masked diversity — per semantic class, the hindsight min with the
  tap differences masked by that class's (downsampled) layout channel
* image-space — the tap-0 (raw pixel) term alone

Gradients are subgradients of |.| (sign, 0 at exact zero) routed only to
the selected hypothesis; ties in the min break to the lowest index.
"""

from dataclasses import dataclass

import numpy as np

from .errors import DegenerateStatisticsError, DimensionError, InvariantError

MASK_PARTITION_TOL = 1e-5


@dataclass
class LayerWeights:
    """One nonnegative weight per perceiver tap."""
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "values", np.asarray(self.values, dtype=np.float64))
        if self.values.ndim != 1:
            raise DimensionError("layer weights must be a flat sequence")
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise InvariantError("layer weights must be finite and nonnegative")

    def __len__(self):
        return self.values.size

    def __getitem__(self, i):
        return float(self.values[i])

    def tolist(self):
        return self.values.tolist()


@dataclass
class LossReport:
    """A loss value with its per-layer / per-class / per-hypothesis split."""
    total: float
    per_layer: list
    per_class: dict | None = None
    per_hypothesis: list | None = None
    chosen_u: object = None  # int for hindsight, {class: int} for masked

    def to_json(self):
        out = {"total": self.total, "per_layer": self.per_layer}
        if self.per_class is not None:
            out["per_class"] = {str(k): v for k, v in self.per_class.items()}
        if self.chosen_u is not None:
            if isinstance(self.chosen_u, dict):
                out["chosen_u"] = {str(k): v for k, v in self.chosen_u.items()}
            else:
                out["chosen_u"] = self.chosen_u
        return out


def lambda_init(spec, sample_resolution):
    """Initial weights: inverse of each tap's element count."""
    h, w = sample_resolution
    shapes = spec.tap_shapes(h, w)
    return LayerWeights(np.array([1.0 / (th * tw * tc) for th, tw, tc in shapes]))


def lambda_rescale(weights, per_term_running_means):
    """Divides each weight by its term's epoch-mean contribution.

    After rescaling, a layer whose weighted term averaged m now averages
    1: the expected contribution of every term is normalized.
    """
    means = np.asarray(per_term_running_means, dtype=np.float64)
    if means.shape != (len(weights),):
        raise DimensionError(f"{len(weights)} weights but {means.size} running means")
    if np.any(~np.isfinite(means)) or np.any(means <= 0):
        raise DegenerateStatisticsError(f"running means must be positive, got {means.tolist()}")
    return LayerWeights(weights.values / means)


def _check_tap_shapes(taps_ref, taps_syn):
    if len(taps_ref) != len(taps_syn):
        raise DimensionError(f"{len(taps_ref)} reference taps vs {len(taps_syn)} synthesized")
    for l, (a, b) in enumerate(zip(taps_ref, taps_syn)):
        if a.shape != b.shape:
            raise DimensionError(f"tap {l} shape mismatch: {a.shape} vs {b.shape}")


def feature_matching_loss(taps_ref, taps_syn, weights, *, want_grads=False):
    """Eq.-1-style content loss over all taps."""
    _check_tap_shapes(taps_ref, taps_syn)
    if len(weights) != len(taps_ref):
        raise DimensionError(f"{len(weights)} weights for {len(taps_ref)} taps")
    per_layer = []
    grads = [] if want_grads else None
    for l, (ref, syn) in enumerate(zip(taps_ref, taps_syn)):
        diff = syn.astype(np.float64) - ref.astype(np.float64)
        per_layer.append(weights[l] * float(np.abs(diff).sum()))
        if want_grads:
            grads.append((weights[l] * np.sign(diff)).astype(syn.dtype))
    report = LossReport(total=float(sum(per_layer)), per_layer=per_layer)
    return (report, grads) if want_grads else report


def hindsight_loss(taps_ref, hypotheses, weights, *, want_grads=False):
    """Loss of the best hypothesis among k synthesized tap sets."""
    if len(hypotheses) == 0:
        raise ValueError("hindsight loss needs at least one hypothesis")
    evals = []
    for taps_syn in hypotheses:
        if want_grads:
            evals.append(feature_matching_loss(taps_ref, taps_syn, weights, want_grads=True))
        else:
            evals.append((feature_matching_loss(taps_ref, taps_syn, weights), None))
    totals = [rep.total for rep, _ in evals]
    u_star = int(np.argmin(totals))  # argmin takes the lowest index on ties
    best = evals[u_star][0]
    report = LossReport(total=best.total, per_layer=best.per_layer,
                        per_hypothesis=totals, chosen_u=u_star)
    if want_grads:
        return report, {u_star: evals[u_star][1]}
    return report


def validate_masks(masks, taps_ref):
    if len(masks) != len(taps_ref):
        raise DimensionError(f"{len(masks)} mask resolutions for {len(taps_ref)} taps")
    for l, m in enumerate(masks):
        if m.shape[1:] != taps_ref[l].shape[:2]:
            raise DimensionError(f"mask resolution {m.shape[1:]} does not match tap "
                                 f"{l} resolution {taps_ref[l].shape[:2]}")
        err = float(np.abs(m.sum(axis=0) - 1.0).max())
        if err > MASK_PARTITION_TOL:
            raise InvariantError(f"class masks at tap {l} violate the partition of "
                                 f"unity by {err:.3g}")


def masked_diversity_loss(taps_ref, hypotheses, weights, masks, *, want_grads=False):
    """Per-class hindsight loss: each class picks its best hypothesis.

    ``masks`` holds one (C, h_l, w_l) array per tap, a partition of unity
    at every tap resolution; each mask broadcasts over that tap's feature
    channels.
    """
    if len(hypotheses) == 0:
        raise ValueError("masked diversity loss needs at least one hypothesis")
    validate_masks(masks, taps_ref)
    num_classes = masks[0].shape[0]
    k = len(hypotheses)
    # masked_term[u][p][l]
    diffs = []
    masked = np.zeros((k, num_classes, len(taps_ref)))
    for u, taps_syn in enumerate(hypotheses):
        _check_tap_shapes(taps_ref, taps_syn)
        per_tap = []
        for l, (ref, syn) in enumerate(zip(taps_ref, taps_syn)):
            diff = syn.astype(np.float64) - ref.astype(np.float64)
            per_tap.append(diff if want_grads else None)
            absum = np.abs(diff).sum(axis=2)          # (h_l, w_l)
            masked[u, :, l] = weights[l] * (masks[l] * absum).sum(axis=(1, 2))
        diffs.append(per_tap)
    per_class_total = masked.sum(axis=2)              # (k, C)
    chosen = per_class_total.argmin(axis=0)           # (C,)
    per_class = {p: float(per_class_total[chosen[p], p]) for p in range(num_classes)}
    per_layer = [float(sum(masked[chosen[p], p, l] for p in range(num_classes)))
                 for l in range(len(taps_ref))]
    report = LossReport(total=float(sum(per_class.values())), per_layer=per_layer,
                        per_class=per_class,
                        chosen_u={p: int(chosen[p]) for p in range(num_classes)})
    if not want_grads:
        return report
    grads = {}
    for p in range(num_classes):
        u = int(chosen[p])
        taps = grads.setdefault(u, [np.zeros_like(t) for t in hypotheses[u]])
        for l in range(len(taps_ref)):
            g = weights[l] * masks[l][p][:, :, None] * np.sign(diffs[u][l])
            taps[l] += g.astype(taps[l].dtype)
    return report, grads


def image_space_loss(image_ref, image_syn, lambda0=None, *, want_grads=False):
    """Raw-pixel L1 (the tap-0 term alone); lambda0 defaults to 1/numel."""
    if image_ref.shape != image_syn.shape:
        raise DimensionError(f"image shapes differ: {image_ref.shape} vs {image_syn.shape}")
    if lambda0 is None:
        lambda0 = 1.0 / image_ref.size
    diff = image_syn.astype(np.float64) - image_ref.astype(np.float64)
    total = lambda0 * float(np.abs(diff).sum())
    report = LossReport(total=total, per_layer=[total])
    if want_grads:
        return report, (lambda0 * np.sign(diff)).astype(image_syn.dtype)
    return report
