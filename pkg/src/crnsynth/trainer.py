"""Supervised training loop, checkpointing, and the synthesis driver.

One logical writer mutates model parameters; everything is deterministic
under a fixed seed (init, data order, updates), so two runs with the same
config produce bitwise-identical metrics logs and outputs on the same
backend.
"""

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .archive import load_archive, save_archive
from .baselines import EncoderDecoderConfig, EncoderDecoderModel, FullResConfig, \
    FullResModel
from .cascade import CascadeConfig, CascadeModel
from .errors import ConfigError, DimensionError, TrainingDivergedError
from .layers import make_optimizer
from .layout import class_masks, load_label_map, one_hot, save_image
from .objectives import LayerWeights, LossReport, feature_matching_loss, \
    hindsight_loss, image_space_loss, lambda_init, lambda_rescale, \
    masked_diversity_loss
from .perceiver import RandomPerceiver

LOSS_KINDS = ("eq1", "eq2", "eq3", "eq4")


@dataclass
class TrainConfig:
    epochs: int
    steps_per_epoch: int | None = None
    optimizer: str = "adam"
    lr: float = 1e-4
    seed: int = 0
    loss: str = "eq1"
    k: int = 1
    lambda_rescale_epoch: int = 100
    checkpoint_every: int = 0  # epochs between checkpoints; 0 = final only

    def __post_init__(self):
        if self.epochs < 1:
            raise ConfigError("epochs must be >= 1")
        if self.steps_per_epoch is not None and self.steps_per_epoch < 1:
            raise ConfigError("steps_per_epoch must be >= 1")
        if self.loss not in LOSS_KINDS:
            raise ConfigError(f"loss must be one of {LOSS_KINDS}, got {self.loss!r}")
        if self.k < 1:
            raise ConfigError("k must be >= 1")
        if self.optimizer not in ("adam", "sgd"):
            raise ConfigError(f"unknown optimizer {self.optimizer!r}")

    @classmethod
    def from_json(cls, obj):
        unknown = set(obj) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown train config keys {sorted(unknown)}")
        return cls(**obj)


@dataclass
class TrainingState:
    step: int = 0
    epoch: int = 0
    lambdas: list = None
    rescaled: bool = False
    term_sums: np.ndarray = None
    term_count: int = 0


@dataclass
class TrainResult:
    metrics: list
    metrics_path: str | None
    checkpoint_path: str | None
    state: TrainingState
    model: object


class _MetricsLog:
    def __init__(self, path):
        self.records = []
        self._fh = open(path, "w") if path else None

    def append(self, record):
        self.records.append(record)
        if self._fh:
            self._fh.write(json.dumps(record, sort_keys=True) + "\n")
            self._fh.flush()

    def close(self):
        if self._fh:
            self._fh.close()


def _step_loss(model, perceiver, layout, image, cfg, weights, mask_cache, pair_idx):
    """One forward/backward pass; returns (report, grads dict)."""
    images, cache = model.forward_cache(layout)
    k = len(images)
    if cfg.loss == "eq4":
        total = 0.0
        per_layer = [0.0]
        dimages = []
        for img in images:
            rep, dimg = image_space_loss(image, img, weights[0], want_grads=True)
            total += rep.total
            per_layer[0] += rep.per_layer[0]
            dimages.append(dimg)
        report = LossReport(total=total, per_layer=per_layer)
        return report, model.backward(cache, dimages)

    taps_ref = perceiver.extract_taps(image)
    tap_sets = []
    pcaches = []
    for img in images:
        taps, pc = perceiver.extract_taps_cache(img)
        tap_sets.append(taps)
        pcaches.append(pc)

    if cfg.loss == "eq1":
        total = 0.0
        per_layer = np.zeros(len(weights))
        dimages = []
        for taps, pc in zip(tap_sets, pcaches):
            rep, tgrads = feature_matching_loss(taps_ref, taps, weights, want_grads=True)
            total += rep.total
            per_layer += np.asarray(rep.per_layer)
            dimages.append(perceiver.backward_to_image(pc, tgrads))
        report = LossReport(total=total, per_layer=per_layer.tolist())
        return report, model.backward(cache, dimages)

    if cfg.loss == "eq2":
        report, grads_by_u = hindsight_loss(taps_ref, tap_sets, weights, want_grads=True)
    else:  # eq3
        if pair_idx not in mask_cache:
            resolutions = [(s[0], s[1]) for s in
                           perceiver.spec.tap_shapes(layout.shape[0], layout.shape[1])]
            mask_cache[pair_idx] = class_masks(layout, resolutions)
        report, grads_by_u = masked_diversity_loss(taps_ref, tap_sets, weights,
                                                   mask_cache[pair_idx], want_grads=True)
    dimages = []
    for u in range(k):
        if u in grads_by_u:
            dimages.append(perceiver.backward_to_image(pcaches[u], grads_by_u[u]))
        else:
            dimages.append(np.zeros_like(images[u]))
    return report, model.backward(cache, dimages)


def train(model, dataset, config, perceiver=None, out_dir=None):
    """Trains ``model`` on ``dataset`` per ``config``.

    Returns a TrainResult whose metrics list mirrors the JSONL log: one
    record per step plus a single ``lambda_rescale`` event when the
    schedule fires.
    """
    if len(dataset) == 0:
        raise DimensionError("dataset is empty")
    k = model.config.output_multiplicity
    if config.k != k:
        raise ConfigError(f"config.k={config.k} but the model emits {k} images")
    layout0, image0 = dataset[0]
    expected = getattr(model, "resolution", None) or model.config.output_resolution
    if layout0.shape[:2] != tuple(expected):
        raise DimensionError(f"dataset layouts are {layout0.shape[:2]}, model wants {expected}")
    if image0.shape[:2] != layout0.shape[:2]:
        raise DimensionError("reference images do not match layout resolution")

    needs_perceiver = config.loss != "eq4"
    if perceiver is None and needs_perceiver:
        perceiver = RandomPerceiver(seed=config.seed, dtype=model.dtype
                                    if hasattr(model, "dtype") else np.float32)
    if needs_perceiver:
        weights = lambda_init(perceiver.spec, layout0.shape[:2])
    else:
        weights = LayerWeights([1.0 / image0.size])

    out_dir = Path(out_dir) if out_dir else None
    if out_dir:
        out_dir.mkdir(parents=True, exist_ok=True)
    log = _MetricsLog(out_dir / "metrics.jsonl" if out_dir else None)

    rng = np.random.default_rng(config.seed)
    steps_per_epoch = config.steps_per_epoch or len(dataset)
    params = model.params()
    optimizer = make_optimizer(config.optimizer, params, config.lr)
    state = TrainingState(lambdas=weights.tolist(),
                          term_sums=np.zeros(len(weights)))
    mask_cache = {}
    ckpt_path = None
    try:
        for epoch in range(config.epochs):
            state.epoch = epoch
            order = _epoch_order(rng, len(dataset), steps_per_epoch)
            for idx in order:
                layout, image = dataset[int(idx)]
                report, grads = _step_loss(model, perceiver, layout, image,
                                           config, weights, mask_cache, int(idx))
                if not np.isfinite(report.total):
                    raise TrainingDivergedError(
                        f"loss became non-finite at step {state.step}")
                optimizer.step(grads)
                record = {"step": state.step, "epoch": epoch,
                          "total": report.total,
                          "per_layer": list(report.per_layer)}
                if report.chosen_u is not None:
                    record["chosen_u"] = (report.chosen_u if not isinstance(report.chosen_u, dict)
                                          else {str(p): u for p, u in report.chosen_u.items()})
                log.append(record)
                state.term_sums += np.asarray(report.per_layer)
                state.term_count += 1
                state.step += 1
            if (not state.rescaled and config.lambda_rescale_epoch
                    and epoch + 1 == config.lambda_rescale_epoch):
                means = state.term_sums / state.term_count
                new_weights = lambda_rescale(weights, means)
                log.append({"event": "lambda_rescale", "epoch": epoch,
                            "step": state.step,
                            "lambda_before": weights.tolist(),
                            "running_means": means.tolist(),
                            "lambda_after": new_weights.tolist()})
                weights = new_weights
                state.lambdas = weights.tolist()
                state.rescaled = True
            if out_dir and config.checkpoint_every and \
                    (epoch + 1) % config.checkpoint_every == 0:
                save_checkpoint(out_dir / f"ckpt_ep{epoch + 1:05d}.wts", model,
                                step=state.step, seed=config.seed)
        if out_dir:
            ckpt_path = save_checkpoint(out_dir / "final.wts", model,
                                        step=state.step, seed=config.seed)
    finally:
        log.close()
    return TrainResult(metrics=log.records,
                       metrics_path=str(out_dir / "metrics.jsonl") if out_dir else None,
                       checkpoint_path=str(ckpt_path) if ckpt_path else None,
                       state=state, model=model)


def _epoch_order(rng, n, steps):
    order = []
    while len(order) < steps:
        order.extend(rng.permutation(n).tolist())
    return order[:steps]


def save_checkpoint(path, model, *, step=0, seed=0):
    header = {"kind": model.kind, "config": model.config.to_json(),
              "step": step, "seed": seed}
    if hasattr(model, "resolution"):
        header["resolution"] = list(model.resolution)
    return save_archive(path, model.params(), header)


def load_checkpoint(path, *, dtype=np.float32):
    tensors, header = load_archive(path)
    kind = header.get("kind")
    cfg = header.get("config", {})
    if kind == "cascade":
        model = CascadeModel(CascadeConfig.from_json(cfg), dtype=dtype)
    elif kind == "fullres":
        model = FullResModel(FullResConfig.from_json(cfg),
                             tuple(header["resolution"]), dtype=dtype)
    elif kind == "encdec":
        model = EncoderDecoderModel(EncoderDecoderConfig.from_json(cfg),
                                    tuple(header["resolution"]), dtype=dtype)
    else:
        raise ConfigError(f"checkpoint {path} has unknown kind {kind!r}")
    model.load_params(tensors)
    return model, header


def synthesize(checkpoint_path, layout_paths, out_dir, *, select="all",
               remap_table=None, reference_paths=None):
    """Runs a checkpoint over label maps and writes 8-bit PNGs.

    ``select='best'`` keeps, per layout, the hypothesis closest to a
    paired reference image (raw-pixel L1), so it needs
    ``reference_paths`` parallel to ``layout_paths``.
    """
    if select not in ("all", "best"):
        raise ConfigError(f"select must be 'all' or 'best', got {select!r}")
    if select == "best" and not reference_paths:
        raise ConfigError("select='best' needs reference images to rank against")
    model, header = load_checkpoint(checkpoint_path)
    num_classes = model.config.num_classes
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = []
    for i, lp in enumerate(layout_paths):
        grid = load_label_map(lp, remap_table)
        layout = one_hot(grid, num_classes)
        images = model.forward(layout)
        stem = Path(lp).stem
        if select == "best":
            from .layout import load_reference_image
            ref = load_reference_image(reference_paths[i])
            errs = [float(np.abs(img - ref).mean()) for img in images]
            images = [images[int(np.argmin(errs))]]
        if len(images) == 1:
            targets = [out_dir / f"{stem}.png"]
        else:
            targets = [out_dir / f"{stem}_{u}.png" for u in range(len(images))]
        for img, target in zip(images, targets):
            save_image(target, img)
            written.append(str(target))
    return written


def memorization_report(model, dataset):
    """Per-pair raw-pixel L1 against a constant mean-image predictor.

    For multi-output models the best hypothesis per pair is scored.
    """
    mean_img = dataset.mean_image()
    pairs = []
    for i in range(len(dataset)):
        layout, image = dataset[i]
        outputs = model.forward(layout)
        model_l1 = min(float(np.abs(np.clip(o, 0.0, 1.0) - image).mean()) for o in outputs)
        baseline_l1 = float(np.abs(mean_img - image).mean())
        pairs.append({"index": i, "model_l1": model_l1, "baseline_l1": baseline_l1})
    return {"pairs": pairs,
            "model_mean": float(np.mean([p["model_l1"] for p in pairs])),
            "baseline_mean": float(np.mean([p["baseline_l1"] for p in pairs])),
            "beats_baseline_everywhere": all(p["model_l1"] < p["baseline_l1"]
                                             for p in pairs)}


def evaluate_mean_loss(model, dataset, perceiver, weights=None):
    """Dataset-mean feature-matching loss; best hypothesis per pair."""
    layout0, _ = dataset[0]
    if weights is None:
        weights = lambda_init(perceiver.spec, layout0.shape[:2])
    totals = []
    for i in range(len(dataset)):
        layout, image = dataset[i]
        taps_ref = perceiver.extract_taps(image)
        tap_sets = [perceiver.extract_taps(img) for img in model.forward(layout)]
        totals.append(hindsight_loss(taps_ref, tap_sets, weights).total)
    return float(np.mean(totals))
