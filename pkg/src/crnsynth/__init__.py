"""crnsynth: cascaded refinement image synthesis from semantic layouts.

Trains multi-resolution refinement networks (and the full-resolution /
encoder-decoder baselines) with perceptual feature-matching, hindsight,
class-masked diversity, and raw-pixel losses, and ships a pairwise A/B
perceptual-study harness with an HTTP service and browser client.
"""

__version__ = "0.1.0"

from .cascade import CascadeConfig, CascadeModel, param_count, paper_scale_config
from .layout import Dataset, LabelGrid, class_masks, downsample_layout, \
    load_label_map, one_hot
from .objectives import LayerWeights, LossReport, feature_matching_loss, \
    hindsight_loss, image_space_loss, lambda_init, lambda_rescale, \
    masked_diversity_loss
from .perceiver import PerceiverSpec, RandomPerceiver, VggPerceiver, \
    load_perceiver_weights
from .study import ComparisonTrial, Response, ResponseStore, SentinelSpec, \
    StudyBatch, aggregate, exact_binomial_p, make_batch
from .trainer import TrainConfig, load_checkpoint, memorization_report, \
    save_checkpoint, synthesize, train

__all__ = [
    "CascadeConfig", "CascadeModel", "param_count", "paper_scale_config",
    "Dataset", "LabelGrid", "class_masks", "downsample_layout",
    "load_label_map", "one_hot",
    "LayerWeights", "LossReport", "feature_matching_loss", "hindsight_loss",
    "image_space_loss", "lambda_init", "lambda_rescale", "masked_diversity_loss",
    "PerceiverSpec", "RandomPerceiver", "VggPerceiver", "load_perceiver_weights",
    "ComparisonTrial", "Response", "ResponseStore", "SentinelSpec",
    "StudyBatch", "aggregate", "exact_binomial_p", "make_batch",
    "TrainConfig", "load_checkpoint", "memorization_report", "save_checkpoint",
    "synthesize", "train",
]
