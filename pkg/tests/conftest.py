import sys
import time
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from crnsynth.cascade import CascadeConfig, CascadeModel
from crnsynth.layout import Dataset
from crnsynth.perceiver import RandomPerceiver
from crnsynth.synthdata import layout_pair_for_diversity, make_synthetic_dataset
from crnsynth.trainer import TrainConfig, evaluate_mean_loss, train

from helpers import ArrayDataset

# Desk-scale run settings shared by the trainer tests and the acceptance
# suite. The memorization run is the expensive piece (~2000 steps), so it
# runs once per session and its artifacts are reused everywhere.
MEMO_NUM_CLASSES = 6
MEMO_CONFIG = dict(module_count=5, channels=[64, 64, 64, 32, 32],
                   num_classes=MEMO_NUM_CLASSES)
MEMO_STEPS = 2000
MEMO_PAIRS = 8
MEMO_LR = 1e-3


@pytest.fixture(scope="session")
def memo_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("memo_data")
    manifest = make_synthetic_dataset(root, n_pairs=MEMO_PAIRS, size=(64, 128),
                                      num_classes=MEMO_NUM_CLASSES, seed=11)
    return Dataset.from_manifest(manifest, MEMO_NUM_CLASSES)


@pytest.fixture(scope="session")
def memorization_run(memo_dataset, tmp_path_factory):
    """Trains the tiny cascade to memorize 8 pairs; returns run artifacts."""
    out = tmp_path_factory.mktemp("memo_run")
    model = CascadeModel(CascadeConfig(**MEMO_CONFIG), seed=0)
    perceiver = RandomPerceiver(seed=1)
    t0 = time.perf_counter()
    initial = evaluate_mean_loss(model, memo_dataset, perceiver)
    epochs = MEMO_STEPS // MEMO_PAIRS
    cfg = TrainConfig(epochs=epochs, steps_per_epoch=MEMO_PAIRS, lr=MEMO_LR,
                      seed=0, loss="eq1", k=1, lambda_rescale_epoch=100)
    result = train(model, memo_dataset, cfg, perceiver, out_dir=out)
    final = evaluate_mean_loss(model, memo_dataset, perceiver)
    elapsed = time.perf_counter() - t0
    return {"model": model, "perceiver": perceiver, "dataset": memo_dataset,
            "result": result, "initial_loss": initial, "final_loss": final,
            "out_dir": out, "elapsed_s": elapsed}


@pytest.fixture(scope="session")
def diversity_run():
    """Trains a small k=2 cascade with the hindsight loss on one layout
    with two references."""
    layout, ref_a, ref_b = layout_pair_for_diversity(size=(16, 32),
                                                     num_classes=4, seed=5)
    dataset = ArrayDataset([(layout, ref_a), (layout, ref_b)])
    model = CascadeModel(CascadeConfig(module_count=3, channels=[32, 32, 16],
                                       num_classes=4, output_multiplicity=2), seed=0)
    perceiver = RandomPerceiver(seed=2)
    cfg = TrainConfig(epochs=400, steps_per_epoch=2, lr=1e-3, seed=0,
                      loss="eq2", k=2, lambda_rescale_epoch=100)
    t0 = time.perf_counter()
    result = train(model, dataset, cfg, perceiver)
    elapsed = time.perf_counter() - t0
    return {"model": model, "layout": layout, "refs": (ref_a, ref_b),
            "result": result, "perceiver": perceiver, "elapsed_s": elapsed}


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
