from __future__ import annotations

import pytest
import torch

from s2dalign.config import load_config
from s2dalign.corpusio import build_corpus

torch.set_num_threads(2)


TINY_OVERRIDES = {
    "corpus": {"n_train": 24, "n_val": 8, "n_test": 8, "seed": 5},
    "model": {"warm_start_steps": 40},
    "train": {
        "batch_size": 8,
        "warmup_steps": 5,
        "stage1": {"epochs": 2},
        "stage2": {"epochs": 1},
        "stage3": {"epochs": 1},
    },
    "seed": 1,
}


@pytest.fixture(scope="session")
def tiny_config():
    return load_config(overrides=TINY_OVERRIDES)


@pytest.fixture(scope="session")
def tiny_corpus(tiny_config):
    return build_corpus(tiny_config.corpus)
