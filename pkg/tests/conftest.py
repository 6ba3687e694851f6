"""Shared fixtures: a tiny synthetic corpus and a checkpoint trained on it."""

import numpy as np
import pytest

from soundscan.config import micro_preset
from soundscan.data import SynthConfig, synth_dataset
from soundscan.training import train


@pytest.fixture(scope="session")
def tiny_corpus(tmp_path_factory):
    """2-class, 6+3+3 clips per class, 1 s @ 8 kHz."""
    root = tmp_path_factory.mktemp("tiny_corpus")
    cfg = SynthConfig(classes=2, train_clips=6, test_normal=3, test_anomaly=3,
                      base_freqs=(400.0, 700.0), seed=100)
    rows = synth_dataset(cfg, root)
    return rows, root


@pytest.fixture(scope="session")
def tiny_run_cfg():
    cfg = micro_preset(seed=7)
    cfg.train.epochs = 3
    cfg.train.batch_size = 8
    cfg.scoring.prototypes = 4
    cfg.synth.classes = 2
    cfg.synth.train_clips = 6
    cfg.synth.test_normal = 10  # pAUC needs floor(0.1 * N-) >= 1 per group
    cfg.synth.test_anomaly = 3
    cfg.synth.base_freqs = (400.0, 700.0)
    return cfg


@pytest.fixture(scope="session")
def tiny_checkpoint(tiny_corpus, tiny_run_cfg, tmp_path_factory):
    """A short 3-epoch training run shared by scoring/CLI tests (read-only)."""
    rows, _ = tiny_corpus
    path = tmp_path_factory.mktemp("ckpt") / "tiny.ckpt"
    result = train(rows, tiny_run_cfg, out_checkpoint=path)
    return path, result


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
