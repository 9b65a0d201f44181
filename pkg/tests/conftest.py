import os

import numpy as np
import pytest
import torch
from hypothesis import HealthCheck, settings

from singstylepy.config import TrainConfig
from singstylepy.corpus import STYLE_CLASSES, SingingSample, generate_sample, random_score, singers_for, style_params


settings.register_profile('default', max_examples=50, deadline=None)
settings.register_profile('fast', max_examples=10, deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile(os.environ.get('HYPOTHESIS_PROFILE', 'default'))




def pytest_addoption(parser):
    parser.addoption('--runslow', action='store_true', default=False, help='run slow training tests')


def pytest_configure(config):
    config.addinivalue_line('markers', 'slow: long training runs, need --runslow')


def pytest_collection_modifyitems(config, items):
    if config.getoption('--runslow'):
        return
    skipSlow = pytest.mark.skip(reason='needs --runslow')
    for item in items:
        if 'slow' in item.keywords:
            item.add_marker(skipSlow)




@pytest.fixture(autouse=True)
def _seed():
    torch.manual_seed(0)
    np.random.seed(0)


@pytest.fixture
def tiny_config(tmp_path) -> TrainConfig:
    """ Small architecture which trains a few steps in seconds on a CPU """
    return TrainConfig(
        hidden_size=32,
        encoder_layers=1,
        encoder_kernel=3,
        encoder_filter=64,
        encoder_heads=2,
        align_heads=2,
        dropout=0.0,
        conv_encoder_layers=5,
        rq_codebook_size=8,
        rq_depth=2,
        align_layers=1,
        pitch_layers=2,
        pitch_residual_channels=16,
        pitch_steps=10,
        decoder_layers=2,
        decoder_hidden=16,
        style_conv_layers=1,
        style_transformer_layers=1,
        batch_size=2,
        max_steps=2,
        warmup_steps=1,
        checkpoint_interval=1,
        log_interval=1,
        prefetch_batches=2,
        classifier_steps=2,
        corpus_dir=str(tmp_path / 'corpus'),
        checkpoint_dir=str(tmp_path / 'ckpt'),
        classifier_checkpoint=str(tmp_path / 'classifier.ssck'),
    )


def make_samples(perClass: int = 2, seed: int = 0, maxNotes: int = 4) -> list[SingingSample]:
    """ A few short samples of every style class, singers alternating within a vocal range """
    rng = np.random.default_rng(seed)
    samples = []
    for label in STYLE_CLASSES:
        for k in range(perClass):
            singer = singers_for(label.vocalRange)[k % 2]
            samples.append(generate_sample(
                random_score(rng, 2, maxNotes), style_params(singer, label.emotion, rng),
                seed=int(rng.integers(2 ** 31)),
                singerId=singer.singerId,
                style=label,
                sampleId=f'{label.name}_{k:04d}'
            ))
    return samples


@pytest.fixture(scope='session')
def small_samples() -> list[SingingSample]:
    return make_samples()
