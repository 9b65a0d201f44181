import math

import numpy as np
import pytest
import torch

from singstylepy._utils import make_generator
from singstylepy.audio import SAMPLE_RATE
from singstylepy.checkpoint import load_checkpoint
from singstylepy.config import TrainConfig
from singstylepy.corpus import build_corpus, compute_norm_stats, split_corpus
from singstylepy.exceptions import ConfigError, CorpusError, NumericalError, ScoreError
from singstylepy.files import read_json, write_wav
from singstylepy.model import LOSS_NAMES, AcousticModel
from singstylepy.style_encoder import StyleClassifier, pretrain_classifier
from singstylepy.training import (
    ABLATIONS, BatchPrefetcher, Trainer,
    ablation_configs, apply_ablation, compare_to_reference, evaluate, reference_from_wav, synthesize, train
)


@pytest.fixture
def classifier(tiny_config) -> StyleClassifier:
    torch.manual_seed(0)
    return StyleClassifier(tiny_config)


@pytest.fixture
def eval_model(tiny_config, small_samples) -> AcousticModel:
    torch.manual_seed(0)
    return AcousticModel(tiny_config, compute_norm_stats(small_samples)).eval()




## ----------------------- Batches ----------------------- ##
def test_prefetcher_follows_seeded_order(small_samples):
    stats = compute_norm_stats(small_samples)
    prefetcher = BatchPrefetcher(small_samples, 3, stats, seed=5, numBatches=8, queueSize=2)
    try:
        order = list(prefetcher.batch_order())
        batches = list(prefetcher)
    finally:
        prefetcher.close()
    assert len(batches) == 8
    assert [b.sampleIds for b in batches] == [[small_samples[i].sampleId for i in idx] for idx in order]
    assert repr(prefetcher) == 'BatchPrefetcher(numBatches = 8, batchSize = 3)'


def test_prefetcher_order_depends_on_seed_only(small_samples):
    stats = compute_norm_stats(small_samples)
    a = BatchPrefetcher(small_samples, 2, stats, seed=1, numBatches=20, queueSize=1)
    b = BatchPrefetcher(small_samples, 2, stats, seed=1, numBatches=20, queueSize=6)
    try:
        assert list(a.batch_order()) == list(b.batch_order())
    finally:
        a.close()
        b.close()


def test_prefetcher_covers_epochs(small_samples):
    stats = compute_norm_stats(small_samples)
    prefetcher = BatchPrefetcher(small_samples, 4, stats, seed=0, numBatches=len(small_samples) // 4)
    try:
        seen = [i for batch in prefetcher.batch_order() for i in batch]
    finally:
        prefetcher.close()
    assert sorted(seen) == list(range(len(small_samples)))


def test_prefetcher_raises_producer_errors(small_samples):
    prefetcher = BatchPrefetcher([object()], 1, compute_norm_stats(small_samples), seed=0, numBatches=2)
    try:
        with pytest.raises(AttributeError):
            next(prefetcher)
    finally:
        prefetcher.close()
    with pytest.raises(CorpusError):
        BatchPrefetcher([], 1, compute_norm_stats(small_samples), seed=0, numBatches=1)




## ----------------------- Ablations ----------------------- ##
def test_ablation_configs():
    configs = ablation_configs(TrainConfig())
    assert set(configs) == {'w/o UMLN', 'w/o RSA', 'w/o Pitch', 'w/o Decoder'}
    assert not configs['w/o UMLN'].use_umln and configs['w/o UMLN'].use_rsa
    assert not configs['w/o RSA'].use_rsa
    assert configs['w/o Pitch'].pitch_mode == 'simple'
    assert configs['w/o Decoder'].decoder_mode == 'conv'
    assert apply_ablation(TrainConfig(), 'no-rsa') == configs['w/o RSA']
    assert set(ABLATIONS) == {'no-umln', 'no-rsa', 'no-pitch', 'no-decoder'}
    with pytest.raises(ConfigError):
        apply_ablation(TrainConfig(), 'no-everything')




## ----------------------- Training ----------------------- ##
def test_train_writes_checkpoints(tiny_config, small_samples, classifier):
    steps = []
    model, checkpoints = train(
        tiny_config, small_samples, classifier,
        onStep=lambda step, losses: steps.append((step, sorted(losses)))
    )
    assert [s for s, _ in steps] == [1, 2]
    assert steps[0][1] == sorted([*LOSS_NAMES, 'total'])
    assert [p.name for p in checkpoints] == ['step_000001.ssck', 'step_000002.ssck']
    loaded, checkpoint = load_checkpoint(checkpoints[-1])
    assert checkpoint.step == 2
    for name, tensor in model.state_dict().items():
        assert torch.equal(loaded.state_dict()[name], tensor), name


def test_trainer_history_and_signals(tiny_config, small_samples, classifier):
    trainer = Trainer(tiny_config, small_samples, classifier)
    saved = []
    trainer.checkpointSaved.connect(lambda step, path: saved.append(step))
    trainer.run(maxSteps=3)
    assert trainer.step == 3
    assert len(trainer.history) == 3
    assert all(math.isfinite(v) for h in trainer.history for v in h.values())
    assert saved == [1, 2, 3]
    assert repr(trainer) == 'Trainer(step = 3)'


def test_style_encoder_copied_and_unchanged(tiny_config, small_samples, classifier):
    trainer = Trainer(tiny_config, small_samples, classifier)
    trainer.run(maxSteps=2)
    for name, tensor in classifier.encoder.state_dict().items():
        assert torch.equal(trainer.model.styleEncoder.state_dict()[name], tensor), name


def test_training_is_reproducible(tiny_config, small_samples, classifier):
    runs = []
    for _ in range(2):
        trainer = Trainer(tiny_config, small_samples, classifier)
        trainer.run(maxSteps=2)
        runs.append(trainer.history)
    assert runs[0] == runs[1]


def test_nan_loss_dumps_state(tiny_config, small_samples, classifier):
    trainer = Trainer(tiny_config, small_samples, classifier)
    trainer.model.forward_train = lambda batch, generator=None: {name: torch.tensor(float('nan')) for name in LOSS_NAMES}
    prefetcher = BatchPrefetcher(small_samples, 2, trainer.model.stats, seed=0, numBatches=1)
    try:
        batch = next(prefetcher)
    finally:
        prefetcher.close()
    with pytest.raises(NumericalError) as info:
        trainer.train_step(batch)
    assert info.value.step == 1
    dump = read_json(f'{tiny_config.checkpoint_dir}/nan_step_1.json')
    assert dump['sample_ids'] == batch.sampleIds
    assert trainer.step == 0


def test_trainer_config_errors(tiny_config, small_samples):
    with pytest.raises(ConfigError):
        Trainer(tiny_config, small_samples)
    other = StyleClassifier(tiny_config.replace(hidden_size=16, encoder_heads=2, align_heads=2))
    with pytest.raises(ConfigError):
        Trainer(tiny_config, small_samples, other)




## ----------------------- Inference ----------------------- ##
def test_synthesize_modes(eval_model, small_samples):
    reference = small_samples[0]
    parallel = synthesize(eval_model, reference.score, reference, mode='parallel', seed=1)
    assert len(parallel.durations) == len(reference.score.phonemes)
    with pytest.raises(ScoreError):
        synthesize(eval_model, small_samples[1].score, reference, mode='parallel')
    with pytest.raises(ConfigError):
        synthesize(eval_model, reference.score, reference, mode='sideways')
    a = synthesize(eval_model, small_samples[1].score, reference, seed=4)
    b = synthesize(eval_model, small_samples[1].score, reference, seed=4)
    np.testing.assert_array_equal(a.mel, b.mel)


def test_reference_from_wav(tmp_path, eval_model, small_samples):
    t = np.arange(SAMPLE_RATE // 2) / SAMPLE_RATE
    path = tmp_path / 'ref.wav'
    write_wav(path, (0.3 * np.sin(2 * np.pi * 220.0 * t)).astype(np.float32), SAMPLE_RATE)
    reference = reference_from_wav(path)
    assert reference.sampleId == 'ref'
    assert reference.mel.shape == (reference.numFrames, 80)
    assert int(reference.phonemeDurations.sum()) == reference.numFrames
    result = synthesize(eval_model, small_samples[0].score, reference)
    assert result.numFrames > 0


def test_self_comparison(eval_model, small_samples):
    sample = small_samples[0]
    scores = compare_to_reference(eval_model, sample.mel, sample.f0, sample.uv, sample)
    assert scores['cos'] == pytest.approx(1.0, abs=1e-5)
    assert scores['ffe'] == 0.0


def test_evaluate(tmp_path, eval_model, small_samples):
    report = evaluate(
        eval_model, small_samples[:3], outPath=tmp_path / 'report.json',
        figureDir=tmp_path / 'figures', maxFigures=2, metadata={'split': 'test'}
    )
    assert len(report.perSample) == 3
    assert -1.0 <= report.cos <= 1.0 and 0.0 <= report.ffe <= 1.0
    data = read_json(tmp_path / 'report.json')
    assert data['metadata']['split'] == 'test' and data['metadata']['num_samples'] == 3
    assert sorted(p.name for p in (tmp_path / 'figures').iterdir()) == sorted(
        f'{s.sampleId}.png' for s in small_samples[:2]
    )
    with pytest.raises(CorpusError):
        evaluate(eval_model, [])




## ----------------------- Long runs ----------------------- ##
@pytest.mark.slow
def test_long_run_stays_finite(tiny_config, small_samples, classifier):
    config = tiny_config.replace(max_steps=40, checkpoint_interval=20, log_interval=10)
    model, checkpoints = train(config, small_samples, classifier)
    assert len(checkpoints) == 2
    loaded, _ = load_checkpoint(checkpoints[-1])
    sample = small_samples[0]
    a = synthesize(model, small_samples[1].score, sample, seed=0)
    b = synthesize(loaded, small_samples[1].score, sample, seed=0)
    np.testing.assert_array_equal(a.mel, b.mel)




## ----------------------- Desk-scale runs ----------------------- ##
DESK_STEPS = 3000
DESK_SEEDS = (1234, 4321)


def desk_config(root, seed: int = DESK_SEEDS[0]) -> TrainConfig:
    return TrainConfig(seed=seed, max_steps=DESK_STEPS, checkpoint_interval=DESK_STEPS, checkpoint_dir=str(root))


def mean_loss(history: list[dict[str, float]], name: str) -> float:
    return float(np.mean([values[name] for values in history]))


@pytest.fixture(scope='module')
def desk_corpus(tmp_path_factory):
    return build_corpus(tmp_path_factory.mktemp('corpus'), seed=0, samplesPerClass=24)


@pytest.fixture(scope='module')
def desk_classifier(desk_corpus) -> StyleClassifier:
    splits = split_corpus(desk_corpus)
    classifier, _ = pretrain_classifier(splits['classifier_train'], splits['classifier_test'], TrainConfig())
    return classifier


@pytest.fixture(scope='module')
def desk_run(tmp_path_factory, desk_corpus, desk_classifier):
    """ `run(label, seed)`: trainer of the full model (`'full'`) or of an ablation, trained once """
    runs = {}

    def run(label: str = 'full', seed: int = DESK_SEEDS[0]) -> Trainer:
        if (label, seed) not in runs:
            base = desk_config(tmp_path_factory.mktemp('ckpt'), seed)
            config = base if label == 'full' else ablation_configs(base)[label]
            trainer = Trainer(config, desk_corpus, desk_classifier)
            trainer.run()
            runs[label, seed] = trainer
        return runs[label, seed]

    return run


@pytest.mark.slow
def test_default_config_halves_losses(tmp_path, desk_run, desk_corpus, desk_classifier):
    history = desk_run().history
    assert len(history) == DESK_STEPS
    for name in ('total', 'mae'):
        assert mean_loss(history[-100:], name) <= 0.5 * mean_loss(history[:20], name), name

    again = Trainer(desk_config(tmp_path), desk_corpus, desk_classifier)
    again.run()
    assert again.history == history


@pytest.mark.slow
def test_parallel_reconstruction_of_seen_styles(desk_run, desk_corpus):
    report = evaluate(desk_run().model, split_corpus(desk_corpus)['seen'])
    assert report.ffe < 0.30
    assert report.cos > 0.80


@pytest.mark.slow
@pytest.mark.parametrize('seed', DESK_SEEDS)
def test_full_model_beats_ablations_on_held_out_styles(seed, desk_run, desk_corpus):
    ood = split_corpus(desk_corpus)['ood']
    full, noRsa, noPitch = (
        evaluate(desk_run(label, seed).model, ood, seed=seed)
        for label in ('full', 'w/o RSA', 'w/o Pitch')
    )
    assert full.cos > noRsa.cos
    assert full.ffe < noRsa.ffe
    assert full.ffe < noPitch.ffe
