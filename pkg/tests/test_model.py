import math

import numpy as np
import pytest
import torch

from singstylepy._utils import make_generator
from singstylepy.corpus import compute_norm_stats
from singstylepy.decoder import ConvMelDecoder
from singstylepy.exceptions import ShapeError
from singstylepy.model import LOSS_NAMES, AcousticModel, collate
from singstylepy.pitch import SimplePitchPredictor
from singstylepy.training import ablation_configs


def build(config, samples) -> AcousticModel:
    torch.manual_seed(0)
    return AcousticModel(config, compute_norm_stats(samples))




## ----------------------- Batches ----------------------- ##
def test_collate(small_samples):
    stats = compute_norm_stats(small_samples)
    samples = small_samples[:3]
    batch = collate(samples, stats)
    frames = max(s.numFrames for s in samples)
    phonemes = max(len(s.score.phonemes) for s in samples)
    assert batch.size == 3
    assert batch.mel.shape == batch.melNorm.shape == (3, frames, 80)
    assert batch.f0Features.shape == (3, frames, 2)
    assert batch.phonemeIds.shape == batch.durations.shape == (3, phonemes)
    assert batch.frameLengths.tolist() == [s.numFrames for s in samples]
    assert batch.durations.sum(1).tolist() == batch.frameLengths.tolist()
    assert batch.frameMask.sum().item() == sum(s.numFrames for s in samples)
    assert batch.to('cpu').sampleIds == [s.sampleId for s in samples]
    with pytest.raises(ShapeError):
        collate([], stats)




## ----------------------- Training losses ----------------------- ##
def test_forward_train_losses(tiny_config, small_samples):
    model = build(tiny_config, small_samples).train()
    losses = model.forward_train(collate(small_samples[:2], model.stats), make_generator(0))
    assert tuple(losses) == LOSS_NAMES
    for name, value in losses.items():
        assert value.dim() == 0, name
        assert math.isfinite(value.item()), name
        assert value.item() >= -1e-6, name
    total = model.total_loss(losses)
    assert total.item() == pytest.approx(sum(v.item() for v in losses.values()), rel=1e-5)


def test_zero_weights_give_zero_gradients(tiny_config, small_samples):
    config = tiny_config.replace(**{f'lambda_{name}': 0.0 for name in LOSS_NAMES})
    model = build(config, small_samples).train()
    losses = model.forward_train(collate(small_samples[:2], model.stats), make_generator(0))
    model.total_loss(losses).backward()
    for name, p in model.named_parameters():
        assert p.grad is None or torch.all(p.grad == 0), name


def test_style_encoder_is_frozen(tiny_config, small_samples):
    model = build(tiny_config, small_samples).train()
    assert not model.styleEncoder.training
    assert all(not p.requires_grad for p in model.styleEncoder.parameters())
    trainable = {id(p) for p in model.trainable_parameters()}
    assert not any(id(p) in trainable for p in model.styleEncoder.parameters())


def test_forward_train_is_seeded(tiny_config, small_samples):
    values = []
    for _ in range(2):
        model = build(tiny_config, small_samples).train()
        losses = model.forward_train(collate(small_samples[:2], model.stats), make_generator(3))
        values.append([losses[name].item() for name in LOSS_NAMES])
    assert values[0] == values[1]


def test_stochastic_layers_only_fire_in_training(tiny_config, small_samples):
    config = tiny_config.replace(umln_probability=1.0, dropout=0.3)
    model = build(config, small_samples).train()
    model.forward_train(collate(small_samples[:2], model.stats), make_generator(0))
    trained = model.umln.perturbationCount
    assert trained > 0

    model.eval()
    score, reference = small_samples[1].score, small_samples[0]
    a = model.infer(score, reference, make_generator(1))
    b = model.infer(score, reference, make_generator(1))
    assert model.umln.perturbationCount == trained
    np.testing.assert_array_equal(a.mel, b.mel)
    np.testing.assert_array_equal(a.f0, b.f0)


@pytest.mark.parametrize('label', ['w/o UMLN', 'w/o RSA', 'w/o Pitch', 'w/o Decoder'])
def test_ablated_models_train(label, tiny_config, small_samples):
    config = ablation_configs(tiny_config)[label]
    model = build(config, small_samples).train()
    losses = model.forward_train(collate(small_samples[:2], model.stats), make_generator(0))
    assert all(math.isfinite(v.item()) for v in losses.values())
    if label == 'w/o UMLN':
        assert model.umln is None
    if label == 'w/o RSA':
        assert model.quantizer is None
        assert losses['c'].item() == 0.0
    if label == 'w/o Pitch':
        assert isinstance(model.pitchPredictor, SimplePitchPredictor)
    if label == 'w/o Decoder':
        assert isinstance(model.melDecoder, ConvMelDecoder)




## ----------------------- Inference ----------------------- ##
def test_infer(tiny_config, small_samples):
    model = build(tiny_config, small_samples).eval()
    score, reference = small_samples[1].score, small_samples[0]
    result = model.infer(score, reference, make_generator(0))
    assert result.mel.shape == (result.numFrames, 80)
    assert result.f0.shape == result.uv.shape == (result.numFrames,)
    assert len(result.durations) == len(score.phonemes)
    assert int(result.durations.sum()) == result.numFrames
    assert result.durations.min() >= 0
    assert np.all(result.f0[result.uv < 0.5] == 0)
    again = model.infer(score, reference, make_generator(0))
    np.testing.assert_array_equal(result.mel, again.mel)


def test_infer_drops_zero_duration_phonemes(tiny_config, small_samples, monkeypatch):
    model = build(tiny_config, small_samples).eval()
    score, reference = small_samples[1].score, small_samples[0]
    pattern = torch.tensor([0 if i % 2 else 3 for i in range(len(score.phonemes))])
    monkeypatch.setattr(
        model.durationPredictor, 'forward',
        lambda content, style, mask: torch.log(pattern.to(content.dtype) + 1.0)[None]
    )
    result = model.infer(score, reference, make_generator(0))
    assert result.durations.tolist() == pattern.tolist()
    assert result.numFrames == int(pattern.sum())
    assert result.mel.shape == (int(pattern.sum()), 80)


def test_infer_rejects_all_zero_durations(tiny_config, small_samples):
    model = build(tiny_config, small_samples).eval()
    with torch.no_grad():
        model.durationPredictor.output.weight.zero_()
        model.durationPredictor.output.bias.fill_(math.log(1.4))
    with pytest.raises(ShapeError):
        model.infer(small_samples[1].score, small_samples[0], make_generator(0))


def test_infer_with_given_durations(tiny_config, small_samples):
    model = build(tiny_config, small_samples).eval()
    sample = small_samples[2]
    result = model.infer(sample.score, sample, make_generator(0), durations=sample.phonemeDurations)
    assert result.numFrames == sample.numFrames
    np.testing.assert_array_equal(result.durations, sample.phonemeDurations)


def test_infer_needs_stats(tiny_config, small_samples):
    with pytest.raises(ShapeError):
        AcousticModel(tiny_config).eval().infer(small_samples[0].score, small_samples[0])
