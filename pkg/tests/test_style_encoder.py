import math

import numpy as np
import pytest
import torch
import torch.nn.functional as F

from singstylepy.config import TrainConfig
from singstylepy.corpus import build_corpus, split_corpus
from singstylepy.exceptions import AudioError, CorpusError
from singstylepy.style_encoder import AMSoftmaxHead, StyleEncoder, am_softmax_loss, crop_batch, pretrain_classifier


def fixed_head(columns: list[list[float]], margin: float = 0.2, scale: float = 30.0) -> AMSoftmaxHead:
    weight = torch.tensor(columns, dtype=torch.float32).T
    head = AMSoftmaxHead(weight.shape[0], weight.shape[1], margin, scale)
    with torch.no_grad():
        head.weight.copy_(weight)
    return head




## ----------------------- AM-softmax ----------------------- ##
def test_am_softmax_hand_case():
    head = fixed_head([[1.0, 0.0], [0.0, 1.0]], margin=0.2, scale=2.5)
    loss = am_softmax_loss(torch.tensor([[1.0, 0.0]]), torch.tensor([0]), head)
    assert loss.item() == pytest.approx(math.log(1 + math.exp(-2.0)), rel=1e-5)
    assert loss.item() == pytest.approx(0.1269, abs=1e-4)


def test_am_softmax_without_margin_is_cross_entropy():
    head = AMSoftmaxHead(6, 4, margin=0.0, scale=10.0)
    embedding, label = torch.randn(5, 6), torch.tensor([0, 1, 2, 3, 1])
    expected = F.cross_entropy(10.0 * head.cosine(embedding), label)
    torch.testing.assert_close(am_softmax_loss(embedding, label, head), expected)


def test_am_softmax_uniform_cosines():
    head = fixed_head([[1, 0, 0, 0], [0, 1, 0, 0], [0, 0, 1, 0]], margin=0.0, scale=1.0)
    loss = am_softmax_loss(torch.tensor([[0.0, 0.0, 0.0, 3.0]]), torch.tensor([2]), head)
    assert loss.item() == pytest.approx(math.log(3), rel=1e-6)


def test_am_softmax_ignores_embedding_scale():
    head = AMSoftmaxHead(6, 4)
    embedding, label = torch.randn(3, 6), torch.tensor([0, 3, 1])
    torch.testing.assert_close(
        am_softmax_loss(embedding, label, head), am_softmax_loss(7.0 * embedding, label, head)
    )


def test_am_softmax_overrides():
    head = fixed_head([[1.0, 0.0], [0.0, 1.0]])
    loss = am_softmax_loss(torch.tensor([[1.0, 0.0]]), torch.tensor([0]), head, margin=0.2, scale=2.5)
    assert loss.item() == pytest.approx(math.log(1 + math.exp(-2.0)), rel=1e-5)


def test_am_softmax_gradient():
    head = AMSoftmaxHead(5, 3, margin=0.3, scale=4.0).double()
    embedding = torch.randn(4, 5, dtype=torch.float64, requires_grad=True)
    label = torch.tensor([0, 2, 1, 1])
    assert torch.autograd.gradcheck(lambda e: am_softmax_loss(e, label, head), (embedding,), eps=1e-6, atol=1e-6, rtol=1e-4)


def test_am_softmax_head_arguments():
    with pytest.raises(ValueError):
        AMSoftmaxHead(4, 2, margin=-0.1)
    with pytest.raises(ValueError):
        AMSoftmaxHead(4, 2, scale=0.0)
    head = AMSoftmaxHead(4, 3)
    torch.testing.assert_close(head.weight.norm(dim=0), torch.ones(3))




## ----------------------- Encoder ----------------------- ##
def small_encoder() -> StyleEncoder:
    return StyleEncoder(hidden=16, numConvLayers=1, numTransformerLayers=1, dropout=0.0).eval()


def test_embeddings_are_unit_norm():
    timbre, emotion = small_encoder()(torch.randn(3, 20, 80))
    assert timbre.shape == emotion.shape == (3, 16)
    torch.testing.assert_close(timbre.norm(dim=-1), torch.ones(3))
    torch.testing.assert_close(emotion.norm(dim=-1), torch.ones(3))


def test_short_reference_rejected():
    encoder = small_encoder()
    with pytest.raises(AudioError):
        encoder.encode_style(torch.randn(7, 80))
    assert encoder.encode_style(torch.randn(8, 80))[0].shape == (16,)


def test_pooling_ignores_duplicated_frames():
    encoder = small_encoder()
    features = torch.randn(1, 10, 16)
    doubled = torch.cat([features, features], dim=1)
    a = encoder.embed_from_features(features, torch.ones(1, 10, dtype=torch.bool))
    b = encoder.embed_from_features(doubled, torch.ones(1, 20, dtype=torch.bool))
    torch.testing.assert_close(a[0], b[0])
    torch.testing.assert_close(a[1], b[1])


def test_padding_doesnt_change_embedding():
    encoder = small_encoder()
    mel = torch.randn(12, 80)
    padded = torch.zeros(1, 30, 80)
    padded[0, :12] = mel
    mask = torch.zeros(1, 30, dtype=torch.bool)
    mask[0, :12] = True
    torch.testing.assert_close(encoder(padded, mask)[0][0], encoder.encode_style(mel)[0], rtol=0, atol=1e-5)


def test_frozen_encoder_stays_in_eval():
    encoder = StyleEncoder(hidden=16, numConvLayers=1, numTransformerLayers=1).freeze()
    encoder.train()
    assert not encoder.training
    assert not any(p.requires_grad for p in encoder.parameters())




## ----------------------- Pre-training ----------------------- ##
def test_crop_batch(small_samples):
    mel, mask = crop_batch(small_samples[:3], 16, np.random.default_rng(0))
    assert mel.shape == (3, 16, 80)
    assert mask.all()


def test_single_class_rejected(small_samples, tiny_config):
    oneSinger = [s for s in small_samples if s.singerId == small_samples[0].singerId]
    with pytest.raises(CorpusError):
        pretrain_classifier(oneSinger, oneSinger, tiny_config)
    with pytest.raises(CorpusError):
        pretrain_classifier([], small_samples, tiny_config)


def test_pretrain_classifier_runs(small_samples, tiny_config):
    config = tiny_config.replace(classifier_batch_size=4, classifier_crop_frames=32)
    classifier, report = pretrain_classifier(small_samples[::2], small_samples[1::2], config)
    assert math.isfinite(report.first_loss) and math.isfinite(report.final_loss)
    assert 0.0 <= report.timbre_accuracy <= 1.0
    assert 0.0 <= report.emotion_accuracy <= 1.0
    assert set(report.to_dict()) == {'first_loss', 'final_loss', 'timbre_accuracy', 'emotion_accuracy'}
    torch.testing.assert_close(classifier.timbreClassifier.weight.norm(dim=0), torch.ones(classifier.timbreClassifier.numClasses))


def test_pretrain_classifier_is_seeded(small_samples, tiny_config):
    config = tiny_config.replace(classifier_batch_size=4, classifier_crop_frames=32, classifier_steps=3, dropout=0.2)
    (a, reportA), (b, reportB) = (pretrain_classifier(small_samples[::2], small_samples[1::2], config) for _ in range(2))
    assert reportA.to_dict() == reportB.to_dict()
    for (name, p), q in zip(a.named_parameters(), b.parameters()):
        assert torch.equal(p, q), name




## ----------------------- Long runs ----------------------- ##
@pytest.mark.slow
def test_classifier_reaches_held_out_accuracy(tmp_path):
    samples = build_corpus(tmp_path / 'corpus', seed=0, samplesPerClass=24)
    splits = split_corpus(samples)
    _, report = pretrain_classifier(splits['classifier_train'], splits['classifier_test'], TrainConfig())
    assert report.final_loss < report.first_loss
    assert report.timbre_accuracy >= 0.9
    assert report.emotion_accuracy >= 0.9
