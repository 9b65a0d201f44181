"""
This module contains the style encoder (timbre and emotion embeddings from a mel)
and its pre-training as an AM-softmax classifier
"""
import logging
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn
import torch.nn.functional as F

from .config import TrainConfig
from .corpus import SingingSample, SINGERS, Emotion
from .decorator import log_it
from .exceptions import AudioError, CorpusError
from .layers import lengths_to_mask

"""
Items imported inside functions/classes
- from ._utils import _get_basic_logger
- from .custom_logging import format_metrics
"""


MIN_FRAMES = 8




class StyleEncoder(nn.Module):
    """
    Mel -> (timbre `E_t`, emotion `E_e`), both unit-norm

    `conv features -> transformer -> masked mean pooling -> two linear heads -> L2 normalisation`
    """

    def __init__(
        self,
        hidden: int = 256,
        numConvLayers: int = 3,
        numTransformerLayers: int = 2,
        heads: int = 2,
        dropout: float = 0.1,
        melBins: int = 80
    ):
        super().__init__()
        self.hidden = hidden
        self.convs = nn.ModuleList([
            nn.Conv1d(melBins if i == 0 else hidden, hidden, 5, padding=2) for i in range(numConvLayers)
        ])
        self.convNorms = nn.ModuleList([nn.LayerNorm(hidden) for _ in range(numConvLayers)])
        layer = nn.TransformerEncoderLayer(
            hidden, heads,
            dim_feedforward=hidden * 2,
            dropout=dropout,
            batch_first=True
        )
        self.transformer = nn.TransformerEncoder(layer, numTransformerLayers, enable_nested_tensor=False)
        self.timbreHead = nn.Linear(hidden, hidden)
        self.emotionHead = nn.Linear(hidden, hidden)

    def features(self, mel: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """ Frame features `[B, T, hidden]` before pooling """
        keep = mask[..., None].to(mel.dtype)
        x = mel * keep
        for conv, norm in zip(self.convs, self.convNorms):
            x = norm(F.gelu(conv(x.transpose(1, 2)).transpose(1, 2))) * keep
        return self.transformer(x, src_key_padding_mask=~mask) * keep

    def embed_from_features(self, features: torch.Tensor, mask: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """ Masked mean pooling over time, then the two normalised heads """
        weights = mask[..., None].to(features.dtype)
        pooled = (features * weights).sum(1) / weights.sum(1).clamp_min(1.0)
        return (
            F.normalize(self.timbreHead(pooled), dim=-1),
            F.normalize(self.emotionHead(pooled), dim=-1),
        )

    def forward(self, mel: torch.Tensor, mask: torch.Tensor | None = None) -> tuple[torch.Tensor, torch.Tensor]:
        """ `mel`: `[B, T, 80]`, `mask`: `[B, T]` -> `(E_t [B, hidden], E_e [B, hidden])` """
        if mask is None:
            mask = torch.ones(mel.shape[:2], dtype=torch.bool, device=mel.device)
        if int(mask.sum(1).min()) < MIN_FRAMES:
            raise AudioError(f'Style encoder needs at least {MIN_FRAMES} frames')
        return self.embed_from_features(self.features(mel, mask), mask)

    def encode_style(self, mel: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """ `(E_t, E_e)` of one `[T, 80]` mel """
        timbre, emotion = self(mel[None])
        return timbre[0], emotion[0]

    def freeze(self) -> 'StyleEncoder':
        """ Eval mode, no gradients """
        self.eval()
        for p in self.parameters():
            p.requires_grad_(False)
        return self

    def train(self, mode: bool = True):
        # A frozen encoder stays in eval mode
        if mode and not any(p.requires_grad for p in self.parameters()):
            return super().train(False)
        return super().train(mode)




class AMSoftmaxHead(nn.Module):
    """
    Additive-margin softmax classifier
    - `weight`: `[embedDim, numClasses]`, unit-norm columns (`renormalize()` after updates)
    - `margin >= 0`, `scale > 0`
    """

    def __init__(self, embedDim: int, numClasses: int, margin: float = 0.2, scale: float = 30.0):
        super().__init__()
        if margin < 0 or scale <= 0:
            raise ValueError(f'AM-softmax needs margin >= 0 and scale > 0, got {margin}, {scale}')
        self.margin = margin
        self.scale = scale
        self.weight = nn.Parameter(torch.empty(embedDim, numClasses))
        nn.init.xavier_normal_(self.weight, gain=1)
        self.renormalize()

    @property
    def numClasses(self) -> int:
        return self.weight.shape[1]

    @torch.no_grad()
    def renormalize(self):
        self.weight.copy_(F.normalize(self.weight, dim=0))

    def cosine(self, embedding: torch.Tensor) -> torch.Tensor:
        """ `[B, numClasses]` cosines between `embedding` and the class columns """
        return F.normalize(embedding, dim=-1) @ F.normalize(self.weight, dim=0)

    def predict(self, embedding: torch.Tensor) -> torch.Tensor:
        return self.cosine(embedding).argmax(-1)


def am_softmax_loss(
    embedding: torch.Tensor,
    label: torch.Tensor,
    head: AMSoftmaxHead,
    margin: float | None = None,
    scale: float | None = None
) -> torch.Tensor:
    """
    `-log(e^{s(cos_y - m)} / (e^{s(cos_y - m)} + sum_{j != y} e^{s cos_j}))`, mean over the batch
    - `embedding` is L2-normalised first, so its scale doesn't matter
    - `margin`/`scale` override the head's values
    """
    margin = head.margin if margin is None else margin
    scale = head.scale if scale is None else scale
    cosine = head.cosine(embedding)
    oneHot = F.one_hot(label, head.numClasses).to(cosine.dtype)
    return F.cross_entropy(scale * (cosine - margin * oneHot), label)




class StyleClassifier(nn.Module):
    """ Style encoder with its two pre-training heads (singer identity, emotion) """

    def __init__(self, config: TrainConfig, numSingers: int = len(SINGERS), numEmotions: int = len(Emotion)):
        super().__init__()
        self.encoder = StyleEncoder(
            hidden=config.hidden_size,
            numConvLayers=config.style_conv_layers,
            numTransformerLayers=config.style_transformer_layers,
            heads=config.encoder_heads,
            dropout=config.dropout
        )
        self.timbreClassifier = AMSoftmaxHead(config.hidden_size, numSingers, config.am_margin, config.am_scale)
        self.emotionClassifier = AMSoftmaxHead(config.hidden_size, numEmotions, config.am_margin, config.am_scale)

    def loss(
        self,
        mel: torch.Tensor,
        mask: torch.Tensor,
        singer: torch.Tensor,
        emotion: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        timbre, emotionEmb = self.encoder(mel, mask)
        return (
            am_softmax_loss(timbre, singer, self.timbreClassifier),
            am_softmax_loss(emotionEmb, emotion, self.emotionClassifier),
        )

    @torch.no_grad()
    def accuracy(self, samples: list[SingingSample]) -> dict[str, float]:
        """ Per-head accuracy on whole-sample embeddings """
        self.eval()
        device = self.timbreClassifier.weight.device
        timbreHits = emotionHits = 0
        for sample in samples:
            mel = torch.as_tensor(sample.mel, device=device)
            timbre, emotion = self.encoder.encode_style(mel)
            timbreHits += int(self.timbreClassifier.predict(timbre[None])[0]) == sample.singerId
            emotionHits += int(self.emotionClassifier.predict(emotion[None])[0]) == sample.style.emotionIndex
        return {
            'timbre_accuracy': timbreHits / len(samples),
            'emotion_accuracy': emotionHits / len(samples),
        }


def crop_batch(
    samples: list[SingingSample],
    cropFrames: int,
    rng: np.random.Generator
) -> tuple[torch.Tensor, torch.Tensor]:
    """ Random `cropFrames` windows of each sample's mel, zero-padded, with their mask """
    crops = []
    for sample in samples:
        start = int(rng.integers(0, max(1, sample.numFrames - cropFrames + 1)))
        crops.append(torch.as_tensor(sample.mel[start:start + cropFrames]))
    lengths = torch.tensor([c.shape[0] for c in crops])
    mel = nn.utils.rnn.pad_sequence(crops, batch_first=True)
    return mel, lengths_to_mask(lengths, mel.shape[1])


@dataclass
class ClassifierReport:
    first_loss: float
    final_loss: float
    timbre_accuracy: float
    emotion_accuracy: float

    def to_dict(self) -> dict[str, float]:
        return dict(self.__dict__)


@log_it()
def pretrain_classifier(
    trainSamples: list[SingingSample],
    testSamples: list[SingingSample],
    config: TrainConfig,
    device: str | torch.device = 'cpu',
    logger: logging.Logger | None = None
) -> tuple[StyleClassifier, ClassifierReport]:
    """
    Trains the style encoder to classify singers and emotions with AM-softmax losses

    - Seeded by `config.seed` (initialisation, dropout, batch draws and crops)
    - Raises `CorpusError` if the labels hold a single singer or a single emotion
    - Returns the classifier (encoder left trainable) and held-out accuracies per head
    """
    from ._utils import _get_basic_logger
    from .custom_logging import format_metrics
    logger = logger or _get_basic_logger()

    if not trainSamples or not testSamples:
        raise CorpusError('Classifier pre-training needs non-empty train and test samples')
    if len({s.singerId for s in trainSamples}) < 2 or len({s.style.emotion for s in trainSamples}) < 2:
        raise CorpusError('Classifier pre-training needs at least two singers and two emotions')

    torch.manual_seed(config.seed)
    rng = np.random.default_rng(config.seed)
    model = StyleClassifier(config).to(device)
    optimizer = torch.optim.Adam(model.parameters(), lr=config.classifier_learning_rate)

    firstLoss = finalLoss = float('nan')
    for step in range(1, config.classifier_steps + 1):
        model.train()
        batch = [trainSamples[i] for i in rng.integers(0, len(trainSamples), config.classifier_batch_size)]
        mel, mask = crop_batch(batch, config.classifier_crop_frames, rng)
        singer = torch.tensor([s.singerId for s in batch], device=device)
        emotion = torch.tensor([s.style.emotionIndex for s in batch], device=device)

        timbreLoss, emotionLoss = model.loss(mel.to(device), mask.to(device), singer, emotion)
        loss = timbreLoss + emotionLoss
        optimizer.zero_grad()
        loss.backward()
        optimizer.step()
        model.timbreClassifier.renormalize()
        model.emotionClassifier.renormalize()

        finalLoss = float(loss)
        if step == 1:
            firstLoss = finalLoss
        if step % config.log_interval == 0 or step == config.classifier_steps:
            logger.info(f'[classifier {step:>6}] {format_metrics({"timbre": float(timbreLoss), "emotion": float(emotionLoss)})}')

    accuracy = model.accuracy(testSamples)
    report = ClassifierReport(firstLoss, finalLoss, accuracy['timbre_accuracy'], accuracy['emotion_accuracy'])
    logger.info(f'Classifier held-out accuracy: {format_metrics(accuracy, precision=3)}')
    return model, report
