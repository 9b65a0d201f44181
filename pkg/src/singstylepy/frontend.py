"""
This module contains the score front end: lyrics and note encoders,
the duration predictor and the length regulator
"""
import math

import torch
from torch import nn
import torch.nn.functional as F

from .corpus import PHONEMES, MusicalScore, NoteType, phoneme_ids
from .exceptions import ScoreError, ShapeError
from .layers import FFTBlock, sinusoidal_encoding




class PhonemeEncoder(nn.Module):
    """
    Lyrics encoder: phoneme embedding + sinusoidal positions through `numLayers` FFT blocks
    - Output of a sequence doesn't depend on how far its batch is padded
    """

    def __init__(
        self,
        hidden: int = 256,
        numLayers: int = 4,
        heads: int = 2,
        filterSize: int = 1024,
        kernelSize: int = 9,
        dropout: float = 0.1
    ):
        super().__init__()
        self.hidden = hidden
        self.embedding = nn.Embedding(len(PHONEMES), hidden, padding_idx=0)
        self.blocks = nn.ModuleList([
            FFTBlock(hidden, heads, filterSize, kernelSize, dropout) for _ in range(numLayers)
        ])

    def forward(self, phonemeIds: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """ `phonemeIds`, `mask`: `[B, N]` -> `[B, N, hidden]` """
        x = self.embedding(phonemeIds)
        x = x + sinusoidal_encoding(x.shape[1], self.hidden, x.device, x.dtype)[None]
        x = x * mask[..., None].to(x.dtype)
        for block in self.blocks:
            x = block(x, mask)
        return x

    def encode_phonemes(self, phonemes: list[str] | tuple[str, ...]) -> torch.Tensor:
        """ `[N, hidden]` features of one phoneme sequence (`UnknownPhonemeError` for unknown symbols) """
        if not phonemes:
            raise ScoreError('Empty phoneme sequence')
        device = self.embedding.weight.device
        ids = torch.tensor([phoneme_ids(phonemes)], device=device)
        return self(ids, torch.ones_like(ids, dtype=torch.bool))[0]




class NoteEncoder(nn.Module):
    """ Note features: pitch embedding + type embedding + linear projection of the duration """

    def __init__(self, hidden: int = 256):
        super().__init__()
        self.pitchEmbedding = nn.Embedding(128, hidden)
        self.typeEmbedding = nn.Embedding(len(NoteType), hidden)
        self.durationProjection = nn.Linear(1, hidden)

    def forward(self, pitch: torch.Tensor, noteType: torch.Tensor, duration: torch.Tensor) -> torch.Tensor:
        """ Phoneme-aligned `[B, N]` note fields -> `[B, N, hidden]` """
        if (pitch < 0).any() or (pitch > 127).any():
            raise ScoreError(f'MIDI pitch outside [0, 127]: {pitch[(pitch < 0) | (pitch > 127)].tolist()}')
        dtype = self.durationProjection.weight.dtype
        return (
            self.pitchEmbedding(pitch)
            + self.typeEmbedding(noteType)
            + self.durationProjection(duration.to(dtype)[..., None])
        )

    def encode_notes(self, score: MusicalScore) -> torch.Tensor:
        """ `[N_phonemes, hidden]`: the features of each phoneme's note """
        device = self.pitchEmbedding.weight.device
        pitch, noteType, duration = score_note_fields(score, device)
        return self(pitch[None], noteType[None], duration[None])[0]


def score_note_fields(score: MusicalScore, device: torch.device | str = 'cpu') -> tuple[torch.Tensor, ...]:
    """ `(pitch, type, duration)` of the note under each phoneme, `[N_phonemes]` each """
    notes = [score.notes[k] for k in score.phonemeToNote]
    return (
        torch.tensor([n.pitch for n in notes], device=device, dtype=torch.long),
        torch.tensor([n.noteType.index for n in notes], device=device, dtype=torch.long),
        torch.tensor([n.duration for n in notes], device=device, dtype=torch.float32),
    )


def compose_content(phonemeFeatures: torch.Tensor, noteFeatures: torch.Tensor) -> torch.Tensor:
    """ Content representation: element-wise sum of phoneme and note features """
    if phonemeFeatures.shape != noteFeatures.shape:
        raise ShapeError(
            f'Phoneme features {tuple(phonemeFeatures.shape)} and note features {tuple(noteFeatures.shape)} differ'
        )
    return phonemeFeatures + noteFeatures




class DurationPredictor(nn.Module):
    """
    Phoneme durations in the `log(frames + 1)` domain
    - Input: content + style vector (added as a bias on every phoneme)
    - Two `Conv1d -> ReLU -> LayerNorm -> Dropout` layers, then a linear output
    - The output bias starts at `log(initialFrames + 1)`
    """

    def __init__(
        self,
        hidden: int = 256,
        filterSize: int = 256,
        kernelSize: int = 3,
        dropout: float = 0.1,
        initialFrames: float = 8.0
    ):
        super().__init__()
        self.convs = nn.ModuleList([
            nn.Conv1d(hidden if i == 0 else filterSize, filterSize, kernelSize, padding=kernelSize // 2)
            for i in range(2)
        ])
        self.norms = nn.ModuleList([nn.LayerNorm(filterSize) for _ in range(2)])
        self.dropout = nn.Dropout(dropout)
        self.output = nn.Linear(filterSize, 1)
        nn.init.constant_(self.output.bias, math.log(initialFrames + 1.0))

    def forward(self, content: torch.Tensor, style: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """ `content`: `[B, N, C]`, `style`: `[B, C]`, `mask`: `[B, N]` -> `[B, N]` (0 on padding) """
        keep = mask[..., None].to(content.dtype)
        x = (content + style[:, None, :]) * keep
        for conv, norm in zip(self.convs, self.norms):
            x = F.relu(conv(x.transpose(1, 2))).transpose(1, 2)
            x = self.dropout(norm(x)) * keep
        return self.output(x).squeeze(-1) * mask.to(content.dtype)

    def predict_duration(self, content: torch.Tensor, style: torch.Tensor) -> torch.Tensor:
        """ `[N]` log-domain durations of one phoneme sequence `content [N, C]`, `style [C]` """
        mask = torch.ones(1, content.shape[0], dtype=torch.bool, device=content.device)
        return self(content[None], style[None], mask)[0]


def duration_loss(logPred: torch.Tensor, frames: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """ Mean squared error between `logPred` and `log(frames + 1)` over valid phonemes """
    target = torch.log(frames.to(logPred.dtype) + 1.0)
    squared = (logPred - target) ** 2
    if mask is None:
        return squared.mean()
    mask = mask.to(squared.dtype)
    return (squared * mask).sum() / mask.sum().clamp_min(1.0)


def durations_from_log(logPred: torch.Tensor) -> torch.Tensor:
    """ Integer frame counts `round(exp(logPred) - 1)`, clamped at 0 """
    return torch.clamp(torch.round(torch.exp(logPred) - 1.0), min=0).long()




def length_regulate(content: torch.Tensor, durations: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
    """
    Repeats row `i` of `content` `durations[i]` times (zero-duration rows are dropped)

    - `content`: `[N, C]` or `[B, N, C]`, `durations`: `[N]` or `[B, N]` non-negative integers
    - Returns `(frames, frameLengths)`; batches are zero-padded to the longest sequence
    - Raises `ShapeError` if a sequence would have no frame at all
    """
    single = content.dim() == 2
    if single:
        content, durations = content[None], durations[None]
    if durations.shape != content.shape[:2]:
        raise ShapeError(f'Durations {tuple(durations.shape)} don\'t match content {tuple(content.shape[:2])}')
    durations = durations.long()
    if (durations < 0).any():
        raise ShapeError('Durations must be non-negative')
    frameLengths = durations.sum(dim=1)
    if (frameLengths == 0).any():
        raise ShapeError('All durations are zero, nothing to expand')

    out = content.new_zeros(content.shape[0], int(frameLengths.max()), content.shape[2])
    for i in range(content.shape[0]):
        repeated = torch.repeat_interleave(content[i], durations[i], dim=0)
        out[i, :repeated.shape[0]] = repeated
    return (out[0], frameLengths) if single else (out, frameLengths)
