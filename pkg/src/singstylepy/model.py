"""
This module contains the acoustic model and its batches

- `Batch`/`collate`: padded tensors of a list of samples
- `AcousticModel`: score + reference -> (mel, F0, UV), trained with reference = target
"""
from dataclasses import dataclass, fields

import numpy as np
import torch
from torch import nn

from .audio import voiced_log_f0
from .config import TrainConfig
from .corpus import MusicalScore, NormStats, SingingSample, phoneme_ids
from .decoder import ConvMelDecoder, MelDecoder
from .exceptions import ShapeError
from .frontend import (
    DurationPredictor, NoteEncoder, PhonemeEncoder,
    compose_content, duration_loss, durations_from_log, length_regulate, score_note_fields
)
from .layers import lengths_to_mask
from .pitch import PitchContour, PitchPredictor, SimplePitchPredictor
from .rsa import AlignAttention, ConvEncoder, ResidualQuantizer, style_specific_rep
from .style_encoder import StyleEncoder
from .umln import UMLN


LOSS_NAMES = ('dur', 'gdiff', 'mdiff', 'c', 'mae', 'ssim')




## ----------------------- Batches ----------------------- ##
@dataclass
class Batch:
    """
    Padded tensors of `B` samples (`N` phonemes, `T` frames at most)
    - Phoneme level: `phonemeIds`, `phonemeMask`, `notePitch`, `noteType`, `noteDuration`, `durations`
    - Frame level: `mel` (log-mel), `melNorm` (`[0, 1]`), `f0Norm`, `uv`, `f0Features`, `frameMask`
    """

    sampleIds: list[str]
    phonemeIds: torch.Tensor
    phonemeMask: torch.Tensor
    notePitch: torch.Tensor
    noteType: torch.Tensor
    noteDuration: torch.Tensor
    durations: torch.Tensor
    mel: torch.Tensor
    melNorm: torch.Tensor
    f0Norm: torch.Tensor
    uv: torch.Tensor
    f0Features: torch.Tensor
    frameLengths: torch.Tensor
    frameMask: torch.Tensor

    def to(self, device: str | torch.device) -> 'Batch':
        values = {
            f.name: getattr(self, f.name).to(device) if isinstance(getattr(self, f.name), torch.Tensor) else getattr(self, f.name)
            for f in fields(self)
        }
        return Batch(**values)

    @property
    def size(self) -> int:
        return len(self.sampleIds)


def _pad(rows: list[np.ndarray | torch.Tensor], dtype: torch.dtype) -> torch.Tensor:
    return nn.utils.rnn.pad_sequence([torch.as_tensor(np.asarray(r)).to(dtype) for r in rows], batch_first=True)


def f0_features(f0: np.ndarray, uv: np.ndarray, stats: NormStats) -> np.ndarray:
    """ `[T, 2]`: standardised voiced-interpolated log2 F0 and the voiced flag """
    return np.stack([stats.normalize_f0(voiced_log_f0(f0, uv)), uv], axis=1).astype(np.float32)


def collate(samples: list[SingingSample], stats: NormStats) -> Batch:
    """ Pads `samples` into one `Batch` (targets normalised with `stats`) """
    if not samples:
        raise ShapeError('Cannot collate an empty batch')
    notes = [score_note_fields(s.score) for s in samples]
    frameLengths = torch.tensor([s.numFrames for s in samples])
    phonemeLengths = torch.tensor([len(s.score.phonemes) for s in samples])
    mel = _pad([s.mel for s in samples], torch.float32)
    return Batch(
        sampleIds=[s.sampleId for s in samples],
        phonemeIds=_pad([phoneme_ids(s.score.phonemes) for s in samples], torch.long),
        phonemeMask=lengths_to_mask(phonemeLengths),
        notePitch=_pad([n[0] for n in notes], torch.long),
        noteType=_pad([n[1] for n in notes], torch.long),
        noteDuration=_pad([n[2] for n in notes], torch.float32),
        durations=_pad([s.phonemeDurations for s in samples], torch.long),
        mel=mel,
        melNorm=_pad([stats.normalize_mel(s.mel) for s in samples], torch.float32),
        f0Norm=_pad([stats.normalize_f0(voiced_log_f0(s.f0, s.uv)) for s in samples], torch.float32),
        uv=_pad([s.uv for s in samples], torch.float32),
        f0Features=_pad([f0_features(s.f0, s.uv, stats) for s in samples], torch.float32),
        frameLengths=frameLengths,
        frameMask=lengths_to_mask(frameLengths),
    )




## ----------------------- Model ----------------------- ##
@dataclass
class SynthesisResult:
    """ `mel`: `[T, 80]` log-mel, `f0`: `[T]` Hz (0 where unvoiced), `uv`: `[T]`, `durations`: frames per phoneme """

    mel: np.ndarray
    f0: np.ndarray
    uv: np.ndarray
    durations: np.ndarray

    @property
    def numFrames(self) -> int:
        return int(self.mel.shape[0])


class AcousticModel(nn.Module):
    """
    Zero-shot style transfer acoustic model

    Args:
        - `config`: architecture sizes, ablation flags and loss settings
        - `stats`: target normalisation (set later with `set_stats` if not known yet)

    The style encoder is loaded from the pre-trained classifier and stays frozen.
    """

    def __init__(self, config: TrainConfig, stats: NormStats | None = None):
        super().__init__()
        self.config = config
        self.stats = stats
        hidden = config.hidden_size

        self.phonemeEncoder = PhonemeEncoder(
            hidden, config.encoder_layers, config.encoder_heads,
            config.encoder_filter, config.encoder_kernel, config.dropout
        )
        self.noteEncoder = NoteEncoder(hidden)
        self.durationPredictor = DurationPredictor(hidden, dropout=config.dropout)
        self.styleEncoder = StyleEncoder(
            hidden, config.style_conv_layers, config.style_transformer_layers,
            config.encoder_heads, config.dropout
        ).freeze()
        self.umln = UMLN(hidden, hidden, config.umln_probability, config.umln_eps) if config.use_umln else None
        if config.use_rsa:
            self.convEncoder = ConvEncoder(hidden, config.conv_encoder_layers)
            self.quantizer = ResidualQuantizer(
                hidden, config.rq_codebook_size, config.rq_depth, config.rq_decay, config.rq_stale_steps
            )
            self.alignAttention = AlignAttention(hidden, config.align_layers, config.align_heads)
        else:
            self.convEncoder = self.quantizer = self.alignAttention = None
        self.pitchPredictor = PitchPredictor(config) if config.pitch_mode == 'diffusion' else SimplePitchPredictor(config)
        self.melDecoder = MelDecoder(config) if config.decoder_mode == 'diffusion' else ConvMelDecoder(config)

    def set_stats(self, stats: NormStats):
        self.stats = stats

    def load_style_encoder(self, encoder: StyleEncoder):
        """ Copies pre-trained weights into the (frozen) style encoder """
        self.styleEncoder.load_state_dict(encoder.state_dict())
        self.styleEncoder.freeze()

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def _device(self) -> torch.device:
        return self.noteEncoder.pitchEmbedding.weight.device

    # Shared stages
    def content(self, phonemeIds, phonemeMask, notePitch, noteType, noteDuration) -> torch.Tensor:
        phonemes = self.phonemeEncoder(phonemeIds, phonemeMask)
        notes = self.noteEncoder(notePitch, noteType, noteDuration) * phonemeMask[..., None].to(phonemes.dtype)
        return compose_content(phonemes, notes)

    def agnostic(
        self,
        frames: torch.Tensor,
        style: torch.Tensor,
        generator: torch.Generator | None = None
    ) -> torch.Tensor:
        """ Style-agnostic `E_c` (UMLN perturbs in training mode only) """
        return frames if self.umln is None else self.umln(frames, style, generator)

    def style_specific(
        self,
        agnostic: torch.Tensor,
        frameMask: torch.Tensor,
        timbre: torch.Tensor,
        emotion: torch.Tensor,
        refMelNorm: torch.Tensor,
        refF0Features: torch.Tensor,
        refLengths: torch.Tensor,
        generator: torch.Generator | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """ `(E_s, commitment loss)` """
        if self.convEncoder is None:
            aligned = torch.zeros_like(agnostic)
            commitment = agnostic.new_zeros(())
        else:
            encoded, encodedLengths = self.convEncoder(refMelNorm, refF0Features, refLengths)
            encodedMask = lengths_to_mask(encodedLengths, encoded.shape[1])
            detail, _, commitment = self.quantizer(encoded, encodedMask, generator)
            aligned = self.alignAttention(agnostic, detail, encodedMask)
        styleRep = style_specific_rep(agnostic, aligned, timbre, emotion)
        return styleRep * frameMask[..., None].to(styleRep.dtype), commitment

    # Training
    def forward_train(self, batch: Batch, generator: torch.Generator | None = None) -> dict[str, torch.Tensor]:
        """
        The six losses of one teacher-forced batch (keys of `LOSS_NAMES`)
        - Reference = target, ground-truth durations and pitch feed the later stages
        """
        with torch.no_grad():
            timbre, emotion = self.styleEncoder(batch.mel, batch.frameMask)
        style = timbre + emotion

        content = self.content(batch.phonemeIds, batch.phonemeMask, batch.notePitch, batch.noteType, batch.noteDuration)
        logDurations = self.durationPredictor(content, style, batch.phonemeMask)
        durationLoss = duration_loss(logDurations, batch.durations, batch.phonemeMask)

        frames, frameLengths = length_regulate(content, batch.durations)
        if not torch.equal(frameLengths.cpu(), batch.frameLengths.cpu()):
            raise ShapeError('Phoneme durations don\'t cover the target frames')
        agnostic = self.agnostic(frames, style, generator)
        styleRep, commitment = self.style_specific(
            agnostic, batch.frameMask, timbre, emotion,
            batch.melNorm, batch.f0Features, batch.frameLengths, generator
        )

        gdiff, mdiff = self.pitchPredictor.loss(
            batch.f0Norm, batch.uv, styleRep, agnostic, batch.frameMask, generator
        )
        condition = self.melDecoder.condition(styleRep, batch.f0Norm, batch.uv)
        mae, ssimLoss = self.melDecoder.loss(batch.melNorm, condition, batch.frameMask, batch.frameLengths, generator)
        return {'dur': durationLoss, 'gdiff': gdiff, 'mdiff': mdiff, 'c': commitment, 'mae': mae, 'ssim': ssimLoss}

    def total_loss(self, losses: dict[str, torch.Tensor]) -> torch.Tensor:
        """ `sum(lambda_i * L_i)` """
        return sum(getattr(self.config, f'lambda_{name}') * losses[name] for name in LOSS_NAMES)

    # Inference
    @torch.no_grad()
    def infer(
        self,
        score: MusicalScore,
        reference: SingingSample,
        generator: torch.Generator | None = None,
        durations: np.ndarray | None = None
    ) -> SynthesisResult:
        """
        Synthesises `score` in the style of `reference`

        - Predicted durations are rounded, phonemes rounded to 0 frames are dropped
          (`ShapeError` if no frame is left)
        - `durations` overrides the prediction (frames per phoneme)
        - Call in eval mode, UMLN is then the identity
        """
        if self.stats is None:
            raise ShapeError('Normalisation statistics are not set')
        stats = self.stats
        device = self._device()

        ids = torch.tensor([phoneme_ids(score.phonemes)], device=device)
        phonemeMask = torch.ones_like(ids, dtype=torch.bool)
        pitch, noteType, noteDuration = (f[None] for f in score_note_fields(score, device))

        refMel = torch.as_tensor(reference.mel, device=device)[None]
        timbre, emotion = self.styleEncoder(refMel)
        style = timbre + emotion
        content = self.content(ids, phonemeMask, pitch, noteType, noteDuration)
        if durations is None:
            frameDurations = durations_from_log(self.durationPredictor(content, style, phonemeMask))
        else:
            frameDurations = torch.as_tensor(np.asarray(durations), device=device, dtype=torch.long)[None]

        frames, frameLengths = length_regulate(content, frameDurations)
        frameMask = lengths_to_mask(frameLengths, frames.shape[1])
        agnostic = self.agnostic(frames, style, generator)
        refMelNorm = torch.as_tensor(stats.normalize_mel(reference.mel), device=device, dtype=torch.float32)[None]
        refF0 = torch.as_tensor(f0_features(reference.f0, reference.uv, stats), device=device)[None]
        refLengths = torch.tensor([reference.numFrames], device=device)
        styleRep, _ = self.style_specific(agnostic, frameMask, timbre, emotion, refMelNorm, refF0, refLengths, generator)

        contour: PitchContour = self.pitchPredictor.infer(styleRep, agnostic, frameMask, generator, stats)
        condition = self.melDecoder.condition(styleRep, contour.f0Norm, contour.uv)
        melNorm = self.melDecoder.infer(condition, frameMask, generator)
        return SynthesisResult(
            mel=stats.denormalize_mel(melNorm[0]).cpu().numpy().astype(np.float32),
            f0=contour.f0[0].cpu().numpy().astype(np.float32),
            uv=contour.uv[0].cpu().numpy().astype(np.float32),
            durations=frameDurations[0].cpu().numpy(),
        )
