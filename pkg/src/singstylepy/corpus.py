"""
This module contains the synthetic singing corpus

- Score types (`Note`, `MusicalScore`) and the phoneme vocabulary
- The singer roster and the style parameters drawn from it
- `generate_sample`: harmonic-stack singing synthesis with an analytic F0 contour
- Corpus building/loading and the train/test/OOD splits
"""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any

import numpy as np
from scipy.special import expit
from tqdm import tqdm

from .audio import HOP_LENGTH, SAMPLE_RATE, extract_mel, num_frames, voiced_log_f0
from .decorator import log_it
from .exceptions import CorpusError, ScoreError, UnknownPhonemeError
from .files import read_array, read_json, write_array, write_json

"""
Items imported inside functions/classes
- from ._utils import _get_basic_logger
"""


SCORE_SCHEMA = 'score_v1'
CORPUS_SCHEMA = 'corpus_v1'
NUM_HARMONICS = 8


## ----------------------- Phonemes ----------------------- ##
PAD = '<pad>'
SILENCE = 'SP'
VOWELS = ('a', 'e', 'i', 'o', 'u', 'ai', 'ao', 'ou', 'an', 'en')
VOICED_CONSONANTS = ('m', 'n', 'l', 'r', 'j', 'w')
UNVOICED_CONSONANTS = ('s', 'sh', 'h', 'f', 'k', 't', 'p')
PHONEMES = (PAD, SILENCE, *VOWELS, *VOICED_CONSONANTS, *UNVOICED_CONSONANTS)
PHONEME_TO_ID = {p: i for i, p in enumerate(PHONEMES)}


def phoneme_ids(phonemes: list[str] | tuple[str, ...]) -> list[int]:
    """ Vocabulary ids of `phonemes` (`UnknownPhonemeError` names the first unknown symbol) """
    ids = []
    for p in phonemes:
        if p not in PHONEME_TO_ID or p == PAD:
            raise UnknownPhonemeError(p)
        ids.append(PHONEME_TO_ID[p])
    return ids




## ----------------------- Score ----------------------- ##
class NoteType(str, Enum):
    NORMAL = 'normal'
    REST = 'rest'
    SLUR = 'slur'
    GRACE = 'grace'

    @property
    def index(self) -> int:
        return list(NoteType).index(self)


@dataclass(frozen=True)
class Note:
    pitch: int
    noteType: NoteType
    duration: float


@dataclass(frozen=True)
class MusicalScore:
    """
    Notes with their lyrics
    - `phonemeToNote[i]`: index of the note phoneme `i` is sung on (non-decreasing,
      every note carries at least one phoneme)
    - Rest notes carry exactly the silence phoneme `SP`, which appears nowhere else
    """

    notes: tuple[Note, ...]
    phonemes: tuple[str, ...]
    phonemeToNote: tuple[int, ...]

    def __post_init__(self):
        self.validate()

    def validate(self):
        if not self.notes or not self.phonemes:
            raise ScoreError('Score has no notes or no phonemes')
        if len(self.phonemes) != len(self.phonemeToNote):
            raise ScoreError(
                f'{len(self.phonemes)} phonemes but {len(self.phonemeToNote)} alignment indices'
            )
        phoneme_ids(self.phonemes)
        for i, note in enumerate(self.notes):
            if not np.isfinite(note.duration) or note.duration <= 0:
                raise ScoreError(f'Note {i} has a non-positive duration: {note.duration}')
            if not 0 <= note.pitch <= 127:
                raise ScoreError(f'Note {i} has a MIDI pitch outside [0, 127]: {note.pitch}')
        if any(not 0 <= k < len(self.notes) for k in self.phonemeToNote):
            raise ScoreError('Alignment index out of range')
        if any(b < a for a, b in zip(self.phonemeToNote, self.phonemeToNote[1:])):
            raise ScoreError('Alignment indices must be non-decreasing')
        if set(self.phonemeToNote) != set(range(len(self.notes))):
            raise ScoreError('Every note must carry at least one phoneme')
        for p, k in zip(self.phonemes, self.phonemeToNote):
            isRest = self.notes[k].noteType == NoteType.REST
            if isRest != (p == SILENCE):
                raise ScoreError(f'Phoneme "{p}" on a {self.notes[k].noteType.value} note (rests carry only "{SILENCE}")')

    @property
    def totalDuration(self) -> float:
        return float(sum(n.duration for n in self.notes))

    def note_phonemes(self, noteIndex: int) -> list[int]:
        """ Indices of the phonemes sung on note `noteIndex` """
        return [i for i, k in enumerate(self.phonemeToNote) if k == noteIndex]

    def to_dict(self) -> dict[str, Any]:
        return {
            'schema': SCORE_SCHEMA,
            'notes': [
                {'pitch': n.pitch, 'note_type': n.noteType.value, 'duration': n.duration}
                for n in self.notes
            ],
            'phonemes': list(self.phonemes),
            'phoneme_to_note': list(self.phonemeToNote),
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> 'MusicalScore':
        """ Builds a score from a `score_v1` document (`ScoreError` on schema/field problems) """
        if not isinstance(data, dict) or data.get('schema') != SCORE_SCHEMA:
            raise ScoreError(f'Not a "{SCORE_SCHEMA}" score document')
        try:
            notes = tuple(
                Note(int(n['pitch']), NoteType(n['note_type']), float(n['duration']))
                for n in data['notes']
            )
            return cls(notes, tuple(data['phonemes']), tuple(int(i) for i in data['phoneme_to_note']))
        except (KeyError, TypeError, ValueError) as e:
            if isinstance(e, ScoreError):
                raise
            raise ScoreError(f'Malformed score document: {e}') from None


def read_score(filePath: str | Path) -> MusicalScore:
    data = read_json(filePath)
    if isinstance(data, dict) and 'score' in data and 'schema' not in data:
        data = data['score']
    return MusicalScore.from_dict(data)


def write_score(filePath: str | Path, score: MusicalScore):
    write_json(filePath, score.to_dict())




## ----------------------- Styles ----------------------- ##
class VocalRange(str, Enum):
    TENOR = 'tenor'
    SOPRANO = 'soprano'
    BASS = 'bass'
    ALTO = 'alto'


class Emotion(str, Enum):
    HAPPY = 'happy'
    SAD = 'sad'


@dataclass(frozen=True)
class StyleClassLabel:
    vocalRange: VocalRange
    emotion: Emotion

    @property
    def name(self) -> str:
        return f'{self.vocalRange.value}-{self.emotion.value}'

    @property
    def index(self) -> int:
        """ Position in `STYLE_CLASSES` """
        return list(VocalRange).index(self.vocalRange) * len(Emotion) + list(Emotion).index(self.emotion)

    @property
    def emotionIndex(self) -> int:
        return list(Emotion).index(self.emotion)

    @classmethod
    def from_name(cls, name: str) -> 'StyleClassLabel':
        try:
            vocalRange, emotion = name.split('-')
            return cls(VocalRange(vocalRange), Emotion(emotion))
        except ValueError:
            raise CorpusError(f'Unknown style class: "{name}"') from None


STYLE_CLASSES = tuple(StyleClassLabel(r, e) for r in VocalRange for e in Emotion)


@dataclass(frozen=True)
class SingerFilter:
    """ Spectral tilt (harmonic `h` scaled by `h^-tilt`) and one Gaussian formant peak """

    tilt: float
    formantFreq: float
    formantBandwidth: float
    formantGain: float

    def harmonic_gains(self, frequencies: np.ndarray, harmonic: int) -> np.ndarray:
        peak = np.exp(-0.5 * ((frequencies - self.formantFreq) / self.formantBandwidth) ** 2)
        return harmonic ** (-self.tilt) * (1.0 + self.formantGain * peak)


@dataclass(frozen=True)
class SynthStyleParams:
    vibratoRate: float
    vibratoDepth: float
    transitionTime: float
    singerFilter: SingerFilter
    baseRange: float = 0.0

    def __post_init__(self):
        if not 0.0 <= self.vibratoRate <= 10.0:
            raise CorpusError(f'vibratoRate must be in [0, 10] Hz, got {self.vibratoRate}')
        if not 0.0 <= self.vibratoDepth <= 200.0:
            raise CorpusError(f'vibratoDepth must be in [0, 200] cents, got {self.vibratoDepth}')
        if not 0.0 <= self.transitionTime <= 300.0:
            raise CorpusError(f'transitionTime must be in [0, 300] ms, got {self.transitionTime}')

    def to_dict(self) -> dict[str, Any]:
        return {
            'vibrato_rate': self.vibratoRate,
            'vibrato_depth': self.vibratoDepth,
            'transition_time': self.transitionTime,
            'base_range': self.baseRange,
            'singer_filter': {
                'tilt': self.singerFilter.tilt,
                'formant_freq': self.singerFilter.formantFreq,
                'formant_bandwidth': self.singerFilter.formantBandwidth,
                'formant_gain': self.singerFilter.formantGain,
            },
        }

    @classmethod
    def from_dict(cls, data: dict[str, Any]) -> 'SynthStyleParams':
        sf = data['singer_filter']
        return cls(
            data['vibrato_rate'], data['vibrato_depth'], data['transition_time'],
            SingerFilter(sf['tilt'], sf['formant_freq'], sf['formant_bandwidth'], sf['formant_gain']),
            data['base_range']
        )


@dataclass(frozen=True)
class Singer:
    singerId: int
    vocalRange: VocalRange
    baseRange: float
    singerFilter: SingerFilter


SINGERS = (
    Singer(0, VocalRange.TENOR, 0.0, SingerFilter(1.2, 900.0, 250.0, 2.0)),
    Singer(1, VocalRange.TENOR, 2.0, SingerFilter(1.6, 1300.0, 300.0, 3.0)),
    Singer(2, VocalRange.SOPRANO, 12.0, SingerFilter(1.0, 2800.0, 400.0, 2.5)),
    Singer(3, VocalRange.SOPRANO, 10.0, SingerFilter(1.4, 2200.0, 350.0, 1.5)),
    Singer(4, VocalRange.BASS, -7.0, SingerFilter(1.8, 600.0, 200.0, 2.5)),
    Singer(5, VocalRange.BASS, -9.0, SingerFilter(1.3, 800.0, 250.0, 1.5)),
    Singer(6, VocalRange.ALTO, 5.0, SingerFilter(1.5, 1600.0, 300.0, 2.0)),
    Singer(7, VocalRange.ALTO, 3.0, SingerFilter(1.1, 1100.0, 300.0, 3.0)),
)

# (low, high) draws per emotion; tiltShift brightens (<0) or darkens (>0) the singer
EMOTION_RANGES = {
    Emotion.HAPPY: {'vibratoRate': (5.5, 7.0), 'vibratoDepth': (40.0, 80.0), 'transitionTime': (30.0, 80.0), 'tiltShift': -0.3},
    Emotion.SAD: {'vibratoRate': (3.5, 5.0), 'vibratoDepth': (80.0, 140.0), 'transitionTime': (120.0, 250.0), 'tiltShift': 0.3},
}

OOD_CLASSES = frozenset({'tenor-happy', 'alto-sad'})
OOD_SINGERS = frozenset({1, 6})


def singers_for(vocalRange: VocalRange) -> list[Singer]:
    return [s for s in SINGERS if s.vocalRange == vocalRange]


def style_params(singer: Singer, emotion: Emotion, rng: np.random.Generator) -> SynthStyleParams:
    """ Draws the style parameters of `singer` singing with `emotion` """
    ranges = EMOTION_RANGES[emotion]
    base = singer.singerFilter
    return SynthStyleParams(
        vibratoRate=float(rng.uniform(*ranges['vibratoRate'])),
        vibratoDepth=float(rng.uniform(*ranges['vibratoDepth'])),
        transitionTime=float(rng.uniform(*ranges['transitionTime'])),
        singerFilter=SingerFilter(
            max(0.2, base.tilt + ranges['tiltShift']), base.formantFreq, base.formantBandwidth, base.formantGain
        ),
        baseRange=singer.baseRange
    )


def random_score(
    rng: np.random.Generator,
    minNotes: int = 4,
    maxNotes: int = 8,
    pitchRange: tuple[int, int] = (57, 69)
) -> MusicalScore:
    """
    Draws a valid score: normal, slur, grace and rest notes over the phoneme vocabulary
    - Never starts/ends with a rest, never two rests in a row
    """
    numNotes = int(rng.integers(minNotes, maxNotes + 1))
    notes: list[Note] = []
    phonemes: list[str] = []
    alignment: list[int] = []
    pitch = int(rng.integers(pitchRange[0], pitchRange[1] + 1))
    lastVowel = str(rng.choice(VOWELS))

    for k in range(numNotes):
        prev = notes[-1].noteType if notes else None
        draw = rng.random()
        if 0 < k < numNotes - 1 and prev != NoteType.REST and draw < 0.12:
            noteType = NoteType.REST
        elif prev not in (None, NoteType.REST) and draw < 0.24:
            noteType = NoteType.SLUR
        elif draw < 0.32:
            noteType = NoteType.GRACE
        else:
            noteType = NoteType.NORMAL

        if noteType == NoteType.REST:
            notes.append(Note(0, noteType, float(rng.uniform(0.15, 0.35))))
            phonemes.append(SILENCE)
            alignment.append(k)
            continue

        pitch = int(np.clip(pitch + rng.integers(-4, 5), *pitchRange))
        if noteType == NoteType.SLUR:
            duration = rng.uniform(0.2, 0.4)
            syllable = [lastVowel]
        else:
            duration = rng.uniform(0.06, 0.1) if noteType == NoteType.GRACE else rng.uniform(0.25, 0.6)
            lastVowel = str(rng.choice(VOWELS))
            syllable = [lastVowel]
            if rng.random() < 0.7:
                consonants = VOICED_CONSONANTS + UNVOICED_CONSONANTS
                syllable.insert(0, str(consonants[rng.integers(len(consonants))]))
        notes.append(Note(pitch, noteType, float(round(duration, 4))))
        phonemes.extend(syllable)
        alignment.extend([k] * len(syllable))

    return MusicalScore(tuple(notes), tuple(phonemes), tuple(alignment))




## ----------------------- Samples ----------------------- ##
@dataclass
class SingingSample:
    """
    One sung score with its acoustic targets
    - `mel`: `[T, 80]`, `f0`/`uv`: `[T]`, `phonemeDurations`: frames per phoneme (sums to `T`)
    - `waveform` is kept after synthesis only, corpora on disk don't store it
    """

    sampleId: str
    score: MusicalScore
    mel: np.ndarray
    f0: np.ndarray
    uv: np.ndarray
    phonemeDurations: np.ndarray
    singerId: int
    style: StyleClassLabel | None
    params: SynthStyleParams | None = None
    waveform: np.ndarray | None = field(default=None, repr=False)

    def __post_init__(self):
        self.check()

    @property
    def numFrames(self) -> int:
        return int(self.mel.shape[0])

    def check(self):
        """ Raises `CorpusError` if the frame-level invariants don't hold """
        frames = self.mel.shape[0]
        if self.mel.ndim != 2 or self.mel.shape[1] != 80:
            raise CorpusError(f'{self.sampleId}: mel must be [frames, 80], got {self.mel.shape}')
        if self.f0.shape != (frames,) or self.uv.shape != (frames,):
            raise CorpusError(f'{self.sampleId}: f0/uv frame counts differ from the mel')
        if int(np.sum(self.phonemeDurations)) != frames or len(self.phonemeDurations) != len(self.score.phonemes):
            raise CorpusError(f'{self.sampleId}: phoneme durations don\'t cover the {frames} frames')
        if np.any(self.f0[self.uv < 0.5] != 0):
            raise CorpusError(f'{self.sampleId}: unvoiced frames must store f0 = 0')
        if not np.isfinite(self.mel).all():
            raise CorpusError(f'{self.sampleId}: mel holds non-finite values')


def _frame_alignment(score: MusicalScore, times: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """
    Returns `(noteOfFrame, phonemeOfFrame, phonemeDurations)`
    - A frame belongs to the note its centre time falls in
    - In a note of `n` frames every phoneme but the last gets `max(1, min(8, n // 4))` frames
    """
    ends = np.cumsum([n.duration for n in score.notes])
    noteOfFrame = np.minimum(np.searchsorted(ends, times, side='right'), len(score.notes) - 1)
    phonemeOfFrame = np.zeros(times.size, dtype=np.int64)
    durations = np.zeros(len(score.phonemes), dtype=np.int64)
    for k in range(len(score.notes)):
        frames = np.flatnonzero(noteOfFrame == k)
        members = score.note_phonemes(k)
        remaining = frames.size
        cursor = 0
        for i in members[:-1]:
            take = min(max(1, min(8, frames.size // 4)), remaining)
            durations[i] = take
            phonemeOfFrame[frames[cursor:cursor + take]] = i
            cursor += take
            remaining -= take
        durations[members[-1]] = remaining
        phonemeOfFrame[frames[cursor:]] = members[-1]
    return noteOfFrame, phonemeOfFrame, durations


def pitch_cents(score: MusicalScore, params: SynthStyleParams, times: np.ndarray) -> np.ndarray:
    """
    Analytic pitch contour in cents (MIDI * 100) at `times` seconds

    - Note pitch shifted by `baseRange` semitones
    - Sigmoid glide of 10-90% width `transitionTime` centred on each boundary
      between adjacent sung notes, a step across rests
    - Vibrato `depth * sin(2 pi rate (t - start))`, `start` being the onset of the run
      of adjacent sung notes
    """
    notes = score.notes
    ends = np.cumsum([n.duration for n in notes])
    starts = ends - np.array([n.duration for n in notes])
    noteIdx = np.minimum(np.searchsorted(ends, times, side='right'), len(notes) - 1)
    sung = np.array([n.noteType != NoteType.REST for n in notes])
    base = 100.0 * (np.array([n.pitch for n in notes], dtype=np.float64) + params.baseRange)
    sungNotes = np.flatnonzero(sung)
    if sungNotes.size == 0:
        return np.zeros(times.shape)

    cents = np.full(times.shape, base[sungNotes[0]])
    width = params.transitionTime / 1000.0 / (2.0 * np.log(9.0))
    for prev, cur in zip(sungNotes, sungNotes[1:]):
        jump = base[cur] - base[prev]
        if cur == prev + 1 and width > 0:
            cents += jump * expit((times - starts[cur]) / width)
        else:
            cents += jump * (times >= starts[cur])

    runStart = starts.copy()
    for k in range(1, len(notes)):
        if sung[k] and sung[k - 1]:
            runStart[k] = runStart[k - 1]
    vibrato = params.vibratoDepth * np.sin(2.0 * np.pi * params.vibratoRate * (times - runStart[noteIdx]))
    return cents + np.where(sung[noteIdx], vibrato, 0.0)


def cents_to_hz(cents: np.ndarray) -> np.ndarray:
    return 440.0 * np.power(2.0, (cents - 6900.0) / 1200.0)


def _smooth(mask: np.ndarray, width: int) -> np.ndarray:
    window = np.hanning(width)
    return np.convolve(mask, window / window.sum(), mode='same')


def generate_sample(
    score: MusicalScore,
    params: SynthStyleParams,
    seed: int,
    *,
    singerId: int,
    style: StyleClassLabel,
    sampleId: str = 'sample'
) -> SingingSample:
    """
    Sings `score` with `params`, deterministic for fixed `(score, params, seed)`

    - `singerId` must be one of the singers of `style.vocalRange` (`CorpusError` otherwise)
    - F0 follows `pitch_cents`, rests and unvoiced consonants are unvoiced (`f0 = 0`)
    - Voiced audio is an 8-harmonic stack shaped by `params.singerFilter`,
      unvoiced consonants are white noise, plus a faint noise floor
    """
    if singerId not in {s.singerId for s in singers_for(style.vocalRange)}:
        raise CorpusError(f'Singer {singerId} doesn\'t sing the "{style.vocalRange.value}" range')
    if not score.notes:
        raise ScoreError('Empty score')
    rng = np.random.default_rng(seed)
    numSamples = int(round(score.totalDuration * SAMPLE_RATE))
    if numSamples < HOP_LENGTH:
        raise ScoreError(f'Score too short: {score.totalDuration:.4f} seconds')
    frames = num_frames(numSamples)

    # Frame-level targets
    frameTimes = np.arange(frames) * HOP_LENGTH / SAMPLE_RATE
    noteOfFrame, phonemeOfFrame, durations = _frame_alignment(score, frameTimes)
    isVoicedPhoneme = np.array([
        p in VOWELS or p in VOICED_CONSONANTS for p in score.phonemes
    ])
    isNoisePhoneme = np.array([p in UNVOICED_CONSONANTS for p in score.phonemes])
    uv = isVoicedPhoneme[phonemeOfFrame].astype(np.float32)
    f0 = np.where(uv > 0, cents_to_hz(pitch_cents(score, params, frameTimes)), 0.0).astype(np.float32)

    # Waveform
    sampleTimes = np.arange(numSamples) / SAMPLE_RATE
    sampleFrame = np.minimum(np.rint(np.arange(numSamples) / HOP_LENGTH).astype(np.int64), frames - 1)
    voicedEnv = _smooth(uv[sampleFrame].astype(np.float64), 481)
    noiseEnv = _smooth(isNoisePhoneme[phonemeOfFrame][sampleFrame].astype(np.float64), 481)
    hz = cents_to_hz(pitch_cents(score, params, sampleTimes))
    phase = 2.0 * np.pi * np.cumsum(hz) / SAMPLE_RATE
    harmonics = np.zeros(numSamples)
    gains = np.zeros(numSamples)
    for h in range(1, NUM_HARMONICS + 1):
        gain = params.singerFilter.harmonic_gains(h * hz, h) * (h * hz < SAMPLE_RATE / 2)
        harmonics += gain * np.sin(h * phase)
        gains += gain
    waveform = 0.3 * voicedEnv * harmonics / np.maximum(gains, 1e-8)
    waveform += 0.05 * noiseEnv * rng.standard_normal(numSamples)
    waveform += 1e-4 * rng.standard_normal(numSamples)
    waveform = waveform.astype(np.float32)

    return SingingSample(
        sampleId=sampleId,
        score=score,
        mel=extract_mel(waveform),
        f0=f0,
        uv=uv,
        phonemeDurations=durations,
        singerId=singerId,
        style=style,
        params=params,
        waveform=waveform
    )




## ----------------------- Corpus ----------------------- ##
def _sample_paths(root: Path, singerId: int, sampleId: str) -> tuple[Path, Path, Path]:
    folder = root / str(singerId)
    return folder / f'{sampleId}.json', folder / f'{sampleId}.mel.bin', folder / f'{sampleId}.f0.bin'


def write_sample(root: str | Path, sample: SingingSample) -> Path:
    """ Writes `<root>/<singer>/<id>.json` plus its `.mel.bin`/`.f0.bin` arrays """
    jsonPath, melPath, f0Path = _sample_paths(Path(root), sample.singerId, sample.sampleId)
    write_json(jsonPath, {
        'sample_id': sample.sampleId,
        'singer_id': sample.singerId,
        'vocal_range': sample.style.vocalRange.value,
        'emotion': sample.style.emotion.value,
        'phoneme_durations': [int(d) for d in sample.phonemeDurations],
        'params': sample.params.to_dict() if sample.params else None,
        'score': sample.score.to_dict(),
    })
    write_array(melPath, sample.mel)
    write_array(f0Path, np.stack([sample.f0, sample.uv], axis=1))
    return jsonPath


def read_sample(jsonPath: str | Path) -> SingingSample:
    """ Reads a sample written by `write_sample` (`CorpusError` for missing/corrupt files) """
    jsonPath = Path(jsonPath)
    meta = read_json(jsonPath)
    stem = jsonPath.name[:-len('.json')]
    mel = read_array(jsonPath.with_name(f'{stem}.mel.bin'))
    pitch = read_array(jsonPath.with_name(f'{stem}.f0.bin'))
    if pitch.ndim != 2 or pitch.shape[1] != 2:
        raise CorpusError(f'{jsonPath}: f0 array must be [frames, 2]')
    try:
        return SingingSample(
            sampleId=meta['sample_id'],
            score=MusicalScore.from_dict(meta['score']),
            mel=mel,
            f0=pitch[:, 0].copy(),
            uv=pitch[:, 1].copy(),
            phonemeDurations=np.asarray(meta['phoneme_durations'], dtype=np.int64),
            singerId=int(meta['singer_id']),
            style=StyleClassLabel(VocalRange(meta['vocal_range']), Emotion(meta['emotion'])),
            params=SynthStyleParams.from_dict(meta['params']) if meta.get('params') else None
        )
    except (KeyError, TypeError) as e:
        raise CorpusError(f'{jsonPath}: missing field {e}') from None


def _corpus_job(seed: int, classIndex: int, k: int) -> SingingSample:
    label = STYLE_CLASSES[classIndex]
    singer = singers_for(label.vocalRange)[k % 2]
    rng = np.random.default_rng(np.random.SeedSequence([seed, classIndex, k]))
    score = random_score(rng)
    params = style_params(singer, label.emotion, rng)
    return generate_sample(
        score, params,
        seed=int(rng.integers(2 ** 31)),
        singerId=singer.singerId,
        style=label,
        sampleId=f'{label.name}_{k:04d}'
    )


@log_it()
def build_corpus(
    outDir: str | Path,
    seed: int = 0,
    samplesPerClass: int = 200,
    maxWorkers: int | None = None,
    progress: bool = False,
    logger: logging.Logger | None = None
) -> list[SingingSample]:
    """
    Generates `samplesPerClass` samples for each of the 8 style classes and writes them
    under `outDir` (with a `manifest.json` listing them in generation order)

    - Singers of a class alternate between the two singers of its vocal range
    - Samples are generated concurrently, each from its own seed, so the corpus doesn't
      depend on `maxWorkers`
    """
    from ._utils import _get_basic_logger
    logger = logger or _get_basic_logger()
    if samplesPerClass < 1:
        raise CorpusError(f'samplesPerClass must be >= 1, got {samplesPerClass}')

    root = Path(outDir)
    jobs = [(seed, c, k) for c in range(len(STYLE_CLASSES)) for k in range(samplesPerClass)]
    with ThreadPoolExecutor(max_workers=maxWorkers) as pool:
        results = pool.map(lambda job: _corpus_job(*job), jobs)
        samples = list(tqdm(results, total=len(jobs), desc='gen-corpus', disable=not progress))

    entries = []
    for sample in samples:
        path = write_sample(root, sample)
        entries.append({'sample_id': sample.sampleId, 'singer_id': sample.singerId, 'path': path.relative_to(root).as_posix()})
    write_json(root / 'manifest.json', {
        'schema': CORPUS_SCHEMA,
        'seed': seed,
        'samples_per_class': samplesPerClass,
        'samples': entries,
    })
    logger.info(f'Corpus of {len(samples)} samples written to: {root}')
    return samples


def load_corpus(corpusDir: str | Path) -> list[SingingSample]:
    """ Reads every sample listed in `<corpusDir>/manifest.json`, in manifest order """
    root = Path(corpusDir)
    manifest = read_json(root / 'manifest.json')
    if manifest.get('schema') != CORPUS_SCHEMA:
        raise CorpusError(f'{root}: not a "{CORPUS_SCHEMA}" corpus')
    samples = [read_sample(root / entry['path']) for entry in manifest['samples']]
    if not samples:
        raise CorpusError(f'{root}: corpus is empty')
    return samples


def is_ood(sample: SingingSample) -> bool:
    return sample.style.name in OOD_CLASSES or sample.singerId in OOD_SINGERS


def split_corpus(
    samples: list[SingingSample],
    seenEvery: int = 10,
    classifierTestEvery: int = 7
) -> dict[str, list[SingingSample]]:
    """
    Deterministic splits (by position)

    - `ood`: held-out style classes or singers
    - `seen`: every `seenEvery`-th in-domain sample, `train`: the other in-domain samples
    - `classifier_test`: every `classifierTestEvery`-th sample, `classifier_train`: the rest
    """
    inDomain = [s for s in samples if not is_ood(s)]
    return {
        'train': [s for i, s in enumerate(inDomain) if i % seenEvery != seenEvery - 1],
        'seen': [s for i, s in enumerate(inDomain) if i % seenEvery == seenEvery - 1],
        'ood': [s for s in samples if is_ood(s)],
        'classifier_train': [s for i, s in enumerate(samples) if i % classifierTestEvery != classifierTestEvery - 1],
        'classifier_test': [s for i, s in enumerate(samples) if i % classifierTestEvery == classifierTestEvery - 1],
    }


def get_split(samples: list[SingingSample], name: str) -> list[SingingSample]:
    """ One split of `split_corpus` (`CorpusError` for unknown or empty splits) """
    splits = split_corpus(samples)
    if name not in splits:
        raise CorpusError(f'Unknown split "{name}", expected one of: {", ".join(splits)}')
    if not splits[name]:
        raise CorpusError(f'Split "{name}" is empty')
    return splits[name]




## ----------------------- Normalisation ----------------------- ##
@dataclass(frozen=True)
class NormStats:
    """
    Corpus statistics used to normalise the model targets
    - `f0Mean`/`f0Std`: of the voiced-interpolated log2 F0 over all frames
    - `melMin`/`melMax`: global log-mel range, mapped to `[0, 1]`

    Methods work on numpy arrays and torch tensors alike
    """

    f0Mean: float
    f0Std: float
    melMin: float
    melMax: float

    def __post_init__(self):
        if not self.f0Std > 0 or not self.melMax > self.melMin:
            raise CorpusError(f'Degenerate normalisation statistics: {self}')

    def normalize_f0(self, logF0):
        return (logF0 - self.f0Mean) / self.f0Std

    def denormalize_f0(self, f0Norm):
        return f0Norm * self.f0Std + self.f0Mean

    def normalize_mel(self, mel):
        return (mel - self.melMin) / (self.melMax - self.melMin)

    def denormalize_mel(self, melNorm):
        return melNorm * (self.melMax - self.melMin) + self.melMin

    def to_dict(self) -> dict[str, float]:
        return {'f0_mean': self.f0Mean, 'f0_std': self.f0Std, 'mel_min': self.melMin, 'mel_max': self.melMax}

    @classmethod
    def from_dict(cls, data: dict[str, float]) -> 'NormStats':
        try:
            return cls(float(data['f0_mean']), float(data['f0_std']), float(data['mel_min']), float(data['mel_max']))
        except KeyError as e:
            raise CorpusError(f'Normalisation statistics miss {e}') from None


def compute_norm_stats(samples: list[SingingSample]) -> NormStats:
    """ `NormStats` of `samples` (the training split) """
    if not samples:
        raise CorpusError('Normalisation statistics need at least one sample')
    logF0 = np.concatenate([voiced_log_f0(s.f0, s.uv) for s in samples])
    mels = np.concatenate([s.mel.reshape(-1) for s in samples])
    return NormStats(
        f0Mean=float(logF0.mean()),
        f0Std=float(max(logF0.std(), 1e-3)),
        melMin=float(mels.min()),
        melMax=float(max(mels.max(), mels.min() + 1e-3)),
    )
