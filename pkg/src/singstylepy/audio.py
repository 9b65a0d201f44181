"""
This module contains signal processing: log-mel spectrograms, F0 extraction and mel inversion

All features share one frame grid: frame `i` is centred on sample `i * HOP_LENGTH`,
and a waveform of `n` samples has `n // HOP_LENGTH + 1` frames.
"""
from pathlib import Path

import librosa
import numpy as np

from .exceptions import AudioError

"""
Items imported inside functions/classes
- from .files import read_wav
"""

SAMPLE_RATE = 48000
N_FFT = 1024
WIN_LENGTH = 1024
HOP_LENGTH = 256
N_MELS = 80
FMIN = 0.0
FMAX = 24000.0
MEL_CLAMP = 1e-5
LOG_MEL_FLOOR = float(np.log10(MEL_CLAMP))

F0_MIN = 50.0
F0_MAX = 1100.0
YIN_WINDOW = 1088
YIN_THRESHOLD = 0.1
VOICING_THRESHOLD = 0.45
SILENCE_RMS = 1e-3




def num_frames(numSamples: int) -> int:
    """ Frames of a waveform with `numSamples` samples """
    return numSamples // HOP_LENGTH + 1


def _check_waveform(waveform: np.ndarray, sampleRate: int) -> np.ndarray:
    if sampleRate != SAMPLE_RATE:
        raise AudioError(f'Expected audio sampled at {SAMPLE_RATE} Hz, got {sampleRate} Hz')
    waveform = np.asarray(waveform, dtype=np.float64)
    if waveform.ndim != 1:
        raise AudioError(f'Expected a mono waveform, got shape {waveform.shape}')
    if waveform.size == 0:
        raise AudioError('Empty waveform')
    return waveform


def mel_basis() -> np.ndarray:
    """ `[N_MELS, N_FFT // 2 + 1]` Slaney mel filterbank """
    return librosa.filters.mel(
        sr=SAMPLE_RATE,
        n_fft=N_FFT,
        n_mels=N_MELS,
        fmin=FMIN,
        fmax=FMAX
    )


def mel_center_frequencies() -> np.ndarray:
    """ Centre frequency (Hz) of every mel bin """
    return librosa.mel_frequencies(N_MELS + 2, fmin=FMIN, fmax=FMAX)[1:-1]


def extract_mel(waveform: np.ndarray, sampleRate: int = SAMPLE_RATE) -> np.ndarray:
    """
    Log10 mel spectrogram `[frames, N_MELS]` (float32)
    - Magnitude STFT (Hann window, centre padded) through the mel filterbank
    - Clamped at `MEL_CLAMP` before the log, so silence sits at `LOG_MEL_FLOOR`
    """
    waveform = _check_waveform(waveform, sampleRate)
    spectrum = np.abs(librosa.stft(
        waveform,
        n_fft=N_FFT,
        hop_length=HOP_LENGTH,
        win_length=WIN_LENGTH,
        window='hann',
        center=True,
        pad_mode='constant'
    ))
    mel = mel_basis() @ spectrum
    return np.log10(np.maximum(mel, MEL_CLAMP)).T.astype(np.float32)


def _yin_frames(padded: np.ndarray, starts: np.ndarray, length: int) -> np.ndarray:
    return padded[starts[:, None] + np.arange(length)[None, :]]


def _difference_function(frames: np.ndarray, window: int, maxLag: int) -> np.ndarray:
    """ `d(tau) = sum_{j < window} (x_j - x_{j+tau})^2` for `tau = 0..maxLag`, per frame """
    size = 1 << int(np.ceil(np.log2(frames.shape[1] + window)))
    head = np.fft.rfft(frames[:, :window], size)
    full = np.fft.rfft(frames, size)
    corr = np.fft.irfft(np.conj(head) * full, size)[:, :maxLag + 1]
    energy = np.concatenate(
        [np.zeros((frames.shape[0], 1)), np.cumsum(frames ** 2, axis=1)], axis=1
    )
    lags = np.arange(maxLag + 1)
    shifted = energy[:, lags + window] - energy[:, lags]
    diff = energy[:, window:window + 1] + shifted - 2.0 * corr
    return np.maximum(diff, 0.0)


def _cumulative_mean_normalized(diff: np.ndarray) -> np.ndarray:
    cumulative = np.cumsum(diff[:, 1:], axis=1)
    lags = np.arange(1, diff.shape[1])
    cmnd = np.ones_like(diff)
    safe = cumulative > 1e-12
    cmnd[:, 1:] = np.where(safe, diff[:, 1:] * lags / np.where(safe, cumulative, 1.0), 1.0)
    return cmnd


def _pick_lags(cmnd: np.ndarray, minLag: int, maxLag: int) -> np.ndarray:
    """ First dip below `YIN_THRESHOLD` followed to its local minimum, else the global minimum """
    band = cmnd[:, minLag:maxLag + 1]
    below = band < YIN_THRESHOLD
    hasDip = below.any(axis=1)
    idx = np.where(hasDip, below.argmax(axis=1), band.argmin(axis=1))
    rows = np.arange(band.shape[0])
    last = band.shape[1] - 1
    for _ in range(band.shape[1]):
        nxt = np.minimum(idx + 1, last)
        improve = hasDip & (band[rows, nxt] < band[rows, idx])
        if not improve.any():
            break
        idx = np.where(improve, nxt, idx)
    return idx + minLag


def _yin_pass(
    padded: np.ndarray,
    starts: np.ndarray,
    minLag: int,
    maxLag: int
) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    frames = _yin_frames(padded, starts, YIN_WINDOW + maxLag)
    diff = _difference_function(frames, YIN_WINDOW, maxLag)
    cmnd = _cumulative_mean_normalized(diff)
    lags = _pick_lags(cmnd, minLag, maxLag)
    return frames, diff, cmnd, lags


def extract_f0(waveform: np.ndarray, sampleRate: int = SAMPLE_RATE) -> tuple[np.ndarray, np.ndarray]:
    """
    YIN F0 tracker on the mel frame grid

    - Search band `F0_MIN..F0_MAX` Hz, parabolic refinement of the chosen lag
    - A frame is voiced if its periodicity `1 - cmnd(lag)` reaches `VOICING_THRESHOLD`
      and its RMS reaches `SILENCE_RMS`
    - Returns `(f0, uv)` float32 arrays, `f0 = 0` wherever `uv = 0`
    """
    waveform = _check_waveform(waveform, sampleRate)
    minLag = int(np.ceil(sampleRate / F0_MAX))
    maxLag = int(np.floor(sampleRate / F0_MIN))
    frameLength = YIN_WINDOW + maxLag
    centres = np.arange(num_frames(waveform.size)) * HOP_LENGTH
    padded = np.pad(waveform, (frameLength, frameLength))

    # Coarse pass, then re-centre every frame on its own lag
    _, _, _, coarse = _yin_pass(padded, centres + frameLength - frameLength // 2, minLag, maxLag)
    starts = centres + frameLength - (YIN_WINDOW + coarse) // 2
    frames, diff, cmnd, lags = _yin_pass(padded, starts, minLag, maxLag)

    # Parabolic interpolation on the difference function
    rows = np.arange(lags.size)
    prev = diff[rows, np.maximum(lags - 1, 0)]
    here = diff[rows, lags]
    nxt = diff[rows, np.minimum(lags + 1, maxLag)]
    curvature = prev - 2.0 * here + nxt
    shift = np.where(curvature > 1e-12, 0.5 * (prev - nxt) / np.where(curvature > 1e-12, curvature, 1.0), 0.0)
    period = lags + np.clip(shift, -1.0, 1.0)

    periodicity = 1.0 - cmnd[rows, lags]
    rms = np.sqrt(np.mean(frames ** 2, axis=1))
    voiced = (periodicity >= VOICING_THRESHOLD) & (rms >= SILENCE_RMS)
    f0 = np.where(voiced, sampleRate / period, 0.0)
    return f0.astype(np.float32), voiced.astype(np.float32)


def voiced_log_f0(f0: np.ndarray, uv: np.ndarray, fill: float = float(np.log2(220.0))) -> np.ndarray:
    """
    log2 F0 with unvoiced gaps linearly interpolated (edges hold the nearest voiced value)
    - Contours with no voiced frame are filled with `fill`
    """
    f0 = np.asarray(f0, dtype=np.float64)
    voiced = (np.asarray(uv) > 0.5) & (f0 > 0)
    if not voiced.any():
        return np.full(f0.shape, fill, dtype=np.float32)
    frames = np.arange(f0.size)
    logF0 = np.interp(frames, frames[voiced], np.log2(f0[voiced]))
    return logF0.astype(np.float32)


def mel_to_audio(logMel: np.ndarray, numIter: int = 32) -> np.ndarray:
    """ Griffin-Lim rendering of a `[frames, N_MELS]` log10 mel spectrogram (float32 waveform) """
    logMel = np.asarray(logMel, dtype=np.float64)
    if logMel.ndim != 2 or logMel.shape[1] != N_MELS:
        raise AudioError(f'Expected a [frames, {N_MELS}] mel spectrogram, got {logMel.shape}')
    waveform = librosa.feature.inverse.mel_to_audio(
        np.power(10.0, logMel.T),
        sr=SAMPLE_RATE,
        n_fft=N_FFT,
        hop_length=HOP_LENGTH,
        win_length=WIN_LENGTH,
        center=True,
        power=1.0,
        n_iter=numIter,
        fmin=FMIN,
        fmax=FMAX,
        length=(logMel.shape[0] - 1) * HOP_LENGTH
    )
    return waveform.astype(np.float32)


def load_wav(filePath: str | Path) -> np.ndarray:
    """ Mono 48 kHz WAV as float32 (`AudioError` for other rates or channel counts) """
    from .files import read_wav
    return read_wav(filePath, SAMPLE_RATE)
