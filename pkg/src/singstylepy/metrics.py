"""
This module contains the objective metrics and the comparison figures

- `cosine_similarity`: between timbre embeddings
- `ffe`: F0 frame error (voicing decision errors + gross pitch errors)
- `plot_comparison`: mel heatmaps with the F0 contour drawn over them
"""
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Sequence

import librosa
import numpy as np
from matplotlib.backends.backend_agg import FigureCanvasAgg
from matplotlib.figure import Figure

from .audio import mel_center_frequencies
from .exceptions import ShapeError
from .files import write_json


REPORT_SCHEMA = 'report_v1'
FFE_CENTS = 50.0
COLORMAP = 'magma'
CONTOUR_COLOR = 'cyan'
FIGURE_DPI = 100
PanelInput = tuple[str, np.ndarray, np.ndarray]




def cosine_similarity(a, b) -> float:
    """
    `a . b / (|a| |b|)`
    - `[D]` vectors give one value, `[B, D]` batches the mean of the row-wise values
    - Raises `ShapeError` for zero vectors
    """
    a = np.atleast_2d(np.asarray(a, dtype=np.float64))
    b = np.atleast_2d(np.asarray(b, dtype=np.float64))
    if a.shape != b.shape:
        raise ShapeError(f'Embeddings differ in shape: {a.shape} vs {b.shape}')
    normA = np.linalg.norm(a, axis=-1)
    normB = np.linalg.norm(b, axis=-1)
    if (normA == 0).any() or (normB == 0).any():
        raise ShapeError('Cosine similarity of a zero vector is undefined')
    return float(np.mean(np.sum(a * b, axis=-1) / (normA * normB)))


def ffe(
    f0Pred: np.ndarray,
    uvPred: np.ndarray,
    f0Gt: np.ndarray,
    uvGt: np.ndarray,
    thresholdCents: float = FFE_CENTS
) -> float:
    """
    Fraction of frames with a voicing mismatch, or voiced in both with a pitch
    deviation above `thresholdCents`
    """
    arrays = [np.asarray(x, dtype=np.float64).reshape(-1) for x in (f0Pred, uvPred, f0Gt, uvGt)]
    if len({x.size for x in arrays}) != 1:
        raise ShapeError(f'Frame counts differ: {[x.size for x in arrays]}')
    f0Pred, uvPred, f0Gt, uvGt = arrays
    if f0Pred.size == 0:
        raise ShapeError('FFE of an empty contour')
    voicedPred = uvPred > 0.5
    voicedGt = uvGt > 0.5
    bothVoiced = voicedPred & voicedGt & (f0Pred > 0) & (f0Gt > 0)
    cents = np.zeros_like(f0Pred)
    cents[bothVoiced] = 1200.0 * np.abs(np.log2(f0Pred[bothVoiced] / f0Gt[bothVoiced]))
    errors = (voicedPred != voicedGt) | (bothVoiced & (cents > thresholdCents))
    return float(errors.mean())




@dataclass
class MetricReport:
    """
    - `cos` in `[-1, 1]`, `ffe` in `[0, 1]`, both averaged over `perSample`
    - `metadata`: checkpoint, split and whatever the caller adds
    """

    cos: float
    ffe: float
    perSample: list[dict[str, Any]] = field(default_factory=list)
    metadata: dict[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        if not -1.0 - 1e-9 <= self.cos <= 1.0 + 1e-9 or not 0.0 <= self.ffe <= 1.0:
            raise ShapeError(f'Metric out of range: cos = {self.cos}, ffe = {self.ffe}')

    @classmethod
    def from_samples(cls, perSample: list[dict[str, Any]], metadata: dict[str, Any] | None = None) -> 'MetricReport':
        if not perSample:
            raise ShapeError('Report needs at least one sample')
        return cls(
            cos=float(np.mean([s['cos'] for s in perSample])),
            ffe=float(np.mean([s['ffe'] for s in perSample])),
            perSample=perSample,
            metadata=metadata or {},
        )

    def to_dict(self) -> dict[str, Any]:
        return {
            'schema': REPORT_SCHEMA,
            'cos': self.cos,
            'ffe': self.ffe,
            'per_sample': self.perSample,
            'metadata': self.metadata,
        }

    def write(self, filePath: str | Path) -> Path:
        path = Path(filePath)
        write_json(path, self.to_dict())
        return path




## ----------------------- Figures ----------------------- ##
def f0_to_mel_bin(f0: np.ndarray) -> np.ndarray:
    """ Fractional mel-bin coordinate of each F0 value (NaN where `f0 <= 0`) """
    f0 = np.asarray(f0, dtype=np.float64)
    centers = librosa.hz_to_mel(mel_center_frequencies())
    out = np.full(f0.shape, np.nan)
    voiced = f0 > 0
    out[voiced] = np.interp(librosa.hz_to_mel(f0[voiced]), centers, np.arange(centers.size))
    return out


def build_comparison_figure(samples: Sequence[PanelInput], panelHeight: float = 2.0) -> Figure:
    """
    One row per `(label, mel [T, 80], f0 [T])`: the mel as a heatmap, the F0 contour on
    top in mel-bin coordinates (`f0_to_mel_bin`)
    """
    if not samples:
        raise ShapeError('Nothing to plot')
    figure = Figure(figsize=(8.0, panelHeight * len(samples)), dpi=FIGURE_DPI)
    FigureCanvasAgg(figure)
    axes = figure.subplots(len(samples), 1, squeeze=False)[:, 0]
    for ax, (label, mel, f0) in zip(axes, samples):
        mel = np.asarray(mel)
        ax.imshow(mel.T, origin='lower', aspect='auto', cmap=COLORMAP, interpolation='nearest')
        ax.plot(np.arange(len(f0)), f0_to_mel_bin(f0), color=CONTOUR_COLOR, linewidth=1.0)
        ax.set_xlim(-0.5, mel.shape[0] - 0.5)
        ax.set_ylim(-0.5, mel.shape[1] - 0.5)
        ax.set_title(label, fontsize=9)
        ax.set_ylabel('mel bin')
    axes[-1].set_xlabel('frame')
    figure.tight_layout()
    return figure


def plot_comparison(samples: Sequence[PanelInput], outPath: str | Path) -> Path:
    """ Saves `build_comparison_figure(samples)` as a PNG without metadata (same input, same bytes) """
    path = Path(outPath)
    path.parent.mkdir(parents=True, exist_ok=True)
    figure = build_comparison_figure(samples)
    figure.savefig(path, format='png', dpi=FIGURE_DPI, metadata={'Software': None})
    return path
