"""
This module contains the pitch predictors

- `PitchDenoiser`: one WaveNet denoiser predicting the F0 noise and the UV logits
- `PitchPredictor`: style-specific and style-agnostic denoisers, combined
- `SimplePitchPredictor`: feed-forward F0/UV regressor (used without pitch diffusion)
"""
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .config import TrainConfig
from .diffusion import (
    GaussianSchedule, MultinomialSchedule,
    gaussian_forward, gaussian_loss, gaussian_reverse_step,
    multinomial_loss, multinomial_marginal, multinomial_posterior, sample_categorical
)
from .exceptions import ShapeError
from .layers import WaveNetStack

"""
Items imported inside functions/classes
- from ._utils import check_finite, draw_normal, draw_steps
"""


NUM_UV_CLASSES = 2
BranchOutput = tuple[torch.Tensor, torch.Tensor]




@dataclass
class PitchContour:
    """
    - `f0Norm`: `[B, T]` standardised log2 F0 (the raw diffusion output)
    - `uv`: `[B, T]` long, `1` = voiced
    - `f0`: `[B, T]` Hz, `0` on unvoiced frames (set when statistics were given)
    """

    f0Norm: torch.Tensor
    uv: torch.Tensor
    f0: torch.Tensor | None = None




class PitchDenoiser(nn.Module):
    """
    `(x_t, y_t, t, condition) -> (noise prediction [B, T], UV logits [B, T, 2])`
    - `x_t` enters through a 1x1 conv, the one-hot `y_t` through a (linear) embedding
    - Output heads start at zero: no noise and uniform logits before training
    """

    def __init__(
        self,
        conditionChannels: int = 256,
        residualChannels: int = 192,
        numLayers: int = 12,
        dilationCycle: int = 4,
        kernelSize: int = 3
    ):
        super().__init__()
        self.f0Projection = nn.Conv1d(1, residualChannels, 1)
        self.uvEmbedding = nn.Linear(NUM_UV_CLASSES, residualChannels, bias=False)
        self.stack = WaveNetStack(
            residualChannels, conditionChannels,
            residualChannels=residualChannels,
            numLayers=numLayers,
            dilationCycle=dilationCycle,
            kernelSize=kernelSize
        )
        self.noiseHead = nn.Conv1d(residualChannels, 1, 1)
        self.uvHead = nn.Conv1d(residualChannels, NUM_UV_CLASSES, 1)
        for head in (self.noiseHead, self.uvHead):
            nn.init.zeros_(head.weight)
            nn.init.zeros_(head.bias)

    @property
    def conditionRadius(self) -> int:
        return self.stack.conditionRadius

    def forward(
        self,
        xt: torch.Tensor,
        yt: torch.Tensor,
        t: torch.Tensor,
        condition: torch.Tensor,
        mask: torch.Tensor | None = None
    ) -> BranchOutput:
        """ `xt [B, T]`, `yt [B, T, 2]`, `t [B]`, `condition [B, T, C]` """
        if condition.shape[:2] != xt.shape or yt.shape[:2] != xt.shape:
            raise ShapeError(
                f'Condition {tuple(condition.shape[:2])} / UV {tuple(yt.shape[:2])} '
                f'frames don\'t match F0 frames {tuple(xt.shape)}'
            )
        dtype = self.f0Projection.weight.dtype
        x = self.f0Projection(xt.to(dtype)[:, None, :]) + self.uvEmbedding(yt.to(dtype)).transpose(1, 2)
        h = self.stack(x, condition.transpose(1, 2), t, mask)
        noise = self.noiseHead(h).squeeze(1)
        logits = self.uvHead(h).transpose(1, 2)
        if mask is not None:
            noise = noise * mask.to(noise.dtype)
        return noise, logits

    def pitch_denoise_step(
        self,
        xt: torch.Tensor,
        yt: torch.Tensor,
        t: int,
        condition: torch.Tensor
    ) -> BranchOutput:
        """ Noise `[T]` and UV logits `[T, 2]` of one unbatched sequence """
        step = torch.full((1,), t, dtype=torch.long, device=xt.device)
        noise, logits = self(xt[None], yt[None], step, condition[None])
        return noise[0], logits[0]


def combine_branches(specificOut: BranchOutput, agnosticOut: BranchOutput) -> BranchOutput:
    """ Element-wise mean of the two branches' noise predictions and UV logits """
    for a, b in zip(specificOut, agnosticOut):
        if a.shape != b.shape:
            raise ShapeError(f'Branch outputs differ in shape: {tuple(a.shape)} vs {tuple(b.shape)}')
    return (
        (specificOut[0] + agnosticOut[0]) / 2.0,
        (specificOut[1] + agnosticOut[1]) / 2.0,
    )




class PitchPredictor(nn.Module):
    """
    Dual pitch diffusion predictor
    - `specific` denoises under `E_s`, `agnostic` under `E_c`, outputs are averaged
    - Gaussian diffusion over the standardised log2 F0, multinomial diffusion over UV
    - `specificEnabled = False` zeroes the style-specific branch
    """

    def __init__(self, config: TrainConfig):
        super().__init__()
        kwargs = dict(
            conditionChannels=config.hidden_size,
            residualChannels=config.pitch_residual_channels,
            numLayers=config.pitch_layers,
            dilationCycle=config.dilation_cycle,
            kernelSize=config.pitch_kernel,
        )
        self.specific = PitchDenoiser(**kwargs)
        self.agnostic = PitchDenoiser(**kwargs)
        self.gaussianSchedule = GaussianSchedule.linear(config.pitch_steps, config.pitch_beta_min, config.pitch_beta_max)
        self.multinomialSchedule = MultinomialSchedule.linear(
            config.pitch_steps, config.pitch_beta_min, config.pitch_beta_max, NUM_UV_CLASSES
        )
        self.weighting = config.gaussian_loss_weighting
        self.specificEnabled = True

    def predict(
        self,
        xt: torch.Tensor,
        yt: torch.Tensor,
        t: torch.Tensor,
        specificCondition: torch.Tensor,
        agnosticCondition: torch.Tensor,
        mask: torch.Tensor | None = None
    ) -> BranchOutput:
        specificOut = self.specific(xt, yt, t, specificCondition, mask)
        if not self.specificEnabled:
            specificOut = (torch.zeros_like(specificOut[0]), torch.zeros_like(specificOut[1]))
        return combine_branches(specificOut, self.agnostic(xt, yt, t, agnosticCondition, mask))

    def loss(self, *args, **kwargs) -> tuple[torch.Tensor, torch.Tensor]:
        return pitch_train_step(self, *args, **kwargs)

    def infer(self, *args, **kwargs) -> PitchContour:
        return infer_pitch(self, *args, **kwargs)


def pitch_train_step(
    predictor: PitchPredictor,
    f0Norm: torch.Tensor,
    uv: torch.Tensor,
    specificCondition: torch.Tensor,
    agnosticCondition: torch.Tensor,
    mask: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
    t: torch.Tensor | None = None,
    noise: torch.Tensor | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    `(L_gdiff, L_mdiff)` of one batch

    - One step `t` per sample, shared by both branches; `t`/`noise` default to draws from `generator`
    - `f0Norm`: `[B, T]` standardised log2 F0, `uv`: `[B, T]` (`1` = voiced)
    """
    from ._utils import draw_normal, draw_steps

    gaussianSchedule = predictor.gaussianSchedule
    if t is None:
        t = draw_steps(f0Norm.shape[0], gaussianSchedule.numSteps, f0Norm, generator)
    if noise is None:
        noise = draw_normal(f0Norm.shape, f0Norm, generator)
    xt = gaussian_forward(f0Norm, t, noise, gaussianSchedule)

    y0 = F.one_hot(uv.round().long(), NUM_UV_CLASSES).to(f0Norm.dtype)
    yProbs = multinomial_marginal(y0, t, predictor.multinomialSchedule)
    yt = sample_categorical(yProbs, generator)

    noisePred, logits = predictor.predict(xt, yt, t, specificCondition, agnosticCondition, mask)
    gaussianLoss = gaussian_loss(noise, noisePred, t, gaussianSchedule, predictor.weighting, mask)
    multinomialLoss = multinomial_loss(y0, logits.to(y0.dtype), yt, t, predictor.multinomialSchedule, mask)
    return gaussianLoss, multinomialLoss


@torch.no_grad()
def infer_pitch(
    predictor: PitchPredictor,
    specificCondition: torch.Tensor,
    agnosticCondition: torch.Tensor,
    mask: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
    stats=None
) -> PitchContour:
    """
    Ancestral sampling of F0 (Gaussian) and UV (multinomial, through the posterior of the
    predicted `y0`) over all steps

    - The last step decodes UV by argmax
    - `stats` (`NormStats`): fills `f0` in Hz, zero where unvoiced
    - Raises `NumericalError` (with the step) on NaN predictions
    """
    from ._utils import check_finite, draw_normal

    batch, frames = specificCondition.shape[:2]
    like = specificCondition
    x = draw_normal((batch, frames), like, generator)
    uniform = torch.full((batch, frames, NUM_UV_CLASSES), 1.0 / NUM_UV_CLASSES, dtype=like.dtype)
    y = sample_categorical(uniform.to(like.device), generator)

    for t in range(predictor.gaussianSchedule.numSteps, 0, -1):
        tBatch = torch.full((batch,), t, dtype=torch.long, device=like.device)
        noisePred, logits = predictor.predict(x, y, tBatch, specificCondition, agnosticCondition, mask)
        check_finite(noisePred, 'F0 noise prediction', step=t)
        check_finite(logits, 'UV logits', step=t)
        x = gaussian_reverse_step(x, noisePred, t, predictor.gaussianSchedule, generator)
        y0Pred = torch.softmax(logits.to(like.dtype), dim=-1)
        if t > 1:
            probs = multinomial_posterior(y, y0Pred, t, predictor.multinomialSchedule)
            y = sample_categorical(probs, generator)
        else:
            y = F.one_hot(y0Pred.argmax(-1), NUM_UV_CLASSES).to(like.dtype)

    uv = y.argmax(-1)
    if mask is not None:
        uv = uv * mask.long()
    return _contour(x, uv, stats)


def _contour(f0Norm: torch.Tensor, uv: torch.Tensor, stats) -> PitchContour:
    contour = PitchContour(f0Norm=f0Norm, uv=uv)
    if stats is not None:
        f0 = torch.pow(2.0, stats.denormalize_f0(f0Norm))
        contour.f0 = torch.where(uv > 0, f0, torch.zeros_like(f0))
    return contour




class SimplePitchPredictor(nn.Module):
    """
    Feed-forward F0/UV regressor on the style-specific representation
    - Two `Conv1d -> ReLU -> LayerNorm -> Dropout` layers, linear output of `[f0Norm, uv logits]`
    - Trained with MSE on `f0Norm` and cross-entropy on UV
    """

    def __init__(self, config: TrainConfig):
        super().__init__()
        hidden = config.hidden_size
        self.convs = nn.ModuleList([
            nn.Conv1d(hidden, hidden, config.pitch_kernel, padding=config.pitch_kernel // 2) for _ in range(2)
        ])
        self.norms = nn.ModuleList([nn.LayerNorm(hidden) for _ in range(2)])
        self.dropout = nn.Dropout(config.dropout)
        self.output = nn.Linear(hidden, 1 + NUM_UV_CLASSES)
        self.specificEnabled = True

    def forward(self, condition: torch.Tensor, mask: torch.Tensor | None = None) -> BranchOutput:
        """ `condition [B, T, C]` -> `(f0Norm [B, T], uv logits [B, T, 2])` """
        keep = torch.ones(condition.shape[:2], device=condition.device) if mask is None else mask
        keep = keep[..., None].to(condition.dtype)
        x = condition * keep
        for conv, norm in zip(self.convs, self.norms):
            x = F.relu(conv(x.transpose(1, 2))).transpose(1, 2)
            x = self.dropout(norm(x)) * keep
        out = self.output(x)
        return out[..., 0], out[..., 1:]

    def loss(
        self,
        f0Norm: torch.Tensor,
        uv: torch.Tensor,
        specificCondition: torch.Tensor,
        agnosticCondition: torch.Tensor,
        mask: torch.Tensor | None = None,
        generator: torch.Generator | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """ `(MSE on f0Norm, UV cross-entropy)` over valid frames """
        f0Pred, logits = self(specificCondition, mask)
        weights = torch.ones_like(f0Norm) if mask is None else mask.to(f0Norm.dtype)
        total = weights.sum().clamp_min(1.0)
        mse = (((f0Pred - f0Norm) ** 2) * weights).sum() / total
        ce = F.cross_entropy(logits.transpose(1, 2), uv.round().long(), reduction='none')
        return mse, (ce * weights).sum() / total

    @torch.no_grad()
    def infer(
        self,
        specificCondition: torch.Tensor,
        agnosticCondition: torch.Tensor,
        mask: torch.Tensor | None = None,
        generator: torch.Generator | None = None,
        stats=None
    ) -> PitchContour:
        f0Norm, logits = self(specificCondition, mask)
        uv = logits.argmax(-1)
        if mask is not None:
            uv = uv * mask.long()
        return _contour(f0Norm, uv, stats)
