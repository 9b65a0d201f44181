"""
This module contains the mel decoders

- `MelDenoiser`/`MelDecoder`: few-step diffusion decoder predicting the clean mel directly
- `ConvMelDecoder`: non-diffusion convolutional decoder (used without decoder diffusion)
- Losses: `mae_loss`, `ssim`/`ssim_loss`

Mels given to the decoders are min-max normalised to `[0, 1]`; the diffusion runs on
`2 * mel - 1`.
"""
import torch
from torch import nn
import torch.nn.functional as F

from .audio import N_MELS
from .config import TrainConfig
from .diffusion import DecoderSchedule, gaussian_forward, gaussian_posterior
from .exceptions import AudioError, ShapeError
from .layers import WaveNetStack

"""
Items imported inside functions/classes
- from ._utils import check_finite, draw_normal, draw_steps
"""


SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
PITCH_BINS = 256
PITCH_RANGE = 4.0




## ----------------------- Losses ----------------------- ##
def mae_loss(prediction: torch.Tensor, target: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
    """ Mean absolute error over all (valid) elements; `mask`: `[B, T]` for `[B, T, bins]` inputs """
    if prediction.shape != target.shape:
        raise ShapeError(f'Prediction {tuple(prediction.shape)} != target {tuple(target.shape)}')
    error = (prediction - target).abs()
    if mask is None:
        return error.mean()
    weights = mask[..., None].to(error.dtype).expand_as(error)
    return (error * weights).sum() / weights.sum().clamp_min(1.0)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA, dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """ `[size, size]` Gaussian window summing to 1 """
    coords = torch.arange(size, dtype=torch.float64) - size // 2
    gauss = torch.exp(-coords ** 2 / (2 * sigma ** 2))
    gauss = gauss / gauss.sum()
    return torch.outer(gauss, gauss).to(dtype)


def ssim(
    x: torch.Tensor,
    y: torch.Tensor,
    windowSize: int = SSIM_WINDOW,
    sigma: float = SSIM_SIGMA,
    dataRange: float = 1.0
) -> torch.Tensor:
    """
    Mean local SSIM of two images in `[0, 1]`
    - `x`, `y`: `[H, W]` or `[B, H, W]` (a mel is an image of frames x bins)
    - Gaussian window, edges replicated
    - Raises `AudioError` for inputs outside `[0, 1]` by more than `1e-6`
    """
    if x.shape != y.shape:
        raise ShapeError(f'SSIM inputs differ in shape: {tuple(x.shape)} vs {tuple(y.shape)}')
    for image in (x, y):
        if image.numel() and (image.min() < -1e-6 or image.max() > 1 + 1e-6):
            raise AudioError('SSIM inputs must lie in [0, 1]')
    images = torch.stack([x, y]).reshape(2, -1, 1, *x.shape[-2:])
    window = gaussian_window(windowSize, sigma, x.dtype).to(x.device)[None, None]
    pad = windowSize // 2

    def local_mean(img: torch.Tensor) -> torch.Tensor:
        return F.conv2d(F.pad(img, (pad, pad, pad, pad), mode='replicate'), window)

    a, b = images[0], images[1]
    muA, muB = local_mean(a), local_mean(b)
    varA = local_mean(a * a) - muA ** 2
    varB = local_mean(b * b) - muB ** 2
    cov = local_mean(a * b) - muA * muB
    c1 = (SSIM_K1 * dataRange) ** 2
    c2 = (SSIM_K2 * dataRange) ** 2
    ssimMap = ((2 * muA * muB + c1) * (2 * cov + c2)) / ((muA ** 2 + muB ** 2 + c1) * (varA + varB + c2))
    return ssimMap.mean()


def ssim_loss(x: torch.Tensor, y: torch.Tensor, lengths: torch.Tensor | None = None) -> torch.Tensor:
    """
    `1 - ssim`
    - `lengths`: valid frames of each `[B, T, bins]` item; SSIM is then taken per item and averaged
    """
    if lengths is None:
        return 1.0 - ssim(x, y)
    values = [ssim(x[i, :int(n)], y[i, :int(n)]) for i, n in enumerate(lengths)]
    return 1.0 - torch.stack(values).mean()




## ----------------------- Diffusion decoder ----------------------- ##
class PitchEmbedding(nn.Module):
    """
    Frame pitch features for the decoder condition
    - `f0Norm` is clamped to `[-4, 4]` and bucketed into `numBins` bins, plus a UV embedding
    """

    def __init__(self, hidden: int = 256, numBins: int = PITCH_BINS):
        super().__init__()
        self.numBins = numBins
        self.f0Embedding = nn.Embedding(numBins, hidden)
        self.uvEmbedding = nn.Embedding(2, hidden)

    def buckets(self, f0Norm: torch.Tensor) -> torch.Tensor:
        scaled = (f0Norm.clamp(-PITCH_RANGE, PITCH_RANGE) + PITCH_RANGE) / (2 * PITCH_RANGE)
        return torch.clamp((scaled * self.numBins).long(), 0, self.numBins - 1)

    def forward(self, f0Norm: torch.Tensor, uv: torch.Tensor) -> torch.Tensor:
        return self.f0Embedding(self.buckets(f0Norm)) + self.uvEmbedding(uv.round().long())


class MelDenoiser(nn.Module):
    """ `(x_t [B, T, 80], t [B], condition [B, T, C]) -> x0 prediction [B, T, 80]` """

    def __init__(
        self,
        conditionChannels: int = 256,
        hidden: int = 256,
        numLayers: int = 20,
        dilationCycle: int = 4,
        melBins: int = N_MELS
    ):
        super().__init__()
        self.stack = WaveNetStack(
            melBins, conditionChannels,
            residualChannels=hidden,
            numLayers=numLayers,
            dilationCycle=dilationCycle
        )
        self.output = nn.Conv1d(hidden, melBins, 1)

    @property
    def conditionRadius(self) -> int:
        return self.stack.conditionRadius

    def forward(
        self,
        xt: torch.Tensor,
        t: torch.Tensor,
        condition: torch.Tensor,
        mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        if condition.shape[:2] != xt.shape[:2]:
            raise ShapeError(f'Condition frames {tuple(condition.shape[:2])} != mel frames {tuple(xt.shape[:2])}')
        h = self.stack(xt.transpose(1, 2), condition.transpose(1, 2), t, mask)
        out = self.output(h).transpose(1, 2)
        return out if mask is None else out * mask[..., None].to(out.dtype)

    def decoder_denoise(self, xt: torch.Tensor, t: int, condition: torch.Tensor) -> torch.Tensor:
        """ x0 prediction of one `[T, 80]` sequence """
        step = torch.full((1,), t, dtype=torch.long, device=xt.device)
        return self(xt[None], step, condition[None])[0]


class MelDecoder(nn.Module):
    """
    Generator-based diffusion decoder of `decoder_steps` steps
    - Condition: `E_s + PitchEmbedding(f0Norm, uv)`
    - Forward marginal `x_t = sqrt(alphaBar_t) x0 + sqrt(1 - alphaBar_t) noise` on the VP-SDE schedule
    """

    def __init__(self, config: TrainConfig):
        super().__init__()
        self.pitchEmbedding = PitchEmbedding(config.hidden_size)
        self.denoiser = MelDenoiser(
            conditionChannels=config.hidden_size,
            hidden=config.decoder_hidden,
            numLayers=config.decoder_layers,
            dilationCycle=config.dilation_cycle
        )
        self.schedule = DecoderSchedule.vpsde(config.decoder_steps, config.vpsde_beta_min, config.vpsde_beta_max)

    def condition(self, styleRep: torch.Tensor, f0Norm: torch.Tensor, uv: torch.Tensor) -> torch.Tensor:
        if styleRep.shape[:2] != f0Norm.shape:
            raise ShapeError(f'Style frames {tuple(styleRep.shape[:2])} != pitch frames {tuple(f0Norm.shape)}')
        return styleRep + self.pitchEmbedding(f0Norm, uv).to(styleRep.dtype)

    def loss(self, *args, **kwargs) -> tuple[torch.Tensor, torch.Tensor]:
        return decoder_train_step(self, *args, **kwargs)

    def infer(self, *args, **kwargs) -> torch.Tensor:
        return infer_mel(self, *args, **kwargs)


def _to_unit(x: torch.Tensor) -> torch.Tensor:
    return ((x + 1.0) / 2.0).clamp(0.0, 1.0)


def decoder_train_step(
    decoder: MelDecoder,
    melNorm: torch.Tensor,
    condition: torch.Tensor,
    mask: torch.Tensor | None = None,
    lengths: torch.Tensor | None = None,
    generator: torch.Generator | None = None,
    t: torch.Tensor | None = None,
    noise: torch.Tensor | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    `(L_mae, L_ssim)` of one batch
    - `melNorm`: `[B, T, 80]` in `[0, 1]`; `t` uniform in `[1, steps]` unless given
    - MAE is taken on the `[-1, 1]` diffusion scale, SSIM on the `[0, 1]` scale
    """
    from ._utils import draw_normal, draw_steps

    x0 = 2.0 * melNorm - 1.0
    if t is None:
        t = draw_steps(x0.shape[0], decoder.schedule.numSteps, x0, generator)
    if noise is None:
        noise = draw_normal(x0.shape, x0, generator)
    xt = gaussian_forward(x0, t, noise, decoder.schedule)
    prediction = decoder.denoiser(xt, t, condition, mask)
    return (
        mae_loss(prediction, x0, mask),
        ssim_loss(_to_unit(prediction), melNorm.clamp(0.0, 1.0), lengths),
    )


@torch.no_grad()
def infer_mel(
    decoder: MelDecoder,
    condition: torch.Tensor,
    mask: torch.Tensor | None = None,
    generator: torch.Generator | None = None
) -> torch.Tensor:
    """
    `t = T..1`: predict `x0`, then draw `x_{t-1}` from `q(x_{t-1} | x_t, x0_pred)`
    - Returns the last `x0` prediction on the `[0, 1]` scale, `[B, T, 80]`
    - Raises `NumericalError` on NaN predictions
    """
    from ._utils import check_finite, draw_normal

    shape = (*condition.shape[:2], decoder.denoiser.output.out_channels)
    x = draw_normal(shape, condition, generator)
    prediction = x
    for t in range(decoder.schedule.numSteps, 0, -1):
        step = torch.full((shape[0],), t, dtype=torch.long, device=condition.device)
        prediction = check_finite(decoder.denoiser(x, step, condition, mask), 'mel prediction', step=t).clamp(-1.0, 1.0)
        if t > 1:
            mean, variance = gaussian_posterior(prediction, x, t, decoder.schedule)
            x = mean + torch.sqrt(variance) * draw_normal(shape, condition, generator)
    return _to_unit(prediction)




## ----------------------- Convolutional decoder ----------------------- ##
class ConvMelDecoder(nn.Module):
    """
    Non-diffusion decoder: `Conv1d -> ReLU -> LayerNorm` stack on the condition, linear mel output
    - Same `condition`/`loss`/`infer` surface as `MelDecoder`
    """

    def __init__(self, config: TrainConfig, numLayers: int = 5, kernelSize: int = 5):
        super().__init__()
        hidden = config.hidden_size
        self.pitchEmbedding = PitchEmbedding(hidden)
        self.convs = nn.ModuleList([
            nn.Conv1d(hidden, hidden, kernelSize, padding=kernelSize // 2) for _ in range(numLayers)
        ])
        self.norms = nn.ModuleList([nn.LayerNorm(hidden) for _ in range(numLayers)])
        self.output = nn.Linear(hidden, N_MELS)

    def condition(self, styleRep: torch.Tensor, f0Norm: torch.Tensor, uv: torch.Tensor) -> torch.Tensor:
        if styleRep.shape[:2] != f0Norm.shape:
            raise ShapeError(f'Style frames {tuple(styleRep.shape[:2])} != pitch frames {tuple(f0Norm.shape)}')
        return styleRep + self.pitchEmbedding(f0Norm, uv).to(styleRep.dtype)

    def forward(self, condition: torch.Tensor, mask: torch.Tensor | None = None) -> torch.Tensor:
        """ Prediction on the `[-1, 1]` scale """
        keep = None if mask is None else mask[..., None].to(condition.dtype)
        x = condition
        for conv, norm in zip(self.convs, self.norms):
            x = x + norm(F.relu(conv(x.transpose(1, 2)).transpose(1, 2)))
            if keep is not None:
                x = x * keep
        out = torch.tanh(self.output(x))
        return out if keep is None else out * keep

    def loss(
        self,
        melNorm: torch.Tensor,
        condition: torch.Tensor,
        mask: torch.Tensor | None = None,
        lengths: torch.Tensor | None = None,
        generator: torch.Generator | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        prediction = self(condition, mask)
        return (
            mae_loss(prediction, 2.0 * melNorm - 1.0, mask),
            ssim_loss(_to_unit(prediction), melNorm.clamp(0.0, 1.0), lengths),
        )

    @torch.no_grad()
    def infer(
        self,
        condition: torch.Tensor,
        mask: torch.Tensor | None = None,
        generator: torch.Generator | None = None
    ) -> torch.Tensor:
        return _to_unit(self(condition, mask))
