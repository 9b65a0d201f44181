"""
This module contains the diffusion mathematics shared by the pitch predictor and the mel decoder

- Noise schedules are stored with one leading entry for `t = 0` (`beta = 0`, `alphaBar = 1`),
  so `schedule.betas[t]` is the beta of step `t` for `t` in `[1, T]`
- `t` can be an `int` or a `LongTensor` of shape `[B]` (one step per batch item)
"""
import math
from typing import Callable, Literal

import torch
import torch.nn.functional as F

from .exceptions import DistributionError, ShapeError

"""
Items imported inside functions/classes
- from ._utils import check_finite, generate_repr_str
"""


SIMPLEX_TOL = 1e-6
VarianceType = Literal['posterior', 'beta']
LossWeighting = Literal['printed', 'simple']




class DiffusionSchedule:
    """
    Discrete noise schedule of `T` steps

    Args:
        - `betas`: `T` betas of steps `1..T`, each in `(0, 1)`
    """

    def __init__(self, betas: torch.Tensor | list[float]):
        betas = torch.as_tensor(betas, dtype=torch.float64).flatten()
        if betas.numel() == 0:
            raise DistributionError('Schedule needs at least one step')
        if not ((betas > 0) & (betas < 1)).all():
            raise DistributionError('Every beta must be in (0, 1)')

        # Data
        self.__betas = torch.cat([betas.new_zeros(1), betas])
        self.__alphas = 1.0 - self.__betas
        self.__alphasCumprod = torch.cumprod(self.__alphas, dim=0)

    def __repr__(self) -> str:
        from ._utils import generate_repr_str
        return generate_repr_str(self, 'numSteps')

    @property
    def numSteps(self) -> int:
        return self.__betas.numel() - 1

    @property
    def betas(self) -> torch.Tensor:
        """ `[T+1]`, `betas[0] = 0` """
        return self.__betas

    @property
    def alphas(self) -> torch.Tensor:
        """ `1 - betas` """
        return self.__alphas

    @property
    def alphasCumprod(self) -> torch.Tensor:
        """ `alphaBar_t = prod(alpha_1..alpha_t)`, `alphaBar_0 = 1` """
        return self.__alphasCumprod

    def check_step(self, t: int | torch.Tensor, lowest: int = 1):
        """ Raises `DistributionError` if any `t` is outside `[lowest, T]` """
        tt = torch.as_tensor(t)
        if tt.numel() == 0 or tt.min() < lowest or tt.max() > self.numSteps:
            raise DistributionError(
                f'Diffusion step out of range [{lowest}, {self.numSteps}]: {tt.tolist()}'
            )



class GaussianSchedule(DiffusionSchedule):
    """ Gaussian (DDPM) schedule with the posterior variance `sigma_t^2 = betaTilde_t` """

    def __init__(self, betas: torch.Tensor | list[float]):
        super().__init__(betas)
        alphasCumprodPrev = torch.cat([self.alphasCumprod.new_ones(1), self.alphasCumprod[:-1]])
        variance = self.betas * (1.0 - alphasCumprodPrev) / (1.0 - self.alphasCumprod).clamp_min(1e-300)
        variance[0] = 0.0
        self.__posteriorVariance = variance

    @classmethod
    def linear(cls, numSteps: int = 100, betaStart: float = 1e-4, betaEnd: float = 0.06):
        """ Betas linearly spaced from `betaStart` (step 1) to `betaEnd` (step `T`) """
        return cls(torch.linspace(betaStart, betaEnd, numSteps, dtype=torch.float64))

    @property
    def posteriorVariance(self) -> torch.Tensor:
        """ `betaTilde_t = (1 - alphaBar_{t-1}) / (1 - alphaBar_t) * beta_t`, zero at `t = 1` """
        return self.__posteriorVariance

    @property
    def clippedPosteriorVariance(self) -> torch.Tensor:
        """ `posteriorVariance` with the zero at `t = 1` replaced by the value of `t = 2` """
        variance = self.__posteriorVariance.clone()
        if self.numSteps >= 2:
            variance[1] = variance[2]
        else:
            variance[1] = self.betas[1]
        return variance



class MultinomialSchedule(DiffusionSchedule):
    """
    Schedule of a categorical diffusion over `numClasses` categories
    - `beta_t` is the probability of uniformly resampling the category at step `t`
    """

    def __init__(self, betas: torch.Tensor | list[float], numClasses: int = 2):
        super().__init__(betas)
        if numClasses < 2:
            raise DistributionError(f'Multinomial diffusion needs at least 2 categories, got {numClasses}')
        self.__numClasses = numClasses

    @classmethod
    def linear(cls, numSteps: int = 100, betaStart: float = 1e-4, betaEnd: float = 0.06, numClasses: int = 2):
        return cls(torch.linspace(betaStart, betaEnd, numSteps, dtype=torch.float64), numClasses)

    @property
    def numClasses(self) -> int:
        return self.__numClasses



class DecoderSchedule(GaussianSchedule):
    """
    Few-step schedule of the mel decoder, discretised from a VPSDE
    - `signalScale[t]` is the decoder's `alpha_t`, equal to `sqrt(alphaBar_t)`
    """

    @classmethod
    def vpsde(cls, numSteps: int = 4, betaMin: float = 0.1, betaMax: float = 20.0):
        """ `beta_i = 1 - exp(-betaMin/N - (betaMax - betaMin) * (2i - 1) / (2 N^2))` """
        i = torch.arange(1, numSteps + 1, dtype=torch.float64)
        betas = 1.0 - torch.exp(
            -betaMin / numSteps - (betaMax - betaMin) * (2 * i - 1) / (2 * numSteps ** 2)
        )
        return cls(betas)

    @property
    def signalScale(self) -> torch.Tensor:
        return torch.sqrt(self.alphasCumprod)




## ----------------------- Helpers ----------------------- ##
def _extract(values: torch.Tensor, t: int | torch.Tensor, like: torch.Tensor) -> torch.Tensor:
    """ `values[t]` cast to `like`, shaped to broadcast over `like` (`[B, 1, ...]` for tensor `t`) """
    values = values.to(device=like.device, dtype=like.dtype)
    if isinstance(t, int):
        return values[t]
    t = t.to(device=like.device, dtype=torch.long)
    out = values[t]
    return out.reshape(t.shape[0], *([1] * (like.dim() - 1)))


def _check_simplex(probs: torch.Tensor, what: str):
    if (probs < -SIMPLEX_TOL).any() or ((probs.sum(-1) - 1.0).abs() > SIMPLEX_TOL).any():
        raise DistributionError(f'{what} is not a valid probability vector')


def _check_classes(probs: torch.Tensor, schedule: MultinomialSchedule):
    if probs.shape[-1] != schedule.numClasses:
        raise ShapeError(
            f'Expected {schedule.numClasses} categories in the last dimension, got {probs.shape[-1]}'
        )




## ----------------------- Gaussian ----------------------- ##
def gaussian_forward(
    x0: torch.Tensor,
    t: int | torch.Tensor,
    noise: torch.Tensor,
    schedule: GaussianSchedule
) -> torch.Tensor:
    """ `x_t = sqrt(alphaBar_t) * x0 + sqrt(1 - alphaBar_t) * noise` """
    schedule.check_step(t)
    if noise.shape != x0.shape:
        raise ShapeError(f'Noise shape {tuple(noise.shape)} != data shape {tuple(x0.shape)}')
    alphaBar = _extract(schedule.alphasCumprod, t, x0)
    return torch.sqrt(alphaBar) * x0 + torch.sqrt(1.0 - alphaBar) * noise


def gaussian_loss_weight(t: int | torch.Tensor, schedule: GaussianSchedule) -> torch.Tensor:
    """
    `beta_t^2 / (2 sigma_t^2 alpha_t (1 - alphaBar_t))`, in float64
    - `sigma_1^2` is zero, the value of step 2 is used there
    """
    schedule.check_step(t)
    variance = schedule.clippedPosteriorVariance
    weights = schedule.betas ** 2 / (2.0 * variance * schedule.alphas * (1.0 - schedule.alphasCumprod))
    return weights[torch.as_tensor(t, dtype=torch.long).cpu()]


def gaussian_loss(
    noise: torch.Tensor,
    noisePred: torch.Tensor,
    t: int | torch.Tensor,
    schedule: GaussianSchedule,
    weighting: LossWeighting = 'printed',
    mask: torch.Tensor | None = None
) -> torch.Tensor:
    """
    Weighted noise-prediction loss, mean over the batch

    - Per sample: mean of `(noise - noisePred)^2` over its (unmasked) elements,
      times `gaussian_loss_weight(t)` if `weighting == 'printed'`
    - `mask`: `1` for valid elements, same shape as `noise`
    """
    if noise.shape != noisePred.shape:
        raise ShapeError(f'Prediction shape {tuple(noisePred.shape)} != noise shape {tuple(noise.shape)}')
    squared = (noise - noisePred) ** 2
    if mask is None:
        mask = torch.ones_like(squared)
    mask = mask.to(squared.dtype)
    dims = tuple(range(1, squared.dim()))
    perSample = (squared * mask).sum(dims) / mask.sum(dims).clamp_min(1.0) if dims else squared
    if weighting == 'printed':
        weight = gaussian_loss_weight(t, schedule).to(device=squared.device, dtype=squared.dtype)
        perSample = perSample * weight
    elif weighting != 'simple':
        raise ValueError(f'Unknown loss weighting: {weighting}')
    return perSample.mean()


def gaussian_posterior(
    x0: torch.Tensor,
    xt: torch.Tensor,
    t: int | torch.Tensor,
    schedule: GaussianSchedule
) -> tuple[torch.Tensor, torch.Tensor]:
    """ Mean and variance of `q(x_{t-1} | x_t, x0)` """
    schedule.check_step(t)
    alphaBarPrev = torch.cat([schedule.alphasCumprod.new_ones(1), schedule.alphasCumprod[:-1]])
    denom = 1.0 - schedule.alphasCumprod
    coefX0 = schedule.betas * torch.sqrt(alphaBarPrev) / denom.clamp_min(1e-300)
    coefXt = (1.0 - alphaBarPrev) * torch.sqrt(schedule.alphas) / denom.clamp_min(1e-300)
    mean = _extract(coefX0, t, xt) * x0 + _extract(coefXt, t, xt) * xt
    variance = _extract(schedule.posteriorVariance, t, xt)
    return mean, variance


def gaussian_reverse_step(
    xt: torch.Tensor,
    noisePred: torch.Tensor,
    t: int,
    schedule: GaussianSchedule,
    generator: torch.Generator | None = None,
    varianceType: VarianceType = 'posterior'
) -> torch.Tensor:
    """
    One ancestral step `x_t -> x_{t-1}`
    - `x_{t-1} = (x_t - beta_t / sqrt(1 - alphaBar_t) * noisePred) / sqrt(alpha_t) + sigma_t * z`
    - `sigma_t^2` is `betaTilde_t` (`posterior`) or `beta_t` (`beta`), no noise is added at `t = 1`
    """
    schedule.check_step(t)
    beta = schedule.betas[t].item()
    alpha = schedule.alphas[t].item()
    alphaBar = schedule.alphasCumprod[t].item()
    mean = (xt - beta / math.sqrt(1.0 - alphaBar) * noisePred) / math.sqrt(alpha)
    if t == 1:
        return mean
    if varianceType == 'posterior':
        variance = schedule.posteriorVariance[t].item()
    elif varianceType == 'beta':
        variance = beta
    else:
        raise ValueError(f'Unknown variance type: {varianceType}')
    z = torch.randn(xt.shape, generator=generator, device=xt.device, dtype=xt.dtype)
    return mean + math.sqrt(variance) * z


def sample_reverse_gaussian(
    predictor: Callable[[torch.Tensor, torch.Tensor, object], torch.Tensor],
    condition: object,
    schedule: GaussianSchedule,
    shape: tuple[int, ...],
    generator: torch.Generator | None = None,
    xT: torch.Tensor | None = None,
    varianceType: VarianceType = 'posterior',
    dtype: torch.dtype = torch.float32,
    device: str | torch.device = 'cpu'
) -> torch.Tensor:
    """
    Ancestral sampling `t = T..1`, returns `x_0`

    Args:
        - `predictor`: `predictor(x_t, t, condition) -> noisePred`, `t` is a `LongTensor[B]`
        - `shape`: shape of the sample, `shape[0]` is the batch
        - `xT`: starting point (default: standard normal drawn from `generator`)

    Raises `NumericalError` (with the step) if the predictor returns NaN/Inf
    """
    from ._utils import check_finite

    if xT is None:
        xT = torch.randn(shape, generator=generator, dtype=dtype, device=device)
    x = xT
    for t in range(schedule.numSteps, 0, -1):
        tBatch = torch.full((x.shape[0],), t, dtype=torch.long, device=x.device)
        noisePred = check_finite(predictor(x, tBatch, condition), 'noise prediction', step=t)
        x = gaussian_reverse_step(x, noisePred, t, schedule, generator, varianceType)
    return x




## ----------------------- Multinomial ----------------------- ##
def multinomial_forward(yPrev: torch.Tensor, beta: float | torch.Tensor) -> torch.Tensor:
    """ `(1 - beta) * yPrev + beta / K`, `K` being the last dimension """
    _check_simplex(yPrev, 'y_{t-1}')
    beta = torch.as_tensor(beta, dtype=yPrev.dtype, device=yPrev.device)
    if (beta < 0).any() or (beta > 1).any():
        raise DistributionError(f'beta must be in [0, 1], got {beta.tolist()}')
    return (1.0 - beta) * yPrev + beta / yPrev.shape[-1]


def multinomial_marginal(
    y0: torch.Tensor,
    t: int | torch.Tensor,
    schedule: MultinomialSchedule
) -> torch.Tensor:
    """ `q(y_t | y0) = alphaBar_t * y0 + (1 - alphaBar_t) / K` (`t = 0` gives `y0`) """
    schedule.check_step(t, lowest=0)
    _check_classes(y0, schedule)
    alphaBar = _extract(schedule.alphasCumprod, t, y0)
    return alphaBar * y0 + (1.0 - alphaBar) / schedule.numClasses


def multinomial_posterior(
    yt: torch.Tensor,
    y0: torch.Tensor,
    t: int | torch.Tensor,
    schedule: MultinomialSchedule
) -> torch.Tensor:
    """
    `q(y_{t-1} | y_t, y0)`

    `theta = [alpha_t y_t + (1 - alpha_t)/K] * [alphaBar_{t-1} y0 + (1 - alphaBar_{t-1})/K]`,
    normalised over the categories
    """
    schedule.check_step(t)
    _check_classes(yt, schedule)
    _check_classes(y0, schedule)
    numClasses = schedule.numClasses
    alpha = _extract(schedule.alphas, t, yt)
    alphaBarPrev = _extract(schedule.alphasCumprod, t - 1, y0)
    theta = (alpha * yt + (1.0 - alpha) / numClasses) * (alphaBarPrev * y0 + (1.0 - alphaBarPrev) / numClasses)
    total = theta.sum(-1, keepdim=True)
    if (total <= 0).any():
        raise DistributionError('Degenerate multinomial posterior (all-zero weights)')
    return theta / total


def multinomial_loss(
    y0True: torch.Tensor,
    y0PredLogits: torch.Tensor,
    yt: torch.Tensor,
    t: int | torch.Tensor,
    schedule: MultinomialSchedule,
    mask: torch.Tensor | None = None
) -> torch.Tensor:
    """
    Categorical diffusion loss, mean over the batch

    - `t >= 2`: `KL(q(y_{t-1} | y_t, y0True) || q(y_{t-1} | y_t, softmax(y0PredLogits)))`
    - `t = 1`: cross-entropy of `softmax(y0PredLogits)` against `y0True`
    - `y0True`, `yt`, `y0PredLogits`: `[B, ..., K]`; `mask`: `[B, ...]`, `1` for valid positions
    """
    schedule.check_step(t)
    if not (y0True.shape == y0PredLogits.shape == yt.shape):
        raise ShapeError('y0True, y0PredLogits and yt must share one shape')
    logProbs = F.log_softmax(y0PredLogits, dim=-1)
    y0Pred = logProbs.exp()

    nll = -(y0True * logProbs).sum(-1)
    tt = torch.as_tensor(t, device=nll.device, dtype=torch.long)
    isFirst = (tt == 1).reshape(-1, *([1] * (nll.dim() - 1))) if tt.dim() else (tt == 1)

    # Step 1 decodes directly, steps >= 2 use the posterior KL
    if schedule.numSteps >= 2:
        tKl = torch.clamp(tt, min=2) if tt.dim() else max(int(t), 2)
        qTrue = multinomial_posterior(yt, y0True, tKl, schedule)
        qPred = multinomial_posterior(yt, y0Pred, tKl, schedule)
        kl = (torch.special.xlogy(qTrue, qTrue) - qTrue * torch.log(qPred.clamp_min(1e-30))).sum(-1)
        perPosition = torch.where(isFirst, nll, kl)
    else:
        perPosition = nll

    if mask is None:
        mask = torch.ones_like(perPosition)
    mask = mask.to(perPosition.dtype)
    dims = tuple(range(1, perPosition.dim()))
    if not dims:
        return perPosition.mean()
    perSample = (perPosition * mask).sum(dims) / mask.sum(dims).clamp_min(1.0)
    return perSample.mean()


def sample_categorical(probs: torch.Tensor, generator: torch.Generator | None = None) -> torch.Tensor:
    """ One-hot draw from `probs` (`[..., K]`), same shape and dtype """
    flat = probs.reshape(-1, probs.shape[-1]).clamp_min(0)
    device = generator.device if generator is not None else probs.device
    idx = torch.multinomial(flat.to(device), 1, generator=generator).squeeze(-1).to(probs.device)
    return F.one_hot(idx, probs.shape[-1]).to(probs.dtype).reshape(probs.shape)
