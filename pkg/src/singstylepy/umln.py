"""
This module contains the uncertainty-modelling layer normalisation

A conditional layer norm whose style scale/bias are perturbed, during training, by noise
scaled with their variance across the batch.
"""
import torch
from torch import nn




class UMLN(nn.Module):
    """
    Args:
        - `styleDim`: size of the style vector `s = E_t + E_e`
        - `channels`: channels of the normalised input
        - `probability`: probability `p` of perturbing in a training forward
        - `eps`: added to the standard deviation

    `scaleProjection`/`biasProjection` start as a plain layer norm (`gamma = 1`, `beta = 0`)
    """

    def __init__(self, styleDim: int = 256, channels: int = 256, probability: float = 0.5, eps: float = 1e-5):
        super().__init__()
        if not 0.0 <= probability <= 1.0:
            raise ValueError(f'probability must be in [0, 1], got {probability}')
        if eps <= 0:
            raise ValueError(f'eps must be > 0, got {eps}')
        self.probability = probability
        self.eps = eps
        self.scaleProjection = nn.Linear(styleDim, channels)
        self.biasProjection = nn.Linear(styleDim, channels)
        nn.init.zeros_(self.scaleProjection.weight)
        nn.init.ones_(self.scaleProjection.bias)
        nn.init.zeros_(self.biasProjection.weight)
        nn.init.zeros_(self.biasProjection.bias)
        self.perturbationCount = 0

    def style_scale_bias(self, s: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """ `(gamma(s), beta(s))`, `[B, channels]` each """
        return self.scaleProjection(s), self.biasProjection(s)

    def forward(
        self,
        x: torch.Tensor,
        s: torch.Tensor,
        generator: torch.Generator | None = None,
        epsGamma: torch.Tensor | None = None,
        epsBeta: torch.Tensor | None = None
    ) -> torch.Tensor:
        return umln_forward(x, s, self, self.training, generator, epsGamma, epsBeta)


def uncertainty(v: torch.Tensor) -> torch.Tensor:
    """ Biased variance across the batch, `[B, C] -> [C]` """
    return ((v - v.mean(dim=0, keepdim=True)) ** 2).mean(dim=0)


def conditional_layer_norm(
    x: torch.Tensor,
    gamma: torch.Tensor,
    beta: torch.Tensor,
    eps: float
) -> torch.Tensor:
    """ `gamma * (x - mean) / (std + eps) + beta`, statistics over the channels of each position """
    mean = x.mean(dim=-1, keepdim=True)
    std = torch.sqrt(((x - mean) ** 2).mean(dim=-1, keepdim=True))
    return gamma[:, None, :] * (x - mean) / (std + eps) + beta[:, None, :]


def umln_forward(
    x: torch.Tensor,
    s: torch.Tensor,
    layer: UMLN,
    training: bool,
    generator: torch.Generator | None = None,
    epsGamma: torch.Tensor | None = None,
    epsBeta: torch.Tensor | None = None
) -> torch.Tensor:
    """
    - Not training: returns `x` itself
    - Training: one uniform draw per call, `x` is returned if it exceeds `layer.probability`
    - Else: `gamma_um = gamma(s) + epsGamma * Var_B(gamma(s))` (same for `beta`), then
      `conditional_layer_norm(x, gamma_um, beta_um)`

    `x`: `[B, T, C]`, `s`: `[B, styleDim]`; `epsGamma`/`epsBeta` (`[B, C]`) default to
    standard normal draws from `generator`
    """
    if not training:
        return x
    draw = torch.rand(1, generator=generator, device=generator.device if generator else 'cpu')
    if draw.item() > layer.probability:
        return x

    gamma, beta = layer.style_scale_bias(s)
    if epsGamma is None:
        epsGamma = torch.randn(gamma.shape, generator=generator, dtype=gamma.dtype, device=gamma.device)
    if epsBeta is None:
        epsBeta = torch.randn(beta.shape, generator=generator, dtype=beta.dtype, device=beta.device)
    gammaUm = gamma + epsGamma * uncertainty(gamma)
    betaUm = beta + epsBeta * uncertainty(beta)
    layer.perturbationCount += 1
    return conditional_layer_norm(x, gammaUm, betaUm, layer.eps)
