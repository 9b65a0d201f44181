"""
This module contains network building blocks shared by the models

- Sinusoidal encodings (positions and diffusion steps)
- `FFTBlock`: self-attention + convolutional feed-forward transformer block
- `WaveNetStack`: non-causal dilated residual stack used by both denoisers
"""
import math

import torch
from torch import nn
import torch.nn.functional as F




def sinusoidal_encoding(
    length: int,
    dim: int,
    device: torch.device | str | None = None,
    dtype: torch.dtype = torch.float32
) -> torch.Tensor:
    """ `[length, dim]` positional encoding: `sin` on even channels, `cos` on odd ones """
    position = torch.arange(length, device=device, dtype=torch.float64)[:, None]
    freq = torch.exp(
        torch.arange(0, dim, 2, device=device, dtype=torch.float64) * (-math.log(10000.0) / dim)
    )
    table = torch.zeros(length, dim, device=device, dtype=torch.float64)
    table[:, 0::2] = torch.sin(position * freq)
    table[:, 1::2] = torch.cos(position * freq[: dim // 2])
    return table.to(dtype)


def lengths_to_mask(lengths: torch.Tensor, maxLength: int | None = None) -> torch.Tensor:
    """ `[B, maxLength]` bool mask, `True` on valid positions """
    maxLength = int(lengths.max()) if maxLength is None else maxLength
    return torch.arange(maxLength, device=lengths.device)[None, :] < lengths[:, None]


class StepEmbedding(nn.Module):
    """ Diffusion-step embedding: half `sin` / half `cos` features through a small MLP """

    def __init__(self, channels: int):
        super().__init__()
        self.channels = channels
        self.mlp = nn.Sequential(
            nn.Linear(channels, channels * 4),
            nn.Mish(),
            nn.Linear(channels * 4, channels),
        )

    def forward(self, step: torch.Tensor) -> torch.Tensor:
        half = self.channels // 2
        scale = math.log(10000.0) / max(half - 1, 1)
        freq = torch.exp(torch.arange(half, device=step.device, dtype=torch.float32) * -scale)
        args = step.float()[:, None] * freq[None, :]
        features = torch.cat([args.sin(), args.cos()], dim=-1).to(self.mlp[0].weight.dtype)
        return self.mlp(features)




class FFTBlock(nn.Module):
    """
    Feed-forward transformer block (post-norm)
    - Multi-head self attention, then `Conv1d(kernel) -> ReLU -> Conv1d(1)`
    - Padded positions are zeroed before every convolution and at the output
    """

    def __init__(
        self,
        hidden: int = 256,
        heads: int = 2,
        filterSize: int = 1024,
        kernelSize: int = 9,
        dropout: float = 0.1
    ):
        super().__init__()
        self.attention = nn.MultiheadAttention(hidden, heads, dropout=dropout, batch_first=True)
        self.attentionNorm = nn.LayerNorm(hidden)
        self.conv1 = nn.Conv1d(hidden, filterSize, kernelSize, padding=kernelSize // 2)
        self.conv2 = nn.Conv1d(filterSize, hidden, 1)
        self.ffnNorm = nn.LayerNorm(hidden)
        self.dropout = nn.Dropout(dropout)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        """ `x`: `[B, T, C]`, `mask`: `[B, T]` bool (valid positions) """
        keep = mask[..., None].to(x.dtype)
        attended, _ = self.attention(x, x, x, key_padding_mask=~mask, need_weights=False)
        x = self.attentionNorm(x + self.dropout(attended)) * keep

        y = self.conv1(x.transpose(1, 2))
        y = F.relu(y) * keep.transpose(1, 2)
        y = self.conv2(self.dropout(y)).transpose(1, 2)
        return self.ffnNorm(x + self.dropout(y)) * keep




class ResidualLayer(nn.Module):
    """ One gated residual layer: dilated conv on `x + step`, plus a 1x1 conditioner """

    def __init__(self, residualChannels: int, conditionChannels: int, dilation: int, kernelSize: int = 3):
        super().__init__()
        self.residualChannels = residualChannels
        self.dilatedConv = nn.Conv1d(
            residualChannels, 2 * residualChannels, kernelSize,
            padding=dilation * (kernelSize - 1) // 2,
            dilation=dilation
        )
        self.stepProjection = nn.Linear(residualChannels, residualChannels)
        self.conditionProjection = nn.Conv1d(conditionChannels, 2 * residualChannels, 1)
        self.outputProjection = nn.Conv1d(residualChannels, 2 * residualChannels, 1)

    def forward(
        self,
        x: torch.Tensor,
        condition: torch.Tensor,
        step: torch.Tensor
    ) -> tuple[torch.Tensor, torch.Tensor]:
        y = self.dilatedConv(x + self.stepProjection(step)[..., None]) + self.conditionProjection(condition)
        gate, filt = torch.split(y, [self.residualChannels, self.residualChannels], dim=1)
        y = self.outputProjection(torch.sigmoid(gate) * torch.tanh(filt))
        residual, skip = torch.split(y, [self.residualChannels, self.residualChannels], dim=1)
        return (x + residual) / math.sqrt(2.0), skip


class WaveNetStack(nn.Module):
    """
    Non-causal dilated residual stack
    - Dilations `1, 2, .., 2^(dilationCycle-1)`, repeated over `numLayers`
    - `forward(x [B, inChannels, T], condition [B, conditionChannels, T], step [B])`
      returns `[B, residualChannels, T]` features (sum of skips, 1x1 projected)
    """

    def __init__(
        self,
        inChannels: int,
        conditionChannels: int,
        residualChannels: int = 256,
        numLayers: int = 20,
        dilationCycle: int = 4,
        kernelSize: int = 3
    ):
        super().__init__()
        self.dilations = [2 ** (i % dilationCycle) for i in range(numLayers)]
        self.kernelSize = kernelSize
        self.inputProjection = nn.Conv1d(inChannels, residualChannels, 1)
        self.stepEmbedding = StepEmbedding(residualChannels)
        self.layers = nn.ModuleList([
            ResidualLayer(residualChannels, conditionChannels, d, kernelSize) for d in self.dilations
        ])
        self.skipProjection = nn.Conv1d(residualChannels, residualChannels, 1)

    @property
    def conditionRadius(self) -> int:
        """ Frames a condition change at frame `j` can reach on either side of `j` """
        return sum(d * (self.kernelSize - 1) // 2 for d in self.dilations[1:])

    @property
    def inputRadius(self) -> int:
        return sum(d * (self.kernelSize - 1) // 2 for d in self.dilations)

    def forward(
        self,
        x: torch.Tensor,
        condition: torch.Tensor,
        step: torch.Tensor,
        mask: torch.Tensor | None = None
    ) -> torch.Tensor:
        """ `mask`: `[B, T]` bool, padded frames are zeroed between layers """
        keep = None if mask is None else mask[:, None, :].to(x.dtype)
        x = F.relu(self.inputProjection(x))
        stepFeatures = self.stepEmbedding(step)
        skips = 0
        for layer in self.layers:
            if keep is not None:
                x = x * keep
            x, skip = layer(x, condition, stepFeatures)
            skips = skips + skip
        out = F.relu(self.skipProjection(skips / math.sqrt(len(self.layers))))
        return out if keep is None else out * keep
