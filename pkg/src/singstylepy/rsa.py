"""
This module contains the residual style adaptor

- `ConvEncoder`: reference mel + F0 -> frame features, time downsampled by 4
- `ResidualQuantizer`: residual quantisation bottleneck with EMA codebooks
- `AlignAttention`: aligns the quantised reference style to the content frames
"""
import math
from dataclasses import dataclass

import torch
from torch import nn
import torch.nn.functional as F

from .exceptions import ShapeError
from .layers import sinusoidal_encoding


STRIDES = (1, 2, 1, 2, 1)




class ConvEncoder(nn.Module):
    """
    `[mel || conv1x1(f0 features)]` through strided convolutions (`Conv1d -> ReLU -> LayerNorm`)
    - `f0 features`: `[B, T, 2]` (standardised voiced-interpolated log2 F0, voiced flag)
    - Output length `ceil(T / 4)` with the default strides
    """

    def __init__(
        self,
        hidden: int = 256,
        numLayers: int = 5,
        melBins: int = 80,
        f0Channels: int = 64,
        kernelSize: int = 5
    ):
        super().__init__()
        strides = [STRIDES[i] if i < len(STRIDES) else 1 for i in range(numLayers)]
        self.strides = strides
        self.f0Embedding = nn.Conv1d(2, f0Channels, 1)
        self.convs = nn.ModuleList([
            nn.Conv1d(melBins + f0Channels if i == 0 else hidden, hidden, kernelSize, stride=s, padding=kernelSize // 2)
            for i, s in enumerate(strides)
        ])
        self.norms = nn.ModuleList([nn.LayerNorm(hidden) for _ in strides])

    def output_lengths(self, lengths: torch.Tensor) -> torch.Tensor:
        for s in self.strides:
            lengths = torch.div(lengths + s - 1, s, rounding_mode='floor')
        return lengths

    def forward(
        self,
        mel: torch.Tensor,
        f0Features: torch.Tensor,
        lengths: torch.Tensor | None = None
    ) -> tuple[torch.Tensor, torch.Tensor]:
        """ `mel [B, T, 80]`, `f0Features [B, T, 2]` -> (`E [B, T', hidden]`, lengths `[B]`) """
        if mel.shape[:2] != f0Features.shape[:2]:
            raise ShapeError(f'Mel frames {tuple(mel.shape[:2])} != f0 frames {tuple(f0Features.shape[:2])}')
        if lengths is None:
            lengths = torch.full((mel.shape[0],), mel.shape[1], device=mel.device, dtype=torch.long)
        x = torch.cat([mel.transpose(1, 2), self.f0Embedding(f0Features.transpose(1, 2))], dim=1)
        currentLengths = lengths
        for s, conv, norm in zip(self.strides, self.convs, self.norms):
            x = x * _time_mask(currentLengths, x.shape[2])[:, None, :].to(x.dtype)
            x = norm(F.relu(conv(x)).transpose(1, 2)).transpose(1, 2)
            currentLengths = torch.div(currentLengths + s - 1, s, rounding_mode='floor')
        x = x * _time_mask(currentLengths, x.shape[2])[:, None, :].to(x.dtype)
        return x.transpose(1, 2), currentLengths

    def conv_encode(self, mel: torch.Tensor, f0Features: torch.Tensor) -> torch.Tensor:
        """ `[ceil(T/4), hidden]` encoding of one reference """
        return self(mel[None], f0Features[None])[0][0]


def _time_mask(lengths: torch.Tensor, size: int) -> torch.Tensor:
    return torch.arange(size, device=lengths.device)[None, :] < lengths[:, None]




## ----------------------- Residual quantisation ----------------------- ##
@dataclass
class RQResult:
    """
    - `codes`: `[N, ...]` chosen code per depth
    - `partials`: `[N, ..., D]`, `partials[n-1]` is the sum of the first `n` chosen codewords
    - `residuals`: `[N, ..., D]`, `residuals[n-1] = E - partials[n-1]`
    """

    codes: torch.Tensor
    partials: torch.Tensor
    residuals: torch.Tensor

    @property
    def quantized(self) -> torch.Tensor:
        return self.partials[-1]

    @property
    def depth(self) -> int:
        return self.codes.shape[0]


@torch.no_grad()
def rq_quantize(E: torch.Tensor, codebooks: torch.Tensor) -> RQResult:
    """
    Greedy residual quantisation of `E [..., D]` with `codebooks [N, K, D]`
    - Depth `i` picks the code nearest (L2) to the residual left by depths `< i`,
      ties go to the lowest index
    """
    if E.shape[-1] != codebooks.shape[-1]:
        raise ShapeError(f'Embedding dim {E.shape[-1]} != codebook dim {codebooks.shape[-1]}')
    flat = E.detach().reshape(-1, E.shape[-1]).to(codebooks.dtype)
    residual = flat
    partial = torch.zeros_like(flat)
    codes, partials, residuals = [], [], []
    for codebook in codebooks:
        distances = torch.cdist(residual, codebook, compute_mode='donot_use_mm_for_euclid_dist')
        idx = torch.argmin(distances, dim=-1)
        partial = partial + codebook[idx]
        residual = flat - partial
        codes.append(idx)
        partials.append(partial)
        residuals.append(residual)
    shape = E.shape[:-1]
    return RQResult(
        codes=torch.stack(codes).reshape(len(codebooks), *shape),
        partials=torch.stack(partials).reshape(len(codebooks), *E.shape).to(E.dtype),
        residuals=torch.stack(residuals).reshape(len(codebooks), *E.shape).to(E.dtype),
    )


def commitment_loss(
    E: torch.Tensor,
    result: RQResult,
    reduction: str = 'sum',
    mask: torch.Tensor | None = None
) -> torch.Tensor:
    """
    `sum_n ||E - sg[partial_n]||^2` over depths, positions and dims
    - `reduction='mean'` divides by the number of (valid) elements of `E`
    - `mask`: `[...]` positions of `E` that count
    """
    squared = (E[None] - result.partials.detach()) ** 2
    if mask is not None:
        squared = squared * mask[None, ..., None].to(squared.dtype)
    total = squared.sum()
    if reduction == 'sum':
        return total
    if reduction == 'mean':
        count = E.numel() if mask is None else mask.sum() * E.shape[-1]
        return total / max(float(count), 1.0)
    raise ValueError(f'Unknown reduction: {reduction}')


def straight_through(E: torch.Tensor, result: RQResult) -> torch.Tensor:
    """ Quantised output with the gradient of the identity: `E + sg[quantized - E]` """
    return E + (result.quantized - E).detach()


def code_usage_entropy(codes: torch.Tensor, codebookSize: int) -> float:
    """ Entropy (nats) of the code histogram of `codes` """
    counts = torch.bincount(codes.flatten(), minlength=codebookSize).double()
    probs = counts / counts.sum()
    return float(-(torch.special.xlogy(probs, probs)).sum())


class ResidualQuantizer(nn.Module):
    """
    `depth` codebooks of `codebookSize` codes, learned by EMA k-means

    - `clusterSize`/`embedSum` hold the EMA statistics, a code is the ratio of the two
      once it has been assigned
    - Codes unused for `staleSteps` updates are re-seeded from residuals of the batch
    """

    def __init__(
        self,
        dim: int = 256,
        codebookSize: int = 128,
        depth: int = 4,
        decay: float = 0.99,
        staleSteps: int = 100
    ):
        super().__init__()
        self.decay = decay
        self.staleSteps = staleSteps
        self.register_buffer('codebooks', torch.randn(depth, codebookSize, dim) / math.sqrt(dim))
        self.register_buffer('clusterSize', torch.zeros(depth, codebookSize))
        self.register_buffer('embedSum', torch.zeros(depth, codebookSize, dim))
        self.register_buffer('staleCounter', torch.zeros(depth, codebookSize, dtype=torch.long))

    @property
    def depth(self) -> int:
        return self.codebooks.shape[0]

    @property
    def codebookSize(self) -> int:
        return self.codebooks.shape[1]

    def quantize(self, E: torch.Tensor) -> RQResult:
        return rq_quantize(E, self.codebooks)

    @torch.no_grad()
    def codebook_update(
        self,
        result: RQResult,
        E: torch.Tensor,
        mask: torch.Tensor | None = None,
        decay: float | None = None,
        generator: torch.Generator | None = None
    ):
        """
        EMA update of every depth from the residual each code was assigned
        - Depth `i` uses `E - partial_{i-1}` (`E` itself at depth 1)
        - `mask`: positions of `E` that take part; nothing changes if none does
        """
        decay = self.decay if decay is None else decay
        dim = E.shape[-1]
        vectors = E.detach().reshape(-1, dim).to(self.codebooks.dtype)
        keep = torch.ones(vectors.shape[0], dtype=torch.bool, device=vectors.device) if mask is None \
            else mask.reshape(-1).to(torch.bool)
        if not keep.any():
            return
        vectors = vectors[keep]

        partials = result.partials.reshape(self.depth, -1, dim)[:, keep].to(self.codebooks.dtype)
        codes = result.codes.reshape(self.depth, -1)[:, keep]
        for i in range(self.depth):
            target = vectors if i == 0 else vectors - partials[i - 1]
            oneHot = F.one_hot(codes[i], self.codebookSize).to(target.dtype)
            counts = oneHot.sum(0)
            sums = oneHot.T @ target

            self.clusterSize[i].mul_(decay).add_(counts, alpha=1 - decay)
            self.embedSum[i].mul_(decay).add_(sums, alpha=1 - decay)
            used = self.clusterSize[i] > 1e-12
            self.codebooks[i][used] = self.embedSum[i][used] / self.clusterSize[i][used][:, None]

            # Stale codes
            self.staleCounter[i] = torch.where(counts > 0, torch.zeros_like(self.staleCounter[i]), self.staleCounter[i] + 1)
            stale = self.staleCounter[i] >= self.staleSteps
            numStale = int(stale.sum())
            if numStale:
                picks = torch.randint(0, target.shape[0], (numStale,), generator=generator, device=target.device)
                self.codebooks[i][stale] = target[picks]
                self.clusterSize[i][stale] = 0.0
                self.embedSum[i][stale] = 0.0
                self.staleCounter[i][stale] = 0

    def forward(
        self,
        E: torch.Tensor,
        mask: torch.Tensor | None = None,
        generator: torch.Generator | None = None
    ) -> tuple[torch.Tensor, RQResult, torch.Tensor]:
        """
        Returns `(straight-through quantised E, RQResult, mean commitment loss)`
        - Codebooks are updated in training mode only
        """
        result = self.quantize(E)
        loss = commitment_loss(E, result, reduction='mean', mask=mask)
        if self.training:
            self.codebook_update(result, E, mask=mask, generator=generator)
        return straight_through(E, result), result, loss




## ----------------------- Alignment ----------------------- ##
def scaled_dot_attention(
    query: torch.Tensor,
    key: torch.Tensor,
    value: torch.Tensor,
    keyMask: torch.Tensor | None = None
) -> tuple[torch.Tensor, torch.Tensor]:
    """
    `softmax(Q K^T / sqrt(d)) V`
    - `query [.., T, d]`, `key`/`value` `[.., T_ref, d]`, `keyMask [.., T_ref]` (True = valid)
    - Returns `(output, weights)`
    """
    if key.shape[-2] == 0:
        raise ShapeError('Empty reference, nothing to attend to')
    scores = query @ key.transpose(-1, -2) / math.sqrt(query.shape[-1])
    if keyMask is not None:
        scores = scores.masked_fill(~keyMask[..., None, :], float('-inf'))
    weights = torch.softmax(scores, dim=-1)
    return weights @ value, weights


class AlignAttention(nn.Module):
    """
    Stacked multi-head cross attention, content frames querying the detailed style
    - Sinusoidal positions are added to the style sequence first (`usePositionalEncoding`)
    - Layer `i + 1` queries with the output of layer `i`
    """

    def __init__(self, hidden: int = 256, numLayers: int = 2, heads: int = 2, usePositionalEncoding: bool = True):
        super().__init__()
        self.hidden = hidden
        self.usePositionalEncoding = usePositionalEncoding
        self.layers = nn.ModuleList([
            nn.MultiheadAttention(hidden, heads, batch_first=True) for _ in range(numLayers)
        ])

    def forward(
        self,
        content: torch.Tensor,
        detail: torch.Tensor,
        detailMask: torch.Tensor | None = None
    ) -> torch.Tensor:
        """ `content [B, T, C]`, `detail [B, T_ref, C]` -> `[B, T, C]` """
        if detail.shape[1] == 0 or (detailMask is not None and (detailMask.sum(1) == 0).any()):
            raise ShapeError('Empty reference, nothing to attend to')
        if self.usePositionalEncoding:
            detail = detail + sinusoidal_encoding(detail.shape[1], self.hidden, detail.device, detail.dtype)[None]
        keyPadding = None if detailMask is None else ~detailMask
        x = content
        for layer in self.layers:
            x, _ = layer(x, detail, detail, key_padding_mask=keyPadding, need_weights=False)
        return x

    def align_attention(self, content: torch.Tensor, detail: torch.Tensor) -> torch.Tensor:
        """ `[T, C]` aligned detail for one sequence """
        return self(content[None], detail[None])[0]


def style_specific_rep(
    content: torch.Tensor,
    alignedDetail: torch.Tensor,
    timbre: torch.Tensor,
    emotion: torch.Tensor
) -> torch.Tensor:
    """ `E_s = E_c + aligned detail + E_t + E_e` (`E_t`/`E_e` broadcast over frames) """
    if content.shape != alignedDetail.shape:
        raise ShapeError(f'Content {tuple(content.shape)} != aligned detail {tuple(alignedDetail.shape)}')
    if timbre.shape[-1] != content.shape[-1] or emotion.shape[-1] != content.shape[-1]:
        raise ShapeError('Timbre/emotion embeddings must match the content width')
    return content + alignedDetail + timbre.unsqueeze(-2) + emotion.unsqueeze(-2)
