import math

import pytest
import torch

from singstylepy.exceptions import ShapeError
from singstylepy.rsa import (
    AlignAttention, ConvEncoder, ResidualQuantizer,
    code_usage_entropy, commitment_loss, rq_quantize, scaled_dot_attention, straight_through, style_specific_rep
)


def toy_codebooks() -> torch.Tensor:
    """ 1-dim books `{-1, 1}`, `{-0.5, 0.5}`, then two books whose best code is 0 """
    return torch.tensor([[-1.0, 1.0], [-0.5, 0.5], [0.0, 10.0], [0.0, 10.0]], dtype=torch.float64)[..., None]




## ----------------------- Conv encoder ----------------------- ##
@pytest.mark.parametrize('frames', [1, 4, 5, 13, 64, 101])
def test_conv_encoder_downsamples_by_four(frames):
    encoder = ConvEncoder(hidden=16)
    out = encoder.conv_encode(torch.randn(frames, 80), torch.randn(frames, 2))
    assert out.shape == (math.ceil(frames / 4), 16)
    assert encoder.output_lengths(torch.tensor([frames])).item() == math.ceil(frames / 4)


def test_conv_encoder_checks_frames():
    with pytest.raises(ShapeError):
        ConvEncoder(hidden=16)(torch.randn(1, 10, 80), torch.randn(1, 9, 2))


def test_conv_encoder_zeroes_padding():
    out, lengths = ConvEncoder(hidden=16)(torch.randn(2, 16, 80), torch.randn(2, 16, 2), torch.tensor([16, 6]))
    assert lengths.tolist() == [4, 2]
    assert torch.all(out[1, 2:] == 0)




## ----------------------- Quantisation ----------------------- ##
def test_toy_quantisation():
    result = rq_quantize(torch.tensor([[0.7]], dtype=torch.float64), toy_codebooks())
    assert result.codes[:, 0].tolist() == [1, 0, 0, 0]
    assert result.partials[1, 0, 0].item() == pytest.approx(0.5)
    torch.testing.assert_close(result.residuals[:2, 0, 0], torch.tensor([-0.3, 0.2], dtype=torch.float64))
    assert result.quantized.item() == pytest.approx(0.5)


def test_greedy_matches_per_depth_search():
    torch.manual_seed(3)
    codebooks = torch.randn(4, 16, 4, dtype=torch.float64)
    E = torch.randn(1000, 4, dtype=torch.float64)
    result = rq_quantize(E, codebooks)
    residual = E.clone()
    for depth in range(4):
        distances = ((residual[:, None, :] - codebooks[depth][None]) ** 2).sum(-1)
        best = distances.argmin(-1)
        assert torch.equal(result.codes[depth], best)
        residual = residual - codebooks[depth][best]
    torch.testing.assert_close(result.residuals[-1], residual)


def test_zero_codes_make_residuals_shrink():
    codebooks = torch.randn(4, 8, 3, dtype=torch.float64)
    codebooks[:, 0] = 0.0
    result = rq_quantize(torch.randn(200, 3, dtype=torch.float64), codebooks)
    norms = result.residuals.norm(dim=-1)
    assert torch.all(norms[1:] <= norms[:-1] + 1e-12)


def test_commitment_hand_case():
    E = torch.tensor([[0.7]], dtype=torch.float64, requires_grad=True)
    result = rq_quantize(E, toy_codebooks())
    loss = commitment_loss(E, result)
    assert loss.item() == pytest.approx(0.21, abs=1e-12)
    loss.backward()
    expected = 2 * (0.7 - result.partials[:, 0, 0]).sum()
    assert E.grad.item() == pytest.approx(expected.item(), abs=1e-12)


def test_commitment_mean_and_mask():
    E = torch.randn(2, 5, 3, dtype=torch.float64)
    result = rq_quantize(E, torch.randn(2, 4, 3, dtype=torch.float64))
    total = commitment_loss(E, result)
    assert commitment_loss(E, result, reduction='mean').item() == pytest.approx(total.item() / E.numel())
    mask = torch.zeros(2, 5, dtype=torch.bool)
    mask[0] = True
    firstOnly = commitment_loss(E, result, mask=mask)
    assert firstOnly.item() == pytest.approx(((E[None, 0] - result.partials[:, 0]) ** 2).sum().item())
    with pytest.raises(ValueError):
        commitment_loss(E, result, reduction='max')


def test_straight_through_gradient_is_identity():
    E = torch.randn(3, 4, requires_grad=True)
    out = straight_through(E, rq_quantize(E, torch.randn(2, 8, 4)))
    out.sum().backward()
    torch.testing.assert_close(E.grad, torch.ones(3, 4))


def test_ema_converges_to_assigned_residual():
    quantizer = ResidualQuantizer(dim=2, codebookSize=2, depth=1, decay=0.99, staleSteps=10 ** 6)
    v = torch.tensor([[0.3, -0.8]])
    for _ in range(500):
        quantizer.codebook_update(quantizer.quantize(v), v)
    code = quantizer.quantize(v).codes[0, 0]
    assert (quantizer.codebooks[0, code] - v[0]).norm() < 1e-3


def test_zero_decay_jumps_to_batch_mean():
    quantizer = ResidualQuantizer(dim=2, codebookSize=2, depth=1)
    quantizer.codebooks.copy_(torch.tensor([[[0.0, 0.0], [10.0, 10.0]]]))
    batch = torch.tensor([[1.0, 0.0], [0.0, 1.0], [-1.0, 1.0]])
    quantizer.codebook_update(quantizer.quantize(batch), batch, decay=0.0)
    torch.testing.assert_close(quantizer.codebooks[0, 0], torch.tensor([0.0, 2.0 / 3.0]))
    torch.testing.assert_close(quantizer.codebooks[0, 1], torch.tensor([10.0, 10.0]))


def test_no_assignment_no_change():
    quantizer = ResidualQuantizer(dim=2, codebookSize=4, depth=2)
    before = quantizer.codebooks.clone()
    batch = torch.randn(1, 3, 2)
    quantizer.codebook_update(quantizer.quantize(batch), batch, mask=torch.zeros(1, 3, dtype=torch.bool))
    assert torch.equal(quantizer.codebooks, before)
    assert torch.all(quantizer.clusterSize == 0)


def test_stale_codes_reseeded():
    quantizer = ResidualQuantizer(dim=2, codebookSize=2, depth=1, staleSteps=3)
    quantizer.codebooks.copy_(torch.tensor([[[0.0, 0.0], [100.0, 100.0]]]))
    batch = torch.tensor([[0.5, 0.5]])
    for _ in range(3):
        quantizer.codebook_update(quantizer.quantize(batch), batch)
    torch.testing.assert_close(quantizer.codebooks[0, 1], batch[0])


def test_quantizer_updates_in_training_only():
    quantizer = ResidualQuantizer(dim=4, codebookSize=8, depth=2).eval()
    before = quantizer.codebooks.clone()
    E = torch.randn(2, 6, 4)
    out, result, loss = quantizer(E)
    assert torch.equal(quantizer.codebooks, before)
    assert out.shape == E.shape and result.depth == 2 and loss.dim() == 0
    quantizer.train()(E)
    assert not torch.equal(quantizer.codebooks, before)


def test_code_usage_entropy():
    assert code_usage_entropy(torch.tensor([0, 1, 2, 3]), 8) == pytest.approx(math.log(4))
    assert code_usage_entropy(torch.tensor([5, 5, 5]), 8) == pytest.approx(0.0)




## ----------------------- Alignment ----------------------- ##
def test_attention_hand_case():
    out, weights = scaled_dot_attention(
        torch.tensor([[1.0]]), torch.tensor([[0.0], [math.log(4)]]), torch.tensor([[1.0], [3.0]])
    )
    torch.testing.assert_close(weights, torch.tensor([[0.2, 0.8]]))
    assert out.item() == pytest.approx(2.6, rel=1e-6)


def test_attention_rows_sum_to_one():
    keyMask = torch.tensor([[True, True, False, True]])
    _, weights = scaled_dot_attention(torch.randn(1, 5, 8), torch.randn(1, 4, 8), torch.randn(1, 4, 8), keyMask)
    torch.testing.assert_close(weights.sum(-1), torch.ones(1, 5))
    assert torch.all(weights[..., 2] == 0)


def test_single_reference_frame():
    value = torch.randn(1, 6)
    out, _ = scaled_dot_attention(torch.randn(7, 6), torch.randn(1, 6), value)
    torch.testing.assert_close(out, value.expand(7, 6))
    aligned = AlignAttention(hidden=8, numLayers=1).align_attention(torch.randn(5, 8), torch.randn(1, 8))
    torch.testing.assert_close(aligned, aligned[:1].expand(5, 8))


def test_empty_reference_rejected():
    with pytest.raises(ShapeError):
        scaled_dot_attention(torch.randn(3, 4), torch.zeros(0, 4), torch.zeros(0, 4))
    with pytest.raises(ShapeError):
        AlignAttention(hidden=8).align_attention(torch.randn(3, 8), torch.zeros(0, 8))


def test_align_attention_shape():
    align = AlignAttention(hidden=8, numLayers=2, heads=2)
    mask = torch.tensor([[True] * 6, [True] * 3 + [False] * 3])
    assert align(torch.randn(2, 11, 8), torch.randn(2, 6, 8), mask).shape == (2, 11, 8)


def test_style_specific_rep():
    content = torch.ones(3, 2)
    detail = torch.full((3, 2), 2.0)
    out = style_specific_rep(content, detail, torch.tensor([10.0, 20.0]), torch.tensor([100.0, 200.0]))
    assert out.tolist() == [[113.0, 223.0]] * 3
    with pytest.raises(ShapeError):
        style_specific_rep(content, torch.zeros(2, 2), torch.zeros(2), torch.zeros(2))
