import pytest
import torch

from singstylepy._utils import make_generator
from singstylepy.decoder import (
    ConvMelDecoder, MelDecoder, PitchEmbedding, gaussian_window, mae_loss, ssim, ssim_loss
)
from singstylepy.exceptions import AudioError, NumericalError, ShapeError




## ----------------------- Losses ----------------------- ##
def test_mae_hand_case():
    assert mae_loss(torch.zeros(2, 3, 4), torch.ones(2, 3, 4)).item() == 1.0
    prediction = torch.zeros(1, 2, 4)
    target = torch.stack([torch.ones(4), torch.full((4,), 5.0)])[None]
    assert mae_loss(prediction, target, torch.tensor([[True, False]])).item() == 1.0
    with pytest.raises(ShapeError):
        mae_loss(torch.zeros(2, 3), torch.zeros(3, 2))


def test_gaussian_window_sums_to_one():
    window = gaussian_window(dtype=torch.float64)
    assert window.shape == (11, 11)
    assert window.sum().item() == pytest.approx(1.0, abs=1e-12)


def test_ssim_identity_and_symmetry():
    x, y = torch.rand(20, 16, dtype=torch.float64), torch.rand(20, 16, dtype=torch.float64)
    assert ssim(x, x).item() == pytest.approx(1.0, abs=1e-9)
    assert ssim(x, y).item() == pytest.approx(ssim(y, x).item(), abs=1e-12)
    assert ssim(x, y).item() < 1.0


def test_ssim_constant_images():
    a, b = 0.3, 0.7
    c1 = 0.01 ** 2
    expected = (2 * a * b + c1) / (a ** 2 + b ** 2 + c1)
    value = ssim(torch.full((16, 16), a, dtype=torch.float64), torch.full((16, 16), b, dtype=torch.float64))
    assert value.item() == pytest.approx(expected, abs=1e-9)


def test_ssim_checks_inputs():
    with pytest.raises(AudioError) as info:
        ssim(torch.full((12, 12), 1.5), torch.zeros(12, 12))
    assert info.value.category == 'invalid_audio'
    with pytest.raises(AudioError):
        ssim(torch.zeros(12, 12), torch.full((12, 12), -0.1))
    with pytest.raises(ShapeError):
        ssim(torch.zeros(12, 12), torch.zeros(12, 11))


def test_ssim_loss_per_item_lengths():
    x = torch.rand(2, 20, 16)
    y = x.clone()
    y[1, 12:] = 1.0 - y[1, 12:]
    assert ssim_loss(x, y, torch.tensor([20, 12])).item() == pytest.approx(0.0, abs=1e-5)
    assert ssim_loss(x, y).item() > 1e-3


def test_ssim_gradient():
    x = (0.2 + 0.6 * torch.rand(12, 12, dtype=torch.float64)).requires_grad_()
    y = 0.2 + 0.6 * torch.rand(12, 12, dtype=torch.float64)
    assert torch.autograd.gradcheck(lambda a: ssim(a, y), (x,), eps=1e-6, atol=1e-6, rtol=1e-4)




## ----------------------- Decoders ----------------------- ##
def test_pitch_buckets():
    embedding = PitchEmbedding(8)
    assert embedding.buckets(torch.tensor([-9.0, -4.0, 0.0, 4.0, 9.0])).tolist() == [0, 0, 128, 255, 255]
    assert embedding(torch.zeros(1, 5), torch.ones(1, 5)).shape == (1, 5, 8)


def test_decoder_condition_checks_frames(tiny_config):
    decoder = MelDecoder(tiny_config)
    with pytest.raises(ShapeError):
        decoder.condition(torch.randn(1, 10, 32), torch.zeros(1, 9), torch.zeros(1, 9))


def test_decoder_train_step(tiny_config):
    decoder = MelDecoder(tiny_config)
    melNorm = torch.rand(2, 14, 80)
    mask = torch.ones(2, 14, dtype=torch.bool)
    mask[1, 12:] = False
    condition = decoder.condition(torch.randn(2, 14, 32), torch.randn(2, 14), torch.ones(2, 14))
    mae, ssimLoss = decoder.loss(melNorm, condition, mask, torch.tensor([14, 12]), generator=make_generator(0))
    assert mae.item() >= 0 and 0.0 <= ssimLoss.item() <= 2.0
    (mae + ssimLoss).backward()
    assert decoder.denoiser.output.weight.grad is not None


def test_decoder_infer(tiny_config):
    decoder = MelDecoder(tiny_config).eval()
    condition = torch.randn(1, 11, 32)
    mel = decoder.infer(condition, generator=make_generator(2))
    assert mel.shape == (1, 11, 80)
    assert mel.min() >= 0 and mel.max() <= 1
    assert torch.equal(mel, decoder.infer(condition, generator=make_generator(2)))


def test_decoder_infer_rejects_nan(tiny_config):
    decoder = MelDecoder(tiny_config)
    condition = torch.randn(1, 11, 32)
    condition[0, 5] = float('nan')
    with pytest.raises(NumericalError):
        decoder.infer(condition, generator=make_generator(0))


def test_denoiser_single_sequence(tiny_config):
    denoiser = MelDecoder(tiny_config).denoiser
    assert denoiser.decoder_denoise(torch.randn(9, 80), 2, torch.randn(9, 32)).shape == (9, 80)
    assert denoiser.conditionRadius == denoiser.stack.conditionRadius


def test_conv_decoder(tiny_config):
    decoder = ConvMelDecoder(tiny_config, numLayers=2)
    condition = decoder.condition(torch.randn(2, 10, 32), torch.randn(2, 10), torch.zeros(2, 10))
    mae, ssimLoss = decoder.loss(torch.rand(2, 10, 80), condition)
    assert mae.item() >= 0 and ssimLoss.item() >= 0
    mel = decoder.infer(condition)
    assert mel.shape == (2, 10, 80) and mel.min() >= 0 and mel.max() <= 1
