import math

import pytest
import torch

from unrain.streaks import (
    compose_fake_rainy,
    extract_streaks,
    rain_guidance_discriminator_loss,
    rain_guidance_generator_loss,
)


def softplus(x):
    return math.log1p(math.exp(-abs(x))) + max(x, 0.0)


def test_extract_is_plain_difference_unclamped():
    r = torch.tensor([[[0.2, 0.5, 0.9]]])
    c = torch.tensor([[[0.4, 0.5, 0.1]]])
    s = extract_streaks(r, c)
    assert torch.allclose(s, torch.tensor([[[-0.2, 0.0, 0.8]]]), atol=1e-7)


def test_compose_clamps_to_unit_range():
    s = torch.tensor([[[0.5, -0.3, 0.9]]])
    c = torch.tensor([[[0.8, 0.1, 0.05]]])
    out = compose_fake_rainy(s, c)
    assert torch.allclose(out, torch.tensor([[[1.0, 0.0, 0.95]]]), atol=1e-7)


def test_extract_compose_roundtrip():
    torch.manual_seed(0)
    r = torch.rand(2, 12, 12, 3)
    c_hat = torch.rand(2, 12, 12, 3)
    rebuilt = compose_fake_rainy(extract_streaks(r, c_hat), c_hat)
    assert (rebuilt - r).abs().max().item() < 1e-6


def test_compose_extract_roundtrip_when_unclamped():
    torch.manual_seed(1)
    s = 0.4 * torch.rand(10, 10, 3)       # s in [0, 0.4]
    c = 0.5 * torch.rand(10, 10, 3)       # s + c <= 0.9, clamp inactive
    back = extract_streaks(compose_fake_rainy(s, c), c)
    assert (back - s).abs().max().item() < 1e-6


def test_shape_mismatch_raises():
    with pytest.raises(ValueError):
        extract_streaks(torch.rand(4, 4, 3), torch.rand(4, 5, 3))
    with pytest.raises(ValueError):
        compose_fake_rainy(torch.rand(4, 4, 3), torch.rand(5, 4, 3))
    with pytest.raises(ValueError):
        rain_guidance_discriminator_loss(torch.zeros(1, 4, 4, 1), torch.zeros(1, 3, 3, 1))


def test_discriminator_loss_at_zero_logits_is_two_log_two():
    z = torch.zeros(1, 4, 4, 1)
    loss = rain_guidance_discriminator_loss(z, z)
    assert math.isclose(loss.item(), 2.0 * math.log(2.0), rel_tol=1e-6)


def test_discriminator_loss_known_values():
    real = torch.full((1, 4, 4, 1), 1.0)
    fake = torch.full((1, 4, 4, 1), -1.0)
    # confident-correct discriminator: softplus(-1) on both terms
    expected = 2.0 * softplus(-1.0)
    assert math.isclose(
        rain_guidance_discriminator_loss(real, fake).item(), expected, rel_tol=1e-6
    )
    # confidently wrong: softplus(1) twice
    expected_bad = 2.0 * softplus(1.0)
    assert math.isclose(
        rain_guidance_discriminator_loss(fake, real).item(), expected_bad, rel_tol=1e-6
    )


def test_generator_loss_values_and_monotonicity():
    z = torch.zeros(2, 4, 4, 1)
    assert math.isclose(rain_guidance_generator_loss(z).item(), math.log(2.0), rel_tol=1e-6)
    assert math.isclose(
        rain_guidance_generator_loss(torch.full((1, 1, 1, 1), 3.0)).item(),
        softplus(-3.0),
        rel_tol=1e-6,
    )
    lo = rain_guidance_generator_loss(torch.full((4,), 2.0))
    hi = rain_guidance_generator_loss(torch.full((4,), -2.0))
    assert lo.item() < hi.item()  # better fooling -> lower loss


def test_losses_reject_non_finite_logits():
    bad = torch.tensor([[float("nan")]])
    good = torch.tensor([[0.0]])
    with pytest.raises(ValueError, match="non-finite"):
        rain_guidance_discriminator_loss(bad, good)
    with pytest.raises(ValueError, match="non-finite"):
        rain_guidance_discriminator_loss(good, torch.tensor([[float("inf")]]))
    with pytest.raises(ValueError, match="non-finite"):
        rain_guidance_generator_loss(bad)


def test_losses_stable_at_extreme_logits():
    # naive log-sigmoid would overflow; softplus formulation must not
    big = torch.full((1, 4, 4, 1), 80.0)
    loss = rain_guidance_discriminator_loss(big, -big)
    assert torch.isfinite(loss)
    assert loss.item() < 1e-30
    g = rain_guidance_generator_loss(-big)
    assert torch.isfinite(g) and g.item() == pytest.approx(80.0, rel=1e-6)
