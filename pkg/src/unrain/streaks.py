"""Removed-streak handling and the rain-side adversarial objectives.

The difference between a rainy input and the derained output is the removed
streak layer. Pasting that layer onto an unpaired clean image must yield
something indistinguishable from a real rainy image; a patch discriminator
on rainy images enforces it.
"""

import torch
import torch.nn.functional as F

from .imageops import clamp01, require_same_shape


def _require_finite_logits(name: str, *logits: torch.Tensor) -> None:
    for t in logits:
        if not torch.isfinite(t).all():
            raise ValueError(f"{name}: non-finite logits")


def extract_streaks(r: torch.Tensor, c_hat: torch.Tensor) -> torch.Tensor:
    """Removed streak layer r - c_hat. Not clamped: gradients must flow."""
    require_same_shape(r, c_hat, "extract_streaks")
    return r - c_hat


def compose_fake_rainy(s: torch.Tensor, c: torch.Tensor) -> torch.Tensor:
    """Superimpose a streak layer on an (unpaired) clean image, clamped to [0,1].

    The clamp's gradient is identity inside [0, 1] and zero outside.
    """
    require_same_shape(s, c, "compose_fake_rainy")
    return clamp01(s + c)


def rain_guidance_discriminator_loss(
    real_logits: torch.Tensor, fake_logits: torch.Tensor
) -> torch.Tensor:
    """Stable patch BCE: real rainy images vs composed fake rainy images.

    mean(-log sigmoid(real) - log(1 - sigmoid(fake))), evaluated in logit
    space via softplus.
    """
    _require_finite_logits("rain_guidance_discriminator_loss", real_logits, fake_logits)
    require_same_shape(real_logits, fake_logits, "rain_guidance_discriminator_loss")
    return (F.softplus(-real_logits) + F.softplus(fake_logits)).mean()


def rain_guidance_generator_loss(fake_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss: mean(-log sigmoid(fake))."""
    _require_finite_logits("rain_guidance_generator_loss", fake_logits)
    return F.softplus(-fake_logits).mean()
