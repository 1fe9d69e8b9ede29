"""Brightened-clean negatives for the clean-image discriminator.

Derained outputs tend to come out too bright; feeding the discriminator
luminance-enhanced copies of the clean set as an extra negative class keeps
the generator from drifting toward over-bright results.
"""

from dataclasses import dataclass, field
from typing import Dict, Hashable, Optional

import torch
import torch.nn.functional as F

from .streaks import _require_finite_logits


def enhance_luminance(c: torch.Tensor, gamma: float = 0.6) -> torch.Tensor:
    """Per-channel power law v -> v**gamma, gamma in (0, 1).

    Strictly brightens every pixel with value in (0, 1); 0 and 1 are fixed
    points. Input is expected in [0, 1].
    """
    if not 0.0 < gamma < 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma}")
    return c ** gamma


@dataclass
class NegativeSampleSet:
    """Negative-sample source: brightened copies of clean images.

    `source` is whatever the caller samples clean batches from; it is kept
    only as a reference. With cache_policy="precomputed", enhanced batches
    are memoised by key; the default enhances on the fly.
    """

    source: Optional[object] = None
    gamma: float = 0.6
    cache_policy: str = "on-the-fly"
    _cache: Dict[Hashable, torch.Tensor] = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.cache_policy not in ("on-the-fly", "precomputed"):
            raise ValueError(f"unknown cache_policy {self.cache_policy!r}")
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")

    def negatives_for(self, c: torch.Tensor, key: Hashable = None) -> torch.Tensor:
        """Enhanced counterpart of a clean batch."""
        if self.cache_policy == "precomputed" and key is not None:
            if key not in self._cache:
                self._cache[key] = enhance_luminance(c, self.gamma)
            return self._cache[key]
        return enhance_luminance(c, self.gamma)


def lum_adv_discriminator_loss(
    clean_logits: torch.Tensor,
    enhanced_logits: torch.Tensor,
    derained_logits: torch.Tensor,
) -> torch.Tensor:
    """Three-class stable BCE for the clean discriminator.

    Clean images are the only positive class; brightened clean images and
    derained outputs are both negatives.
    """
    _require_finite_logits(
        "lum_adv_discriminator_loss", clean_logits, enhanced_logits, derained_logits
    )
    if not clean_logits.shape == enhanced_logits.shape == derained_logits.shape:
        raise ValueError(
            "lum_adv_discriminator_loss: logit shapes differ: "
            f"{tuple(clean_logits.shape)}, {tuple(enhanced_logits.shape)}, "
            f"{tuple(derained_logits.shape)}"
        )
    return (
        F.softplus(-clean_logits)
        + F.softplus(enhanced_logits)
        + F.softplus(derained_logits)
    ).mean()


def lum_adv_generator_loss(derained_logits: torch.Tensor) -> torch.Tensor:
    """Non-saturating generator loss against the clean discriminator."""
    _require_finite_logits("lum_adv_generator_loss", derained_logits)
    return F.softplus(-derained_logits).mean()
