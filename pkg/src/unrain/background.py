"""Background-consistency machinery.

A rainy image and its derained counterpart share low-pass content: streaks
are high-frequency, so after enough Gaussian blur the two images have nearly
identical spatial gradients. `background_guidance_loss` penalises the mean
absolute difference of blurred gradients over a ladder of blur scales,
weighting coarse scales the most.
"""

import math
from dataclasses import dataclass
from typing import NamedTuple, Sequence, Tuple

import torch
import torch.nn.functional as F

from .imageops import require_same_shape

DEFAULT_SCALES: Tuple[Tuple[float, float], ...] = ((3.0, 0.01), (5.0, 0.1), (9.0, 1.0))


@dataclass(frozen=True)
class GaussianScaleConfig:
    """Ordered (sigma, weight) ladder; sigmas strictly increasing."""

    scales: Tuple[Tuple[float, float], ...] = DEFAULT_SCALES

    def __post_init__(self):
        if len(self.scales) == 0:
            raise ValueError("GaussianScaleConfig requires at least one scale")
        sigmas = [s for s, _ in self.scales]
        if any(s <= 0 for s in sigmas):
            raise ValueError(f"sigmas must be positive, got {sigmas}")
        if any(w <= 0 for _, w in self.scales):
            raise ValueError("scale weights must be positive")
        if any(b <= a for a, b in zip(sigmas, sigmas[1:])):
            raise ValueError(f"sigmas must be strictly increasing, got {sigmas}")

    @property
    def sigmas(self) -> Tuple[float, ...]:
        return tuple(s for s, _ in self.scales)


class GradientField(NamedTuple):
    """Per-axis central-difference gradients, same shape as the source."""

    gx: torch.Tensor  # along width
    gy: torch.Tensor  # along height


def gaussian_kernel_1d(sigma: float) -> torch.Tensor:
    """Normalized 1-D Gaussian of length 2*ceil(3*sigma)+1 (float64)."""
    if sigma <= 0:
        raise ValueError(f"sigma must be positive, got {sigma}")
    radius = math.ceil(3.0 * sigma)
    x = torch.arange(-radius, radius + 1, dtype=torch.float64)
    w = torch.exp(-(x * x) / (2.0 * sigma * sigma))
    return w / w.sum()


def _reflect_indices(n: int, pad: int) -> torch.Tensor:
    """Mirror-reflect index map (edge not repeated) for arbitrary pad width."""
    if n == 1:
        return torch.zeros(1 + 2 * pad, dtype=torch.long)
    idx = torch.arange(-pad, n + pad) % (2 * (n - 1))
    return torch.where(idx < n, idx, 2 * (n - 1) - idx)


def _blur_along(x: torch.Tensor, kernel: torch.Tensor, dim: int) -> torch.Tensor:
    n = x.shape[dim]
    pad = (kernel.numel() - 1) // 2
    idx = _reflect_indices(n, pad).to(x.device)
    xp = x.index_select(dim, idx).movedim(dim, -1)
    lead = xp.shape[:-1]
    out = F.conv1d(xp.reshape(-1, 1, xp.shape[-1]), kernel.view(1, 1, -1))
    return out.reshape(*lead, n).movedim(-1, dim)


def gaussian_blur(x: torch.Tensor, sigma: float) -> torch.Tensor:
    """Separable Gaussian blur of an (..., H, W, C) image, reflect padding.

    Horizontal pass first, then vertical; channels are filtered independently.
    Constant images are fixed points.
    """
    kernel = gaussian_kernel_1d(sigma).to(dtype=x.dtype, device=x.device)
    x = _blur_along(x, kernel, dim=-2)  # width
    x = _blur_along(x, kernel, dim=-3)  # height
    return x


def _central_diff(x: torch.Tensor, dim: int) -> torch.Tensor:
    # replicate the boundary sample, then (x[i+1] - x[i-1]) / 2 everywhere
    first = x.narrow(dim, 0, 1)
    last = x.narrow(dim, x.shape[dim] - 1, 1)
    xp = torch.cat([first, x, last], dim=dim)
    hi = xp.narrow(dim, 2, x.shape[dim])
    lo = xp.narrow(dim, 0, x.shape[dim])
    return (hi - lo) / 2.0


def spatial_gradient(x: torch.Tensor) -> GradientField:
    """Central-difference gradients of an (..., H, W, C) image.

    Boundary samples are replicated, so edge gradients are one-sided halves.
    """
    if x.shape[-3] < 3 or x.shape[-2] < 3:
        raise ValueError(f"spatial_gradient needs H,W >= 3, got {tuple(x.shape)}")
    return GradientField(gx=_central_diff(x, dim=-2), gy=_central_diff(x, dim=-3))


def scale_gradient_errors(
    r: torch.Tensor, c_hat: torch.Tensor, cfg: GaussianScaleConfig | None = None
) -> Sequence[torch.Tensor]:
    """Unweighted per-scale mean |grad(blur(r)) - grad(blur(c_hat))|.

    The mean runs over both gradient axes, all pixels and all channels.
    """
    cfg = cfg or GaussianScaleConfig()
    require_same_shape(r, c_hat, "scale_gradient_errors")
    errors = []
    for sigma, _ in cfg.scales:
        gr = spatial_gradient(gaussian_blur(r, sigma))
        gc = spatial_gradient(gaussian_blur(c_hat, sigma))
        err = torch.stack([(gr.gx - gc.gx).abs(), (gr.gy - gc.gy).abs()]).mean()
        errors.append(err)
    return errors


def background_guidance_loss(
    r: torch.Tensor, c_hat: torch.Tensor, cfg: GaussianScaleConfig | None = None
) -> torch.Tensor:
    """Weighted sum of blurred-gradient errors across the scale ladder.

    Differentiable w.r.t. `c_hat`; invariant to constant offsets of either
    input since gradients kill constants.
    """
    cfg = cfg or GaussianScaleConfig()
    errors = scale_gradient_errors(r, c_hat, cfg)
    total = errors[0] * cfg.scales[0][1]
    for (_, lam), err in zip(cfg.scales[1:], errors[1:]):
        total = total + lam * err
    return total
