"""Image tensor basics: value-range discipline, luminance, L1 distance.

All functions are pure and dtype/device preserving. Images are channels-last
float tensors, (..., H, W, 3), nominal value range [0, 1].
"""

import torch

# Rec. 601 luma weights, fixed project-wide.
LUMA_WEIGHTS = (0.299, 0.587, 0.114)


def require_same_shape(a: torch.Tensor, b: torch.Tensor, op: str) -> None:
    """Raise if two tensors disagree in shape, naming both shapes."""
    if a.shape != b.shape:
        raise ValueError(
            f"{op}: shape mismatch {tuple(a.shape)} vs {tuple(b.shape)}"
        )


def clamp01(x: torch.Tensor) -> torch.Tensor:
    """Clamp every element to [0, 1]."""
    return torch.clamp(x, 0.0, 1.0)


def to_luminance(x: torch.Tensor) -> torch.Tensor:
    """Rec. 601 luminance of an (..., H, W, 3) image, shape (..., H, W)."""
    w = torch.tensor(LUMA_WEIGHTS, dtype=x.dtype, device=x.device)
    return (x * w).sum(dim=-1)


def mean_abs_diff(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean |a - b| over all elements (scalar tensor, differentiable)."""
    require_same_shape(a, b, "mean_abs_diff")
    return (a - b).abs().mean()
