"""Cycle-consistency loss and assembly of the weighted total objective."""

import math
from dataclasses import dataclass, fields

import torch

from .imageops import mean_abs_diff


@dataclass(frozen=True)
class LossWeights:
    """Weights of the four generator-side losses.

    w1: rain guidance, w2: background guidance, w3: luminance adversarial,
    w4: cycle consistency. Ablations zero individual weights.
    """

    w1: float = 1.0
    w2: float = 5.0
    w3: float = 1.0
    w4: float = 0.5

    def __post_init__(self):
        for f in fields(self):
            v = getattr(self, f.name)
            if not (math.isfinite(v) and v >= 0):
                raise ValueError(f"{f.name} must be a finite weight >= 0, got {v}")

    def with_ablations(
        self, no_rgm: bool = False, no_bgm: bool = False, no_lum: bool = False
    ) -> "LossWeights":
        return LossWeights(
            w1=0.0 if no_rgm else self.w1,
            w2=0.0 if no_bgm else self.w2,
            w3=0.0 if no_lum else self.w3,
            w4=self.w4,
        )


@dataclass
class LossBundle:
    """Per-iteration named loss values (generator components + totals)."""

    guid_r: float
    guid_b: float
    lum_adv_g: float
    cyc: float
    total_g: float
    d_c: float
    d_s: float

    CSV_FIELDS = ("iteration", "guid_r", "guid_b", "lum_adv_g", "cyc", "total_g", "d_c", "d_s")

    def csv_row(self, iteration: int) -> str:
        vals = [self.guid_r, self.guid_b, self.lum_adv_g, self.cyc, self.total_g, self.d_c, self.d_s]
        return ",".join([str(iteration)] + [f"{v:.8g}" for v in vals])


def cycle_loss(r: torch.Tensor, r_prime: torch.Tensor) -> torch.Tensor:
    """Mean L1 between a rainy input and its re-rained reconstruction."""
    return mean_abs_diff(r_prime, r)


def total_generator_loss(guid_r, guid_b, lum_adv, cyc, weights: LossWeights):
    """Exact weighted sum w1*guid_r + w2*guid_b + w3*lum_adv + w4*cyc.

    Accepts scalars or 0-dim tensors; raises on any non-finite component,
    naming it.
    """
    parts = {"guid_r": guid_r, "guid_b": guid_b, "lum_adv": lum_adv, "cyc": cyc}
    for name, v in parts.items():
        val = float(v.detach()) if torch.is_tensor(v) else float(v)
        if not math.isfinite(val):
            raise ValueError(f"total_generator_loss: component {name} is non-finite ({val})")
    return (
        weights.w1 * guid_r
        + weights.w2 * guid_b
        + weights.w3 * lum_adv
        + weights.w4 * cyc
    )
