"""Trainable networks: deraining/re-raining generators and patch discriminators.

Residual encoder-decoder generators (two stride-2 downsamplings, N residual
blocks, two upsamplings, tanh rescaled to [0,1]) and 4-layer stride-2 patch
discriminators emitting raw logit maps. The re-raining generator is built
deliberately small: half the base width and far fewer residual blocks, since
it only has to re-add streaks.

All modules take channels-last images (B, H, W, 3) in [0, 1]; discriminators
return (B, H/2^L, W/2^L, 1) logit maps.
"""

import math
from dataclasses import dataclass

import torch
from torch import nn

ARCH_VERSION = "resenc-v1"


@dataclass(frozen=True)
class NetworkConfig:
    base_channels: int = 64
    num_resblocks_gc: int = 9
    num_resblocks_gr: int = 2
    disc_layers: int = 4
    instance_norm: bool = True

    def __post_init__(self):
        for name in ("base_channels", "num_resblocks_gc", "num_resblocks_gr", "disc_layers"):
            v = getattr(self, name)
            if not (isinstance(v, int) and v > 0):
                raise ValueError(f"NetworkConfig.{name} must be a positive int, got {v}")
        if self.base_channels < 4:
            raise ValueError("base_channels must be >= 4")

    @classmethod
    def for_size(cls, train_size: int, **kwargs) -> "NetworkConfig":
        """Default config for a training resolution: 9 resblocks at 256px+, 6 below."""
        kwargs.setdefault("num_resblocks_gc", 9 if train_size >= 256 else 6)
        return cls(**kwargs)


def _norm(channels: int, enabled: bool) -> nn.Module:
    return nn.InstanceNorm2d(channels) if enabled else nn.Identity()


class ResidualBlock(nn.Module):
    def __init__(self, channels: int, instance_norm: bool = True):
        super().__init__()
        self.block = nn.Sequential(
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            _norm(channels, instance_norm),
            nn.ReLU(inplace=True),
            nn.ReflectionPad2d(1),
            nn.Conv2d(channels, channels, 3),
            _norm(channels, instance_norm),
        )

    def forward(self, x):
        return x + self.block(x)


class ImageGenerator(nn.Module):
    """Residual encoder-decoder, [0,1] image to [0,1] image.

    Output range is guaranteed by a rescaled tanh, so downstream losses never
    depend on an explicit clamp.
    """

    def __init__(self, base_channels: int, num_resblocks: int, instance_norm: bool = True):
        super().__init__()
        b = base_channels
        layers = [
            nn.ReflectionPad2d(3),
            nn.Conv2d(3, b, 7),
            _norm(b, instance_norm),
            nn.ReLU(inplace=True),
        ]
        # two stride-2 downsamplings
        for c_in, c_out in ((b, 2 * b), (2 * b, 4 * b)):
            layers += [
                nn.Conv2d(c_in, c_out, 3, stride=2, padding=1),
                _norm(c_out, instance_norm),
                nn.ReLU(inplace=True),
            ]
        layers += [ResidualBlock(4 * b, instance_norm) for _ in range(num_resblocks)]
        # two nearest-upsample + conv stages back to full resolution
        for c_in, c_out in ((4 * b, 2 * b), (2 * b, b)):
            layers += [
                nn.Upsample(scale_factor=2, mode="nearest"),
                nn.Conv2d(c_in, c_out, 3, stride=1, padding=1),
                _norm(c_out, instance_norm),
                nn.ReLU(inplace=True),
            ]
        layers += [nn.ReflectionPad2d(3), nn.Conv2d(b, 3, 7), nn.Tanh()]
        self.model = nn.Sequential(*layers)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[-1] != 3:
            raise ValueError(f"generator expects (B, H, W, 3), got {tuple(x.shape)}")
        if x.shape[1] % 4 or x.shape[2] % 4:
            raise ValueError(f"generator needs H, W divisible by 4, got {tuple(x.shape)}")
        y = self.model(x.movedim(-1, 1))
        return ((y + 1.0) / 2.0).movedim(1, -1)


class PatchDiscriminator(nn.Module):
    """Stride-2 convolutional patch classifier emitting raw logits.

    `layers` stride-2 stages halve the resolution each; default 4 stages map
    (B, H, W, 3) to a (B, H/16, W/16, 1) logit map. No normalization on the
    first stage, no output activation.
    """

    def __init__(self, base_channels: int, layers: int = 4, instance_norm: bool = True):
        super().__init__()
        seq = []
        c_in = 3
        for i in range(layers):
            c_out = base_channels * min(2 ** i, 8)
            seq += [nn.Conv2d(c_in, c_out, 4, stride=2, padding=1)]
            if i > 0:
                seq += [_norm(c_out, instance_norm)]
            seq += [nn.LeakyReLU(0.2, inplace=True)]
            c_in = c_out
        seq += [nn.Conv2d(c_in, 1, 3, stride=1, padding=1)]
        self.model = nn.Sequential(*seq)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        if x.dim() != 4 or x.shape[-1] != 3:
            raise ValueError(f"discriminator expects (B, H, W, 3), got {tuple(x.shape)}")
        return self.model(x.movedim(-1, 1)).movedim(1, -1)


def build_generator(cfg: NetworkConfig, role: str) -> ImageGenerator:
    """Build the deraining ("derain") or the lightweight re-raining ("rerain") generator."""
    if role == "derain":
        return ImageGenerator(cfg.base_channels, cfg.num_resblocks_gc, cfg.instance_norm)
    if role == "rerain":
        return ImageGenerator(
            max(cfg.base_channels // 2, 4), cfg.num_resblocks_gr, cfg.instance_norm
        )
    raise ValueError(f"unknown generator role {role!r}")


def build_discriminator(cfg: NetworkConfig) -> PatchDiscriminator:
    return PatchDiscriminator(cfg.base_channels, cfg.disc_layers, cfg.instance_norm)


def apply_generator(net: ImageGenerator, image: torch.Tensor) -> torch.Tensor:
    """Run a generator on one (H, W, 3) image of arbitrary size.

    Sides are reflect-padded up to multiples of 4 for the forward pass and the
    result is cropped back, so callers never see the divisibility constraint.
    """
    if image.dim() != 3 or image.shape[-1] != 3:
        raise ValueError(f"apply_generator expects (H, W, 3), got {tuple(image.shape)}")
    h, w = int(image.shape[0]), int(image.shape[1])
    pad_h, pad_w = -h % 4, -w % 4
    x = image.movedim(-1, 0).unsqueeze(0)
    if pad_h or pad_w:
        x = nn.functional.pad(x, (0, pad_w, 0, pad_h), mode="reflect")
    with torch.no_grad():
        y = net(x.movedim(1, -1))
    return y[0, :h, :w, :]


def init_weights(net: nn.Module) -> nn.Module:
    """He-normal init: conv weights ~ N(0, 2/fan_in), biases zero."""
    for m in net.modules():
        if isinstance(m, nn.Conv2d):
            fan_in = m.in_channels * m.kernel_size[0] * m.kernel_size[1]
            nn.init.normal_(m.weight, mean=0.0, std=math.sqrt(2.0 / fan_in))
            if m.bias is not None:
                nn.init.zeros_(m.bias)
    return net


def parameter_count(net: nn.Module) -> int:
    return sum(p.numel() for p in net.parameters())


@dataclass
class ModelBundle:
    """The four trainable networks plus an architecture tag."""

    g_c: nn.Module  # deraining generator
    g_r: nn.Module  # re-raining generator
    d_c: nn.Module  # clean-image discriminator
    d_s: nn.Module  # rainy-image (streak) discriminator
    arch_version: str = ARCH_VERSION

    def named_nets(self):
        return {"g_c": self.g_c, "g_r": self.g_r, "d_c": self.d_c, "d_s": self.d_s}


def build_model_bundle(cfg: NetworkConfig) -> ModelBundle:
    """Build and He-initialize all four networks from one config."""
    bundle = ModelBundle(
        g_c=build_generator(cfg, "derain"),
        g_r=build_generator(cfg, "rerain"),
        d_c=build_discriminator(cfg),
        d_s=build_discriminator(cfg),
    )
    for net in bundle.named_nets().values():
        init_weights(net)
    return bundle
