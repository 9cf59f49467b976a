"""3D U-Net over (time, height, width) that maps a stack of lag frames of one
variable to the single frame one horizon ahead.

Layout: at level i the channel width is base_channels * channel_growth**i.
Each level applies two 3x3x3 same-padded convs with ReLU; descending is
dropout followed by a (1, 2, 2) max-pool, so only space is coarsened and the
time axis survives to the end; ascending is (1, 2, 2) nearest-neighbour
upsampling with the skip tensor concatenated ahead of the decoder tensor.
A final (lag, 1, 1) linear conv collapses the time axis to the output frame.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import torch
from torch import nn

from .errors import ConfigError


@dataclass(frozen=True)
class CoreUNetConfig:
    levels: int = 5
    base_channels: int = 64
    input_lag: int = 12
    spatial_size: tuple[int, int] = (96, 96)
    dropout_rate: float = 0.5
    kernel_size: int = 3
    channel_growth: int = 2
    upsample_mode: str = "nearest"

    def __post_init__(self):
        if self.levels < 1:
            raise ConfigError(f"levels must be >= 1, got {self.levels}")
        if self.base_channels < 1 or self.channel_growth < 1:
            raise ConfigError("base_channels and channel_growth must be >= 1")
        if self.input_lag < 1:
            raise ConfigError(f"input_lag must be >= 1, got {self.input_lag}")
        if self.kernel_size % 2 != 1:
            raise ConfigError(f"kernel_size must be odd, got {self.kernel_size}")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ConfigError(f"dropout_rate must be in [0, 1), got {self.dropout_rate}")
        divisor = 2 ** (self.levels - 1)
        h, w = self.spatial_size
        if h % divisor or w % divisor:
            raise ConfigError(
                f"spatial size {self.spatial_size} not divisible by {divisor} "
                f"({self.levels} levels)"
            )

    def channels(self, level: int) -> int:
        return self.base_channels * self.channel_growth**level


def double_conv(in_channels: int, out_channels: int, kernel_size: int) -> nn.Sequential:
    pad = kernel_size // 2
    return nn.Sequential(
        nn.Conv3d(in_channels, out_channels, kernel_size, padding=pad),
        nn.ReLU(inplace=True),
        nn.Conv3d(out_channels, out_channels, kernel_size, padding=pad),
        nn.ReLU(inplace=True),
    )


class CoreUNet(nn.Module):
    def __init__(self, config: CoreUNetConfig):
        super().__init__()
        self.config = config
        k = config.kernel_size

        self.encoders = nn.ModuleList()
        in_ch = 1
        for i in range(config.levels - 1):
            self.encoders.append(double_conv(in_ch, config.channels(i), k))
            in_ch = config.channels(i)
        self.descend = nn.Sequential(
            nn.Dropout(config.dropout_rate), nn.MaxPool3d((1, 2, 2))
        )
        self.bottleneck = double_conv(in_ch, config.channels(config.levels - 1), k)
        self.ascend = nn.Upsample(scale_factor=(1, 2, 2), mode=config.upsample_mode)
        self.decoders = nn.ModuleList()
        for i in reversed(range(config.levels - 1)):
            self.decoders.append(
                double_conv(config.channels(i) + config.channels(i + 1), config.channels(i), k)
            )
        self.head = nn.Conv3d(config.base_channels, 1, (config.input_lag, 1, 1))

    def forward(self, frames: torch.Tensor) -> torch.Tensor:
        """(batch, lag, H, W) -> (batch, H, W)."""
        cfg = self.config
        if frames.dim() != 4 or frames.shape[1:] != (cfg.input_lag, *cfg.spatial_size):
            raise ConfigError(
                f"expected input (batch, {cfg.input_lag}, {cfg.spatial_size[0]}, "
                f"{cfg.spatial_size[1]}), got {tuple(frames.shape)}"
            )
        x = frames.unsqueeze(1)  # channel axis
        skips = []
        for encoder in self.encoders:
            x = encoder(x)
            skips.append(x)
            x = self.descend(x)
        x = self.bottleneck(x)
        for decoder, skip in zip(self.decoders, reversed(skips)):
            x = self.ascend(x)
            x = decoder(torch.cat([skip, x], dim=1))
        return self.head(x).squeeze(2).squeeze(1)


def count_parameters(config: CoreUNetConfig) -> int:
    """Closed-form parameter count; must agree with the instantiated model."""
    k3 = config.kernel_size**3

    def dc(i, o):
        return o * k3 * (i + o) + 2 * o

    total = 0
    in_ch = 1
    for i in range(config.levels - 1):
        total += dc(in_ch, config.channels(i))
        in_ch = config.channels(i)
    total += dc(in_ch, config.channels(config.levels - 1))
    for i in reversed(range(config.levels - 1)):
        total += dc(config.channels(i) + config.channels(i + 1), config.channels(i))
    total += config.base_channels * config.input_lag + 1
    return total


def init_parameters(model: nn.Module, seed: int) -> None:
    """He (fan-in, normal) weights from a private seeded generator; zero biases.

    Written out by hand so the draw sequence depends only on module order and
    tensor shapes, not on the library's global RNG state.
    """
    g = torch.Generator().manual_seed(seed)
    with torch.no_grad():
        for module in model.modules():
            if isinstance(module, (nn.Conv3d, nn.Conv2d)):
                fan_in = module.weight.shape[1] * math.prod(module.weight.shape[2:])
                std = math.sqrt(2.0 / fan_in)
                module.weight.copy_(
                    torch.randn(module.weight.shape, generator=g, dtype=torch.float64)
                    .mul_(std)
                    .to(module.weight.dtype)
                )
                if module.bias is not None:
                    module.bias.zero_()
