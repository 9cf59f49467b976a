"""Two-variable fusion network: one 3D U-Net stream for precipitation history,
an identically-shaped stream for wind-speed history, and a learned 1x1 linear
blend of the two predicted frames."""

from __future__ import annotations

from dataclasses import dataclass, field

import torch
from torch import nn

from .core_unet import CoreUNet, CoreUNetConfig, count_parameters
from .errors import AlignmentError, ConfigError


@dataclass(frozen=True)
class WFUNetConfig:
    stream_config: CoreUNetConfig = field(default_factory=CoreUNetConfig)
    fusion_kernel: tuple[int, int] = (1, 1)

    def __post_init__(self):
        kh, kw = self.fusion_kernel
        if kh % 2 != 1 or kw % 2 != 1:
            raise ConfigError(f"fusion_kernel must be odd-sized, got {self.fusion_kernel}")


class WFUNet(nn.Module):
    def __init__(self, config: WFUNetConfig):
        super().__init__()
        self.config = config
        self.stream_precip = CoreUNet(config.stream_config)
        self.stream_wind = CoreUNet(config.stream_config)
        kh, kw = config.fusion_kernel
        # linear blend, no activation: the fused frame is a learned weighted
        # sum of the per-stream frames plus a bias
        self.fusion = nn.Conv2d(2, 1, kernel_size=(kh, kw), padding=(kh // 2, kw // 2))

    def stream_outputs(self, precip: torch.Tensor, wind: torch.Tensor) -> tuple[torch.Tensor, torch.Tensor]:
        """Per-stream predicted frames, before fusion. Each (batch, H, W)."""
        if precip.shape != wind.shape:
            raise AlignmentError(
                f"stream inputs must share a shape, got {tuple(precip.shape)} "
                f"vs {tuple(wind.shape)}"
            )
        return self.stream_precip(precip), self.stream_wind(wind)

    def forward(self, precip: torch.Tensor, wind: torch.Tensor) -> torch.Tensor:
        """(batch, lag, H, W) x 2 -> (batch, H, W)."""
        p, w = self.stream_outputs(precip, wind)
        stacked = torch.stack([p, w], dim=1)  # (batch, 2, H, W)
        return self.fusion(stacked).squeeze(1)


def count_wf_parameters(config: WFUNetConfig) -> int:
    kh, kw = config.fusion_kernel
    return 2 * count_parameters(config.stream_config) + 2 * kh * kw + 1
