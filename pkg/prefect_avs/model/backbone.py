import logging
from typing import Literal

import torch
from pydantic import BaseModel, ConfigDict, Field, field_validator
from torch import nn

from prefect_avs.core.types import FeaturePyramid
from prefect_avs.errors import DimensionMismatchError, ResolutionError
from prefect_avs.model.layers import conv_norm_relu, group_norm, init_he_fan_in

logger = logging.getLogger(__name__)

CHANNEL_PRESETS = {
    "desk": (32, 64, 128, 256),
    "resnet": (256, 512, 1024, 2048),
    "pvt": (64, 128, 320, 512),
}


class BackboneConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    channels: tuple[int, int, int, int] = Field(
        CHANNEL_PRESETS["desk"],
        description="C₁..C₄, channel sizes of the four stages",
    )

    stem_channels: int = Field(32, gt=0, description="Width of the stride-2 stem convolutions")

    stem_downsample: Literal[4] = Field(4, description="Resolution factor of the stem, stage 1 sits at H/4")

    blocks_per_stage: int = Field(1, ge=1)

    @field_validator("channels")
    @classmethod
    def _positive(cls, value: tuple[int, ...]) -> tuple[int, ...]:
        if any(c <= 0 for c in value):
            raise ValueError(f"stage channels must be positive, got {value}")
        return value

    @classmethod
    def preset(cls, name: str, **kwargs) -> "BackboneConfig":
        try:
            return cls(channels=CHANNEL_PRESETS[name], **kwargs)
        except KeyError as e:
            raise ValueError(f"Unknown channel preset {name!r}, expected one of {sorted(CHANNEL_PRESETS)}") from e


class ResidualBlock(nn.Module):
    def __init__(self, in_channels: int, out_channels: int, stride: int):
        super().__init__()
        self.conv1 = conv_norm_relu(in_channels, out_channels, stride=stride)
        self.conv2 = nn.Sequential(
            nn.Conv2d(out_channels, out_channels, 3, padding=1, bias=False),
            group_norm(out_channels),
        )
        self.shortcut = nn.Identity()
        if stride != 1 or in_channels != out_channels:
            self.shortcut = nn.Sequential(
                nn.Conv2d(in_channels, out_channels, 1, stride=stride, bias=False),
                group_norm(out_channels),
            )
        self.relu = nn.ReLU(inplace=False)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.relu(self.conv2(self.conv1(x)) + self.shortcut(x))


class VisualBackbone(nn.Module):
    """
    Plain convolutional pyramid: a stride-2 stem applied twice, then one
    residual stage per level. Stage i sits at (H, W) / 2^(i+1).
    """

    def __init__(self, config: BackboneConfig = BackboneConfig()):
        super().__init__()
        self.config = config
        self.stem = nn.Sequential(
            conv_norm_relu(3, config.stem_channels, stride=2),
            conv_norm_relu(config.stem_channels, config.stem_channels, stride=2),
        )

        stages = []
        in_channels = config.stem_channels
        for i, out_channels in enumerate(config.channels):
            blocks = [ResidualBlock(in_channels, out_channels, stride=1 if i == 0 else 2)]
            blocks += [ResidualBlock(out_channels, out_channels, stride=1) for _ in range(config.blocks_per_stage - 1)]
            stages.append(nn.Sequential(*blocks))
            in_channels = out_channels
        self.stages = nn.ModuleList(stages)

        init_he_fan_in(self)

    def forward(self, frames: torch.Tensor) -> list[torch.Tensor]:
        """(..., 3, H, W) -> four maps (..., Cᵢ, H/2^(i+1), W/2^(i+1))"""
        height, width = frames.shape[-2:]
        if height % 32 or width % 32:
            raise ResolutionError(f"frame size {height}x{width} must be divisible by 32")
        if frames.shape[-3] != 3:
            raise DimensionMismatchError(f"frames must have 3 color channels, got {frames.shape[-3]}")

        leading = frames.shape[:-3]
        x = self.stem(frames.reshape(-1, 3, height, width))
        outputs = []
        for stage in self.stages:
            x = stage(x)
            outputs.append(x.reshape(*leading, *x.shape[1:]))
        return outputs


def encode_frames(frames: torch.Tensor, backbone: VisualBackbone) -> FeaturePyramid:
    """
    Encode (T, 3, H, W) frames independently into the four-stage pyramid.
    """
    stages = backbone(frames)
    pyramid = FeaturePyramid(stages=stages, base_resolution=tuple(frames.shape[-2:]))
    logger.debug("Encoded %d frame(s) into pyramid %s", frames.shape[0], pyramid.shapes())
    return pyramid
