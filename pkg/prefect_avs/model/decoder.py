import logging
from typing import Sequence

import torch
import torch.nn.functional as F
from pydantic import BaseModel, ConfigDict, Field
from torch import nn

from prefect_avs.core.types import Activation, MaskPrediction, TaskSetting
from prefect_avs.errors import NonFiniteError, StageCountError
from prefect_avs.model.layers import conv_norm_relu, init_he_fan_in

logger = logging.getLogger(__name__)


class DecoderConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    width: int = Field(128, gt=0, description="Common decoder width the lateral projections map to")


class FPNDecoder(nn.Module):
    """
    Top-down decoder: start from Z₄, then three times upsample 2× (nearest),
    add the lateral projection of the next finer stage and refine. A 1×1
    classifier emits K channels, bilinearly upsampled 4× to full resolution.
    """

    def __init__(self, in_channels: int, num_classes: int, config: DecoderConfig = DecoderConfig()):
        super().__init__()
        self.lateral = nn.ModuleList(nn.Conv2d(in_channels, config.width, 1) for _ in range(4))
        self.refine = nn.ModuleList(conv_norm_relu(config.width, config.width) for _ in range(4))
        self.classifier = nn.Conv2d(config.width, num_classes, 1)
        init_he_fan_in(self)

    def forward(self, fused: Sequence[torch.Tensor], output_size: tuple[int, int]) -> torch.Tensor:
        """four (..., C, hᵢ, wᵢ) maps -> (..., K, H, W) scores"""
        if len(fused) != 4:
            raise StageCountError(f"the decoder consumes exactly 4 fused stages, got {len(fused)}")

        leading = fused[0].shape[:-3]
        flat = [z.reshape(-1, *z.shape[-3:]) for z in fused]

        x = self.refine[3](self.lateral[3](flat[3]))
        for index in (2, 1, 0):
            x = F.interpolate(x, scale_factor=2, mode="nearest")
            x = self.refine[index](x + self.lateral[index](flat[index]))

        scores = F.interpolate(self.classifier(x), size=output_size, mode="bilinear", align_corners=False)
        return scores.reshape(*leading, *scores.shape[1:])


def decode(fused: Sequence[torch.Tensor], decoder: FPNDecoder, setting: TaskSetting, output_size: tuple[int, int]) -> MaskPrediction:
    scores = decoder(fused, output_size)
    return MaskPrediction(scores=scores, activation=setting.activation)


def activate(scores: torch.Tensor | MaskPrediction, setting: TaskSetting) -> tuple[MaskPrediction, torch.Tensor]:
    """
    Turn raw (..., K, H, W) scores into probabilities and hard masks.

    K = 1: sigmoid, foreground where probability > 0.5 (0.5 itself is
    background). K > 1: softmax over K, argmax with ties to the smallest id.

    :return: (activated prediction, (..., H, W) integer mask)
    """
    if isinstance(scores, MaskPrediction):
        scores = scores.scores
    if not torch.isfinite(scores).all():
        logger.error("Refusing to activate non-finite mask scores")
        raise NonFiniteError("mask scores contain non-finite values")

    if setting.is_binary:
        probabilities = torch.sigmoid(scores)
        hard = (probabilities[..., 0, :, :] > 0.5).long()
    else:
        probabilities = torch.softmax(scores, dim=-3)
        hard = scores.argmax(dim=-3)

    return MaskPrediction(scores=probabilities, activation=setting.activation, activated=True), hard
