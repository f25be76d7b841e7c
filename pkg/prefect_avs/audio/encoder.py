import logging
from typing import Optional, Sequence

import torch
from torch import nn

from prefect_avs.core.types import AudioEmbedding
from prefect_avs.defaults import default_audio_dim
from prefect_avs.errors import DimensionMismatchError

logger = logging.getLogger(__name__)


class AudioEncoder(nn.Module):
    """
    Three strided convolutions over a one-second log-mel patch, pooled and
    projected to a d-vector. Every clip is encoded independently.
    """

    def __init__(self, channels: Sequence[int] = (16, 32, 64), dim: int = default_audio_dim):
        super().__init__()
        layers = []
        in_channels = 1
        for out_channels in channels:
            layers += [
                nn.Conv2d(in_channels, out_channels, kernel_size=3, stride=2, padding=1),
                nn.ReLU(inplace=False),
            ]
            in_channels = out_channels
        self.features = nn.Sequential(*layers)
        self.pool = nn.AdaptiveAvgPool2d(1)
        self.proj = nn.Linear(in_channels, dim)
        self.dim = dim

        for module in self.modules():
            if isinstance(module, nn.Conv2d):
                nn.init.kaiming_normal_(module.weight, mode="fan_in", nonlinearity="relu")
                nn.init.zeros_(module.bias)

    def forward(self, logmel: torch.Tensor) -> torch.Tensor:
        """(..., T, time, mel) -> (..., T, d)"""
        if logmel.ndim < 3:
            raise DimensionMismatchError(f"log-mel input must be (..., T, time, mel), got {tuple(logmel.shape)}")
        leading = logmel.shape[:-2]
        x = logmel.reshape(-1, 1, *logmel.shape[-2:])
        x = self.pool(self.features(x)).flatten(1)
        return self.proj(x).reshape(*leading, self.dim)


def encode_audio(
    logmel: torch.Tensor,
    encoder: AudioEncoder,
    num_clips: Optional[int] = None,
) -> AudioEmbedding:
    """
    Encode per-second log-mel slices into the T×d audio embedding A.

    :param logmel: (T, time, mel) spectrogram slices
    :param encoder: audio encoder parameters
    :param num_clips: expected T, checked when given
    """
    if logmel.ndim != 3:
        raise DimensionMismatchError(f"expected (T, time, mel) log-mel, got {tuple(logmel.shape)}")
    if num_clips is not None and logmel.shape[0] != num_clips:
        raise DimensionMismatchError(f"log-mel has T={logmel.shape[0]} slices, expected T={num_clips}")

    features = encoder(logmel)
    logger.debug("Encoded audio to %s", tuple(features.shape))
    return AudioEmbedding(features=features, dim=encoder.dim)
