import logging
from typing import Optional, Sequence

import torch
import torch.nn.functional as F
from einops import rearrange
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from prefect_avs.defaults import default_audio_dim, default_fusion_channels
from prefect_avs.errors import DimensionMismatchError, NonFiniteError
from prefect_avs.model.layers import conv_norm_relu, init_he_fan_in

logger = logging.getLogger(__name__)


class FusionConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    channels: int = Field(default_fusion_channels, gt=0, description="C, width of every fused stage")
    inner_channels: Optional[int] = Field(None, gt=0, description="C̄ of θ/φ/g; defaults to C/2")
    aspp_rates: tuple[int, ...] = Field((1, 6, 12, 18), description="Dilation rates of the parallel ASPP branches")

    @model_validator(mode="after")
    def _check_rates(self) -> "FusionConfig":
        if not self.aspp_rates or any(rate < 1 for rate in self.aspp_rates):
            raise ValueError(f"ASPP rates must be positive, got {self.aspp_rates}")
        return self

    @property
    def inner(self) -> int:
        return self.inner_channels or max(self.channels // 2, 1)


class Aspp(nn.Module):
    """
    Parallel dilated 3×3 branches (rate 1 is a 1×1 branch), an image-pool
    branch, and a 1×1 projection of their concatenation to C channels.
    """

    def __init__(self, in_channels: int, out_channels: int, rates: Sequence[int] = (1, 6, 12, 18)):
        super().__init__()
        self.in_channels = in_channels
        self.branches = nn.ModuleList(
            conv_norm_relu(in_channels, out_channels, kernel_size=1 if rate == 1 else 3, dilation=rate)
            for rate in rates
        )
        self.pool = nn.Sequential(
            nn.AdaptiveAvgPool2d(1),
            conv_norm_relu(in_channels, out_channels, kernel_size=1),
        )
        self.project = conv_norm_relu(out_channels * (len(rates) + 1), out_channels, kernel_size=1)
        init_he_fan_in(self)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        """(..., Cᵢ, h, w) -> (..., C, h, w)"""
        if x.shape[-3] != self.in_channels:
            raise DimensionMismatchError(f"ASPP expects {self.in_channels} input channels, got {x.shape[-3]}")
        leading, (channels, height, width) = x.shape[:-3], x.shape[-3:]
        x = x.reshape(-1, channels, height, width)
        pooled = self.pool(x).expand(-1, -1, height, width)
        out = self.project(torch.cat([branch(x) for branch in self.branches] + [pooled], dim=1))
        return out.reshape(*leading, *out.shape[1:])


def aspp(feature: torch.Tensor, module: Aspp) -> torch.Tensor:
    return module(feature)


def broadcast_audio(audio: torch.Tensor, proj: nn.Linear, height: int, width: int) -> torch.Tensor:
    """
    Project (..., T, d) audio to C channels and duplicate it over every pixel.

    :return: (..., T, C, h, w), spatially constant within each frame
    """
    if audio.shape[-1] != proj.in_features:
        raise DimensionMismatchError(f"audio features must have d={proj.in_features}, got {audio.shape[-1]}")
    projected = proj(audio)
    return projected[..., None, None].expand(*projected.shape, height, width)


class StageFusion(nn.Module):
    """Common surface of the per-stage fusion choices: every stage owns its audio projection."""

    def __init__(self, channels: int, audio_dim: int):
        super().__init__()
        self.audio_proj = nn.Linear(audio_dim, channels)

    def project_audio(self, audio: torch.Tensor) -> torch.Tensor:
        return self.audio_proj(audio)

    def forward(self, v: torch.Tensor, audio: torch.Tensor) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
        return v, None


class NoFusion(StageFusion):
    """Visual features pass through untouched; the projection only feeds the AVM loss."""


class NaiveFusion(StageFusion):
    """Zᵢ = Vᵢ + broadcast(A)."""

    def forward(self, v: torch.Tensor, audio: torch.Tensor) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
        _check_pairing(v, audio)
        return v + broadcast_audio(audio, self.audio_proj, *v.shape[-2:]), None


class Tpavi(StageFusion):
    """
    Temporal pixel-wise audio-visual interaction.

    Every visual position of every frame attends to the broadcast audio of
    every frame: α = θ(V)·φ(Â)ᵀ / N with N = T·h·w, Z = V + μ(α·g(V)).
    μ starts at zero, so a fresh block is the identity on V.
    """

    def __init__(self, channels: int, inner_channels: int, audio_dim: int = default_audio_dim):
        super().__init__(channels, audio_dim)
        self.theta = nn.Linear(channels, inner_channels)
        self.phi = nn.Linear(channels, inner_channels)
        self.g = nn.Linear(channels, inner_channels)
        self.mu = nn.Linear(inner_channels, channels)
        nn.init.zeros_(self.mu.weight)
        nn.init.zeros_(self.mu.bias)

    def forward(self, v: torch.Tensor, audio: torch.Tensor) -> tuple[torch.Tensor, Optional[torch.Tensor]]:
        _check_pairing(v, audio)
        frames, _, height, width = v.shape[-4:]
        v_flat = rearrange(v, "... t c h w -> ... (t h w) c")
        n = v_flat.shape[-2]

        # φ(Â) once per time index, columns repeated over that frame's h·w pixels
        phi = self.phi(self.project_audio(audio))
        alpha = (self.theta(v_flat) @ phi.transpose(-1, -2) / n).repeat_interleave(height * width, dim=-1)
        z_flat = v_flat + self.mu(alpha @ self.g(v_flat))

        if not torch.isfinite(z_flat).all():
            logger.error("TPAVI produced non-finite activations (N=%d)", n)
            raise NonFiniteError("TPAVI produced non-finite activations; training has likely diverged")

        z = rearrange(z_flat, "... (t h w) c -> ... t c h w", t=frames, h=height, w=width)
        return z, alpha


def tpavi(v: torch.Tensor, audio: torch.Tensor, block: Tpavi) -> tuple[torch.Tensor, torch.Tensor]:
    """
    :param v: (T, C, h, w) stage features, optionally with a leading batch axis
    :param audio: (T, d) audio embedding matching v's leading axes
    :return: (Z shaped like v, α of shape (N, N))
    """
    return block(v, audio)


def naive_fusion(v: torch.Tensor, audio: torch.Tensor, block: NaiveFusion) -> torch.Tensor:
    z, _ = block(v, audio)
    return z


def _check_pairing(v: torch.Tensor, audio: torch.Tensor) -> None:
    if v.ndim < 4 or audio.shape[:-1] != v.shape[:-3]:
        raise DimensionMismatchError(
            f"visual features {tuple(v.shape)} and audio {tuple(audio.shape)} must share leading (…, T) axes"
        )


def attention_heatmap(alpha: torch.Tensor, frames: int, height: int, width: int, size: tuple[int, int]) -> torch.Tensor:
    """
    Reduce one sample's (N, N) attention to per-frame heatmaps.

    Each position's score is the mean of its row over the columns of its
    own time index; the (T, h, w) map is bilinearly upsampled to `size` and
    min-max normalized per frame.

    :return: (T, H, W) tensor in [0, 1]
    """
    n = frames * height * width
    if alpha.shape != (n, n):
        raise DimensionMismatchError(f"attention must be ({n}, {n}) for T={frames}, {height}x{width}; got {tuple(alpha.shape)}")

    per_time = alpha.reshape(n, frames, height * width).mean(dim=-1)
    own_time = torch.arange(n, device=alpha.device) // (height * width)
    scores = per_time.gather(1, own_time[:, None]).reshape(frames, 1, height, width)

    maps = F.interpolate(scores, size=size, mode="bilinear", align_corners=False)[:, 0]
    low = maps.amin(dim=(-2, -1), keepdim=True)
    span = maps.amax(dim=(-2, -1), keepdim=True) - low
    return torch.where(span > 0, (maps - low) / span.clamp_min(torch.finfo(maps.dtype).tiny), torch.zeros_like(maps))
