import logging
from enum import Enum
from typing import Optional

import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator
from torch import nn

from prefect_avs.audio.encoder import AudioEncoder
from prefect_avs.core.types import TaskSetting
from prefect_avs.defaults import default_audio_dim, default_frame_mean, default_frame_std
from prefect_avs.errors import DimensionMismatchError
from prefect_avs.model.backbone import BackboneConfig, VisualBackbone
from prefect_avs.model.decoder import DecoderConfig, FPNDecoder
from prefect_avs.model.fusion import Aspp, FusionConfig, NaiveFusion, NoFusion, StageFusion, Tpavi

logger = logging.getLogger(__name__)


class FusionMode(str, Enum):
    NONE = "none"
    NAIVE = "naive"
    TPAVI = "tpavi"


class ModelConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    setting: TaskSetting
    audio_dim: int = Field(default_audio_dim, gt=0, description="d, audio embedding width")
    audio_channels: tuple[int, ...] = Field((16, 32, 64), description="Widths of the strided audio convolutions")
    freeze_audio: bool = Field(False, description="Keep the audio encoder at its initialization")
    backbone: BackboneConfig = BackboneConfig()
    fusion: FusionConfig = FusionConfig()
    decoder: DecoderConfig = DecoderConfig()
    fusion_mode: FusionMode = FusionMode.TPAVI
    tpavi_stages: tuple[int, ...] = Field((1, 2, 3, 4), description="Stages (1..4) that receive a TPAVI block")
    frame_mean: tuple[float, float, float] = default_frame_mean
    frame_std: tuple[float, float, float] = default_frame_std

    @model_validator(mode="after")
    def _check_stages(self) -> "ModelConfig":
        if any(stage not in (1, 2, 3, 4) for stage in self.tpavi_stages):
            raise ValueError(f"tpavi_stages must be drawn from 1..4, got {self.tpavi_stages}")
        if self.fusion_mode == FusionMode.TPAVI and not self.tpavi_stages:
            raise ValueError("tpavi_stages must be nonempty when fusion_mode is tpavi")
        return self


class ModelOutput(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    scores: torch.Tensor
    fused: list[torch.Tensor]
    audio: torch.Tensor
    attention: dict[int, torch.Tensor] = Field(default_factory=dict)


class AVSModel(nn.Module):
    """
    Audio encoder + visual pyramid, ASPP and a fusion block per stage, FPN decoder.

    Inputs are batched: frames (B, T, 3, H, W) in [0, 1] and log-mel
    (B, T, time, mel). Scores come back as (B, T, K, H, W).
    """

    def __init__(self, config: ModelConfig):
        super().__init__()
        self.config = config
        self.audio_encoder = AudioEncoder(config.audio_channels, config.audio_dim)
        self.backbone = VisualBackbone(config.backbone)
        self.aspp = nn.ModuleList(
            Aspp(channels, config.fusion.channels, config.fusion.aspp_rates)
            for channels in config.backbone.channels
        )
        self.fusions = nn.ModuleList(self._stage_fusion(stage) for stage in range(1, 5))
        self.decoder = FPNDecoder(config.fusion.channels, config.setting.num_classes, config.decoder)

        self.register_buffer("frame_mean", torch.tensor(config.frame_mean).view(3, 1, 1), persistent=False)
        self.register_buffer("frame_std", torch.tensor(config.frame_std).view(3, 1, 1), persistent=False)

        if config.freeze_audio:
            self.audio_encoder.requires_grad_(False)

    def _stage_fusion(self, stage: int) -> StageFusion:
        channels, audio_dim = self.config.fusion.channels, self.config.audio_dim
        if self.config.fusion_mode == FusionMode.TPAVI and stage in self.config.tpavi_stages:
            return Tpavi(channels, self.config.fusion.inner, audio_dim)
        if self.config.fusion_mode == FusionMode.NAIVE:
            return NaiveFusion(channels, audio_dim)
        return NoFusion(channels, audio_dim)

    def forward(self, frames: torch.Tensor, logmel: torch.Tensor, return_attention: bool = False) -> ModelOutput:
        if frames.ndim != 5 or logmel.ndim != 4 or frames.shape[:2] != logmel.shape[:2]:
            raise DimensionMismatchError(
                f"expected frames (B, T, 3, H, W) and log-mel (B, T, time, mel) with shared B, T; "
                f"got {tuple(frames.shape)} and {tuple(logmel.shape)}"
            )

        audio = self.audio_encoder(logmel)
        pyramid = self.backbone((frames - self.frame_mean) / self.frame_std)

        fused, attention = [], {}
        for stage, (feature, aspp, fusion) in enumerate(zip(pyramid, self.aspp, self.fusions), start=1):
            z, alpha = fusion(aspp(feature), audio)
            fused.append(z)
            if return_attention and alpha is not None:
                attention[stage] = alpha

        scores = self.decoder(fused, tuple(frames.shape[-2:]))
        return ModelOutput(scores=scores, fused=fused, audio=audio, attention=attention)


def build_model(config: ModelConfig, seed: Optional[int] = None, dtype: torch.dtype = torch.float32) -> AVSModel:
    """
    Instantiate a model; a seed makes the He fan-in initialization reproducible
    without touching the global generator.
    """
    with torch.random.fork_rng(devices=[]):
        if seed is not None:
            torch.manual_seed(seed)
        model = AVSModel(config)
    logger.debug(
        "Built %s model (fusion=%s, stages=%s, %d parameters)",
        config.setting.kind.value,
        config.fusion_mode.value,
        config.tpavi_stages,
        sum(p.numel() for p in model.parameters()),
    )
    return model.to(dtype)


def stage_projections(model: AVSModel) -> list[nn.Linear]:
    """Per-stage audio projections Aᵢ = linear(A) the AVM losses compare against."""
    return [fusion.audio_proj for fusion in model.fusions]
