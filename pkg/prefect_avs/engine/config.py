"""Run configuration: one YAML file validated into `TrainConfig`, plus dotted overrides."""
import logging
from enum import Enum
from pathlib import Path
from typing import Any, Iterable, Optional

import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from prefect_avs.audio.spectrogram import SpectrogramConfig
from prefect_avs.core.types import SettingKind, TaskSetting
from prefect_avs.defaults import default_audio_dim
from prefect_avs.errors import ConfigurationError
from prefect_avs.model.avs import FusionMode, ModelConfig
from prefect_avs.model.backbone import BackboneConfig
from prefect_avs.model.decoder import DecoderConfig
from prefect_avs.model.fusion import FusionConfig
from prefect_avs.objectives.losses import LossConfig

logger = logging.getLogger(__name__)

config_snapshot_filename = "config.yaml"

default_epochs = {
    SettingKind.S4: 15,
    SettingKind.MS3: 30,
    SettingKind.AVSS: 60,
}


class InitMode(str, Enum):
    SCRATCH = "scratch"
    FROM_CHECKPOINT = "from_checkpoint"


class LRSchedule(str, Enum):
    CONSTANT = "constant"
    COSINE = "cosine"


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    setting: Optional[TaskSetting] = Field(
        None,
        description="Expected task setting; taken from the dataset when omitted and checked against it otherwise",
    )

    lr: float = Field(1e-4, gt=0.0, description="Adam learning rate")
    batch_size: int = Field(4, ge=1, description="Videos per optimizer step")
    micro_batch_size: Optional[int] = Field(
        None,
        ge=1,
        description="Videos per forward pass; gradients are accumulated up to batch_size",
    )
    epochs: Optional[int] = Field(None, ge=1, description="15 (S4), 30 (MS3) or 60 (AVSS) when omitted")
    schedule: LRSchedule = LRSchedule.CONSTANT

    loss: LossConfig = LossConfig()
    fusion: FusionMode = FusionMode.TPAVI
    tpavi_stages: tuple[int, ...] = (1, 2, 3, 4)

    backbone: BackboneConfig = BackboneConfig()
    fusion_block: FusionConfig = FusionConfig()
    decoder: DecoderConfig = DecoderConfig()
    audio_dim: int = Field(default_audio_dim, gt=0)
    freeze_audio: bool = False

    spectrogram: SpectrogramConfig = SpectrogramConfig()
    flip: bool = Field(False, description="Random horizontal flips of frames and masks during training")

    init: InitMode = InitMode.SCRATCH
    checkpoint: Optional[Path] = Field(None, description="Source checkpoint for init=from_checkpoint")
    seed: int = 0

    @model_validator(mode="after")
    def _check_consistency(self) -> "TrainConfig":
        if self.fusion == FusionMode.TPAVI and not self.tpavi_stages:
            raise ConfigurationError("tpavi_stages must be nonempty when fusion is tpavi")
        if any(stage not in (1, 2, 3, 4) for stage in self.tpavi_stages):
            raise ConfigurationError(f"tpavi_stages must be drawn from 1..4, got {self.tpavi_stages}")
        if self.init == InitMode.FROM_CHECKPOINT and self.checkpoint is None:
            raise ConfigurationError("init=from_checkpoint needs a checkpoint path")
        if self.micro_batch_size is not None and self.batch_size % self.micro_batch_size:
            raise ConfigurationError(
                f"micro_batch_size {self.micro_batch_size} must divide batch_size {self.batch_size}"
            )
        return self

    def epochs_for(self, setting: TaskSetting) -> int:
        return self.epochs or default_epochs[setting.kind]

    def resolve_setting(self, dataset_setting: TaskSetting) -> TaskSetting:
        """The dataset decides the setting; a configured one must agree with it."""
        if self.setting is not None and self.setting != dataset_setting:
            logger.error("Configured setting %s disagrees with dataset setting %s", self.setting, dataset_setting)
            raise ConfigurationError(
                f"configuration expects {self.setting.kind.value} (K={self.setting.num_classes}, "
                f"T={self.setting.clips_per_video}) but the dataset is {dataset_setting.kind.value} "
                f"(K={dataset_setting.num_classes}, T={dataset_setting.clips_per_video})"
            )
        return dataset_setting

    def model_for(self, setting: TaskSetting) -> ModelConfig:
        return ModelConfig(
            setting=setting,
            audio_dim=self.audio_dim,
            freeze_audio=self.freeze_audio,
            backbone=self.backbone,
            fusion=self.fusion_block,
            decoder=self.decoder,
            fusion_mode=self.fusion,
            tpavi_stages=self.tpavi_stages,
        )


def _parse_override(override: str) -> tuple[list[str], Any]:
    key, sep, raw = override.partition("=")
    if not sep or not key:
        raise ConfigurationError(f"override must look like key.sub=value, got {override!r}")
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as e:
        raise ConfigurationError(f"unparseable value in override {override!r}") from e
    return key.strip().split("."), value


def apply_overrides(data: dict, overrides: Iterable[str]) -> dict:
    """
    Apply `a.b.c=value` overrides to a nested dict; values are parsed as YAML
    scalars or flow collections (`tpavi_stages=[1,2]`).
    """
    data = dict(data)
    for override in overrides:
        path, value = _parse_override(override)
        node = data
        for part in path[:-1]:
            child = node.get(part)
            child = dict(child) if isinstance(child, dict) else {}
            node[part] = child
            node = child
        node[path[-1]] = value
        logger.debug("Override %s = %r", ".".join(path), value)
    return data


def load_config(path: Optional[str | Path] = None, overrides: Iterable[str] = ()) -> TrainConfig:
    """
    :param path: YAML file with `TrainConfig` fields; defaults only when omitted
    :param overrides: dotted `key=value` assignments applied on top of the file
    """
    data: dict = {}
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigurationError(f"config file not found: {path}")
        try:
            data = yaml.safe_load(path.read_text()) or {}
        except yaml.YAMLError as e:
            raise ConfigurationError(f"config file {path} is not valid YAML") from e
        if not isinstance(data, dict):
            raise ConfigurationError(f"config file {path} must hold a mapping at the top level")

    data = apply_overrides(data, overrides)
    try:
        return TrainConfig.model_validate(data)
    except ValidationError as e:
        raise ConfigurationError(f"invalid configuration: {e}") from e


def dump_config(config: TrainConfig, path: str | Path) -> Path:
    """Write the resolved configuration as YAML; `load_config` reads it back to an equal object."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(yaml.safe_dump(config.model_dump(mode="json"), sort_keys=False))
    logger.debug("Wrote configuration snapshot to %s", path)
    return path
