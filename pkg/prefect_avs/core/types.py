import logging
from enum import Enum
from typing import Optional

import numpy as np
import torch
from pydantic import BaseModel, ConfigDict, Field, model_validator

from prefect_avs.defaults import default_audio_dim, default_objects_clips, default_semantic_clips
from prefect_avs.errors import ClassIdOutOfRangeError, DimensionMismatchError, NonFiniteError, StageCountError

logger = logging.getLogger(__name__)


class SettingKind(str, Enum):
    S4 = "S4"
    MS3 = "MS3"
    AVSS = "AVSS"


class Activation(str, Enum):
    SIGMOID = "sigmoid"
    SOFTMAX = "softmax_over_K"


class TaskSetting(BaseModel):
    model_config = ConfigDict(frozen=True)

    kind: SettingKind = Field(
        ...,
        description="Task setting: single-source, multi-source or semantic",
        examples=["S4", "MS3", "AVSS"],
    )

    num_classes: int = Field(
        1,
        ge=1,
        description="K: 1 for the binary settings, category count + 1 background for AVSS",
    )

    clips_per_video: int = Field(
        default_objects_clips,
        ge=1,
        description="T: one-second clips per video",
    )

    @model_validator(mode="after")
    def _check_classes(self) -> "TaskSetting":
        binary = self.kind in (SettingKind.S4, SettingKind.MS3)
        if binary and self.num_classes != 1:
            raise ValueError(f"K must be 1 for {self.kind.value}, got {self.num_classes}")
        if not binary and self.num_classes < 2:
            raise ValueError(f"K must count background plus at least one category for AVSS, got {self.num_classes}")
        return self

    @classmethod
    def for_kind(
        cls,
        kind: SettingKind | str,
        num_classes: Optional[int] = None,
        clips_per_video: Optional[int] = None,
    ) -> "TaskSetting":
        kind = SettingKind(kind)
        if kind == SettingKind.AVSS:
            if num_classes is None:
                raise ValueError("AVSS requires num_classes (categories + background)")
            clips = clips_per_video or default_semantic_clips
        else:
            num_classes = 1 if num_classes is None else num_classes
            clips = clips_per_video or default_objects_clips
        return cls(kind=kind, num_classes=num_classes, clips_per_video=clips)

    @property
    def is_binary(self) -> bool:
        return self.num_classes == 1

    @property
    def activation(self) -> Activation:
        return Activation.SIGMOID if self.is_binary else Activation.SOFTMAX


class AudibleSample(BaseModel):
    """
    T synchronized (frame, one-second audio) pairs.

    Arrays keep the on-disk image layout: frames are (T, H, W, 3) floats in
    [0, 1], masks are (T, H, W) class ids.
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    video_id: str
    kind: SettingKind
    frames: np.ndarray
    waveform: np.ndarray
    sample_rate: int
    gt_masks: Optional[np.ndarray] = None
    supervised_frames: np.ndarray
    split: Optional[str] = None
    categories: tuple[str, ...] = ()

    @property
    def num_clips(self) -> int:
        return int(self.frames.shape[0])


def validate_sample(sample: AudibleSample, setting: TaskSetting) -> AudibleSample:
    """
    Check every AudibleSample invariant against a task setting.

    :param sample: the sample to check
    :param setting: the task setting the sample is used under
    :return: the same sample object, unchanged
    """
    frames = sample.frames
    if frames.ndim != 4 or frames.shape[-1] != 3:
        raise DimensionMismatchError(f"frames must be T×H×W×3, got shape {frames.shape}")

    t, h, w, _ = frames.shape
    if t != setting.clips_per_video:
        raise DimensionMismatchError(
            f"frames carry T={t} clips but the {setting.kind.value} setting expects T={setting.clips_per_video}"
        )
    if not np.all(np.isfinite(frames)) or frames.min(initial=0.0) < 0.0 or frames.max(initial=0.0) > 1.0:
        raise NonFiniteError(f"frames of {sample.video_id} must be finite values in [0, 1]")

    if sample.waveform.ndim != 1:
        raise DimensionMismatchError(f"waveform must be 1-D, got shape {sample.waveform.shape}")
    if not np.all(np.isfinite(sample.waveform)):
        raise NonFiniteError(f"waveform of {sample.video_id} has non-finite samples")

    supervised = np.asarray(sample.supervised_frames)
    if supervised.shape != (t,):
        raise DimensionMismatchError(
            f"supervised_frames must have length T={t}, got shape {supervised.shape}"
        )

    if sample.gt_masks is not None:
        masks = sample.gt_masks
        if masks.shape != (t, h, w):
            raise DimensionMismatchError(
                f"gt_masks shape {masks.shape} disagrees with frames (T, H, W) = {(t, h, w)}"
            )
        # binary masks hold 0 (background) and 1 (sounding) under K = 1
        bound = 2 if setting.is_binary else setting.num_classes
        if masks.size and (masks.min() < 0 or masks.max() >= bound):
            raise ClassIdOutOfRangeError(
                f"gt_masks of {sample.video_id} hold ids in [{masks.min()}, {masks.max()}], "
                f"expected ids < {bound}"
            )

    if setting.kind == SettingKind.S4 and sample.split == "train":
        expected = np.zeros(t, dtype=bool)
        expected[0] = True
        if not np.array_equal(supervised.astype(bool), expected):
            raise DimensionMismatchError(
                "S4 training samples supervise the first frame only, "
                f"got supervised_frames={supervised.astype(int).tolist()}"
            )

    logger.debug("Validated sample %s (T=%d, %dx%d)", sample.video_id, t, h, w)
    return sample


class FeaturePyramid(BaseModel):
    """The four per-stage visual maps, each (T, Cᵢ, hᵢ, wᵢ)."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    stages: list[torch.Tensor]
    base_resolution: tuple[int, int]

    @model_validator(mode="after")
    def _check_resolution_law(self) -> "FeaturePyramid":
        if len(self.stages) != 4:
            raise StageCountError(f"a feature pyramid has exactly 4 stages, got {len(self.stages)}")
        height, width = self.base_resolution
        for i, stage in enumerate(self.stages, start=1):
            expected = (height // 2 ** (i + 1), width // 2 ** (i + 1))
            if tuple(stage.shape[-2:]) != expected:
                raise DimensionMismatchError(
                    f"stage {i} must be (H, W)/2^{i + 1} = {expected}, got {tuple(stage.shape[-2:])}"
                )
        return self

    def shapes(self) -> list[tuple[int, ...]]:
        return [tuple(stage.shape) for stage in self.stages]


class AudioEmbedding(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    features: torch.Tensor
    dim: int = default_audio_dim

    @model_validator(mode="after")
    def _check_features(self) -> "AudioEmbedding":
        if self.features.shape[-1] != self.dim:
            raise DimensionMismatchError(f"audio features must end in d={self.dim}, got {tuple(self.features.shape)}")
        if not torch.isfinite(self.features).all():
            raise NonFiniteError("audio embedding has non-finite entries")
        return self

    @property
    def num_clips(self) -> int:
        return int(self.features.shape[-2])


class MaskPrediction(BaseModel):
    """Mask scores laid out (..., T, K, H, W) with the activation that applies to them."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    scores: torch.Tensor
    activation: Activation
    activated: bool = False

    @property
    def num_classes(self) -> int:
        return int(self.scores.shape[-3])
