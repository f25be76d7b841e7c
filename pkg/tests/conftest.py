import tempfile
from pathlib import Path

import numpy as np
import pytest

from prefect_avs.core.types import AudibleSample, SettingKind, TaskSetting
from prefect_avs.data.manifest import Split, Subset
from prefect_avs.data.synth import SynthConfig, generate_synthetic
from prefect_avs.engine.config import TrainConfig
from prefect_avs.model.avs import ModelConfig
from prefect_avs.model.backbone import BackboneConfig
from prefect_avs.model.decoder import DecoderConfig
from prefect_avs.model.fusion import FusionConfig

TINY_ARCHITECTURE = {
    "backbone": {"channels": [8, 16, 16, 16], "stem_channels": 8},
    "fusion_block": {"channels": 16, "aspp_rates": [1, 2]},
    "decoder": {"width": 8},
    "audio_dim": 16,
}


def tiny_train_config(**fields) -> TrainConfig:
    return TrainConfig.model_validate({**TINY_ARCHITECTURE, "epochs": 1, "batch_size": 2, **fields})


def tiny_model_config(setting: TaskSetting, **fields) -> ModelConfig:
    return ModelConfig(
        setting=setting,
        audio_dim=16,
        audio_channels=(4, 8, 8),
        backbone=BackboneConfig(channels=(8, 16, 16, 16), stem_channels=8),
        fusion=FusionConfig(channels=16, aspp_rates=(1, 2)),
        decoder=DecoderConfig(width=8),
        **fields,
    )


def make_sample(
    setting: TaskSetting,
    size: int = 32,
    seed: int = 0,
    video_id: str = "v0",
    split: str = "valid",
) -> AudibleSample:
    rng = np.random.default_rng(seed)
    t = setting.clips_per_video
    supervised = np.ones(t, dtype=bool)
    if setting.kind == SettingKind.S4 and split == "train":
        supervised[1:] = False
    return AudibleSample(
        video_id=video_id,
        kind=setting.kind,
        frames=rng.random((t, size, size, 3)),
        waveform=rng.normal(0.0, 0.1, size=t * 16000),
        sample_rate=16000,
        gt_masks=rng.integers(0, setting.num_classes + (1 if setting.is_binary else 0), size=(t, size, size)),
        supervised_frames=supervised,
        split=split,
    )


@pytest.fixture
def temp_dir():
    """Create a temporary directory for tests."""
    with tempfile.TemporaryDirectory() as tmpdir:
        yield Path(tmpdir)


@pytest.fixture(scope="session")
def tiny_corpus():
    """A small multi-source synthetic corpus at 32×32, shared by the whole session."""
    with tempfile.TemporaryDirectory() as tmpdir:
        config = SynthConfig(
            subset=Subset.MULTI_SOURCE,
            image_size=32,
            videos={Split.TRAIN: 6, Split.VALID: 2, Split.TEST: 2},
            seed=0,
        )
        generate_synthetic(config, tmpdir)
        yield Path(tmpdir)
