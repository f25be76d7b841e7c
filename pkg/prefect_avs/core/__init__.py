from prefect_avs.core.palette import Palette, decode_semantic_mask, encode_semantic_mask
from prefect_avs.core.types import (
    Activation,
    AudibleSample,
    AudioEmbedding,
    FeaturePyramid,
    MaskPrediction,
    SettingKind,
    TaskSetting,
    validate_sample,
)
