from prefect_avs.model.avs import AVSModel, FusionMode, ModelConfig, ModelOutput, build_model, stage_projections
from prefect_avs.model.backbone import BackboneConfig, VisualBackbone, encode_frames
from prefect_avs.model.decoder import DecoderConfig, FPNDecoder, activate, decode
from prefect_avs.model.fusion import (
    Aspp,
    FusionConfig,
    NaiveFusion,
    NoFusion,
    Tpavi,
    aspp,
    attention_heatmap,
    broadcast_audio,
    naive_fusion,
    tpavi,
)
