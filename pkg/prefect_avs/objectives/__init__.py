from prefect_avs.objectives.losses import (
    AvmVariant,
    LossConfig,
    LossTerms,
    PairingPool,
    avm_av_loss,
    avm_vv_loss,
    compute_loss,
    foreground,
    main_loss,
    masked_pooled_features,
    nearest_audio_partners,
    softmax_kl,
    total_loss,
)
from prefect_avs.objectives.metrics import MetricAccumulator, MetricReport, binary_f_score, binary_iou, f_score, miou
