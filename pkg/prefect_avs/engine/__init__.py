from prefect_avs.engine.analysis import (
    ClusterResult,
    cluster_audio_embeddings,
    compute_heatmaps,
    export_heatmaps,
    project_visual_features,
)
from prefect_avs.engine.checkpoint import Checkpoint, transfer_init
from prefect_avs.engine.config import InitMode, LRSchedule, TrainConfig, dump_config, load_config
from prefect_avs.engine.trainer import evaluate, evaluate_model, predict, predict_masks, train
