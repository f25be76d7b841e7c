from prefect_avs.flows.pipeline import ablation_sweep, avs_pipeline, transfer_sweep

__all__ = ["ablation_sweep", "avs_pipeline", "transfer_sweep"]
