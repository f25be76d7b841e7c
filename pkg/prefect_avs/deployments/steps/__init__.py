from prefect_avs.deployments.steps.build import build_synthetic_corpus, bundle_run
from prefect_avs.deployments.steps.pull import fetch_checkpoint
from prefect_avs.deployments.steps.push import publish_checkpoint

__all__ = ["build_synthetic_corpus", "bundle_run", "fetch_checkpoint", "publish_checkpoint"]
