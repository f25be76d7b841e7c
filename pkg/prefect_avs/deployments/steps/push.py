import logging
from pathlib import Path
from typing import Any, Optional

from prefect_avs.defaults import default_bundle_artifact_type, default_bundle_media_type
from prefect_avs.deployments.steps.build import bundle_run

logger = logging.getLogger(__name__)


async def publish_checkpoint(
    name: str,
    tag: str,
    run_dir: str,
    credentials: Optional[dict[str, Any]] = None,
    client_kwargs: Optional[dict] = None,
) -> dict:
    """
    Push a training run to a remote OCI registry as a single-layer artifact.

    :param name: The repository of the artifact, e.g. `ghcr.io/org/avs-ms3`.
    :param tag: The tag of the artifact.
    :param run_dir: The run directory written by `train`.
    :param credentials: Optional DockerRegistryCredentials block (as a dictionary).
    :param client_kwargs: Optional keyword arguments to pass to the Registry client.
    :return: Dictionary with "image", "digest" (manifest digest) and "diff_id" (bundle content hash).
    """
    from prefect_avs.registry import registry_client

    target = f"{name}:{tag}"
    bundle = await bundle_run(run_dir)
    logger.info("Publishing %s as %s", run_dir, target)

    client = registry_client(target, credentials, client_kwargs)
    try:
        response = client.push(
            target,
            files=[f"{bundle['output_path']}:{default_bundle_media_type}"],
            manifest_annotations={"org.opencontainers.artifact.type": default_bundle_artifact_type},
            disable_path_validation=True,
        )
    finally:
        Path(bundle["output_path"]).unlink(missing_ok=True)
    digest = response.headers.get("Docker-Content-Digest") if hasattr(response, "headers") else None
    logger.info("Published %s (manifest digest %s)", target, digest or "unknown")

    return {
        "image": target,
        "digest": digest,
        "diff_id": bundle["digest"],
    }
