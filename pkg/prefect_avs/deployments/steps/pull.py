import logging
import os
from pathlib import Path
from typing import Any, Optional

from prefect_avs.utils.archive import extract_targz

logger = logging.getLogger(__name__)


async def fetch_checkpoint(
    name: str,
    tag: str,
    path: Optional[str] = None,
    credentials: Optional[dict[str, Any]] = None,
    client_kwargs: Optional[dict] = None,
) -> dict:
    """
    Pull a published training run and unpack it into a local directory.

    :param name: The repository of the artifact.
    :param tag: The tag of the artifact.
    :param path: The local directory to unpack into; the current directory when omitted.
    :param credentials: Optional DockerRegistryCredentials block (as a dictionary).
    :param client_kwargs: Optional keyword arguments to pass to the Registry client.
    :return: Dictionary with "files" (unpacked files) and "path" (extraction directory).
    """
    from prefect_avs.registry import registry_client

    path = path or os.getcwd()
    target = f"{name}:{tag}"
    client = registry_client(target, credentials, client_kwargs)

    logger.info("Fetching %s to %s", target, path)
    layers = client.pull(target, outdir=path)

    files = []
    for layer in layers:
        if str(layer).endswith(".tar.gz"):
            files.extend(str(f) for f in extract_targz(layer, path))
            Path(layer).unlink(missing_ok=True)
        else:
            files.append(str(layer))
    logger.info("Fetched %s (%d file(s))", target, len(files))
    logger.debug("Extracted files: %s", files)

    return {
        "files": files,
        "path": path,
    }
