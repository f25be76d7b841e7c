import logging
from typing import Any, Optional, Tuple

logger = logging.getLogger(__name__)


def resolve_credentials(
    credentials: Optional[dict[str, Any]],
    registry_url: Optional[str],
) -> Tuple[Optional[str], Optional[str], Optional[str]]:
    """
    Resolve a DockerRegistryCredentials-compatible dictionary.

    :param credentials: dictionary with `username`, `password` and optionally `registry_url`
    :param registry_url: registry parsed from the artifact reference, used when the block has none
    :return: Tuple of (username, password, registry_url)
    """
    if credentials is None:
        return None, None, None

    if "username" in credentials and "password" in credentials:
        logger.debug("Detected DockerRegistryCredentials compatible dictionary")
        password = credentials["password"]
        if hasattr(password, "get_secret_value"):
            password = password.get_secret_value()
        return credentials["username"], password, credentials.get("registry_url", registry_url)

    raise ValueError(
        "Unsupported credentials format. Expected a dictionary with "
        "DockerRegistryCredentials fields (username/password)."
    )


def registry_hostname(reference: str) -> Optional[str]:
    """`ghcr.io/org/model:tag` -> `ghcr.io`; None for bare repository names."""
    first, sep, _ = reference.partition("/")
    if sep and ("." in first or ":" in first or first == "localhost"):
        return first
    return None


def registry_client(
    reference: str,
    credentials: Optional[dict[str, Any]] = None,
    client_kwargs: Optional[dict] = None,
):
    """An oras registry client, logged in when credentials resolve."""
    try:
        from oras.provider import Registry
    except ImportError as e:
        raise ImportError(
            "oras is required to publish or fetch checkpoints. Install it with `pip install prefect-avs[oci]`."
        ) from e

    username, password, registry_url = resolve_credentials(credentials, registry_hostname(reference))
    client = Registry(**(client_kwargs or {}))
    if username and password:
        logger.debug("Logging in to registry: %s", registry_url or "default")
        client.login(username=username, password=password, hostname=registry_url)
    return client
