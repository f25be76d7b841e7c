import gzip
import hashlib
import logging
import os
import tarfile
import tempfile
from pathlib import Path
from typing import Iterable, Optional

logger = logging.getLogger(__name__)


def make_targz(
    items: Iterable[Path],
    dest_name: Optional[str] = None,
    working_directory: Optional[str] = None,
    archive_root: Optional[str] = None,
) -> str:
    """
    Make a reproducible tar.gz of `items`: entries are sorted by archive name,
    owners are reset to root and every mtime is 0, so identical inputs give
    identical bytes.

    :param items: files to add
    :param dest_name: output path; a temporary file when omitted
    :param working_directory: names inside the archive are relative to this directory
    :param archive_root: optional prefix for every name inside the archive
    :return: path of the written archive
    """

    def reset(tarinfo: tarfile.TarInfo) -> tarfile.TarInfo:
        tarinfo.uid = 0
        tarinfo.gid = 0
        tarinfo.uname = "root"
        tarinfo.gname = "root"
        tarinfo.mtime = 0
        return tarinfo

    if dest_name is None:
        fd, dest_name = tempfile.mkstemp(suffix=".tar.gz")
        os.close(fd)
    logger.info("Creating tar.gz archive: %s", dest_name)

    working_directory = Path(working_directory or os.getcwd()).absolute()

    entries = []
    for item in items:
        item_path = Path(item).absolute()
        try:
            rel_path = item_path.relative_to(working_directory)
        except ValueError:
            # item is not under working_directory
            rel_path = item_path.name
        entries.append((os.path.join(archive_root or "", str(rel_path)), item_path))

    with os.fdopen(os.open(dest_name, os.O_WRONLY | os.O_CREAT | os.O_TRUNC, 0o644), "wb") as out_file:
        with gzip.GzipFile(mode="wb", fileobj=out_file, mtime=0) as gzip_file:
            with tarfile.open(fileobj=gzip_file, mode="w:") as tar_file:
                for arcname, item_path in sorted(entries):
                    logger.debug("Adding %s to archive %s", item_path, dest_name)
                    tar_file.add(item_path, filter=reset, arcname=arcname, recursive=False)

    logger.info("Added %d file(s) to archive %s", len(entries), dest_name)
    return dest_name


def diff_id_from_tar_gz(tar_gz_path: str) -> str:
    """sha256 of the uncompressed tar stream."""
    logger.debug("Calculating diff ID for tar.gz: %s", tar_gz_path)
    with open(tar_gz_path, "rb") as tar_gz_file:
        with gzip.GzipFile(fileobj=tar_gz_file, mode="rb") as gzip_file:
            hash_value = hashlib.file_digest(gzip_file, "sha256").hexdigest()
    logger.debug("Calculated diff ID: sha256:%s for %s", hash_value, tar_gz_path)
    return hash_value


def extract_targz(archive: str | Path, destination: str | Path) -> list[Path]:
    """Unpack an archive made by `make_targz`; returns the extracted files."""
    destination = Path(destination)
    destination.mkdir(parents=True, exist_ok=True)
    with tarfile.open(archive, mode="r:gz") as tar_file:
        members = [m for m in tar_file.getmembers() if m.isfile()]
        tar_file.extractall(destination, members=members, filter="data")
    logger.info("Extracted %d file(s) from %s to %s", len(members), archive, destination)
    return [destination / m.name for m in members]
