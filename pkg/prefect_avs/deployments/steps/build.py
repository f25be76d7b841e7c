import logging
import tempfile
from pathlib import Path
from typing import Optional

from prefect_avs.data.synth import SynthConfig, corpus_digest, generate_synthetic
from prefect_avs.utils.archive import diff_id_from_tar_gz, make_targz

logger = logging.getLogger(__name__)

bundle_patterns = ("*.pt", "config.yaml", "metrics.jsonl", "*.txt", "*.json")


async def build_synthetic_corpus(
    root: str,
    subset: str = "multi_source",
    seed: int = 0,
    config: Optional[dict] = None,
) -> dict:
    """
    Generate the synthetic corpus as a deployment build step.

    :param root: directory the corpus is written under
    :param subset: single_source, multi_source or semantic
    :param seed: corpus seed
    :param config: further SynthConfig fields (image_size, videos, ...)
    :return: {"root", "subset", "digest"}; the digest identifies the corpus bytes
    """
    synth = SynthConfig.model_validate({**(config or {}), "subset": subset, "seed": seed})
    logger.info("Building synthetic %s corpus under %s (seed %d)", subset, root, seed)
    generate_synthetic(synth, root)
    digest = corpus_digest(root, subset)
    logger.info("Synthetic corpus digest: sha256:%s", digest)

    return {
        "root": str(root),
        "subset": subset,
        "digest": digest,
    }


async def bundle_run(
    run_dir: str,
    output_path: Optional[str] = None,
) -> dict:
    """
    Pack a run directory's checkpoints, config snapshot and metrics into a
    reproducible tar.gz.

    :param run_dir: directory written by `train`
    :param output_path: where the archive goes; a temporary file when omitted
    :return: {"output_path", "digest"}
    """
    run_dir = Path(run_dir)
    items = sorted({path for pattern in bundle_patterns for path in run_dir.glob(pattern) if path.is_file()})
    if not items:
        logger.error("Nothing to bundle in %s", run_dir)
        raise FileNotFoundError(f"no checkpoint files found in {run_dir}")

    output_path = output_path or tempfile.NamedTemporaryFile(suffix=".tar.gz", delete=False).name
    make_targz(items, output_path, working_directory=str(run_dir))
    logger.info("Bundled %d file(s) from %s into %s", len(items), run_dir, output_path)

    return {
        "output_path": output_path,
        "digest": diff_id_from_tar_gz(output_path),
    }
