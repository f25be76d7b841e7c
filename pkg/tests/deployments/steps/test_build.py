import tarfile
from pathlib import Path

import pytest

from prefect_avs.data.synth import corpus_digest
from prefect_avs.deployments.steps.build import build_synthetic_corpus, bundle_run

TINY_CORPUS = {"image_size": 32, "videos": {"train": 2, "valid": 1, "test": 1}}


@pytest.fixture
def run_dir(temp_dir):
    """A run directory as `train` leaves it, plus a stray file."""
    run = temp_dir / "run"
    run.mkdir()
    (run / "last.pt").write_bytes(b"last weights")
    (run / "best.pt").write_bytes(b"best weights")
    (run / "config.yaml").write_text("lr: 0.0001\n")
    (run / "metrics.jsonl").write_text('{"epoch": 1}\n')
    (run / "scratch.bin").write_bytes(b"ignored")
    return run


class TestBuildSyntheticCorpus:
    """Unit tests for build_synthetic_corpus."""

    @pytest.mark.asyncio
    async def test_builds_corpus(self, temp_dir):
        """The step writes the corpus and reports its digest."""
        result = await build_synthetic_corpus(str(temp_dir), "single_source", seed=2, config=TINY_CORPUS)

        assert result["root"] == str(temp_dir)
        assert result["subset"] == "single_source"
        assert result["digest"] == corpus_digest(temp_dir, "single_source")
        assert (temp_dir / "single_source" / "manifest.tsv").exists()

    @pytest.mark.asyncio
    async def test_seed_overrides_config(self, temp_dir):
        """The step's seed wins over a seed in the config mapping."""
        first = await build_synthetic_corpus(str(temp_dir / "a"), seed=1, config={**TINY_CORPUS, "seed": 9})
        second = await build_synthetic_corpus(str(temp_dir / "b"), seed=1, config=TINY_CORPUS)
        assert first["digest"] == second["digest"]


class TestBundleRun:
    """Unit tests for bundle_run."""

    @pytest.mark.asyncio
    async def test_bundles_run_files(self, run_dir, temp_dir):
        """Checkpoints, config and metrics are packed with run-relative names."""
        output = temp_dir / "bundle.tar.gz"
        result = await bundle_run(str(run_dir), str(output))

        assert result["output_path"] == str(output)
        with tarfile.open(output, "r:gz") as tar:
            names = tar.getnames()
        assert names == ["best.pt", "config.yaml", "last.pt", "metrics.jsonl"]

    @pytest.mark.asyncio
    async def test_reproducible_digest(self, run_dir, temp_dir):
        """Bundling the same run twice gives the same digest."""
        first = await bundle_run(str(run_dir), str(temp_dir / "one.tar.gz"))
        second = await bundle_run(str(run_dir))
        try:
            assert first["digest"] == second["digest"]
        finally:
            Path(second["output_path"]).unlink()

    @pytest.mark.asyncio
    async def test_empty_run(self, temp_dir):
        """A directory without run files cannot be bundled."""
        with pytest.raises(FileNotFoundError):
            await bundle_run(str(temp_dir))
