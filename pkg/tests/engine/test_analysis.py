import numpy as np
import pytest
import torch
from PIL import Image

from prefect_avs.core.types import TaskSetting
from prefect_avs.engine.analysis import (
    ClusterResult,
    cluster_audio_embeddings,
    cluster_embeddings,
    collect_audio_embeddings,
    compute_heatmaps,
    export_heatmaps,
    project_visual_features,
)
from prefect_avs.engine.checkpoint import Checkpoint
from prefect_avs.errors import FusionAbsentError, TooFewSamplesError
from prefect_avs.model.avs import FusionMode, build_model
from tests.conftest import make_sample, tiny_model_config, tiny_train_config

MS3 = TaskSetting.for_kind("MS3")


@pytest.fixture
def model():
    """A seeded tiny multi-source model with TPAVI at every stage."""
    return build_model(tiny_model_config(MS3), seed=0)


class TestHeatmaps:
    """Unit tests for compute_heatmaps and export_heatmaps."""

    @pytest.mark.parametrize("stage", [1, 4])
    def test_one_map_per_frame(self, model, stage):
        """T full-resolution maps, each within [0, 1]."""
        maps = compute_heatmaps(model, make_sample(MS3), stage)
        assert maps.shape == (5, 32, 32)
        assert maps.min() >= 0.0
        assert maps.max() <= 1.0

    def test_from_checkpoint(self, temp_dir):
        """Heatmaps can be read straight from a saved checkpoint."""
        config = tiny_train_config()
        checkpoint = Checkpoint.from_model(build_model(config.model_for(MS3), seed=0), config)
        path = checkpoint.save(temp_dir / "last.pt")
        sample = make_sample(MS3)
        assert torch.equal(compute_heatmaps(path, sample, 2), compute_heatmaps(checkpoint, sample, 2))

    def test_stage_without_tpavi(self):
        """Stages without a TPAVI block have no attention to show."""
        partial = build_model(tiny_model_config(MS3, tpavi_stages=(4,)), seed=0)
        with pytest.raises(FusionAbsentError):
            compute_heatmaps(partial, make_sample(MS3), 1)

        naive = build_model(tiny_model_config(MS3, fusion_mode=FusionMode.NAIVE), seed=0)
        with pytest.raises(FusionAbsentError):
            compute_heatmaps(naive, make_sample(MS3), 4)

        with pytest.raises(FusionAbsentError):
            compute_heatmaps(partial, make_sample(MS3), 5)

    def test_export(self, model, temp_dir):
        """One grayscale PNG per frame under the video's directory."""
        paths = export_heatmaps(model, make_sample(MS3, video_id="clip"), 3, temp_dir)
        assert paths == [temp_dir / "clip" / f"stage3_{t}.png" for t in range(5)]
        with Image.open(paths[0]) as image:
            assert image.mode == "L"
            assert image.size == (32, 32)


class TestClustering:
    """Unit tests for the audio-embedding clustering."""

    def test_single_cluster(self):
        """K = 1 puts every clip in the same group."""
        embeddings = np.random.default_rng(0).normal(size=(10, 8))
        labels, coordinates = cluster_embeddings(embeddings, k=1)
        assert (labels == 0).all()
        assert coordinates.shape == (10, 2)

    def test_separated_groups(self):
        """Well separated blobs end up in distinct clusters."""
        rng = np.random.default_rng(1)
        centers = np.array([[0.0] * 6, [50.0] * 6, [-50.0, 50.0] * 3])
        embeddings = np.concatenate([c + rng.normal(scale=0.1, size=(8, 6)) for c in centers])
        labels, _ = cluster_embeddings(embeddings, k=3, seed=0)
        groups = labels.reshape(3, 8)
        assert all(len(set(group)) == 1 for group in groups.tolist())
        assert len({group[0] for group in groups.tolist()}) == 3

    def test_seeded(self):
        """The same seed gives the same partition."""
        embeddings = np.random.default_rng(2).normal(size=(30, 16))
        first, _ = cluster_embeddings(embeddings, k=4, seed=7)
        second, _ = cluster_embeddings(embeddings, k=4, seed=7)
        np.testing.assert_array_equal(first, second)

    @pytest.mark.parametrize("rows, k", [(5, 20), (1, 2), (0, 1)])
    def test_too_few_samples(self, rows, k):
        """At least K embeddings, and at least one, are needed."""
        with pytest.raises(TooFewSamplesError):
            cluster_embeddings(np.zeros((rows, 4)), k=k)

    def test_single_embedding_single_cluster(self):
        """One embedding with K = 1 is a valid partition."""
        labels, coordinates = cluster_embeddings(np.ones((1, 4)), k=1)
        assert labels.tolist() == [0]
        assert coordinates.shape == (1, 2)

    def test_cluster_audio_embeddings(self, model, temp_dir):
        """Every clip is assigned and the table is written."""
        samples = [make_sample(MS3, seed=i, video_id=f"v{i}") for i in range(2)]
        keys, embeddings = collect_audio_embeddings(model, samples)
        assert keys == [(f"v{i}", t) for i in range(2) for t in range(5)]
        assert embeddings.shape == (10, 16)

        result = cluster_audio_embeddings(model, samples, k=3, out_dir=temp_dir)
        rows = (temp_dir / "clusters.tsv").read_text().splitlines()
        assert len(rows) == 10
        video_id, t, label, _, _ = rows[0].split("\t")
        assert (video_id, int(t)) == ("v0", 0)
        assert int(label) == result.labels[0]

    def test_dump(self, temp_dir):
        """Cluster tables are tab separated."""
        result = ClusterResult(keys=[("a", 0)], labels=np.array([2]), coordinates=np.array([[0.5, -1.0]]))
        path = result.dump(temp_dir / "clusters.tsv")
        assert path.read_text() == "a\t0\t2\t0.500000\t-1.000000\n"


class TestVisualProjection:
    """Unit tests for project_visual_features."""

    def test_one_point_per_clip(self, model):
        """t-SNE yields a 2-D point per clip."""
        samples = [make_sample(MS3, seed=i, video_id=f"v{i}") for i in range(2)]
        points = project_visual_features(model, samples, stage=4)
        assert points.shape == (10, 2)
        assert np.isfinite(points).all()

    def test_too_few_clips(self):
        """Two clips are not enough for an embedding."""
        setting = TaskSetting.for_kind("MS3", clips_per_video=2)
        short = build_model(tiny_model_config(setting), seed=0)
        with pytest.raises(TooFewSamplesError):
            project_visual_features(short, [make_sample(setting)])


class TestToneClusters:
    """Audio clustering against known tone classes."""

    def test_two_tones_two_clusters(self, model):
        """Clips of two well separated tones split exactly by tone."""
        rng = np.random.default_rng(0)
        time = np.arange(16000) / 16000
        samples = []
        for index, frequency in enumerate([300.0, 300.0, 1500.0, 1500.0]):
            waveform = np.concatenate(
                [0.3 * np.sin(2 * np.pi * frequency * time + rng.uniform(0, 2 * np.pi)) for _ in range(5)]
            )
            samples.append(
                make_sample(MS3, seed=index, video_id=f"v{index}").model_copy(update={"waveform": waveform})
            )

        result = cluster_audio_embeddings(model, samples, k=2)
        labels = result.labels.reshape(2, 10)
        assert len(set(labels[0].tolist())) == 1
        assert len(set(labels[1].tolist())) == 1
        assert labels[0, 0] != labels[1, 0]
