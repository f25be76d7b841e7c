"""
Full synthetic training runs. Deselected by default; run with `pytest -m slow`.
"""
import tempfile
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pytest

from prefect_avs.data.loader import load_split
from prefect_avs.data.manifest import DatasetManifest, Split, Subset
from prefect_avs.data.synth import SynthConfig, generate_synthetic
from prefect_avs.engine.analysis import compute_heatmaps
from prefect_avs.engine.config import TrainConfig
from prefect_avs.engine.trainer import evaluate, predict_masks, train
from prefect_avs.flows.pipeline import ablation_sweep, avm_arms, synthesize, train_run, transfer_sweep
from prefect_avs.objectives.metrics import miou

pytestmark = pytest.mark.slow


@pytest.fixture(scope="module")
def multi_source_run():
    """The default 64×64 multi-source corpus and a TPAVI model trained on it."""
    with tempfile.TemporaryDirectory() as tmpdir:
        root = Path(tmpdir)
        generate_synthetic(SynthConfig(subset=Subset.MULTI_SOURCE), root)
        setting, train_samples = load_split(root, "multi_source", Split.TRAIN)
        _, valid_samples = load_split(root, "multi_source", Split.VALID)
        checkpoint = train(TrainConfig(), setting, train_samples)
        yield root, checkpoint, train_samples, valid_samples


class TestSyntheticTraining:
    """Behavior of a model trained on the synthetic multi-source corpus."""

    def test_fits_training_set(self, multi_source_run):
        """The model overfits its training videos."""
        _, checkpoint, train_samples, _ = multi_source_run
        assert evaluate(checkpoint, train_samples).miou > 0.90

    def test_generalizes(self, multi_source_run):
        """Validation mIoU clears the desk-scale bar."""
        _, checkpoint, _, valid_samples = multi_source_run
        assert evaluate(checkpoint, valid_samples).miou > 0.60

    def test_predictions_follow_audio(self, multi_source_run):
        """Audio-swap partners get clearly different masks."""
        root, checkpoint, _, valid_samples = multi_source_run
        pairs = DatasetManifest.read(root, "multi_source", "valid").swap_pairs()
        assert pairs

        model = checkpoint.build_model()
        by_id = {sample.video_id: sample for sample in valid_samples}
        paired = [by_id[video_id] for pair in pairs for video_id in pair]
        predicted = {sample.video_id: masks for sample, masks in predict_masks(model, paired)}

        distinct = [miou(predicted[a], predicted[b]) < 0.5 for a, b in pairs]
        assert np.mean(distinct) >= 0.8

    def test_attention_covers_sounding_shapes(self, multi_source_run):
        """Stage-4 attention is higher on sounding pixels than elsewhere."""
        _, checkpoint, _, valid_samples = multi_source_run
        model = checkpoint.build_model()
        inside, outside = [], []
        for sample in valid_samples:
            maps = compute_heatmaps(model, sample, 4).numpy()
            sounding = np.asarray(sample.gt_masks) > 0
            for t in range(sample.num_clips):
                if sounding[t].any() and not sounding[t].all():
                    inside.append(maps[t][sounding[t]].mean())
                    outside.append(maps[t][~sounding[t]].mean())
        assert np.mean(inside) > np.mean(outside)


@pytest.fixture(scope="module")
def sweep_dir():
    """Shared corpora for the seed sweeps; tasks run in-process without a Prefect API."""
    with tempfile.TemporaryDirectory() as tmpdir:
        with patch("prefect_avs.flows.pipeline.synthesize", synthesize.fn), \
                patch("prefect_avs.flows.pipeline.train_run", train_run.fn):
            yield Path(tmpdir)


class TestSeedSweeps:
    """Configuration orderings by mean validation mIoU over seeds 0, 1, 2."""

    def test_tpavi_beats_no_fusion(self, sweep_dir):
        """Audio-visual attention outperforms training without audio fusion."""
        summary = ablation_sweep.fn(str(sweep_dir / "data"), str(sweep_dir / "fusion"), seeds=(0, 1, 2))
        assert summary["tpavi"] > summary["no_fusion"]

    def test_avm_regularizer_does_not_hurt(self, sweep_dir):
        """λ=0.5 with the AV variant scores at least as well as λ=0."""
        summary = ablation_sweep.fn(str(sweep_dir / "data"), str(sweep_dir / "avm"), arms=avm_arms, seeds=(0, 1, 2))
        assert summary["avm_av"] >= summary["no_avm"]

    def test_transfer_init_does_not_hurt(self, sweep_dir):
        """Single-source initialization scores at least as well as scratch on multi-source."""
        summary = transfer_sweep.fn(str(sweep_dir / "data"), str(sweep_dir / "transfer"), seeds=(0, 1, 2))
        assert summary["transfer"] >= summary["scratch"]
