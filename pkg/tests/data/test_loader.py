import shutil

import numpy as np
import pytest
import torch
from PIL import Image

from prefect_avs.audio.spectrogram import SpectrogramConfig
from prefect_avs.core.types import TaskSetting
from prefect_avs.data.loader import AVSDataset, load_dataset, load_split
from prefect_avs.data.manifest import DatasetManifest, Split, Subset
from prefect_avs.data.synth import SynthConfig, generate_synthetic
from prefect_avs.errors import DatasetError
from tests.conftest import make_sample


@pytest.fixture
def corpus_copy(tiny_corpus, temp_dir):
    """A writable copy of the shared corpus."""
    shutil.copytree(tiny_corpus, temp_dir, dirs_exist_ok=True)
    return temp_dir


def _first_video(root, split="valid"):
    manifest = DatasetManifest.read(root, "multi_source", split)
    return manifest, root / "multi_source" / split / manifest.entries[0].video_id


class TestLoadDataset:
    """Unit tests for load_dataset and load_split."""

    def test_load_split(self, tiny_corpus):
        """A split loads fully with its setting."""
        setting, samples = load_split(tiny_corpus, "multi_source", "valid")
        assert setting == TaskSetting.for_kind("MS3")
        assert [s.split for s in samples] == ["valid", "valid"]
        sample = samples[0]
        assert sample.frames.dtype == np.float32
        assert 0.0 <= sample.frames.min() and sample.frames.max() <= 1.0
        assert set(np.unique(sample.gt_masks)) <= {0, 1}
        assert sample.supervised_frames.all()
        assert sample.sample_rate == 16000

    def test_missing_frame(self, corpus_copy):
        """A missing frame names the file."""
        manifest, video = _first_video(corpus_copy)
        (video / "frames" / "2.png").unlink()
        with pytest.raises(DatasetError, match="Missing frame") as exc_info:
            list(load_dataset(manifest))
        assert exc_info.value.path == video / "frames" / "2.png"

    def test_missing_mask(self, corpus_copy):
        """Every frame of a fully supervised split needs its mask."""
        manifest, video = _first_video(corpus_copy)
        (video / "masks" / "4.png").unlink()
        with pytest.raises(DatasetError, match="Missing mask"):
            list(load_dataset(manifest))

    def test_missing_audio(self, corpus_copy):
        """A missing waveform names the file."""
        manifest, video = _first_video(corpus_copy)
        (video / "audio.wav").unlink()
        with pytest.raises(DatasetError, match="Missing audio"):
            list(load_dataset(manifest))

    def test_mask_outside_palette(self, corpus_copy):
        """Mask colors must belong to the subset palette."""
        manifest, video = _first_video(corpus_copy)
        Image.new("RGB", (32, 32), (12, 200, 7)).save(video / "masks" / "0.png")
        with pytest.raises(DatasetError, match="palette"):
            list(load_dataset(manifest))

    def test_corrupt_frame(self, corpus_copy):
        """Undecodable frames are reported as unreadable."""
        manifest, video = _first_video(corpus_copy)
        (video / "frames" / "0.png").write_bytes(b"not a png")
        with pytest.raises(DatasetError, match="Unreadable frame"):
            list(load_dataset(manifest))

    def test_single_source_training_supervision(self, temp_dir):
        """Single-source training videos are supervised on their first frame only."""
        config = SynthConfig(
            subset=Subset.SINGLE_SOURCE,
            image_size=32,
            videos={Split.TRAIN: 2, Split.VALID: 1, Split.TEST: 0},
        )
        generate_synthetic(config, temp_dir)
        video = temp_dir / "single_source" / "train" / "train_00000"
        for t in range(1, 5):
            (video / "masks" / f"{t}.png").unlink()

        _, train = load_split(temp_dir, "single_source", "train")
        assert train[0].supervised_frames.tolist() == [True, False, False, False, False]
        assert not train[0].gt_masks[1:].any()

        _, valid = load_split(temp_dir, "single_source", "valid")
        assert valid[0].supervised_frames.all()


class TestAVSDataset:
    """Unit tests for AVSDataset."""

    def test_item_shapes(self):
        """Items are channels-first tensors with one log-mel per clip."""
        setting = TaskSetting.for_kind("MS3")
        dataset = AVSDataset([make_sample(setting)])
        item = dataset[0]
        assert item["frames"].shape == (5, 3, 32, 32)
        assert item["frames"].dtype == torch.float32
        assert item["logmel"].shape == (5, 98, 64)
        assert item["masks"].shape == (5, 32, 32)
        assert item["supervised"].dtype == torch.bool

    def test_flip_is_seeded(self):
        """Flips depend on (seed, epoch, index) only and move frames with masks."""
        setting = TaskSetting.for_kind("MS3")
        samples = [make_sample(setting, seed=i, video_id=f"v{i}") for i in range(8)]
        plain = AVSDataset(samples)
        first, second = AVSDataset(samples, flip=True, seed=1), AVSDataset(samples, flip=True, seed=1)

        flipped = 0
        for epoch in range(4):
            first.set_epoch(epoch)
            second.set_epoch(epoch)
            for index in range(len(samples)):
                a, b, reference = first[index], second[index], plain[index]
                assert torch.equal(a["frames"], b["frames"])
                if torch.equal(a["frames"], reference["frames"]):
                    assert torch.equal(a["masks"], reference["masks"])
                else:
                    flipped += 1
                    assert torch.equal(a["frames"], reference["frames"].flip(-1))
                    assert torch.equal(a["masks"], reference["masks"].flip(-1))
        assert 0 < flipped < 4 * len(samples)

    def test_sample_rate_mismatch(self):
        """Audio must match the spectrogram sample rate."""
        sample = make_sample(TaskSetting.for_kind("MS3"))
        with pytest.raises(DatasetError, match="16000 Hz"):
            AVSDataset([sample], spectrogram=SpectrogramConfig(sample_rate=22050))
