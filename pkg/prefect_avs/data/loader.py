import logging
from typing import Iterator, Optional, Sequence

import numpy as np
import soundfile as sf
import torch
from PIL import Image, UnidentifiedImageError
from torch.utils.data import Dataset

from prefect_avs.audio.spectrogram import SpectrogramConfig, waveform_to_logmel
from prefect_avs.core.palette import decode_semantic_mask
from prefect_avs.core.types import AudibleSample, SettingKind, TaskSetting, validate_sample
from prefect_avs.data.manifest import DatasetManifest, ManifestEntry, PathTemplate, Split
from prefect_avs.errors import AVSError, DatasetError, UnknownPaletteColorError

logger = logging.getLogger(__name__)


def _read_frame(path) -> np.ndarray:
    if not path.exists():
        raise DatasetError("Missing frame", path)
    try:
        with Image.open(path) as image:
            return np.asarray(image.convert("RGB"), dtype=np.float32) / 255.0
    except (UnidentifiedImageError, OSError) as e:
        raise DatasetError(f"Unreadable frame ({e})", path) from e


def _read_mask(path, palette) -> np.ndarray:
    try:
        with Image.open(path) as image:
            return decode_semantic_mask([image], palette)[0]
    except UnknownPaletteColorError as e:
        raise DatasetError(f"Mask does not match the subset palette ({e})", path) from e
    except (UnidentifiedImageError, OSError) as e:
        raise DatasetError(f"Corrupt mask ({e})", path) from e


def _read_audio(path) -> tuple[np.ndarray, int]:
    if not path.exists():
        raise DatasetError("Missing audio", path)
    try:
        waveform, sample_rate = sf.read(path, dtype="float32", always_2d=True)
    except (sf.LibsndfileError, RuntimeError) as e:
        raise DatasetError(f"Unreadable audio ({e})", path) from e
    return waveform.mean(axis=1), sample_rate


def load_sample(
    manifest: DatasetManifest,
    entry: ManifestEntry,
    setting: TaskSetting,
    paths: PathTemplate = PathTemplate(),
    palette=None,
) -> AudibleSample:
    palette = palette or manifest.palette()
    frames = np.stack([_read_frame(paths.frame_path(manifest, entry, t)) for t in range(entry.clips)])

    supervised = np.ones(entry.clips, dtype=bool)
    if setting.kind == SettingKind.S4 and entry.split == Split.TRAIN:
        supervised[1:] = False

    masks = []
    for t in range(entry.clips):
        path = paths.mask_path(manifest, entry, t)
        if path.exists():
            masks.append(_read_mask(path, palette))
        elif not supervised[t]:
            masks.append(np.zeros(frames.shape[1:3], dtype=np.int64))
        else:
            raise DatasetError("Missing mask", path)

    waveform, sample_rate = _read_audio(paths.audio_path(manifest, entry))

    return AudibleSample(
        video_id=entry.video_id,
        kind=setting.kind,
        frames=frames,
        waveform=waveform,
        sample_rate=sample_rate,
        gt_masks=np.stack(masks).astype(np.int64),
        supervised_frames=supervised,
        split=entry.split.value,
        categories=entry.labels,
    )


def load_dataset(manifest: DatasetManifest, paths: Optional[PathTemplate] = None) -> Iterator[AudibleSample]:
    """
    Stream validated samples for every entry of a manifest.

    :param manifest: which subset/split to read
    :param paths: file layout override for datasets that do not follow the default layout
    """
    paths = paths or PathTemplate()
    setting = manifest.setting()
    palette = manifest.palette()
    logger.info("Loading %d %s videos from %s", len(manifest.entries), manifest.split.value, manifest.subset_dir)

    for entry in manifest.entries:
        sample = load_sample(manifest, entry, setting, paths, palette)
        try:
            yield validate_sample(sample, setting)
        except AVSError as e:
            raise DatasetError(f"Invalid sample {entry.video_id} ({e})", paths.audio_path(manifest, entry).parent) from e


class AVSDataset(Dataset):
    """
    Tensor view over a list of samples: frames (T, 3, H, W), log-mel
    (T, time, mel), masks (T, H, W), supervised (T,).

    Horizontal flips, when enabled, depend only on (seed, epoch, index).
    """

    def __init__(
        self,
        samples: Sequence[AudibleSample],
        spectrogram: SpectrogramConfig = SpectrogramConfig(),
        flip: bool = False,
        seed: int = 0,
    ):
        self.samples = list(samples)
        self.spectrogram = spectrogram
        self.flip = flip
        self.seed = seed
        self.epoch = 0

        for sample in self.samples:
            if sample.sample_rate != spectrogram.sample_rate:
                raise DatasetError(
                    f"Audio of {sample.video_id} is {sample.sample_rate} Hz, expected {spectrogram.sample_rate} Hz"
                )

    def set_epoch(self, epoch: int) -> None:
        self.epoch = epoch

    def __len__(self) -> int:
        return len(self.samples)

    def __getitem__(self, index: int) -> dict[str, torch.Tensor]:
        sample = self.samples[index]
        frames = torch.from_numpy(np.ascontiguousarray(sample.frames.transpose(0, 3, 1, 2))).float()
        if sample.gt_masks is None:
            masks = torch.zeros(frames.shape[0], *frames.shape[-2:], dtype=torch.long)
        else:
            masks = torch.from_numpy(np.asarray(sample.gt_masks, dtype=np.int64))
        logmel = waveform_to_logmel(sample.waveform, self.spectrogram, num_clips=sample.num_clips).float()

        if self.flip and np.random.default_rng([self.seed, self.epoch, index]).random() < 0.5:
            frames, masks = frames.flip(-1), masks.flip(-1)

        return {
            "index": torch.tensor(index),
            "frames": frames,
            "logmel": logmel,
            "masks": masks,
            "supervised": torch.from_numpy(np.asarray(sample.supervised_frames, dtype=bool)),
        }


def load_split(root, subset, split, paths: Optional[PathTemplate] = None) -> tuple[TaskSetting, list[AudibleSample]]:
    """Read one split fully into memory together with its task setting."""
    manifest = DatasetManifest.read(root, subset, split)
    return manifest.setting(), list(load_dataset(manifest, paths))
