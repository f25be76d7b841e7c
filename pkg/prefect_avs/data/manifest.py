import csv
import logging
from enum import Enum
from pathlib import Path
from typing import Optional

from pydantic import BaseModel, ConfigDict, Field

from prefect_avs.core.palette import Palette
from prefect_avs.core.types import SettingKind, TaskSetting
from prefect_avs.defaults import default_objects_clips, default_semantic_clips
from prefect_avs.errors import DatasetError

logger = logging.getLogger(__name__)

manifest_filename = "manifest.tsv"
palette_filename = "palette.txt"
swap_pairs_filename = "swap_pairs.tsv"


class Subset(str, Enum):
    SINGLE_SOURCE = "single_source"
    MULTI_SOURCE = "multi_source"
    SEMANTIC = "semantic"

    @property
    def kind(self) -> SettingKind:
        return {
            Subset.SINGLE_SOURCE: SettingKind.S4,
            Subset.MULTI_SOURCE: SettingKind.MS3,
            Subset.SEMANTIC: SettingKind.AVSS,
        }[self]

    @property
    def default_clips(self) -> int:
        return default_semantic_clips if self == Subset.SEMANTIC else default_objects_clips


class Split(str, Enum):
    TRAIN = "train"
    VALID = "valid"
    TEST = "test"


class PathTemplate(BaseModel):
    """
    Where a video's files live. Placeholders: {root}, {subset}, {split},
    {video_id} and, for frames and masks, {t}.
    """
    model_config = ConfigDict(frozen=True)

    frame: str = "{root}/{subset}/{split}/{video_id}/frames/{t}.png"
    mask: str = "{root}/{subset}/{split}/{video_id}/masks/{t}.png"
    audio: str = "{root}/{subset}/{split}/{video_id}/audio.wav"

    def _format(self, template: str, manifest: "DatasetManifest", entry: "ManifestEntry", **extra) -> Path:
        return Path(template.format(
            root=manifest.root,
            subset=manifest.subset.value,
            split=entry.split.value,
            video_id=entry.video_id,
            **extra,
        ))

    def frame_path(self, manifest: "DatasetManifest", entry: "ManifestEntry", t: int) -> Path:
        return self._format(self.frame, manifest, entry, t=t)

    def mask_path(self, manifest: "DatasetManifest", entry: "ManifestEntry", t: int) -> Path:
        return self._format(self.mask, manifest, entry, t=t)

    def audio_path(self, manifest: "DatasetManifest", entry: "ManifestEntry") -> Path:
        return self._format(self.audio, manifest, entry)


class ManifestEntry(BaseModel):
    model_config = ConfigDict(frozen=True)

    video_id: str
    labels: tuple[str, ...] = ()
    split: Split
    clips: int = Field(..., ge=1)


class DatasetManifest(BaseModel):
    model_config = ConfigDict(frozen=True)

    root: Path
    subset: Subset
    split: Split
    entries: list[ManifestEntry] = Field(default_factory=list)
    clips_per_video: Optional[int] = Field(None, ge=1, description="T; the subset default when omitted")

    @property
    def clips(self) -> int:
        return self.clips_per_video or self.subset.default_clips

    @property
    def subset_dir(self) -> Path:
        return self.root / self.subset.value

    def palette(self) -> Palette:
        return Palette.load(self.subset_dir / palette_filename)

    def setting(self) -> TaskSetting:
        num_classes = len(self.palette()) if self.subset == Subset.SEMANTIC else None
        return TaskSetting.for_kind(self.subset.kind, num_classes=num_classes, clips_per_video=self.clips)

    def swap_pairs(self) -> list[tuple[str, str]]:
        """Audio-swap pairs whose members both belong to this split."""
        path = self.subset_dir / swap_pairs_filename
        if not path.exists():
            return []
        ids = {entry.video_id for entry in self.entries}
        with open(path, newline="") as f:
            return [(a, b) for a, b in csv.reader(f, delimiter="\t") if a in ids and b in ids]

    @classmethod
    def read(cls, root: str | Path, subset: Subset | str, split: Split | str, clips_per_video: Optional[int] = None) -> "DatasetManifest":
        """
        Read `<root>/<subset>/manifest.tsv` and keep the entries of one split.

        Lines are `video_id<TAB>label,label<TAB>split<TAB>T`.
        """
        root, subset, split = Path(root), Subset(subset), Split(split)
        path = root / subset.value / manifest_filename
        if not path.exists():
            raise DatasetError("Manifest not found", path)

        seen: dict[str, Split] = {}
        entries = []
        with open(path, newline="") as f:
            for lineno, row in enumerate(csv.reader(f, delimiter="\t"), start=1):
                if not row or row[0].startswith("#"):
                    continue
                try:
                    video_id, labels, entry_split, clips = row
                    entry = ManifestEntry(
                        video_id=video_id,
                        labels=tuple(label for label in labels.split(",") if label),
                        split=Split(entry_split),
                        clips=int(clips),
                    )
                except ValueError as e:
                    raise DatasetError(f"Malformed manifest line {lineno}", path) from e

                if entry.video_id in seen:
                    raise DatasetError(f"Video {entry.video_id} is listed twice (splits must be disjoint)", path)
                seen[entry.video_id] = entry.split
                if entry.split == split:
                    entries.append(entry)

        manifest = cls(root=root, subset=subset, split=split, entries=entries, clips_per_video=clips_per_video)
        for entry in entries:
            if entry.clips != manifest.clips:
                raise DatasetError(f"Video {entry.video_id} has T={entry.clips}, subset expects T={manifest.clips}", path)

        logger.info("Read %d %s/%s entries from %s", len(entries), subset.value, split.value, path)
        return manifest


def write_manifest(root: str | Path, subset: Subset, entries: list[ManifestEntry]) -> Path:
    path = Path(root) / subset.value / manifest_filename
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as f:
        writer = csv.writer(f, delimiter="\t", lineterminator="\n")
        for entry in entries:
            writer.writerow([entry.video_id, ",".join(entry.labels), entry.split.value, entry.clips])
    logger.debug("Wrote manifest with %d entries to %s", len(entries), path)
    return path
