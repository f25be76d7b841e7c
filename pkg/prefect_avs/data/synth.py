"""
Deterministic "sounding shapes" corpus.

Every scene holds one to three colored shapes of distinct categories on a
textured background. Each category owns a pure tone; at every second a
scheduled subset of the shapes sounds, the waveform is the sum of their tones
plus Gaussian noise, and the ground truth marks the visible pixels of exactly
those shapes. Audio-swap pairs share their frames but not their schedules.
"""
import colorsys
import logging
from pathlib import Path
from typing import Optional

import numpy as np
import soundfile as sf
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, model_validator

from prefect_avs.core.palette import Palette, encode_semantic_mask
from prefect_avs.data.manifest import (
    DatasetManifest,
    ManifestEntry,
    Split,
    Subset,
    palette_filename,
    swap_pairs_filename,
    write_manifest,
)
from prefect_avs.defaults import default_sample_rate
from prefect_avs.errors import ConfigurationError
from prefect_avs.utils.archive import diff_id_from_tar_gz, make_targz

logger = logging.getLogger(__name__)

SHAPE_KINDS = ("circle", "square", "triangle")


class SynthConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    subset: Subset = Field(Subset.MULTI_SOURCE, description="Which dataset subset the corpus imitates")
    image_size: int = Field(64, gt=0, description="Square frame size; must be divisible by 32")
    num_categories: int = Field(6, ge=1, description="Shape categories, each with its own tone")
    base_frequency: float = Field(300.0, gt=0, description="Tone of category 0 in Hz")
    frequency_step: float = Field(300.0, gt=0, description="Tone spacing between consecutive categories in Hz")
    shapes_per_scene: tuple[int, int] = Field((1, 3), description="Inclusive range of shapes per scene")
    videos: dict[Split, int] = Field(
        default_factory=lambda: {Split.TRAIN: 200, Split.VALID: 40, Split.TEST: 40},
        description="Videos per split",
    )
    clips_per_video: Optional[int] = Field(None, ge=1, description="T; the subset default when omitted")
    sample_rate: int = Field(default_sample_rate, gt=0)
    tone_amplitude: float = Field(0.3, gt=0)
    noise_level: float = Field(0.01, ge=0, description="Std of the Gaussian noise on audio and frames")
    silence_probability: float = Field(0.15, ge=0, le=1, description="Chance that a second is entirely silent")
    sounding_probability: float = Field(0.5, gt=0, le=1, description="Per-shape chance of sounding in a second")
    swap_fraction: float = Field(0.25, ge=0, le=1, description="Share of each split generated as audio-swap pairs")
    position_jitter: int = Field(0, ge=0, description="Max per-second pixel offset of every shape; 0 keeps shapes still")
    seed: int = 0

    @model_validator(mode="after")
    def _check_consistency(self) -> "SynthConfig":
        low, high = self.shapes_per_scene
        if not 1 <= low <= high:
            raise ConfigurationError(f"shapes_per_scene must satisfy 1 <= low <= high, got {self.shapes_per_scene}")
        if high > self.num_categories:
            raise ConfigurationError(
                f"scenes of up to {high} shapes need at least {high} categories, got {self.num_categories}"
            )
        if self.image_size % 32:
            raise ConfigurationError(f"image_size must be divisible by 32, got {self.image_size}")
        if self.frequencies[-1] >= self.sample_rate / 2:
            raise ConfigurationError(
                f"highest tone {self.frequencies[-1]} Hz must stay below Nyquist ({self.sample_rate / 2} Hz)"
            )
        if self.swap_fraction > 0 and high < 2:
            raise ConfigurationError("audio-swap pairs need scenes with at least two shapes")
        return self

    @property
    def frequencies(self) -> list[float]:
        return [self.base_frequency + self.frequency_step * c for c in range(self.num_categories)]

    @property
    def clips(self) -> int:
        return self.clips_per_video or self.subset.default_clips

    def category_name(self, category: int) -> str:
        return f"{SHAPE_KINDS[category % len(SHAPE_KINDS)]}_{int(self.frequencies[category])}hz"

    def category_color(self, category: int) -> np.ndarray:
        hue = category / self.num_categories
        return np.array(colorsys.hsv_to_rgb(hue, 0.85, 0.95))


class ShapeSpec(BaseModel):
    category: int
    center: tuple[float, float]
    radius: float


class Scene(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    shapes: list[ShapeSpec]
    frames: np.ndarray
    visible: np.ndarray


def _shape_mask(kind: str, center: tuple[float, float], radius: float, size: int) -> np.ndarray:
    yy, xx = np.mgrid[0:size, 0:size].astype(np.float64) + 0.5
    cy, cx = center
    if kind == "circle":
        return (yy - cy) ** 2 + (xx - cx) ** 2 <= radius ** 2
    if kind == "square":
        return (np.abs(yy - cy) <= radius * 0.85) & (np.abs(xx - cx) <= radius * 0.85)
    # upward triangle inscribed in the radius
    top, bottom = cy - radius, cy + radius * 0.8
    half_width = (yy - top) / (bottom - top) * radius
    return (yy >= top) & (yy <= bottom) & (np.abs(xx - cx) <= half_width)


def _render_scene(config: SynthConfig, rng: np.random.Generator, num_shapes: int) -> Scene:
    size, clips = config.image_size, config.clips
    categories = rng.choice(config.num_categories, size=num_shapes, replace=False)

    shapes, occupied = [], np.zeros((size, size), dtype=bool)
    for category in categories:
        for _ in range(20):
            radius = rng.uniform(0.12, 0.22) * size
            center = tuple(rng.uniform(radius + 2, size - radius - 2, size=2))
            mask = _shape_mask(SHAPE_KINDS[category % len(SHAPE_KINDS)], center, radius, size)
            if (mask & occupied).sum() <= 0.2 * mask.sum():
                break
        occupied |= mask
        shapes.append(ShapeSpec(category=int(category), center=center, radius=radius))

    yy, xx = np.mgrid[0:size, 0:size] / size
    fy, fx = rng.uniform(1.0, 4.0, size=2)
    texture = 0.4 + 0.08 * np.sin(2 * np.pi * (fy * yy + fx * xx) + rng.uniform(0, 2 * np.pi))
    texture = texture + rng.normal(0.0, 0.03, size=(size, size))

    frames = np.empty((clips, size, size, 3), dtype=np.uint8)
    visible = np.zeros((clips, len(shapes), size, size), dtype=bool)
    for t in range(clips):
        canvas = np.repeat(texture[..., None], 3, axis=2)
        owner = np.full((size, size), -1)
        for s, shape in enumerate(shapes):
            center = shape.center
            if config.position_jitter:
                dy, dx = rng.integers(-config.position_jitter, config.position_jitter + 1, size=2)
                center = (center[0] + dy, center[1] + dx)
            mask = _shape_mask(SHAPE_KINDS[shape.category % len(SHAPE_KINDS)], center, shape.radius, size)
            canvas[mask] = config.category_color(shape.category)
            owner[mask] = s
        canvas = canvas + rng.normal(0.0, config.noise_level, size=canvas.shape)
        frames[t] = np.clip(np.round(canvas * 255.0), 0, 255).astype(np.uint8)
        for s in range(len(shapes)):
            visible[t, s] = owner == s

    return Scene(shapes=shapes, frames=frames, visible=visible)


def _schedule(config: SynthConfig, rng: np.random.Generator, num_shapes: int) -> np.ndarray:
    """(T, shapes) booleans: who sounds in which second."""
    clips = config.clips
    if config.subset == Subset.SINGLE_SOURCE:
        schedule = np.zeros((clips, num_shapes), dtype=bool)
        schedule[:, rng.integers(num_shapes)] = True
        return schedule

    schedule = rng.random((clips, num_shapes)) < config.sounding_probability
    silent = rng.random(clips) < config.silence_probability
    schedule[silent] = False
    return schedule


def _swap_schedule(schedule: np.ndarray, config: SynthConfig, rng: np.random.Generator) -> np.ndarray:
    """A different schedule over the same shapes: another single source, or the per-second complement."""
    if config.subset == Subset.SINGLE_SOURCE:
        current = int(np.flatnonzero(schedule[0])[0])
        others = [s for s in range(schedule.shape[1]) if s != current]
        swapped = np.zeros_like(schedule)
        swapped[:, others[rng.integers(len(others))]] = True
        return swapped
    return ~schedule


def _waveform(config: SynthConfig, rng: np.random.Generator, scene: Scene, schedule: np.ndarray) -> np.ndarray:
    sr = config.sample_rate
    time = np.arange(config.clips * sr) / sr
    waveform = np.zeros_like(time)
    for s, shape in enumerate(scene.shapes):
        envelope = np.repeat(schedule[:, s].astype(np.float64), sr)
        waveform += envelope * config.tone_amplitude * np.sin(2 * np.pi * config.frequencies[shape.category] * time)
    waveform += rng.normal(0.0, config.noise_level, size=waveform.shape)
    return np.clip(waveform, -1.0, 1.0)


def _masks(config: SynthConfig, scene: Scene, schedule: np.ndarray) -> np.ndarray:
    size = config.image_size
    masks = np.zeros((config.clips, size, size), dtype=np.int64)
    for t in range(config.clips):
        for s, shape in enumerate(scene.shapes):
            if schedule[t, s]:
                label = shape.category + 1 if config.subset == Subset.SEMANTIC else 1
                masks[t][scene.visible[t, s]] = label
    return masks


def _write_video(directory: Path, config: SynthConfig, scene: Scene, masks: np.ndarray, waveform: np.ndarray, palette: Palette) -> None:
    (directory / "frames").mkdir(parents=True, exist_ok=True)
    (directory / "masks").mkdir(parents=True, exist_ok=True)
    for t, frame in enumerate(scene.frames):
        Image.fromarray(frame).save(directory / "frames" / f"{t}.png")
    for t, image in enumerate(encode_semantic_mask(masks, palette)):
        image.save(directory / "masks" / f"{t}.png")
    sf.write(directory / "audio.wav", waveform, config.sample_rate, subtype="PCM_16")


def subset_palette(config: SynthConfig) -> Palette:
    if config.subset == Subset.SEMANTIC:
        return Palette.generate(["background", *(config.category_name(c) for c in range(config.num_categories))])
    return Palette.binary()


def generate_synthetic(config: SynthConfig, root: str | Path) -> dict[Split, DatasetManifest]:
    """
    Write the corpus under `<root>/<subset>/` and return one manifest per split.

    Every video draws from its own generator seeded by (seed, split, index),
    so videos are independent and the corpus is fully determined by the seed.
    """
    root = Path(root)
    subset_dir = root / config.subset.value
    subset_dir.mkdir(parents=True, exist_ok=True)
    palette = subset_palette(config)
    palette.dump(subset_dir / palette_filename)

    entries, pairs = [], []
    low, high = config.shapes_per_scene
    for split_index, split in enumerate(Split):
        count = config.videos.get(split, 0)
        num_pairs = int(count * config.swap_fraction) // 2
        index = 0
        while index < count:
            rng = np.random.default_rng([config.seed, split_index, index])
            paired = index < 2 * num_pairs and index + 1 < count
            num_shapes = int(rng.integers(max(low, 2) if paired else low, high + 1))
            scene = _render_scene(config, rng, num_shapes)
            schedules = [_schedule(config, rng, num_shapes)]
            if paired:
                schedules.append(_swap_schedule(schedules[0], config, rng))

            ids = []
            for schedule in schedules:
                video_id = f"{split.value}_{index:05d}"
                masks = _masks(config, scene, schedule)
                waveform = _waveform(config, rng, scene, schedule)
                _write_video(subset_dir / split.value / video_id, config, scene, masks, waveform, palette)
                labels = tuple(config.category_name(shape.category) for shape in scene.shapes)
                entries.append(ManifestEntry(video_id=video_id, labels=labels, split=split, clips=config.clips))
                ids.append(video_id)
                index += 1
            if paired:
                pairs.append(tuple(ids))

        logger.info("Generated %d %s videos (%d audio-swap pairs)", count, split.value, num_pairs)

    write_manifest(root, config.subset, entries)
    with open(subset_dir / swap_pairs_filename, "w") as f:
        f.writelines(f"{a}\t{b}\n" for a, b in pairs)

    return {
        split: DatasetManifest(
            root=root,
            subset=config.subset,
            split=split,
            entries=[e for e in entries if e.split == split],
            clips_per_video=config.clips,
        )
        for split in Split
    }


def corpus_digest(root: str | Path, subset: Subset | str) -> str:
    """sha256 of a reproducible archive of every file of a generated subset."""
    subset_dir = Path(root) / Subset(subset).value
    files = sorted(p for p in subset_dir.rglob("*") if p.is_file())
    archive = make_targz(files, working_directory=str(subset_dir))
    try:
        return diff_id_from_tar_gz(archive)
    finally:
        Path(archive).unlink(missing_ok=True)
