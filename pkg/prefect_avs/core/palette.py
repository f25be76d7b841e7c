import logging
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
from PIL import Image
from pydantic import BaseModel, ConfigDict, Field, model_validator

from prefect_avs.errors import DatasetError, UnknownPaletteColorError, UnknownPaletteIdError

logger = logging.getLogger(__name__)

Color = tuple[int, int, int]

default_palette_version = "voc-bitmap-1"


def _bitmap_color(index: int) -> Color:
    """
    Deterministic, maximally spread color for a category index.

    Spreads the bits of the index over the high bits of R, G and B, so
    neighbouring ids land far apart in color space. Injective for ids < 256.
    """
    r = g = b = 0
    c = index
    for j in range(8):
        r |= ((c >> 0) & 1) << (7 - j)
        g |= ((c >> 1) & 1) << (7 - j)
        b |= ((c >> 2) & 1) << (7 - j)
        c >>= 3
    return r, g, b


class Palette(BaseModel):
    model_config = ConfigDict(frozen=True)

    entries: dict[int, Color] = Field(
        ...,
        description="Category id to (R, G, B) color",
    )

    names: dict[int, str] = Field(
        default_factory=dict,
        description="Category id to human readable name",
    )

    version: str = Field(
        default_palette_version,
        description="Tag of the scheme the colors were generated with",
    )

    @model_validator(mode="after")
    def _check_palette(self) -> "Palette":
        if self.entries.get(0) != (0, 0, 0):
            raise ValueError("palette id 0 must map to black (background)")
        colors = list(self.entries.values())
        if len(set(colors)) != len(colors):
            raise ValueError("palette colors must be distinct")
        if any(not 0 <= i < 256 for i in self.entries):
            raise ValueError("palette ids must fit an indexed-color image (0..255)")
        return self

    @classmethod
    def generate(cls, names: Sequence[str]) -> "Palette":
        """
        Build the palette for a category list whose first entry is background.
        """
        entries = {i: _bitmap_color(i) for i in range(len(names))}
        return cls(entries=entries, names=dict(enumerate(names)))

    @classmethod
    def binary(cls) -> "Palette":
        return cls(
            entries={0: (0, 0, 0), 1: (255, 255, 255)},
            names={0: "background", 1: "sounding"},
            version="binary-1",
        )

    def __len__(self) -> int:
        return len(self.entries)

    def flat_palette(self) -> list[int]:
        """256-entry flat RGB list as PIL's putpalette expects."""
        flat = [0] * (256 * 3)
        for index, (r, g, b) in self.entries.items():
            flat[3 * index:3 * index + 3] = [r, g, b]
        return flat

    def dump(self, path: str | Path) -> None:
        lines = [f"# palette {self.version}"]
        for index in sorted(self.entries):
            r, g, b = self.entries[index]
            name = self.names.get(index, f"class_{index}").replace(" ", "_")
            lines.append(f"{index} {name} {r} {g} {b}")
        Path(path).write_text("\n".join(lines) + "\n")
        logger.debug("Wrote palette with %d entries to %s", len(self.entries), path)

    @classmethod
    def load(cls, path: str | Path) -> "Palette":
        path = Path(path)
        if not path.exists():
            raise DatasetError("Palette manifest not found", path)

        version = default_palette_version
        entries, names = {}, {}
        for lineno, line in enumerate(path.read_text().splitlines(), start=1):
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                parts = line[1:].split()
                if len(parts) == 2 and parts[0] == "palette":
                    version = parts[1]
                continue
            try:
                index, name, r, g, b = line.split()
                entries[int(index)] = (int(r), int(g), int(b))
                names[int(index)] = name
            except ValueError as e:
                raise DatasetError(f"Malformed palette line {lineno}", path) from e

        try:
            return cls(entries=entries, names=names, version=version)
        except ValueError as e:
            raise DatasetError(f"Invalid palette ({e})", path) from e


def encode_semantic_mask(mask: np.ndarray, palette: Palette) -> list[Image.Image]:
    """
    Colorize a (T, H, W) id mask into one indexed-color image per frame.

    :param mask: integer class ids
    :param palette: palette holding every id present in the mask
    :return: list of T mode "P" images carrying the palette
    """
    mask = np.asarray(mask)
    if mask.ndim == 2:
        mask = mask[None]

    present = np.unique(mask)
    unknown = sorted(int(i) for i in present if int(i) not in palette.entries)
    if unknown:
        raise UnknownPaletteIdError(f"mask ids {unknown} are not in the palette")

    flat = palette.flat_palette()
    images = []
    for frame in mask:
        frame = np.ascontiguousarray(frame, dtype=np.uint8)
        image = Image.frombytes("P", (frame.shape[1], frame.shape[0]), frame.tobytes())
        image.putpalette(flat)
        images.append(image)
    return images


def _to_rgb_array(image: Image.Image | np.ndarray) -> np.ndarray:
    if isinstance(image, Image.Image):
        return np.asarray(image.convert("RGB"))
    array = np.asarray(image)
    if array.ndim != 3 or array.shape[-1] != 3:
        raise UnknownPaletteColorError(f"expected an H×W×3 color image, got shape {array.shape}")
    return array


def decode_semantic_mask(images: Iterable[Image.Image | np.ndarray], palette: Palette) -> np.ndarray:
    """
    Map color images back to a (T, H, W) id mask, the inverse of encode_semantic_mask.
    """
    ids = np.array(sorted(palette.entries), dtype=np.int64)
    keys = np.array([(r << 16) | (g << 8) | b for r, g, b in (palette.entries[i] for i in ids)], dtype=np.int64)
    order = np.argsort(keys)
    keys, ids = keys[order], ids[order]

    frames = []
    for image in images:
        rgb = _to_rgb_array(image).astype(np.int64)
        packed = (rgb[..., 0] << 16) | (rgb[..., 1] << 8) | rgb[..., 2]
        position = np.clip(np.searchsorted(keys, packed), 0, len(keys) - 1)
        found = keys[position] == packed
        if not found.all():
            bad = rgb[~found][0]
            raise UnknownPaletteColorError(f"color {tuple(int(v) for v in bad)} is not in the palette")
        frames.append(ids[position])

    if not frames:
        return np.zeros((0, 0, 0), dtype=np.int64)
    return np.stack(frames)
