import numpy as np
import pytest
from PIL import Image
from pydantic import ValidationError

from prefect_avs.core.palette import Palette, decode_semantic_mask, encode_semantic_mask
from prefect_avs.errors import DatasetError, UnknownPaletteColorError, UnknownPaletteIdError


class TestPalette:
    """Unit tests for Palette."""

    def test_generated_palette_is_injective_with_black_background(self):
        """Generated colors are distinct and id 0 is black."""
        palette = Palette.generate(["background"] + [f"c{i}" for i in range(70)])
        assert palette.entries[0] == (0, 0, 0)
        assert len(set(palette.entries.values())) == len(palette)

    def test_generation_is_deterministic(self):
        """The same names always give the same colors."""
        names = ["background", "dog", "guitar"]
        assert Palette.generate(names) == Palette.generate(names)

    def test_duplicate_colors_rejected(self):
        """Two ids sharing a color break injectivity."""
        with pytest.raises(ValidationError, match="distinct"):
            Palette(entries={0: (0, 0, 0), 1: (10, 10, 10), 2: (10, 10, 10)})

    def test_background_must_be_black(self):
        """Id 0 maps to black."""
        with pytest.raises(ValidationError, match="black"):
            Palette(entries={0: (1, 0, 0)})

    def test_dump_and_load(self, temp_dir):
        """The text manifest reads back to an equal palette."""
        palette = Palette.generate(["background", "violin", "lawn mower"])
        palette.dump(temp_dir / "palette.txt")
        loaded = Palette.load(temp_dir / "palette.txt")
        assert loaded.entries == palette.entries
        assert loaded.names[2] == "lawn_mower"
        assert loaded.version == palette.version

    def test_load_missing(self, temp_dir):
        """A missing palette file is a dataset error naming the path."""
        with pytest.raises(DatasetError, match="palette.txt"):
            Palette.load(temp_dir / "palette.txt")

    def test_load_malformed(self, temp_dir):
        """Lines must carry id, name and three channels."""
        (temp_dir / "palette.txt").write_text("0 background 0 0\n")
        with pytest.raises(DatasetError, match="line 1"):
            Palette.load(temp_dir / "palette.txt")


class TestSemanticMaskCodec:
    """Unit tests for encode_semantic_mask and decode_semantic_mask."""

    def test_zero_mask_encodes_black(self):
        """An all-background mask gives all-black images."""
        images = encode_semantic_mask(np.zeros((2, 4, 4), dtype=np.int64), Palette.binary())
        assert len(images) == 2
        assert images[0].mode == "P"
        assert not np.asarray(images[0].convert("RGB")).any()

    def test_two_ids_two_colors(self):
        """Ids {0, 1} give a two-color image."""
        mask = np.zeros((1, 4, 4), dtype=np.int64)
        mask[0, :2] = 1
        rgb = np.asarray(encode_semantic_mask(mask, Palette.binary())[0].convert("RGB"))
        assert {tuple(c) for c in rgb.reshape(-1, 3)} == {(0, 0, 0), (255, 255, 255)}

    def test_random_masks_decode_to_themselves(self):
        """decode(encode(m)) = m for random 8×8 masks."""
        palette = Palette.generate(["background"] + [f"c{i}" for i in range(9)])
        rng = np.random.default_rng(0)
        for _ in range(20):
            mask = rng.integers(0, len(palette), size=(3, 8, 8))
            np.testing.assert_array_equal(decode_semantic_mask(encode_semantic_mask(mask, palette), palette), mask)

    def test_saved_png_keeps_ids(self, temp_dir):
        """Indexed PNGs written to disk decode to the same ids."""
        palette = Palette.generate(["background", "a", "b"])
        mask = np.array([[[0, 1], [2, 1]]])
        encode_semantic_mask(mask, palette)[0].save(temp_dir / "0.png")
        with Image.open(temp_dir / "0.png") as image:
            np.testing.assert_array_equal(decode_semantic_mask([image], palette), mask)

    def test_unknown_id(self):
        """Ids outside the palette cannot be encoded."""
        with pytest.raises(UnknownPaletteIdError):
            encode_semantic_mask(np.full((1, 2, 2), 5), Palette.binary())

    def test_unknown_color(self):
        """A color outside the palette cannot be decoded."""
        image = np.zeros((2, 2, 3), dtype=np.uint8)
        image[0, 0] = (12, 34, 56)
        with pytest.raises(UnknownPaletteColorError, match="12, 34, 56"):
            decode_semantic_mask([image], Palette.binary())
