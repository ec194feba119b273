import itertools

import numpy as np
import pytest

from midz.data import (FACTOR_GRID_SCHEMA, FLOOR_PALETTE, GLYPH_PALETTE, GLYPHS, OBJECT_PALETTE, WALL_PALETTE,
                       DatasetFormatError, FactorGridConfig, GlyphPairConfig, gen_factor_pair, gen_glyph_pair,
                       generate_dataset, horizon_row, object_coverage, read_dataset, write_dataset)


def _glyph_canvases():
    from midz.data import _glyph_canvas
    return [_glyph_canvas(g, 32) for g in range(10)]


class TestGlyph:
    def test_palette_and_masks_distinct(self):
        assert len({tuple(c) for c in GLYPH_PALETTE.tolist()}) == 12
        assert len({m.tobytes() for m in GLYPHS}) == 10
        for c in GLYPH_PALETTE:
            assert not np.allclose(c, 0) and not np.allclose(c, 1)

    def test_deterministic(self):
        a = gen_glyph_pair(GlyphPairConfig(seed=2), 17)
        b = gen_glyph_pair(GlyphPairConfig(seed=2), 17)
        assert a[0].tobytes() == b[0].tobytes() and a[1].tobytes() == b[1].tobytes()

    def test_shared_label_equal(self):
        d = generate_dataset("glyph", 10_000, seed=0)
        np.testing.assert_array_equal(d.labels_x[:, 0], d.labels_y[:, 0])

    def test_background_colour_uniform(self):
        # chi-square style bound: every colour frequency within 3 sigma of 1/12
        cfg = GlyphPairConfig(seed=0)
        n = 12_000
        counts = np.bincount([gen_glyph_pair(cfg, i)[2]["x"][1] for i in range(n)], minlength=12)
        p = 1 / 12
        sigma = np.sqrt(n * p * (1 - p))
        assert np.all(np.abs(counts - n * p) <= 3 * sigma)

    def test_pixels_in_unit_range(self):
        d = generate_dataset("glyph", 50)
        assert d.images_x.min() >= 0 and d.images_x.max() <= 1
        assert d.images_y.min() >= 0 and d.images_y.max() <= 1

    def test_domains_render_as_described(self):
        x, y, lab = gen_glyph_pair(GlyphPairConfig(), 3)
        np.testing.assert_array_equal(x[0, 0], GLYPH_PALETTE[lab["x"][1]])
        np.testing.assert_array_equal(y[0, 0], [0, 0, 0])
        mask = _glyph_canvases()[lab["x"][0]]
        np.testing.assert_array_equal(x[mask], np.ones((mask.sum(), 3)))
        np.testing.assert_array_equal(y[mask], np.broadcast_to(GLYPH_PALETTE[lab["y"][1]], (mask.sum(), 3)))

    def test_labels_recoverable_from_pixels(self):
        canv = _glyph_canvases()
        d = generate_dataset("glyph", 300, seed=5)
        for img, lab in zip(d.images_x, d.labels_x):
            fg = np.all(img == 1.0, axis=2)
            assert int(np.argmin([(fg != m).sum() for m in canv])) == lab[0]
            assert int(np.argmin(np.abs(GLYPH_PALETTE - img[0, 0]).sum(1))) == lab[1]

    def test_single_domain_renders_like_x(self):
        d = generate_dataset("glyph-single", 20)
        np.testing.assert_array_equal(d.images_y[:, 0, 0], GLYPH_PALETTE[d.labels_y[:, 1]])

    def test_negative_index(self):
        with pytest.raises(ValueError):
            gen_glyph_pair(GlyphPairConfig(), -1)


class TestFactorGrid:
    def test_label_space(self):
        assert FACTOR_GRID_SCHEMA.label_space == 480_000

    def test_shared_factors_equal(self):
        d = generate_dataset("factor-grid", 300, seed=1)
        np.testing.assert_array_equal(d.labels_x[:, 3:], d.labels_y[:, 3:])

    def test_colour_difference_changes_pixels(self):
        cfg = FactorGridConfig(seed=0)
        for i in range(100):
            x, y, lab = gen_factor_pair(cfg, i)
            if np.any(lab["x"][:3] != lab["y"][:3]):
                assert np.any(x != y)

    def test_palettes_distinct(self):
        all_colours = np.concatenate([FLOOR_PALETTE, WALL_PALETTE, OBJECT_PALETTE])
        assert len({tuple(np.round(c, 6)) for c in all_colours.tolist()}) == 30

    def test_object_masks_distinct(self):
        masks = {object_coverage(a, b, c).tobytes()
                 for a, b, c in itertools.product(range(8), range(4), range(15))}
        assert len(masks) == 480

    def test_template_decoder_recovers_every_factor(self):
        # nearest template over all 480 geometry masks, colours read from the bands and the centre
        combos = list(itertools.product(range(8), range(4), range(15)))
        alphas = np.stack([object_coverage(*c) for c in combos])[..., None]
        d = generate_dataset("factor-grid", 150, seed=4)
        for img, lab in zip(d.images_x, d.labels_x):
            wall = int(np.argmin(np.abs(WALL_PALETTE - img[0, 0]).sum(1)))
            floor = int(np.argmin(np.abs(FLOOR_PALETTE - img[31, 0]).sum(1)))
            obj = int(np.argmin(np.abs(OBJECT_PALETTE - img[16, 16]).sum(1)))
            bg = np.empty((32, 32, 3), np.float32)
            bg[:horizon_row(32)] = WALL_PALETTE[wall]
            bg[horizon_row(32):] = FLOOR_PALETTE[floor]
            templates = bg * (1 - alphas) + OBJECT_PALETTE[obj] * alphas
            best = combos[int(np.argmin(((templates - img) ** 2).sum(axis=(1, 2, 3))))]
            assert [floor, wall, obj, *best] == lab.tolist()

    def test_pixels_in_unit_range(self):
        d = generate_dataset("factor-grid", 40)
        assert d.images_x.min() >= 0 and d.images_x.max() <= 1


class TestFileFormat:
    def test_round_trip(self, tmp_path):
        d = generate_dataset("glyph", 128, seed=2)
        write_dataset(tmp_path / "d.mipd", d)
        r = read_dataset(tmp_path / "d.mipd")
        assert r.images_x.tobytes() == d.images_x.tobytes()
        assert r.images_y.tobytes() == d.images_y.tobytes()
        np.testing.assert_array_equal(r.labels_x, d.labels_x)
        np.testing.assert_array_equal(r.labels_y, d.labels_y)
        assert r.schema == d.schema and r.kind == "glyph"

    def test_same_data_same_bytes(self, tmp_path):
        write_dataset(tmp_path / "a", generate_dataset("factor-grid", 10, seed=3))
        write_dataset(tmp_path / "b", generate_dataset("factor-grid", 10, seed=3))
        assert (tmp_path / "a").read_bytes() == (tmp_path / "b").read_bytes()

    def test_truncated(self, tmp_path):
        write_dataset(tmp_path / "d", generate_dataset("glyph", 8))
        raw = (tmp_path / "d").read_bytes()
        (tmp_path / "t").write_bytes(raw[:-10])
        with pytest.raises(DatasetFormatError, match="byte offset"):
            read_dataset(tmp_path / "t")

    def test_bad_magic(self, tmp_path):
        (tmp_path / "x").write_bytes(b"NOPE1" + b"\0" * 40)
        with pytest.raises(DatasetFormatError, match="byte offset 0"):
            read_dataset(tmp_path / "x")

    def test_empty_dataset(self, tmp_path):
        write_dataset(tmp_path / "e", generate_dataset("glyph", 0))
        r = read_dataset(tmp_path / "e")
        assert len(r) == 0 and r.image_shape == (32, 32, 3)
