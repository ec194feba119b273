"""Procedural paired-image datasets with known shared and exclusive factors.

Two generators:

* ``glyph``: X is a white glyph on a colored background, Y the same glyph
  drawn in a color on black. The glyph is shared; background color (X) and
  glyph color (Y) are exclusive, each drawn from 12 colors.
* ``factor-grid``: a wall band over a floor band with a centered filled
  shape. Scale, shape and orientation are shared by both images of a pair;
  floor, wall and object colors are drawn independently per image.

Every pair is a pure function of (config, index). Pairs serialize to the
``MIPD1`` binary format (little-endian throughout).
"""

from __future__ import annotations

import colorsys
import io
import struct
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

# 8x8 digit-like masks
_GLYPH_ROWS = [
    ["..XXXX..", ".XX..XX.", ".XX.XXX.", ".XXX.XX.", ".XX..XX.", ".XX..XX.", "..XXXX..", "........"],
    ["...XX...", "..XXX...", ".XXXX...", "...XX...", "...XX...", "...XX...", ".XXXXXX.", "........"],
    ["..XXXX..", ".XX..XX.", ".....XX.", "....XX..", "..XX....", ".XX.....", ".XXXXXX.", "........"],
    ["..XXXX..", ".XX..XX.", ".....XX.", "...XXX..", ".....XX.", ".XX..XX.", "..XXXX..", "........"],
    ["....XX..", "...XXX..", "..XXXX..", ".XX.XX..", ".XXXXXX.", "....XX..", "....XX..", "........"],
    [".XXXXXX.", ".XX.....", ".XXXXX..", ".....XX.", ".....XX.", ".XX..XX.", "..XXXX..", "........"],
    ["..XXXX..", ".XX.....", ".XXXXX..", ".XX..XX.", ".XX..XX.", ".XX..XX.", "..XXXX..", "........"],
    [".XXXXXX.", ".....XX.", "....XX..", "...XX...", "..XX....", "..XX....", "..XX....", "........"],
    ["..XXXX..", ".XX..XX.", ".XX..XX.", "..XXXX..", ".XX..XX.", ".XX..XX.", "..XXXX..", "........"],
    ["..XXXX..", ".XX..XX.", ".XX..XX.", "..XXXXX.", ".....XX.", "....XX..", "..XXX...", "........"],
]
GLYPHS = np.array([[[c == "X" for c in row] for row in g] for g in _GLYPH_ROWS], dtype=bool)

# 12 saturated colors; none is black or white so glyphs stay visible
GLYPH_PALETTE = np.array([
    (0.90, 0.10, 0.10), (0.10, 0.75, 0.10), (0.10, 0.20, 0.90), (0.95, 0.90, 0.10),
    (0.10, 0.85, 0.85), (0.85, 0.10, 0.85), (1.00, 0.55, 0.00), (0.50, 0.10, 0.70),
    (0.55, 0.30, 0.10), (1.00, 0.60, 0.75), (0.50, 0.50, 0.00), (0.00, 0.45, 0.45),
], dtype=np.float32)


def _hue_palette(n: int, sat: float, val: float) -> np.ndarray:
    return np.array([colorsys.hsv_to_rgb(i / n, sat, val) for i in range(n)], dtype=np.float32)


# distinct saturation/value per role keeps the object visible against both bands
FLOOR_PALETTE = _hue_palette(10, 0.6, 0.45)
WALL_PALETTE = _hue_palette(10, 0.35, 0.85)
OBJECT_PALETTE = _hue_palette(10, 1.0, 1.0)

SHAPES = ("square", "triangle", "cross", "ellipse")
FACTOR_GRID_CARDINALITIES = (10, 10, 10, 8, 4, 15)
SUPERSAMPLE = 4


@dataclass(frozen=True)
class FactorSchema:
    names: tuple[str, ...]
    cardinalities: tuple[int, ...]
    shared: tuple[bool, ...]

    def __post_init__(self):
        if not (len(self.names) == len(self.cardinalities) == len(self.shared)):
            raise ValueError("FactorSchema: field lengths differ")

    @property
    def n_factors(self) -> int:
        return len(self.names)

    @property
    def label_space(self) -> int:
        return int(np.prod(self.cardinalities, dtype=np.int64))


GLYPH_SCHEMA = FactorSchema(("glyph", "color"), (10, 12), (True, False))
FACTOR_GRID_SCHEMA = FactorSchema(
    ("floor_color", "wall_color", "object_color", "scale", "shape", "orientation"),
    FACTOR_GRID_CARDINALITIES, (False, False, False, True, True, True))


@dataclass(frozen=True)
class GlyphPairConfig:
    image_size: int = 32
    seed: int = 0
    single_domain: bool = False
    kind: str = field(default="glyph", init=False)
    schema: FactorSchema = field(default=GLYPH_SCHEMA, init=False)


@dataclass(frozen=True)
class FactorGridConfig:
    image_size: int = 32
    seed: int = 0
    kind: str = field(default="factor-grid", init=False)
    schema: FactorSchema = field(default=FACTOR_GRID_SCHEMA, init=False)


@dataclass
class PairBatch:
    images_x: np.ndarray
    images_y: np.ndarray
    labels_x: np.ndarray
    labels_y: np.ndarray

    def __len__(self) -> int:
        return len(self.images_x)


@dataclass
class PairDataset:
    kind: str
    schema: FactorSchema
    images_x: np.ndarray
    images_y: np.ndarray
    labels_x: np.ndarray
    labels_y: np.ndarray

    def __len__(self) -> int:
        return len(self.images_x)

    @property
    def image_shape(self) -> tuple[int, int, int]:
        return tuple(self.images_x.shape[1:])

    def batch(self, index) -> PairBatch:
        return PairBatch(self.images_x[index], self.images_y[index], self.labels_x[index], self.labels_y[index])


# ------------------------------------------------------------------ glyphs

def _glyph_canvas(glyph: int, size: int) -> np.ndarray:
    scale = max(1, (size * 3 // 4) // 8)
    mask = np.kron(GLYPHS[glyph], np.ones((scale, scale), dtype=bool))
    canvas = np.zeros((size, size), dtype=bool)
    off = (size - mask.shape[0]) // 2
    canvas[off:off + mask.shape[0], off:off + mask.shape[1]] = mask
    return canvas


def _render_glyph(glyph: int, fg, bg, size: int) -> np.ndarray:
    mask = _glyph_canvas(glyph, size)[..., None]
    return np.where(mask, np.asarray(fg, np.float32), np.asarray(bg, np.float32)).astype(np.float32)


def gen_glyph_pair(config: GlyphPairConfig, index: int):
    """(x, y, labels) with labels = {"x": [glyph, bg color], "y": [glyph, glyph color]}."""
    if index < 0:
        raise ValueError("index must be >= 0")
    rng = np.random.default_rng([config.seed, index, 1])
    glyph, bg, fg = int(rng.integers(10)), int(rng.integers(12)), int(rng.integers(12))
    white, black = (1.0, 1.0, 1.0), (0.0, 0.0, 0.0)
    x = _render_glyph(glyph, white, GLYPH_PALETTE[bg], config.image_size)
    if config.single_domain:
        y = _render_glyph(glyph, white, GLYPH_PALETTE[fg], config.image_size)
    else:
        y = _render_glyph(glyph, GLYPH_PALETTE[fg], black, config.image_size)
    labels = {"x": np.array([glyph, bg], np.int32), "y": np.array([glyph, fg], np.int32)}
    return x, y, labels


# ------------------------------------------------------------- factor grid

def scale_radius(scale: int, size: int = 32) -> float:
    return float(np.linspace(0.14, 0.28, 8)[scale] * size)


def orientation_angle(orientation: int) -> float:
    return float(np.deg2rad(np.linspace(-30.0, 30.0, 15)[orientation]))


@lru_cache(maxsize=4096)
def object_coverage(scale: int, shape: int, orientation: int, size: int = 32) -> np.ndarray:
    """Fraction of each pixel covered by the rotated shape (supersampled)."""
    n = size * SUPERSAMPLE
    c = (np.arange(n) + 0.5) / SUPERSAMPLE - size / 2
    px, py = np.meshgrid(c, -c)  # y axis up
    th = orientation_angle(orientation)
    u = np.cos(th) * px + np.sin(th) * py
    v = -np.sin(th) * px + np.cos(th) * py
    s = scale_radius(scale, size)
    name = SHAPES[shape]
    if name == "square":
        inside = (np.abs(u) <= s) & (np.abs(v) <= s)
    elif name == "triangle":
        inside = (v >= -s) & (v <= s) & (np.abs(u) <= (s - v) / 2 * 1.2)
    elif name == "cross":
        arm = s / 3
        inside = ((np.abs(u) <= arm) & (np.abs(v) <= s)) | ((np.abs(v) <= arm) & (np.abs(u) <= s))
    else:
        inside = (u / s) ** 2 + (v / (0.5 * s)) ** 2 <= 1
    cov = inside.reshape(size, SUPERSAMPLE, size, SUPERSAMPLE).mean(axis=(1, 3))
    cov = cov.astype(np.float32)
    cov.setflags(write=False)
    return cov


def horizon_row(size: int) -> int:
    return (size * 5) // 8


def render_factor_image(labels, size: int = 32) -> np.ndarray:
    floor, wall, obj, scale, shape, orient = (int(v) for v in labels)
    img = np.empty((size, size, 3), np.float32)
    h = horizon_row(size)
    img[:h] = WALL_PALETTE[wall]
    img[h:] = FLOOR_PALETTE[floor]
    alpha = object_coverage(scale, shape, orient, size)[..., None]
    return (img * (1 - alpha) + OBJECT_PALETTE[obj] * alpha).astype(np.float32)


def gen_factor_pair(config: FactorGridConfig, index: int):
    """(x, y, labels); scale/shape/orientation shared, colors independent per image."""
    if index < 0:
        raise ValueError("index must be >= 0")
    rng = np.random.default_rng([config.seed, index, 2])
    scale, shape, orient = (int(rng.integers(n)) for n in FACTOR_GRID_CARDINALITIES[3:])
    lx = np.array([*(int(rng.integers(10)) for _ in range(3)), scale, shape, orient], np.int32)
    ly = np.array([*(int(rng.integers(10)) for _ in range(3)), scale, shape, orient], np.int32)
    return (render_factor_image(lx, config.image_size), render_factor_image(ly, config.image_size),
            {"x": lx, "y": ly})


# ---------------------------------------------------------------- datasets

def make_config(kind: str, seed: int = 0, image_size: int = 32):
    if kind == "glyph":
        return GlyphPairConfig(image_size=image_size, seed=seed)
    if kind == "glyph-single":
        return GlyphPairConfig(image_size=image_size, seed=seed, single_domain=True)
    if kind == "factor-grid":
        return FactorGridConfig(image_size=image_size, seed=seed)
    raise ValueError(f"unknown dataset {kind!r}; expected glyph, glyph-single or factor-grid")


def generate_dataset(kind: str, n_pairs: int, seed: int = 0, start: int = 0, image_size: int = 32) -> PairDataset:
    cfg = make_config(kind, seed, image_size)
    gen = gen_factor_pair if cfg.kind == "factor-grid" else gen_glyph_pair
    s = image_size
    F = cfg.schema.n_factors
    xs = np.empty((n_pairs, s, s, 3), np.float32)
    ys = np.empty_like(xs)
    lx = np.empty((n_pairs, F), np.int32)
    ly = np.empty_like(lx)
    for i in range(n_pairs):
        x, y, lab = gen(cfg, start + i)
        xs[i], ys[i], lx[i], ly[i] = x, y, lab["x"], lab["y"]
    return PairDataset(kind, cfg.schema, xs, ys, lx, ly)


# ------------------------------------------------------------- file format

MAGIC = b"MIPD1"


class DatasetFormatError(ValueError):
    pass


def write_dataset(path, data: PairDataset) -> None:
    n = len(data)
    h, w, c = data.images_x.shape[1:]
    buf = io.BytesIO()
    buf.write(MAGIC)
    kind = data.kind.encode()
    buf.write(struct.pack("<I", len(kind)) + kind)
    buf.write(struct.pack("<IIIII", n, h, w, c, data.schema.n_factors))
    for name, card, shared in zip(data.schema.names, data.schema.cardinalities, data.schema.shared):
        nb = name.encode()
        buf.write(struct.pack("<I", len(nb)) + nb + struct.pack("<IB", card, int(shared)))
    for arr, dt in ((data.images_x, "<f4"), (data.images_y, "<f4"), (data.labels_x, "<i4"), (data.labels_y, "<i4")):
        buf.write(np.ascontiguousarray(arr, dtype=dt).tobytes())
    Path(path).write_bytes(buf.getvalue())


class _Reader:
    def __init__(self, raw: bytes):
        self.raw, self.pos = raw, 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.raw):
            raise DatasetFormatError(f"truncated file: need {n} bytes for {what} at byte offset {self.pos}, "
                                     f"file has {len(self.raw)}")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str, what: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt), what))


def read_dataset(path) -> PairDataset:
    r = _Reader(Path(path).read_bytes())
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise DatasetFormatError(f"bad magic {magic!r} at byte offset 0; expected {MAGIC!r}")
    (klen,) = r.unpack("<I", "kind length")
    kind = r.take(klen, "kind").decode()
    n, h, w, c, F = r.unpack("<IIIII", "header")
    names, cards, shared = [], [], []
    for _ in range(F):
        (ln,) = r.unpack("<I", "factor name length")
        names.append(r.take(ln, "factor name").decode())
        card, sh = r.unpack("<IB", "factor cardinality")
        cards.append(card)
        shared.append(bool(sh))
    img_bytes = n * h * w * c * 4
    xs = np.frombuffer(r.take(img_bytes, "images_x"), "<f4").reshape(n, h, w, c).astype(np.float32)
    ys = np.frombuffer(r.take(img_bytes, "images_y"), "<f4").reshape(n, h, w, c).astype(np.float32)
    lx = np.frombuffer(r.take(n * F * 4, "labels_x"), "<i4").reshape(n, F).astype(np.int32)
    ly = np.frombuffer(r.take(n * F * 4, "labels_y"), "<i4").reshape(n, F).astype(np.int32)
    if r.pos != len(r.raw):
        raise DatasetFormatError(f"trailing bytes after byte offset {r.pos}")
    return PairDataset(kind, FactorSchema(tuple(names), tuple(cards), tuple(shared)), xs, ys, lx, ly)
