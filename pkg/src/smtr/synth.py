"""Synthetic text-image generation: a built-in bitmap font, a deterministic
renderer, and seeded corpus sampling with controllable length buckets and
forced substring repeats."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CorpusSpecError, RenderError
from .images import ImageTensor

# 5x7 cell bitmaps for 20 visually distinct glyphs.
_GLYPH_ROWS = {
    "A": (".###.", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "C": (".###.", "#...#", "#....", "#....", "#....", "#...#", ".###."),
    "D": ("####.", "#...#", "#...#", "#...#", "#...#", "#...#", "####."),
    "E": ("#####", "#....", "#....", "####.", "#....", "#....", "#####"),
    "F": ("#####", "#....", "#....", "####.", "#....", "#....", "#...."),
    "G": (".###.", "#...#", "#....", "#.###", "#...#", "#...#", ".###."),
    "H": ("#...#", "#...#", "#...#", "#####", "#...#", "#...#", "#...#"),
    "J": ("..###", "...#.", "...#.", "...#.", "...#.", "#..#.", ".##.."),
    "K": ("#...#", "#..#.", "#.#..", "##...", "#.#..", "#..#.", "#...#"),
    "L": ("#....", "#....", "#....", "#....", "#....", "#....", "#####"),
    "M": ("#...#", "##.##", "#.#.#", "#.#.#", "#...#", "#...#", "#...#"),
    "N": ("#...#", "##..#", "#.#.#", "#.#.#", "#..##", "#...#", "#...#"),
    "P": ("####.", "#...#", "#...#", "####.", "#....", "#....", "#...."),
    "R": ("####.", "#...#", "#...#", "####.", "#.#..", "#..#.", "#...#"),
    "S": (".####", "#....", "#....", ".###.", "....#", "....#", "####."),
    "T": ("#####", "..#..", "..#..", "..#..", "..#..", "..#..", "..#.."),
    "U": ("#...#", "#...#", "#...#", "#...#", "#...#", "#...#", ".###."),
    "W": ("#...#", "#...#", "#...#", "#.#.#", "#.#.#", "##.##", "#...#"),
    "Y": ("#...#", "#...#", ".#.#.", "..#..", "..#..", "..#..", "..#.."),
    "Z": ("#####", "....#", "...#.", "..#..", ".#...", "#....", "#####"),
}

DESK_CHARSET = "".join(sorted(_GLYPH_ROWS))


def _parse_glyph(rows) -> np.ndarray:
    return np.array([[c == "#" for c in row] for row in rows], dtype=bool)


@dataclass(frozen=True)
class GlyphFont:
    """Fixed-cell bitmap font; every character renders at the same advance."""

    glyphs: dict[str, np.ndarray]
    scale: int = 3
    spacing: int = 1

    @property
    def cell_width(self) -> int:
        return 5 * self.scale

    @property
    def cell_height(self) -> int:
        return 7 * self.scale

    @property
    def advance(self) -> int:
        return self.cell_width + self.spacing

    def glyph_pixels(self, char: str) -> np.ndarray:
        if char not in self.glyphs:
            raise RenderError(f"no glyph for character {char!r}")
        cell = self.glyphs[char]
        return np.kron(cell, np.ones((self.scale, self.scale), dtype=bool))

    def ink_span(self, position: int) -> tuple[int, int]:
        """Pixel column range [x0, x1) covered by the glyph at char slot ``position``."""
        x0 = position * self.advance
        return x0, x0 + self.cell_width


def default_font(scale: int = 3, spacing: int = 1) -> GlyphFont:
    return GlyphFont({c: _parse_glyph(r) for c, r in _GLYPH_ROWS.items()}, scale, spacing)


def render_text(text: str, font: GlyphFont, height: int = 32,
                noise_std: float = 0.0, jitter: int = 0,
                rng: np.random.Generator | None = None) -> ImageTensor:
    """Render white-on-black text at fixed height.

    Width is ``advance * len(text)`` rounded up to a multiple of 4. With noise
    and jitter disabled the output is a pure function of (text, font, height).
    """
    if not text:
        raise RenderError("cannot render an empty text")
    if font.cell_height > height:
        raise RenderError(f"font height {font.cell_height} exceeds image height {height}")
    if (noise_std or jitter) and rng is None:
        raise RenderError("noise/jitter requested without an rng")
    width = font.advance * len(text)
    width += (-width) % 4
    img = np.zeros((height, width), dtype=np.float32)
    top = (height - font.cell_height) // 2
    for i, ch in enumerate(text):
        g = font.glyph_pixels(ch)
        x0, _ = font.ink_span(i)
        y, x = top, x0
        if jitter:
            y += int(rng.integers(-jitter, jitter + 1))
            x += int(rng.integers(-jitter, jitter + 1))
            y = min(max(y, 0), height - g.shape[0])
            x = min(max(x, 0), width - g.shape[1])
        img[y:y + g.shape[0], x:x + g.shape[1]] = np.maximum(
            img[y:y + g.shape[0], x:x + g.shape[1]], g.astype(np.float32))
    if noise_std:
        img = np.clip(img + rng.normal(0.0, noise_std, img.shape), 0.0, 1.0).astype(np.float32)
    return ImageTensor(img)


@dataclass
class CorpusSpec:
    """Sampling plan for a synthetic corpus with train/val/eval splits."""

    charset: str = DESK_CHARSET
    train_count: int = 5000
    train_len: tuple[int, int] = (1, 10)
    val_count: int = 200
    eval_buckets: tuple[tuple[int, int], ...] = ((11, 15), (16, 25), (26, 35))
    eval_count: int = 1000
    forced_repeat_fraction: float = 0.0
    win_len: int = 5
    seed: int = 0

    def validate(self):
        if self.train_len[0] < 1 or self.train_len[0] > self.train_len[1]:
            raise CorpusSpecError(f"bad train length range {self.train_len}")
        if not 0.0 <= self.forced_repeat_fraction <= 1.0:
            raise CorpusSpecError("forced_repeat_fraction outside [0, 1]")
        if self.forced_repeat_fraction > 0:
            longest = max([self.train_len[1]] + [hi for _, hi in self.eval_buckets])
            if longest < 2 * self.win_len:
                raise CorpusSpecError(
                    f"cannot force a repeated {self.win_len}-gram into texts of length <= {longest}")
        for lo, hi in self.eval_buckets:
            if lo < 1 or lo > hi:
                raise CorpusSpecError(f"bad eval bucket [{lo}, {hi}]")


def bucket_split_name(lo: int, hi: int) -> str:
    return f"eval_{lo}_{hi}"


def _random_text(rng: np.random.Generator, charset: str, length: int) -> str:
    return "".join(charset[i] for i in rng.integers(0, len(charset), size=length))


def _force_repeat(rng: np.random.Generator, charset: str, length: int, win_len: int) -> str:
    """Text with one win_len-gram duplicated far apart (the copies straddle
    the image center, so slicing the image in halves separates them)."""
    chars = list(_random_text(rng, charset, length))
    gram = _random_text(rng, charset, win_len)
    hi1 = max(0, length // 4 - win_len)
    p1 = int(rng.integers(0, hi1 + 1))
    lo2 = max(p1 + win_len, (3 * length) // 4)
    p2 = length - win_len if lo2 > length - win_len else int(rng.integers(lo2, length - win_len + 1))
    chars[p1:p1 + win_len] = gram
    chars[p2:p2 + win_len] = gram
    return "".join(chars)


def sample_corpus(spec: CorpusSpec) -> list[tuple[str, str]]:
    """Seeded (text, split) pairs: train and val inside the short-length cap,
    one eval split per configured long bucket."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)

    def draw(lo: int, hi: int) -> str:
        if spec.forced_repeat_fraction and rng.random() < spec.forced_repeat_fraction:
            flo = max(lo, 2 * spec.win_len)
            if flo <= hi:
                return _force_repeat(rng, spec.charset, int(rng.integers(flo, hi + 1)), spec.win_len)
        return _random_text(rng, spec.charset, int(rng.integers(lo, hi + 1)))

    items: list[tuple[str, str]] = []
    for _ in range(spec.train_count):
        items.append((draw(*spec.train_len), "train"))
    for _ in range(spec.val_count):
        items.append((draw(*spec.train_len), "val"))
    for lo, hi in spec.eval_buckets:
        name = bucket_split_name(lo, hi)
        for _ in range(spec.eval_count):
            items.append((draw(lo, hi), name))
    return items


def save_manifest(items: list[tuple[str, str]], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for text, split in items:
            f.write(f"{split}\t{text}\n")


def load_manifest(path) -> list[tuple[str, str]]:
    items = []
    with open(path, encoding="utf-8") as f:
        for line in f:
            line = line.rstrip("\n")
            if not line:
                continue
            split, text = line.split("\t", 1)
            items.append((text, split))
    return items
