"""Ground-truth step predictor: replays window labels from a known text.

This stands in for the trained matcher when testing the decoding logic in
isolation. Windows are looked up in the label table generated from the text
visible in the predictor's column range; when a window occurs more than once
the first occurrence wins, which reproduces the characteristic looping
failure on texts with repeated substrings.
"""

from __future__ import annotations

import numpy as np

from .images import ImageTensor
from .inference import NEXT, iteration_cap
from .synth import GlyphFont
from .vocab import PAD_LABEL, CharVocab, enumerate_substrings


def visible_text(text: str, font: GlyphFont, x0: int, x1: int) -> str:
    """Characters whose ink lies entirely inside columns [x0, x1)."""
    adv, cw = font.advance, font.cell_width
    first = -(-x0 // adv)  # ceil
    last = (x1 - cw) // adv
    last = min(last, len(text) - 1)
    if first > last:
        return ""
    return text[first:last + 1]


class OraclePredictor:
    """Perfect matcher stub over (a visible fragment of) a known text."""

    def __init__(self, vocab: CharVocab, text: str, win_len: int, width: int):
        self.vocab = vocab
        self.win_len = win_len
        self.cap = iteration_cap(width, win_len)
        self.table: dict[tuple[int, ...], tuple[int, int]] = {}
        if text:
            for s in enumerate_substrings(vocab, text, win_len):
                self.table.setdefault(s.window, (s.y_next, s.y_prev))

    def predict(self, window, direction: str):
        entry = self.table.get(tuple(window))
        if entry is None:
            return self.vocab.eos_class, None
        label = entry[0] if direction == NEXT else entry[1]
        if label == PAD_LABEL:
            return self.vocab.eos_class, None
        return label, None


def oracle_factory(vocab: CharVocab, text: str, win_len: int, font: GlyphFont):
    """Predictor factory for augmented inference over rendered slices."""

    def factory(image: ImageTensor, column_offset: int = 0) -> OraclePredictor:
        frag = visible_text(text, font, column_offset, column_offset + image.width)
        return OraclePredictor(vocab, frag, win_len, image.width)

    return factory
