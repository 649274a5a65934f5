"""Character vocabulary and sliding-window sub-string label generation.

A text of length L is padded on both sides with ``l_s`` blanks and traversed
by a window of size ``l_s``. Each window becomes one training sample carrying
a next-character and a previous-character label. Label conventions:

* real characters keep their class index,
* a blank adjacent to a blank-free side maps to the end symbol (the decoder
  must learn to stop),
* a window that still touches the leading/trailing blank run gets the
  no-supervision sentinel on that side,
* the single all-blank window is the shared start state for both reading
  directions and is labelled with the first and last character of the text,
* the duplicate all-blank window at the far end, and windows that would carry
  the sentinel on both sides, are dropped.

This yields exactly 2L+1 samples when L < l_s and L + l_s otherwise, with
2L+2 supervised labels either way.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import LabelError, VocabError

PAD_LABEL = -1  # "no supervision on this side" sentinel; never a class


@dataclass(frozen=True)
class CharVocab:
    """Bidirectional char<->index map plus the reserved symbol indices.

    Real characters occupy indices ``0..size-1``. Index ``size`` means the
    blank pad on the embedding side and the end symbol on the classifier
    side; the two never meet (blanks are never predicted, the end symbol is
    never embedded).
    """

    chars: str
    _index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if not self.chars:
            raise VocabError("empty character set")
        if len(set(self.chars)) != len(self.chars):
            raise VocabError("duplicate characters in vocabulary")
        object.__setattr__(self, "_index", {c: i for i, c in enumerate(self.chars)})

    @property
    def size(self) -> int:
        return len(self.chars)

    @property
    def blank_index(self) -> int:
        return len(self.chars)

    @property
    def eos_class(self) -> int:
        return len(self.chars)

    @property
    def num_classes(self) -> int:
        """Classifier width: every character plus the end symbol."""
        return len(self.chars) + 1

    @property
    def embed_table_size(self) -> int:
        """Embedding rows: every character plus the blank pad."""
        return len(self.chars) + 1

    def encode(self, text: str) -> list[int]:
        try:
            return [self._index[c] for c in text]
        except KeyError as e:
            raise VocabError(f"character {e.args[0]!r} not in vocabulary") from None

    def decode(self, indices) -> str:
        out = []
        for i in indices:
            if not 0 <= i < self.size:
                raise VocabError(f"class index {i} is not a character")
            out.append(self.chars[i])
        return "".join(out)


@dataclass(frozen=True)
class SubStringSample:
    """One training unit: a window of char indices plus its two labels."""

    window: tuple[int, ...]
    y_next: int
    y_prev: int
    is_regularized: bool = False


def format_label(vocab: CharVocab, text: str, win_len: int) -> list[int]:
    """Pad the encoded text with ``win_len`` blanks on each side."""
    if not text:
        raise LabelError("cannot label an empty text")
    blank = vocab.blank_index
    return [blank] * win_len + vocab.encode(text) + [blank] * win_len


def enumerate_substrings(vocab: CharVocab, text: str, win_len: int) -> list[SubStringSample]:
    """All sliding-window samples of a text, in left-to-right window order."""
    formatted = format_label(vocab, text, win_len)
    blank = vocab.blank_index
    eos = vocab.eos_class
    n_text = len(text)
    samples: list[SubStringSample] = []
    for p in range(n_text + win_len + 1):
        window = tuple(formatted[p:p + win_len])
        if p == 0:
            samples.append(SubStringSample(window, formatted[win_len], formatted[win_len + n_text - 1]))
            continue
        if all(c == blank for c in window):
            continue  # duplicate of the start window, seen from the far side
        if window[0] == blank:
            y_prev = PAD_LABEL
        else:
            adj = formatted[p - 1]
            y_prev = eos if adj == blank else adj
        if window[-1] == blank:
            y_next = PAD_LABEL
        else:
            adj = formatted[p + win_len]
            y_next = eos if adj == blank else adj
        if y_prev == PAD_LABEL and y_next == PAD_LABEL:
            continue
        samples.append(SubStringSample(window, y_next, y_prev))
    return samples


def substring_count(text_len: int, win_len: int) -> int:
    """Closed-form sample count N."""
    return 2 * text_len + 1 if text_len < win_len else text_len + win_len


def valid_term_count(text_len: int, win_len: int) -> int:
    """Closed-form count K of supervised loss terms over a text's samples."""
    n = substring_count(text_len, win_len)
    if text_len < win_len:
        return 2 * n - 2 * text_len
    return 2 * n - 2 * (win_len - 1)


def make_regularized(sample: SubStringSample, vocab: CharVocab,
                     rng: np.random.Generator, count: int) -> list[SubStringSample]:
    """``count`` copies of a sample, each with one window slot re-drawn.

    The replacement is a uniformly random real character different from the
    slot's current content, so every copy sits at Hamming distance exactly 1
    from the source window. Labels are kept unchanged.
    """
    out = []
    win_len = len(sample.window)
    for _ in range(count):
        pos = int(rng.integers(win_len))
        current = sample.window[pos]
        if current >= vocab.size:  # blank slot: any real character differs
            repl = int(rng.integers(vocab.size))
        else:
            repl = int(rng.integers(vocab.size - 1))
            if repl >= current:
                repl += 1
        window = sample.window[:pos] + (repl,) + sample.window[pos + 1:]
        out.append(SubStringSample(window, sample.y_next, sample.y_prev, is_regularized=True))
    return out


def has_repeated_substring(text: str, win_len: int) -> bool:
    """True iff some length-``win_len`` substring occurs twice in ``text``."""
    seen = set()
    for i in range(len(text) - win_len + 1):
        gram = text[i:i + win_len]
        if gram in seen:
            return True
        seen.add(gram)
    return False


def corpus_repeat_rate(corpus, win_len: int) -> float:
    """Percentage of texts in ``corpus`` containing a repeated substring."""
    texts = list(corpus)
    if not texts:
        return 0.0
    hits = sum(1 for t in texts if has_repeated_substring(t, win_len))
    return 100.0 * hits / len(texts)
