"""Iterative decoding: the base next/previous loop and the slice-and-merge
augmentation for long images.

The core loop is predictor-agnostic: anything exposing ``predict(window,
direction) -> (class, attention)`` can drive it, which is how the logic gets
tested against a ground-truth oracle independently of any trained weights.
"""

from __future__ import annotations

import csv
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import model as M
from . import tensor as T
from .errors import SliceError
from .images import ImageTensor, prepare_for_model, write_pgm
from .model import ModelConfig
from .tensor import Tensor
from .vocab import CharVocab

NEXT = "next"
PREV = "previous"

EOS_TERMINATION = "eos"
STOP_TERMINATION = "stop-window"
CAP_TERMINATION = "cap"


@dataclass
class InferenceTrace:
    """Per-step record of one decoding run."""

    direction: str
    chars: list[int] = field(default_factory=list)
    windows: list[tuple[int, ...]] = field(default_factory=list)
    attention: list[np.ndarray | None] = field(default_factory=list)
    termination: str = CAP_TERMINATION


def iteration_cap(width: int, win_len: int) -> int:
    """Decode budget: one step per token column plus the window length."""
    return width // 4 + win_len


def decode_loop(predictor, direction: str, win_len: int, cap: int,
                start: tuple[int, ...] | None = None,
                stop: tuple[int, ...] | None = None,
                blank: int | None = None, eos: int | None = None) -> InferenceTrace:
    """The base iterative inference.

    Starting from ``start`` (all blanks by default), repeatedly predict the
    adjacent character, shift it into the window, and stop when the end
    symbol fires, when the shifted window equals ``stop`` (that character is
    not appended: the caller already owns it), or when the cap is hit.
    """
    window = tuple(start) if start is not None else (blank,) * win_len
    if len(window) != win_len:
        raise ValueError(f"start window has length {len(window)}, expected {win_len}")
    stop = tuple(stop) if stop else None
    trace = InferenceTrace(direction)
    for _ in range(cap):
        cls, attn = predictor.predict(window, direction)
        if cls == eos:
            trace.termination = EOS_TERMINATION
            break
        if direction == NEXT:
            updated = window[1:] + (cls,)
        else:
            updated = (cls,) + window[:-1]
        if stop is not None and updated == stop:
            trace.termination = STOP_TERMINATION
            break
        trace.chars.append(cls)
        trace.windows.append(window)
        trace.attention.append(attn)
        window = updated
    return trace


def trace_text(trace: InferenceTrace, vocab: CharVocab) -> str:
    """Recognized string; previous-direction traces decode right to left."""
    chars = trace.chars if trace.direction == NEXT else trace.chars[::-1]
    return vocab.decode(chars)


class ModelPredictor:
    """Step predictor backed by trained parameters and one encoded image."""

    def __init__(self, params: dict[str, Tensor], cfg: ModelConfig, image: ImageTensor):
        self.cfg = cfg
        self.params = params
        prepared = prepare_for_model(image, train=False, height=cfg.height,
                                     base_width=cfg.base_width)
        self.width = prepared.width
        with T.no_grad():
            self.tokens = M.encode_images(params, cfg, [prepared])
        self.cap = iteration_cap(self.width, cfg.substring_len)

    def predict(self, window, direction: str):
        with T.no_grad():
            logits, attn = M.decode_step(self.params, self.cfg, self.tokens, window)
        row = 0 if direction == NEXT else 1
        return int(np.argmax(logits[row])), attn[:, row, :]


def model_predictor_factory(params: dict[str, Tensor], cfg: ModelConfig):
    def factory(image: ImageTensor, column_offset: int = 0) -> ModelPredictor:
        return ModelPredictor(params, cfg, image)

    return factory


def base_inference(image: ImageTensor, params: dict[str, Tensor], cfg: ModelConfig,
                   direction: str = NEXT, start=None, stop=None) -> InferenceTrace:
    """Algorithm-style single-pass decode of a whole image."""
    vocab = cfg.vocab
    pred = ModelPredictor(params, cfg, image)
    return decode_loop(pred, direction, cfg.substring_len, pred.cap, start, stop,
                       blank=vocab.blank_index, eos=vocab.eos_class)


@dataclass
class SliceSet:
    left: ImageTensor
    right: ImageTensor
    center: ImageTensor
    offsets: tuple[int, int, int]  # source column of each slice's left edge


def slice_image(image: ImageTensor) -> SliceSet:
    """Halved-width slices: [0, W/2), [W/2, W) and the centered [W/4, 3W/4)."""
    w = image.width
    if w < 8 or w % 4:
        raise SliceError(f"width {w} cannot be sliced (needs w >= 8 and w % 4 == 0)")
    px = image.pixels
    return SliceSet(
        ImageTensor(px[:, : w // 2].copy()),
        ImageTensor(px[:, w // 2:].copy()),
        ImageTensor(px[:, w // 4: 3 * w // 4].copy()),
        (0, w // 2, w // 4),
    )


@dataclass
class RecognitionResult:
    chars: list[int]
    mode_used: str
    degraded: bool = False
    traces: dict[str, InferenceTrace] = field(default_factory=dict)

    def text(self, vocab: CharVocab) -> str:
        return vocab.decode(self.chars)


def inference_augmented(image: ImageTensor, predictor_factory, win_len: int,
                        blank: int, eos: int, parallel: bool = True) -> RecognitionResult:
    """Slice, decode both ends inward, then decode the center constrained by
    the boundary windows, and merge.

    Falls back to a plain full-image decode when the image cannot be sliced
    or either side yields too few characters to form a boundary window.
    """

    def full_decode() -> RecognitionResult:
        pred = predictor_factory(image, 0)
        trace = decode_loop(pred, NEXT, win_len, pred.cap, blank=blank, eos=eos)
        return RecognitionResult(list(trace.chars), mode_used="base-fallback",
                                 degraded=trace.termination == CAP_TERMINATION,
                                 traces={"full": trace})

    try:
        slices = slice_image(image)
    except SliceError:
        return full_decode()

    def run(img: ImageTensor, offset: int, direction: str) -> InferenceTrace:
        pred = predictor_factory(img, offset)
        return decode_loop(pred, direction, win_len, pred.cap, blank=blank, eos=eos)

    if parallel:
        with ThreadPoolExecutor(max_workers=2) as pool:
            f1 = pool.submit(run, slices.left, slices.offsets[0], NEXT)
            f2 = pool.submit(run, slices.right, slices.offsets[1], PREV)
            t_left, t_right = f1.result(), f2.result()
    else:
        t_left = run(slices.left, slices.offsets[0], NEXT)
        t_right = run(slices.right, slices.offsets[1], PREV)

    r1 = list(t_left.chars)
    r2 = list(reversed(t_right.chars))
    if len(r1) <= win_len + 1 or len(r2) <= win_len + 1:
        return full_decode()

    start = tuple(r1[-(win_len + 1):-1])
    stop = tuple(r2[1:win_len + 1])
    head = r1[:-(win_len + 1)]
    tail = r2[win_len + 1:]
    pred3 = predictor_factory(slices.center, slices.offsets[2])
    t_mid = decode_loop(pred3, NEXT, win_len, pred3.cap, start=start, stop=stop,
                        blank=blank, eos=eos)
    mid = t_mid.chars[:-(win_len - 1)] if win_len > 1 else list(t_mid.chars)
    merged = head + list(start) + mid + list(stop) + tail
    return RecognitionResult(merged, mode_used="ia",
                             degraded=t_mid.termination != STOP_TERMINATION,
                             traces={"left": t_left, "right": t_right, "center": t_mid})


def recognize(image: ImageTensor, params: dict[str, Tensor], cfg: ModelConfig,
              mode: str = "auto", auto_width: int | None = None,
              parallel: bool = True) -> RecognitionResult:
    """Dispatch: plain decode for short images, augmentation for wide ones."""
    vocab = cfg.vocab
    if mode not in ("auto", "base", "ia"):
        raise ValueError(f"unknown inference mode {mode!r}")
    if mode == "auto":
        threshold = auto_width if auto_width is not None else cfg.max_train_width
        mode = "ia" if image.width > threshold else "base"
    if mode == "base":
        trace = base_inference(image, params, cfg)
        return RecognitionResult(list(trace.chars), mode_used="base",
                                 degraded=trace.termination == CAP_TERMINATION,
                                 traces={"full": trace})
    return inference_augmented(image, model_predictor_factory(params, cfg),
                               cfg.substring_len, vocab.blank_index, vocab.eos_class,
                               parallel=parallel)


def dump_trace(result: RecognitionResult, vocab: CharVocab, out_dir) -> None:
    """Write per-step CSV rows and attention heat strips (PGM) for a decode."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "steps.csv"), "w", newline="", encoding="utf-8") as f:
        wr = csv.writer(f)
        wr.writerow(["trace", "step", "direction", "window", "predicted"])
        for name, trace in result.traces.items():
            for i, (ch, win) in enumerate(zip(trace.chars, trace.windows)):
                win_str = "".join(vocab.chars[c] if c < vocab.size else "*" for c in win)
                ch_str = vocab.chars[ch] if ch < vocab.size else "[E]"
                wr.writerow([name, i, trace.direction, win_str, ch_str])
    for name, trace in result.traces.items():
        strips = [a for a in trace.attention if a is not None]
        if not strips:
            continue
        heat = np.stack([a.mean(axis=0) for a in strips])  # [steps, tokens]
        heat = heat / max(heat.max(), 1e-9)
        rows, tokens = heat.shape
        cols = tokens // 8  # 4 height rows x token columns -> per-column mean
        strip = heat.reshape(rows, -1, cols).mean(axis=1) if cols else heat
        img = np.kron(strip, np.ones((8, 4), dtype=np.float32))
        write_pgm(ImageTensor(np.clip(img, 0.0, 1.0)), os.path.join(out_dir, f"attn_{name}.pgm"))
