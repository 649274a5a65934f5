"""Batch construction, the masked two-direction loss, and the training loop."""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field, fields, replace

import numpy as np

from . import model as M
from . import tensor as T
from .errors import ConfigError, DegenerateBatchError, LabelError, TrainingError
from .images import ImageTensor, prepare_for_model
from .model import ModelConfig
from .optim import LrSchedule, OptimState, adamw_step
from .synth import GlyphFont, default_font, render_text
from .tensor import Tensor
from .vocab import (PAD_LABEL, CharVocab, SubStringSample, enumerate_substrings,
                    make_regularized)


@dataclass
class TrainConfig:
    substring_len: int = 5
    reg_copies: int = 2
    max_text_len: int = 10
    batch_size: int = 16
    epochs: int = 12
    peak_lr: float = 2e-3
    weight_decay: float = 0.05
    warmup_frac: float = 0.075
    seed: int = 0
    loss_norm: str = "global"  # or "per_text": average per-text losses instead
    noise_std: float = 0.0
    jitter: int = 0
    font_scale: int = 3

    def validate(self):
        if self.substring_len < 2:
            raise ConfigError("substring_len must be >= 2")
        if self.reg_copies < 0:
            raise ConfigError("reg_copies must be >= 0")
        if self.loss_norm not in ("global", "per_text"):
            raise ConfigError(f"unknown loss_norm {self.loss_norm!r}")


@dataclass
class Batch:
    """All sub-string samples of one labelled image.

    ``labels`` holds (next, previous) class indices per window row, with -1
    where a side carries no supervision.
    """

    text: str
    image: ImageTensor
    windows: np.ndarray  # [n, l_s] int64
    labels: np.ndarray   # [n, 2] int64, -1 masked
    n_original: int

    @property
    def valid_mask(self) -> np.ndarray:
        return self.labels >= 0

    @property
    def n_valid(self) -> int:
        return int(self.valid_mask.sum())


def _sample_arrays(samples: list[SubStringSample]) -> tuple[np.ndarray, np.ndarray]:
    windows = np.array([s.window for s in samples], dtype=np.int64)
    labels = np.array([(s.y_next, s.y_prev) for s in samples], dtype=np.int64)
    return windows, labels


def build_batch(vocab: CharVocab, text: str, image: ImageTensor, cfg: TrainConfig,
                rng: np.random.Generator) -> Batch:
    """Enumerate a text's windows plus ``reg_copies`` perturbed copies each."""
    if len(text) > cfg.max_text_len:
        raise LabelError(f"text of length {len(text)} exceeds training cap {cfg.max_text_len}")
    originals = enumerate_substrings(vocab, text, cfg.substring_len)
    samples = list(originals)
    for s in originals:
        samples.extend(make_regularized(s, vocab, rng, cfg.reg_copies))
    windows, labels = _sample_arrays(samples)
    return Batch(text, image, windows, labels, n_original=len(originals))


def _group_loss(params, mcfg: ModelConfig, pixels: np.ndarray, windows: np.ndarray,
                labels: np.ndarray) -> tuple[Tensor, int]:
    """Summed masked CE over a stack of same-shape batches."""
    tokens = M.encode_images(params, mcfg, pixels)
    logits, _ = M.substring_logits(params, mcfg, tokens, windows)
    return T.cross_entropy_masked(logits, labels)


def compute_loss(batches: Batch | list[Batch], params: dict[str, Tensor],
                 mcfg: ModelConfig, loss_norm: str = "global") -> Tensor:
    """Two-direction masked cross-entropy, averaged over supervised terms.

    Positions labelled -1 contribute exactly zero loss and zero gradient.
    Texts of different lengths produce different window counts, so batches
    are grouped by shape and each group is forwarded in one stack.
    """
    if isinstance(batches, Batch):
        batches = [batches]
    if not batches:
        raise DegenerateBatchError("no batches given")
    groups: dict[tuple[int, int, int], list[Batch]] = {}
    for b in batches:
        key = (b.windows.shape[0], b.image.height, b.image.width)
        groups.setdefault(key, []).append(b)
    parts: list[Tensor] = []
    total_valid = 0
    for group in groups.values():
        pixels = np.stack([b.image.pixels for b in group])
        windows = np.stack([b.windows for b in group])
        labels = np.stack([b.labels for b in group])
        if loss_norm == "per_text":
            tokens = M.encode_images(params, mcfg, pixels)
            logits, _ = M.substring_logits(params, mcfg, tokens, windows)
            for i, b in enumerate(group):
                s, k = T.cross_entropy_masked(logits[i], labels[i])
                if k:
                    parts.append(s * (1.0 / k))
                    total_valid += 1
        else:
            s, k = _group_loss(params, mcfg, pixels, windows, labels)
            parts.append(s)
            total_valid += k
    if total_valid == 0:
        raise DegenerateBatchError("batch has no supervised labels")
    total = parts[0]
    for p in parts[1:]:
        total = total + p
    return total * (1.0 / total_valid)


@dataclass
class TrainResult:
    params: dict[str, Tensor]
    metrics: list[dict]
    best_val_acc: float
    config: TrainConfig
    model_config: ModelConfig
    train_width_cap: int = 0


def _render_cache(texts: list[str], font: GlyphFont, mcfg: ModelConfig) -> dict[str, np.ndarray]:
    cache = {}
    for t in texts:
        if t not in cache:
            img = prepare_for_model(render_text(t, font, mcfg.height), train=True,
                                    height=mcfg.height, base_width=mcfg.base_width,
                                    max_train_width=mcfg.max_train_width)
            cache[t] = np.packbits(img.pixels > 0.5), img.pixels.shape
    return cache


def _cached_image(cache, text) -> ImageTensor:
    bits, shape = cache[text]
    return ImageTensor(np.unpackbits(bits, count=shape[0] * shape[1])
                       .reshape(shape).astype(np.float32))


def train(mcfg: ModelConfig, tcfg: TrainConfig, corpus: list[tuple[str, str]],
          rng: np.random.Generator | None = None, font: GlyphFont | None = None,
          log=None) -> TrainResult:
    """Full training run; returns the best-validation parameters.

    ``corpus`` holds (text, split) pairs; texts in the ``train`` split longer
    than the cap are dropped with a warning, and the ``val`` split is decoded
    each epoch with plain next-direction inference for model selection.
    """
    from .inference import base_inference, trace_text  # local import: no cycle

    tcfg.validate()
    mcfg = replace(mcfg, substring_len=tcfg.substring_len)
    mcfg.validate()
    if rng is None:
        rng = np.random.default_rng(tcfg.seed)
    font = font or default_font(scale=tcfg.font_scale)
    vocab = mcfg.vocab

    train_texts = [t for t, s in corpus if s == "train"]
    val_texts = [t for t, s in corpus if s == "val"]
    kept = [t for t in train_texts if len(t) <= tcfg.max_text_len]
    if len(kept) < len(train_texts):
        warnings.warn(f"dropped {len(train_texts) - len(kept)} over-length texts "
                      f"(cap {tcfg.max_text_len})")
    if not kept:
        raise TrainingError("no training texts left after length filtering")

    augmented = tcfg.noise_std > 0 or tcfg.jitter > 0
    cache = None if augmented else _render_cache(kept, font, mcfg)
    enum_cache = {t: enumerate_substrings(vocab, t, tcfg.substring_len) for t in set(kept)}
    width_cap = max(
        min(font.advance * len(t) + (-font.advance * len(t)) % 4, mcfg.max_train_width)
        for t in kept)
    width_cap = max(width_cap, mcfg.base_width)

    params = M.init_params(mcfg, rng)
    state = OptimState(weight_decay=tcfg.weight_decay)
    by_len: dict[int, list[str]] = {}
    for t in kept:
        by_len.setdefault(len(t), []).append(t)
    steps_per_epoch = sum(-(-len(v) // tcfg.batch_size) for v in by_len.values())
    total_steps = steps_per_epoch * tcfg.epochs
    sched = LrSchedule(tcfg.peak_lr, total_steps,
                       max(1, int(round(tcfg.warmup_frac * total_steps))))

    def render_train(text: str) -> ImageTensor:
        if cache is not None:
            return _cached_image(cache, text)
        img = render_text(text, font, mcfg.height, noise_std=tcfg.noise_std,
                          jitter=tcfg.jitter, rng=rng)
        return prepare_for_model(img, train=True, height=mcfg.height,
                                 base_width=mcfg.base_width,
                                 max_train_width=mcfg.max_train_width)

    metrics: list[dict] = []
    best_acc = -1.0
    best_params = M.clone_params(params)
    step = 0
    for epoch in range(tcfg.epochs):
        t0 = time.time()
        chunks: list[list[str]] = []
        for length in sorted(by_len):
            texts = list(by_len[length])
            rng.shuffle(texts)
            chunks.extend(texts[i:i + tcfg.batch_size]
                          for i in range(0, len(texts), tcfg.batch_size))
        order = rng.permutation(len(chunks))
        losses = []
        lr = tcfg.peak_lr
        for ci in order:
            texts = chunks[ci]
            batches = []
            for text in texts:
                samples = list(enum_cache[text])
                for s in enum_cache[text]:
                    samples.extend(make_regularized(s, vocab, rng, tcfg.reg_copies))
                windows, labels = _sample_arrays(samples)
                batches.append(Batch(text, render_train(text), windows, labels,
                                     len(enum_cache[text])))
            loss = compute_loss(batches, params, mcfg, tcfg.loss_norm)
            loss_val = loss.item()
            M.zero_grads(params)
            loss.backward()
            if not np.isfinite(loss_val):
                gmax = max(float(np.abs(p.grad).max()) if p.grad is not None else 0.0
                           for p in params.values())
                raise TrainingError(
                    f"loss became non-finite at step {step} (lr={lr:.2e}, max|grad|={gmax:.2e})")
            lr = sched.next_lr()
            adamw_step(params, state, lr)
            losses.append(loss_val)
            step += 1
        val_acc = float("nan")
        if val_texts:
            hits = 0
            with T.no_grad():
                for text in val_texts:
                    img = render_text(text, font, mcfg.height)
                    trace = base_inference(img, params, mcfg)
                    hits += trace_text(trace, vocab) == text
            val_acc = 100.0 * hits / len(val_texts)
            if val_acc >= best_acc:
                best_acc = val_acc
                best_params = M.clone_params(params)
        else:
            best_params = params
        row = {"epoch": epoch, "step": step, "lr": lr,
               "loss": float(np.mean(losses)), "val_acc": val_acc,
               "seconds": round(time.time() - t0, 2)}
        metrics.append(row)
        if log:
            log(f"epoch {epoch}: loss {row['loss']:.4f} val_acc {val_acc:.2f} "
                f"lr {lr:.2e} ({row['seconds']}s)")
    return TrainResult(best_params, metrics, best_acc, tcfg, mcfg, width_cap)


def write_metrics_csv(metrics: list[dict], path) -> None:
    with open(path, "w", encoding="utf-8") as f:
        f.write("step,lr,loss,val_acc\n")
        for m in metrics:
            f.write(f"{m['step']},{m['lr']:.6g},{m['loss']:.6f},{m['val_acc']:.4f}\n")


# -- flat key=value config files ----------------------------------------------

_TUPLE_FIELDS = {"stage_depths", "mixer_kernel", "train_len"}


def _coerce(name: str, value: str, target_type):
    value = value.strip()
    if name in _TUPLE_FIELDS:
        return tuple(int(v) for v in value.split(","))
    if target_type is bool:
        return value.lower() in ("1", "true", "yes", "on")
    if target_type is int:
        return int(value)
    if target_type is float:
        return float(value)
    return value


def parse_config_text(text: str) -> dict[str, str]:
    out = {}
    for ln, line in enumerate(text.splitlines(), 1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {ln} is not key=value: {line!r}")
        key, value = line.split("=", 1)
        out[key.strip()] = value.strip()
    return out


def apply_config(dc, overrides: dict[str, str]):
    """Apply string key=value overrides onto a dataclass instance."""
    valid = {f.name: f.type for f in fields(dc)}
    updates = {}
    for key, value in overrides.items():
        if key not in valid:
            continue
        current = getattr(dc, key)
        updates[key] = _coerce(key, value, type(current))
    return replace(dc, **updates)


def load_config_file(path, mcfg: ModelConfig, tcfg: TrainConfig):
    with open(path, encoding="utf-8") as f:
        kv = parse_config_text(f.read())
    return apply_config(mcfg, kv), apply_config(tcfg, kv), kv
