"""Model configuration, parameter initialization, and full forward passes."""

from __future__ import annotations

from dataclasses import dataclass, field, fields

import numpy as np

from . import decoder, encoder
from . import tensor as T
from .encoder import EncoderConfig
from .errors import ConfigError
from .images import ImageTensor, pad_width, prepare_for_model
from .synth import DESK_CHARSET
from .tensor import Tensor
from .vocab import CharVocab


@dataclass
class ModelConfig:
    """Everything needed to rebuild the network from a checkpoint."""

    charset: str = DESK_CHARSET
    substring_len: int = 5
    base_channels: int = 16
    stage_depths: tuple[int, int, int] = (2, 2, 2)
    mixer_kernel: tuple[int, int] = (3, 5)
    mlp_ratio: int = 2
    enc_head_divisor: int = 32
    match_heads: int = 2
    matcher_residual: bool = False
    matcher_mlp: bool = False
    height: int = 32
    base_width: int = 128
    max_train_width: int = 384

    @property
    def channels(self) -> int:
        return 4 * self.base_channels

    @property
    def enc_heads(self) -> int:
        return max(1, self.channels // self.enc_head_divisor)

    @property
    def vocab(self) -> CharVocab:
        return CharVocab(self.charset)

    @property
    def encoder_config(self) -> EncoderConfig:
        return EncoderConfig(self.base_channels, tuple(self.stage_depths),
                             tuple(self.mixer_kernel), self.mlp_ratio)

    def validate(self):
        if self.substring_len < 2:
            raise ConfigError("substring_len must be at least 2")
        if self.channels % self.enc_heads or self.channels % self.match_heads:
            raise ConfigError(
                f"channels {self.channels} not divisible by head counts "
                f"({self.enc_heads} encoder, {self.match_heads} matcher)")

    def to_dict(self) -> dict:
        out = {}
        for f in fields(self):
            v = getattr(self, f.name)
            out[f.name] = list(v) if isinstance(v, tuple) else v
        return out

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        kwargs = {}
        for f in fields(cls):
            if f.name in d:
                v = d[f.name]
                kwargs[f.name] = tuple(v) if isinstance(v, list) else v
        return cls(**kwargs)


def init_params(cfg: ModelConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    cfg.validate()
    vocab = cfg.vocab
    params = encoder.init_encoder_params(cfg.encoder_config, rng)
    params.update(decoder.init_decoder_params(vocab.embed_table_size, vocab.num_classes,
                                              cfg.channels, rng, cfg.matcher_mlp,
                                              cfg.mlp_ratio))
    return params


def clone_params(params: dict[str, Tensor]) -> dict[str, Tensor]:
    return {k: T.parameter(v.data.copy(), requires_grad=v.requires_grad)
            for k, v in params.items()}


def zero_grads(params: dict[str, Tensor]) -> None:
    for p in params.values():
        p.zero_grad()


def encode_images(params: dict[str, Tensor], cfg: ModelConfig,
                  images: list[ImageTensor] | np.ndarray, train: bool = False) -> Tensor:
    """Stack prepared images (padding widths to the widest) and encode."""
    if isinstance(images, np.ndarray):
        batch = images
    else:
        prepped = [prepare_for_model(im, train=train, height=cfg.height,
                                     base_width=cfg.base_width,
                                     max_train_width=cfg.max_train_width) for im in images]
        wmax = max(im.width for im in prepped)
        batch = np.stack([pad_width(im, wmax).pixels for im in prepped])
    x = Tensor(batch[:, None, :, :])
    return encoder.encode_image(x, params, cfg.encoder_config)


def _match_shared_tokens(params, queries: Tensor, image_tokens: Tensor,
                         heads: int) -> tuple[Tensor, Tensor]:
    """Matcher attention with image keys/values projected once per image.

    ``queries`` is [B, n, 2, C], ``image_tokens`` [B, T, C]; the key/value
    projections are shared by all n windows of an image, so they are computed
    on [B, T, C] and broadcast into the per-window attention matmuls.
    """
    bsz, n, q, c = queries.shape
    t = image_tokens.shape[1]
    ch = c // heads
    qp = T.linear(queries, params["dec.match.wq"])
    kp = T.linear(image_tokens, params["dec.match.wk"])
    vp = T.linear(image_tokens, params["dec.match.wv"])
    qh = T.transpose(T.reshape(qp, (bsz, n, q, heads, ch)), (0, 1, 3, 2, 4))
    kh = T.transpose(T.reshape(kp, (bsz, 1, t, heads, ch)), (0, 1, 3, 4, 2))
    vh = T.transpose(T.reshape(vp, (bsz, 1, t, heads, ch)), (0, 1, 3, 2, 4))
    attn = T.softmax(T.mul(T.matmul(qh, kh), ch ** -0.5), axis=-1)  # [B,n,h,q,T]
    ctx = T.matmul(attn, vh)  # [B,n,h,q,ch]
    out = T.reshape(T.transpose(ctx, (0, 1, 3, 2, 4)), (bsz, n, q, c))
    return out, attn


def substring_logits(params: dict[str, Tensor], cfg: ModelConfig, image_tokens: Tensor,
                     windows: np.ndarray) -> tuple[Tensor, Tensor]:
    """Batched decode of many windows against per-image token sets.

    ``image_tokens`` is [B, T, C] and ``windows`` is [B, n, l_s]: window j of
    row b is matched against image b. Returns logits [B, n, 2, classes] and
    matcher attention [B, n, heads, 2, T].
    """
    e_s = decoder.embed_substring(windows, params)
    queries = decoder.encode_queries(e_s, params, cfg.enc_heads)
    feats, attn = _match_shared_tokens(params, queries, image_tokens, cfg.match_heads)
    if cfg.matcher_residual:
        feats = feats + queries
    if cfg.matcher_mlp:
        h = T.layer_norm(feats, params["dec.match.ln.g"], params["dec.match.ln.b"], axis=-1)
        h = T.gelu(T.linear(h, params["dec.match.fc1.w"], params["dec.match.fc1.b"]))
        h = T.linear(h, params["dec.match.fc2.w"], params["dec.match.fc2.b"])
        feats = feats + h
    return decoder.classify(feats, params), attn


def single_image_tokens(params: dict[str, Tensor], cfg: ModelConfig,
                        image: ImageTensor, train: bool = False) -> Tensor:
    return encode_images(params, cfg, [image], train=train)


def decode_step(params: dict[str, Tensor], cfg: ModelConfig, image_tokens_1: Tensor,
                window) -> tuple[np.ndarray, np.ndarray]:
    """One inference step for a single window against one image.

    Returns (logits [2, classes], attention [heads, 2, T]); row 0 is the
    next-direction prediction, row 1 the previous-direction one.
    """
    win = np.asarray(window, dtype=np.int64)[None, None, :]
    logits, attn = substring_logits(params, cfg, image_tokens_1, win)
    return logits.data[0, 0], attn.data[0, 0]
