"""Convolutional image encoder.

Shape schedule: a two-conv stride-2 stem to [C0, H/4, W/4], three mixer
stages with channel doublings after stages one and two (the second doubling
also halves the height), then a flatten to H/8 * W/4 tokens of 4*C0 channels.
There is no positional embedding anywhere, so the encoder accepts any width
divisible by 4 with the same parameters.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import tensor as T
from .errors import ShapeError
from .tensor import Tensor


@dataclass(frozen=True)
class EncoderConfig:
    base_channels: int = 16
    stage_depths: tuple[int, int, int] = (2, 2, 2)
    mixer_kernel: tuple[int, int] = (3, 5)
    mlp_ratio: int = 2

    @property
    def channels(self) -> int:
        return 4 * self.base_channels


def _he(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    return (rng.standard_normal(shape) * math.sqrt(2.0 / fan_in)).astype(np.float32)


def init_encoder_params(cfg: EncoderConfig, rng: np.random.Generator,
                        in_channels: int = 1) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}

    def conv(name, cout, cin, kh, kw):
        p[f"{name}.w"] = T.parameter(_he(rng, (cout, cin, kh, kw), cin * kh * kw))
        p[f"{name}.b"] = T.parameter(np.zeros(cout, dtype=np.float32))

    c0 = cfg.base_channels
    kh, kw = cfg.mixer_kernel
    conv("enc.stem.c1", c0, in_channels, 3, 3)
    conv("enc.stem.c2", c0, c0, 3, 3)
    for s, depth in enumerate(cfg.stage_depths):
        ch = c0 * (1, 2, 4)[s]
        for b in range(depth):
            pre = f"enc.s{s}.b{b}"
            p[f"{pre}.ln1.g"] = T.parameter(np.ones(ch, dtype=np.float32))
            p[f"{pre}.ln1.b"] = T.parameter(np.zeros(ch, dtype=np.float32))
            p[f"{pre}.dw.w"] = T.parameter(_he(rng, (ch, kh, kw), kh * kw))
            p[f"{pre}.dw.b"] = T.parameter(np.zeros(ch, dtype=np.float32))
            p[f"{pre}.ln2.g"] = T.parameter(np.ones(ch, dtype=np.float32))
            p[f"{pre}.ln2.b"] = T.parameter(np.zeros(ch, dtype=np.float32))
            p[f"{pre}.fc1.w"] = T.parameter(T.trunc_normal(rng, (ch, cfg.mlp_ratio * ch)))
            p[f"{pre}.fc1.b"] = T.parameter(np.zeros(cfg.mlp_ratio * ch, dtype=np.float32))
            p[f"{pre}.fc2.w"] = T.parameter(T.trunc_normal(rng, (cfg.mlp_ratio * ch, ch)))
            p[f"{pre}.fc2.b"] = T.parameter(np.zeros(ch, dtype=np.float32))
    conv("enc.tr1", 2 * c0, c0, 3, 3)
    conv("enc.tr2", 4 * c0, 2 * c0, 3, 3)
    p["enc.out_ln.g"] = T.parameter(np.ones(cfg.channels, dtype=np.float32))
    p["enc.out_ln.b"] = T.parameter(np.zeros(cfg.channels, dtype=np.float32))
    return p


def patch_embed(x: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Two stride-2 k3 convolutions with GELU: [B,1,H,W] -> [B,C0,H/4,W/4]."""
    b, c, h, w = x.shape
    if h % 8 or w % 4:
        raise ShapeError(f"image {h}x{w} violates height%8==0 / width%4==0")
    x = T.gelu(T.conv2d(x, params["enc.stem.c1.w"], params["enc.stem.c1.b"], stride=2, padding=1))
    x = T.gelu(T.conv2d(x, params["enc.stem.c2.w"], params["enc.stem.c2.b"], stride=2, padding=1))
    return x


def mixer_block(x: Tensor, params: dict[str, Tensor], prefix: str,
                kernel: tuple[int, int]) -> Tensor:
    """Depthwise spatial conv + pointwise channel MLP, each pre-normed and
    residual. Zeroing a branch's final projection makes it the identity."""
    kh, kw = kernel
    h1 = T.layer_norm(x, params[f"{prefix}.ln1.g"], params[f"{prefix}.ln1.b"], axis=1)
    h1 = T.depthwise_conv2d(h1, params[f"{prefix}.dw.w"], params[f"{prefix}.dw.b"],
                            padding=(kh // 2, kw // 2))
    x = x + T.gelu(h1)
    h2 = T.layer_norm(x, params[f"{prefix}.ln2.g"], params[f"{prefix}.ln2.b"], axis=1)
    h2 = T.transpose(h2, (0, 2, 3, 1))
    h2 = T.gelu(T.linear(h2, params[f"{prefix}.fc1.w"], params[f"{prefix}.fc1.b"]))
    h2 = T.linear(h2, params[f"{prefix}.fc2.w"], params[f"{prefix}.fc2.b"])
    return x + T.transpose(h2, (0, 3, 1, 2))


def encode_image(x: Tensor, params: dict[str, Tensor], cfg: EncoderConfig) -> Tensor:
    """Full encoder: [B,1,H,W] -> [B, H/8 * W/4, 4*C0] token embeddings."""
    x = patch_embed(x, params)
    for s, depth in enumerate(cfg.stage_depths):
        for b in range(depth):
            x = mixer_block(x, params, f"enc.s{s}.b{b}", cfg.mixer_kernel)
        if s == 0:
            x = T.gelu(T.conv2d(x, params["enc.tr1.w"], params["enc.tr1.b"], stride=1, padding=1))
        elif s == 1:
            x = T.gelu(T.conv2d(x, params["enc.tr2.w"], params["enc.tr2.b"], stride=(2, 1), padding=1))
    x = T.layer_norm(x, params["enc.out_ln.g"], params["enc.out_ln.b"], axis=1)
    bsz, ch, hh, ww = x.shape
    x = T.transpose(x, (0, 2, 3, 1))
    return T.reshape(x, (bsz, hh * ww, ch))
