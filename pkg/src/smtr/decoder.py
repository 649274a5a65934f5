"""Sub-string decoder: window embedding, direction queries, matcher, classifier.

The two learnable direction tokens attend over the embedded window (with a
residual back onto the token) to produce the next/previous queries. The
matcher is a single plain cross-attention from those queries onto the image
tokens: no residual, no MLP, so the matched feature is a pure mixture of
image content. A shared affine classifier maps it to character classes plus
the end symbol.
"""

from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .errors import VocabError
from .tensor import Tensor

NEXT, PREV = 0, 1  # row order of the stacked direction queries


def init_decoder_params(embed_rows: int, num_classes: int, channels: int,
                        rng: np.random.Generator, matcher_mlp: bool = False,
                        mlp_ratio: int = 2) -> dict[str, Tensor]:
    p: dict[str, Tensor] = {}
    p["dec.char_emb"] = T.parameter(T.trunc_normal(rng, (embed_rows, channels)))
    p["dec.tok_next"] = T.parameter(T.trunc_normal(rng, (1, channels)))
    p["dec.tok_prev"] = T.parameter(T.trunc_normal(rng, (1, channels)))
    for group in ("enc_attn", "match"):
        for w in ("wq", "wk", "wv"):
            p[f"dec.{group}.{w}"] = T.parameter(T.trunc_normal(rng, (channels, channels)))
    if matcher_mlp:
        p["dec.match.ln.g"] = T.parameter(np.ones(channels, dtype=np.float32))
        p["dec.match.ln.b"] = T.parameter(np.zeros(channels, dtype=np.float32))
        p["dec.match.fc1.w"] = T.parameter(T.trunc_normal(rng, (channels, mlp_ratio * channels)))
        p["dec.match.fc1.b"] = T.parameter(np.zeros(mlp_ratio * channels, dtype=np.float32))
        p["dec.match.fc2.w"] = T.parameter(T.trunc_normal(rng, (mlp_ratio * channels, channels)))
        p["dec.match.fc2.b"] = T.parameter(np.zeros(channels, dtype=np.float32))
    p["dec.cls.w"] = T.parameter(T.trunc_normal(rng, (channels, num_classes)))
    p["dec.cls.b"] = T.parameter(np.zeros(num_classes, dtype=np.float32))
    return p


def embed_substring(windows: np.ndarray, params: dict[str, Tensor]) -> Tensor:
    """Look up window character indices: [..., l_s] -> [..., l_s, C]."""
    idx = np.asarray(windows)
    table = params["dec.char_emb"]
    if idx.size and (idx.min() < 0 or idx.max() >= table.shape[0]):
        raise VocabError(f"window index outside embedding table of {table.shape[0]} rows")
    flat = T.index_select(table, idx.reshape(-1))
    return T.reshape(flat, (*idx.shape, table.shape[1]))


def encode_queries(e_s: Tensor, params: dict[str, Tensor], num_heads: int) -> Tensor:
    """Next/previous queries for embedded windows.

    ``e_s`` is [..., l_s, C]; the result stacks the two directions on the
    second-to-last axis: [..., 2, C], row 0 next, row 1 previous.
    """
    toks = T.concat([params["dec.tok_next"], params["dec.tok_prev"]], axis=0)
    if e_s.ndim > 2:
        toks = T.broadcast_to(T.reshape(toks, (1,) * (e_s.ndim - 2) + (2, e_s.shape[-1])),
                              (*e_s.shape[:-2], 2, e_s.shape[-1]))
    out, _ = T.multi_head_attention(toks, e_s, e_s, params["dec.enc_attn.wq"],
                                    params["dec.enc_attn.wk"], params["dec.enc_attn.wv"],
                                    num_heads)
    return out + toks


def match(queries: Tensor, image_tokens: Tensor, params: dict[str, Tensor],
          num_heads: int, residual: bool = False, mlp: bool = False) -> tuple[Tensor, Tensor]:
    """Cross-attend queries onto image tokens; returns (features, attention).

    Plain by default; ``residual``/``mlp`` enable the heavier variants kept
    around for ablations.
    """
    out, attn = T.multi_head_attention(queries, image_tokens, image_tokens,
                                       params["dec.match.wq"], params["dec.match.wk"],
                                       params["dec.match.wv"], num_heads)
    if residual:
        out = out + queries
    if mlp:
        h = T.layer_norm(out, params["dec.match.ln.g"], params["dec.match.ln.b"], axis=-1)
        h = T.gelu(T.linear(h, params["dec.match.fc1.w"], params["dec.match.fc1.b"]))
        h = T.linear(h, params["dec.match.fc2.w"], params["dec.match.fc2.b"])
        out = out + h
    return out, attn


def classify(features: Tensor, params: dict[str, Tensor]) -> Tensor:
    """Affine map to character classes; the last class is the end symbol."""
    return T.linear(features, params["dec.cls.w"], params["dec.cls.b"])


def query_cosine(q_a: np.ndarray, q_b: np.ndarray) -> float:
    """Cosine similarity between two query vectors (diagnostic)."""
    a = np.asarray(q_a, dtype=np.float64).reshape(-1)
    b = np.asarray(q_b, dtype=np.float64).reshape(-1)
    na, nb = np.linalg.norm(a), np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cosine similarity undefined for a zero vector")
    return float(np.dot(a, b) / (na * nb))
