"""Reverse-mode differentiable tensor engine on top of numpy.

Every model operation in the package is built from the primitives here. The
design is a dynamic tape: each op returns a new Tensor holding references to
its parents and a closure that propagates the output gradient to them.
``backward()`` walks the graph once in reverse topological order and then
frees it, so a fresh graph is recorded on every forward pass.

Computation runs in float32 by default; float64 inputs are propagated
unchanged, which is what the finite-difference check harness relies on.
"""

from __future__ import annotations

import math
import threading
from typing import Iterable, Sequence

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ConfigError, ShapeError, VocabError

_FLOAT_DTYPES = (np.float32, np.float64)

_state = threading.local()


def grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager: ops inside record no graph (inference mode)."""

    def __enter__(self):
        self._prev = grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def _as_array(data, dtype=None) -> np.ndarray:
    arr = np.asarray(data)
    if dtype is None:
        dtype = arr.dtype if arr.dtype in _FLOAT_DTYPES else np.float32
    if arr.dtype != dtype:
        arr = arr.astype(dtype)
    elif not arr.flags["C_CONTIGUOUS"]:
        arr = arr.copy()
    return arr


class Tensor:
    """N-dimensional float array with an optional gradient buffer."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False, dtype=None):
        self.data = _as_array(data, dtype)
        self.grad: np.ndarray | None = None
        self.requires_grad = bool(requires_grad)
        self._parents: tuple[Tensor, ...] = ()
        self._backward = None

    # -- basic introspection -------------------------------------------------

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    @property
    def size(self) -> int:
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def item(self) -> float:
        return float(self.data.item())

    def numpy(self) -> np.ndarray:
        return self.data

    def detach(self) -> "Tensor":
        return Tensor(self.data)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.data.dtype.name}, requires_grad={self.requires_grad})"

    # -- autodiff ------------------------------------------------------------

    def zero_grad(self):
        self.grad = None

    def _accumulate(self, g: np.ndarray):
        # first write keeps a reference; later writes allocate a fresh sum,
        # so stored buffers are never mutated (they may be shared or views)
        if self.grad is None:
            self.grad = g if g.dtype == self.data.dtype else g.astype(self.data.dtype)
        else:
            self.grad = self.grad + g

    def backward(self):
        """Backpropagate from a scalar; frees the recorded graph afterwards."""
        if self.size != 1:
            raise ShapeError(f"backward() needs a scalar, got shape {self.shape}")
        topo: list[Tensor] = []
        visited: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, processed = stack.pop()
            if processed:
                topo.append(node)
                continue
            if id(node) in visited:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for p in node._parents:
                if id(p) not in visited:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(topo):
            if node._backward is not None:
                node._backward(node.grad)
            node._parents = ()
            node._backward = None


def _make(out_data, parents: tuple[Tensor, ...], backward) -> Tensor:
    out = Tensor(out_data)
    if grad_enabled() and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(p for p in parents if p.requires_grad)
        out._backward = backward
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``shape`` (inverse of numpy broadcasting)."""
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- arithmetic ---------------------------------------------------------------


def _wrap(x, like: Tensor) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(np.asarray(x, dtype=like.data.dtype))


def add(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g, b.shape))

    return _make(a.data + b.data, (a, b), bwd)


def mul(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g * b.data, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(g * a.data, b.shape))

    return _make(a.data * b.data, (a, b), bwd)


def neg(a: Tensor) -> Tensor:
    def bwd(g):
        a._accumulate(-g)

    return _make(-a.data, (a,), bwd)


def sub(a: Tensor, b) -> Tensor:
    b = _wrap(b, a)

    def bwd(g):
        if a.requires_grad:
            a._accumulate(_unbroadcast(g, a.shape))
        if b.requires_grad:
            b._accumulate(_unbroadcast(-g, b.shape))

    return _make(a.data - b.data, (a, b), bwd)


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product, batched over leading dims with numpy semantics."""
    if a.data.shape[-1] != b.data.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul: inner dimensions disagree for shapes {a.shape} and {b.shape}")

    def bwd(g):
        if a.requires_grad:
            da = g @ np.swapaxes(b.data, -1, -2) if b.ndim > 1 else np.outer(g, b.data)
            a._accumulate(_unbroadcast(da, a.shape))
        if b.requires_grad:
            db = np.swapaxes(a.data, -1, -2) @ g if a.ndim > 1 else np.outer(a.data, g)
            b._accumulate(_unbroadcast(db, b.shape))

    return _make(a.data @ b.data, (a, b), bwd)


def linear(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    """Dense map on the last axis: [..., C] @ [C, K] (+ bias [K]).

    Leading dims are flattened into a single GEMM, which is much faster than
    numpy's stacked-matmul path for long thin batches.
    """
    if x.data.shape[-1] != w.data.shape[0]:
        raise ShapeError(f"linear: {x.shape} @ {w.shape} inner dims disagree")
    lead = x.data.shape[:-1]
    x2 = np.ascontiguousarray(x.data).reshape(-1, x.data.shape[-1])
    out = x2 @ w.data
    if b is not None:
        out += b.data
    out = out.reshape(*lead, w.data.shape[1])

    def bwd(g):
        g2 = np.ascontiguousarray(g).reshape(-1, g.shape[-1])
        if x.requires_grad:
            x._accumulate((g2 @ w.data.T).reshape(x.data.shape))
        if w.requires_grad:
            w._accumulate(x2.T @ g2)
        if b is not None and b.requires_grad:
            b._accumulate(g2.sum(axis=0))

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd)


def reshape(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    orig = a.shape

    def bwd(g):
        a._accumulate(g.reshape(orig))

    return _make(a.data.reshape(shape), (a,), bwd)


def transpose(a: Tensor, axes: Sequence[int]) -> Tensor:
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))

    def bwd(g):
        a._accumulate(g.transpose(inv))

    return _make(a.data.transpose(axes), (a,), bwd)


def swap_last2(a: Tensor) -> Tensor:
    axes = list(range(a.ndim))
    axes[-1], axes[-2] = axes[-2], axes[-1]
    return transpose(a, axes)


def broadcast_to(a: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)

    def bwd(g):
        a._accumulate(_unbroadcast(g, a.shape))

    return _make(np.broadcast_to(a.data, shape).copy(), (a,), bwd)


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = list(tensors)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def bwd(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            if t.requires_grad:
                idx = [slice(None)] * g.ndim
                idx[axis] = slice(lo, hi)
                t._accumulate(g[tuple(idx)])

    return _make(np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), bwd)


def getitem(a: Tensor, key) -> Tensor:
    """Basic (slice/int) indexing; no advanced indexing here."""

    def bwd(g):
        da = np.zeros_like(a.data)
        da[key] += g
        a._accumulate(da)

    return _make(a.data[key].copy(), (a,), bwd)


def index_select(a: Tensor, indices: np.ndarray) -> Tensor:
    """Gather rows along axis 0; duplicate indices accumulate on backward."""
    idx = np.asarray(indices)
    if idx.ndim != 1:
        raise ShapeError("index_select expects 1-D indices")
    if idx.size and (idx.min() < 0 or idx.max() >= a.shape[0]):
        raise VocabError(f"index {int(idx.min())}..{int(idx.max())} outside table of size {a.shape[0]}")

    def bwd(g):
        da = np.zeros_like(a.data)
        order = np.argsort(idx, kind="stable")
        sorted_idx = idx[order]
        starts = np.flatnonzero(np.r_[True, sorted_idx[1:] != sorted_idx[:-1]])
        sums = np.add.reduceat(g[order], starts, axis=0)
        da[sorted_idx[starts]] += sums
        a._accumulate(da)

    return _make(a.data[idx].copy(), (a,), bwd)


def sum_all(a: Tensor) -> Tensor:
    def bwd(g):
        a._accumulate(np.full_like(a.data, float(g)))

    return _make(a.data.sum(), (a,), bwd)


def mean_all(a: Tensor) -> Tensor:
    n = a.size

    def bwd(g):
        a._accumulate(np.full_like(a.data, float(g) / n))

    return _make(a.data.mean(), (a,), bwd)


# -- nonlinearities -----------------------------------------------------------

_GELU_C = math.sqrt(2.0 / math.pi)


def gelu(a: Tensor) -> Tensor:
    x = a.data
    x2 = x * x
    t = np.tanh(_GELU_C * (x + 0.044715 * (x2 * x)))
    out = 0.5 * x * (1.0 + t)
    if not (grad_enabled() and a.requires_grad):
        return _make(out, (a,), None)
    # derivative assembled in the forward pass; backward is one multiply
    deriv = 0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * (_GELU_C * (1.0 + 0.134145 * x2))

    def bwd(g):
        a._accumulate(g * deriv)

    return _make(out, (a,), bwd)


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    """Max-stabilized softmax along ``axis``."""
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        a._accumulate(y * (g - (g * y).sum(axis=axis, keepdims=True)))

    return _make(y, (a,), bwd)


def layer_norm(a: Tensor, gamma: Tensor, beta: Tensor, axis: int = -1, eps: float = 1e-5) -> Tensor:
    """Normalize over a single axis, then apply a per-element affine map.

    ``gamma``/``beta`` are 1-D with the length of the normalized axis.
    """
    ax = axis % a.ndim
    n = a.shape[ax]
    if gamma.shape != (n,) or beta.shape != (n,):
        raise ShapeError(f"layer_norm affine params must have shape ({n},)")
    pshape = [1] * a.ndim
    pshape[ax] = n
    gam = gamma.data.reshape(pshape)
    mu = a.data.mean(axis=ax, keepdims=True)
    var = a.data.var(axis=ax, keepdims=True)
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (a.data - mu) * inv
    reduce_axes = tuple(i for i in range(a.ndim) if i != ax)

    def bwd(g):
        if gamma.requires_grad:
            gamma._accumulate((g * xhat).sum(axis=reduce_axes))
        if beta.requires_grad:
            beta._accumulate(g.sum(axis=reduce_axes))
        if a.requires_grad:
            dxhat = g * gam
            t1 = dxhat.sum(axis=ax, keepdims=True)
            t2 = (dxhat * xhat).sum(axis=ax, keepdims=True)
            a._accumulate(inv * (dxhat - t1 / n - xhat * t2 / n))

    return _make(xhat * gam + beta.data.reshape(pshape), (a, gamma, beta), bwd)


# -- convolutions -------------------------------------------------------------


def _pair(v) -> tuple[int, int]:
    return (v, v) if isinstance(v, int) else tuple(v)


def _windows(xp: np.ndarray, kh: int, kw: int, sh: int, sw: int) -> np.ndarray:
    win = sliding_window_view(xp, (kh, kw), axis=(2, 3))
    return win[:, :, ::sh, ::sw]


def _conv2d_plain(xp: np.ndarray, w: np.ndarray) -> np.ndarray:
    """Stride-1, no-padding correlation used by the backward pass."""
    kh, kw = w.shape[-2:]
    win = _windows(xp, kh, kw, 1, 1)
    b_, c_, ho, wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(b_ * ho * wo, -1)
    out = cols @ w.reshape(w.shape[0], -1).T
    return out.reshape(b_, ho, wo, w.shape[0]).transpose(0, 3, 1, 2)


def _dilate(g: np.ndarray, sh: int, sw: int) -> np.ndarray:
    if sh == 1 and sw == 1:
        return g
    b, c, ho, wo = g.shape
    out = np.zeros((b, c, (ho - 1) * sh + 1, (wo - 1) * sw + 1), dtype=g.dtype)
    out[:, :, ::sh, ::sw] = g
    return out


def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride=1, padding=0) -> Tensor:
    """2-D correlation: x[B,Cin,H,W] * w[Cout,Cin,kh,kw] (+ bias)."""
    sh, sw = _pair(stride)
    ph, pw = _pair(padding)
    bs, cin, h, wdt = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d: input has {cin} channels, kernel expects {cin_w}")
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    win = _windows(xp, kh, kw, sh, sw)
    ho, wo = win.shape[2], win.shape[3]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(bs * ho * wo, cin * kh * kw)
    out = cols @ w.data.reshape(cout, -1).T
    out = out.reshape(bs, ho, wo, cout).transpose(0, 3, 1, 2)
    if b is not None:
        out = out + b.data.reshape(1, cout, 1, 1)

    def bwd(g):
        gcols = g.transpose(0, 2, 3, 1).reshape(bs * ho * wo, cout)
        if w.requires_grad:
            w._accumulate((gcols.T @ cols).reshape(w.shape))
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            gd = _dilate(g, sh, sw)
            extra_h = (h + 2 * ph) - (gd.shape[2] + kh - 1)
            extra_w = (wdt + 2 * pw) - (gd.shape[3] + kw - 1)
            gdp = np.pad(gd, ((0, 0), (0, 0), (kh - 1, kh - 1 + extra_h), (kw - 1, kw - 1 + extra_w)))
            wf = w.data[:, :, ::-1, ::-1].transpose(1, 0, 2, 3)
            dxp = _conv2d_plain(gdp, wf)
            x._accumulate(dxp[:, :, ph:ph + h, pw:pw + wdt])

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd)


def depthwise_conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, padding=0) -> Tensor:
    """Per-channel stride-1 correlation: x[B,C,H,W] * w[C,kh,kw] (+ bias).

    Implemented as kh*kw shifted multiply-adds, which beats an im2col on the
    small kernels used here (no windowed copy of the input).
    """
    ph, pw = _pair(padding)
    bs, c, h, wdt = x.shape
    cw, kh, kw = w.shape
    if c != cw:
        raise ShapeError(f"depthwise_conv2d: {c} channels vs kernel for {cw}")
    ho, wo = h + 2 * ph - kh + 1, wdt + 2 * pw - kw + 1
    xp = np.pad(x.data, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    out = np.zeros((bs, c, ho, wo), dtype=x.data.dtype)
    tap = np.empty_like(out)
    for i in range(kh):
        for j in range(kw):
            np.multiply(xp[:, :, i:i + ho, j:j + wo], w.data[:, i, j].reshape(1, c, 1, 1),
                        out=tap)
            out += tap
    if b is not None:
        out += b.data.reshape(1, c, 1, 1)

    def bwd(g):
        if w.requires_grad:
            dw = np.empty_like(w.data)
            for i in range(kh):
                for j in range(kw):
                    dw[:, i, j] = (xp[:, :, i:i + ho, j:j + wo] * g).sum(axis=(0, 2, 3))
            w._accumulate(dw)
        if b is not None and b.requires_grad:
            b._accumulate(g.sum(axis=(0, 2, 3)))
        if x.requires_grad:
            dxp = np.zeros_like(xp)
            for i in range(kh):
                for j in range(kw):
                    dxp[:, :, i:i + ho, j:j + wo] += g * w.data[:, i, j].reshape(1, c, 1, 1)
            x._accumulate(dxp[:, :, ph:ph + h, pw:pw + wdt].copy())

    parents = (x, w) if b is None else (x, w, b)
    return _make(out, parents, bwd)


# -- loss ---------------------------------------------------------------------


def cross_entropy_masked(logits: Tensor, labels: np.ndarray) -> tuple[Tensor, int]:
    """Summed cross-entropy over labelled positions.

    ``labels`` holds class indices, with -1 marking positions that carry no
    supervision: those contribute exactly zero loss and zero gradient. Returns
    the un-normalized sum plus the count of contributing terms, so the caller
    owns the normalization.
    """
    lab = np.asarray(labels)
    if lab.shape != logits.shape[:-1]:
        raise ShapeError(f"labels {lab.shape} do not match logits {logits.shape[:-1]}")
    ncls = logits.shape[-1]
    flat = lab.reshape(-1)
    if flat.size and (flat.min() < -1 or flat.max() >= ncls):
        raise VocabError(f"label outside [0, {ncls}) (or -1): range {int(flat.min())}..{int(flat.max())}")
    x = logits.data.reshape(-1, ncls)
    valid = flat >= 0
    n_valid = int(valid.sum())
    z = x - x.max(axis=-1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=-1, keepdims=True))
    logp = z - lse
    rows = np.flatnonzero(valid)
    loss = -logp[rows, flat[rows]].sum() if n_valid else np.zeros((), dtype=x.dtype)

    def bwd(g):
        dx = np.zeros_like(x)
        if n_valid:
            p = np.exp(logp[rows])
            p[np.arange(rows.size), flat[rows]] -= 1.0
            dx[rows] = p * float(g)
        logits._accumulate(dx.reshape(logits.shape))

    return _make(np.asarray(loss, dtype=x.dtype), (logits,), bwd), n_valid


# -- attention ----------------------------------------------------------------


def _split_heads(x: Tensor, h: int) -> Tensor:
    *lead, t, c = x.shape
    x = reshape(x, (*lead, t, h, c // h))
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    return transpose(x, axes)


def _merge_heads(x: Tensor) -> Tensor:
    axes = list(range(x.ndim))
    axes[-3], axes[-2] = axes[-2], axes[-3]
    x = transpose(x, axes)
    *lead, t, h, ch = x.shape
    return reshape(x, (*lead, t, h * ch))


def multi_head_attention(q: Tensor, k: Tensor, v: Tensor, wq: Tensor, wk: Tensor,
                         wv: Tensor, num_heads: int) -> tuple[Tensor, Tensor]:
    """Multi-head cross-attention; output is the plain concatenation of heads.

    Weights are C x C, interpreted as ``num_heads`` stacked C x C_h blocks.
    Returns (output [..., t_q, C], attention maps [..., heads, t_q, t_k]).
    """
    c = q.shape[-1]
    if c % num_heads != 0:
        raise ConfigError(f"channel dim {c} not divisible by {num_heads} heads")
    ch = c // num_heads
    qh = _split_heads(linear(q, wq), num_heads)
    kh = _split_heads(linear(k, wk), num_heads)
    vh = _split_heads(linear(v, wv), num_heads)
    scores = mul(matmul(qh, swap_last2(kh)), ch ** -0.5)
    attn = softmax(scores, axis=-1)
    out = _merge_heads(matmul(attn, vh))
    return out, attn


# -- operator sugar -----------------------------------------------------------

Tensor.__add__ = lambda self, o: add(self, o)
Tensor.__radd__ = lambda self, o: add(self, o)
Tensor.__sub__ = lambda self, o: sub(self, o)
Tensor.__mul__ = lambda self, o: mul(self, o)
Tensor.__rmul__ = lambda self, o: mul(self, o)
Tensor.__neg__ = lambda self: neg(self)
Tensor.__matmul__ = lambda self, o: matmul(self, o)
Tensor.__truediv__ = lambda self, o: mul(self, 1.0 / o)
Tensor.__getitem__ = lambda self, key: getitem(self, key)
Tensor.reshape = lambda self, *shape: reshape(self, shape[0] if len(shape) == 1 and isinstance(shape[0], (tuple, list)) else shape)


def trunc_normal(rng: np.random.Generator, shape, std: float = 0.02) -> np.ndarray:
    """Normal samples clipped to two standard deviations."""
    a = rng.normal(0.0, std, size=shape)
    return np.clip(a, -2 * std, 2 * std).astype(np.float32)


def parameter(data, requires_grad: bool = True) -> Tensor:
    return Tensor(data, requires_grad=requires_grad)
