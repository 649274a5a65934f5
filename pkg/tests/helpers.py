"""Shared test utilities: finite-difference gradient checking.

The checker rebuilds the forward pass in float64 and compares analytic
gradients against central differences with eps=1e-3.
"""

from __future__ import annotations

import numpy as np

from smtr import tensor as T
from smtr.tensor import Tensor

EPS = 1e-3
RTOL = 1e-3


def rel_err(a: np.ndarray, n: np.ndarray) -> float:
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-3)
    return float((np.abs(a - n) / denom).max())


def fd_check(make_loss, arrays: dict[str, np.ndarray], eps: float = EPS,
             rtol: float = RTOL, max_coords: int | None = None,
             rng: np.random.Generator | None = None) -> float:
    """Compare backward() gradients with central finite differences.

    ``make_loss`` maps {name: Tensor} to a scalar Tensor; ``arrays`` holds
    float64 leaf values. Checks every coordinate unless ``max_coords`` caps
    the sample per leaf. Returns the worst relative error and asserts it is
    within ``rtol``.
    """
    tensors = {k: Tensor(v.astype(np.float64), requires_grad=True) for k, v in arrays.items()}
    loss = make_loss(tensors)
    loss.backward()
    grads = {k: (t.grad.copy() if t.grad is not None else np.zeros_like(t.data))
             for k, t in tensors.items()}

    def eval_loss() -> float:
        with T.no_grad():
            frozen = {k: Tensor(v.data) for k, v in tensors.items()}
            return float(make_loss(frozen).data)

    worst = 0.0
    for name, t in tensors.items():
        flat = t.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            if rng is None:
                rng = np.random.default_rng(0)
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        gflat = grads[name].reshape(-1)
        for i in coords:
            orig = flat[i]
            flat[i] = orig + eps
            hi = eval_loss()
            flat[i] = orig - eps
            lo = eval_loss()
            flat[i] = orig
            num = (hi - lo) / (2 * eps)
            err = rel_err(np.asarray(gflat[i]), np.asarray(num))
            worst = max(worst, err)
            assert err < rtol, (f"{name}[{i}]: analytic {gflat[i]:.6g} vs "
                                f"numeric {num:.6g} (rel err {err:.3g})")
    return worst


def random_projection_loss(out: Tensor, seed: int = 0) -> Tensor:
    """Contract a non-scalar op output to a scalar with a fixed random map."""
    r = np.random.default_rng(seed).standard_normal(out.shape)
    return T.sum_all(out * Tensor(r.astype(out.data.dtype)))
