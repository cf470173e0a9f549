"""Finite-difference verification of analytic gradients.

Checks run in float64: analytic gradients from ``backward`` are compared
against central differences with step ``h = 1e-4``.  A comparison passes
when ``|a - n| <= atol + rtol * max(|a|, |n|)`` elementwise (rtol 1e-3,
atol 1e-6 by default).
"""

from __future__ import annotations

import numpy as np

from . import ops
from .tensor import Tensor, backward


def fd_gradient(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central-difference gradient of scalar-valued ``f`` at ``x``."""
    x = x.astype(np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = f(x)
        flat[i] = orig - h
        fm = f(x)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return g


def max_violation(analytic: np.ndarray, numeric: np.ndarray,
                  rtol: float = 1e-3, atol: float = 1e-6) -> float:
    """Largest exceedance of the combined tolerance; <= 0 means pass."""
    err = np.abs(analytic - numeric)
    tol = atol + rtol * np.maximum(np.abs(analytic), np.abs(numeric))
    return float((err - tol).max())


def check_op(fn, arrays: list[np.ndarray], h: float = 1e-4,
             rtol: float = 1e-3, atol: float = 1e-6) -> float:
    """Compare analytic and numeric gradients of ``sum(R * fn(*inputs))``.

    ``fn`` maps Tensors to one output Tensor.  A fixed random projection R
    turns the output into a scalar so a single backward pass checks every
    input coordinate.  Returns the worst tolerance exceedance (<= 0 passes).
    """
    arrays = [a.astype(np.float64) for a in arrays]
    tensors = [Tensor(a.copy(), requires_grad=True) for a in arrays]
    out = fn(*tensors)
    rproj = _projection(out.data.shape)
    loss = ops.tsum(ops.mul(out, Tensor(rproj)))
    backward(loss)

    worst = -np.inf
    for i, t in enumerate(tensors):
        def scalar(a, i=i):
            probe = [arr.copy() for arr in arrays]
            probe[i] = a
            val = fn(*[Tensor(arr) for arr in probe])
            return float((val.data * rproj).sum())

        numeric = fd_gradient(scalar, arrays[i], h=h)
        analytic = t.grad if t.grad is not None else np.zeros_like(arrays[i])
        worst = max(worst, max_violation(analytic, numeric, rtol, atol))
    return worst


def check_params(loss_fn, params: dict[str, Tensor], rng, h: float = 1e-4,
                 rtol: float = 1e-3, atol: float = 1e-6) -> float:
    """Directional derivative check for a whole network.

    Draws one random direction over all trainable parameters and compares
    the analytic directional derivative sum(d * grad) with the central
    difference of the loss along that direction.
    """
    trainable = {k: p for k, p in params.items() if p.requires_grad}
    loss = loss_fn()
    backward(loss)
    direction = {}
    analytic = 0.0
    for name, p in trainable.items():
        d = rng.normal(p.data.size).reshape(p.data.shape)
        direction[name] = d
        g = p.grad if p.grad is not None else 0.0
        analytic += float((d * g).sum())

    saved = {k: p.data.copy() for k, p in trainable.items()}

    def eval_at(sign: float) -> float:
        for k, p in trainable.items():
            p.data = saved[k] + sign * h * direction[k]
        val = float(loss_fn().data)
        return val

    fp = eval_at(+1.0)
    fm = eval_at(-1.0)
    for k, p in trainable.items():
        p.data = saved[k]
        p.zero_grad()
    numeric = (fp - fm) / (2 * h)
    return max_violation(np.asarray(analytic), np.asarray(numeric), rtol, atol)


def _projection(shape) -> np.ndarray:
    """Deterministic pseudo-random projection with entries in [0.5, 1.5]."""
    n = int(np.prod(shape)) if shape else 1
    vals = (np.arange(1, n + 1) * 0.6180339887498949) % 1.0
    return (vals + 0.5).reshape(shape)
