"""Dense tensors with reverse-mode automatic differentiation.

A :class:`Tensor` wraps a numpy array and, when gradients are enabled,
remembers its parents and a closure that propagates the upstream gradient.
``backward(loss)`` walks the recorded graph once in reverse topological
order.  Tensors are float32 by default; build float64 tensors for the
gradient-check mode used in tests.

Graph recording is skipped entirely when no input participates in
differentiation or inside :func:`no_grad`, so evaluation passes carry no
tape overhead.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import UsageError

DEFAULT_DTYPE = np.float32

_grad_enabled = True
_check_finite = False


@contextlib.contextmanager
def no_grad():
    """Disable graph recording within the block (evaluation passes)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


def grad_enabled() -> bool:
    return _grad_enabled


def set_debug_checks(enabled: bool) -> None:
    """Toggle the debug-mode finiteness check on every produced tensor."""
    global _check_finite
    _check_finite = bool(enabled)


class Tensor:
    """N-dimensional real array, optionally participating in the gradient tape."""

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad: bool = False):
        arr = np.asarray(data)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(DEFAULT_DTYPE)
        if _check_finite and not np.all(np.isfinite(arr)):
            raise FloatingPointError("non-finite value in tensor")
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"

    def item(self) -> float:
        return float(self.data)

    def accumulate_grad(self, g: np.ndarray) -> None:
        if self.grad is None:
            self.grad = np.zeros_like(self.data)
        self.grad += g

    def zero_grad(self) -> None:
        self.grad = None

    def detach(self) -> "Tensor":
        return Tensor(self.data)


def make_result(data: np.ndarray, parents, backward_fn) -> Tensor:
    """Create an op result, taping it only when some parent is differentiable.

    ``backward_fn(upstream)`` must yield ``(parent, grad)`` pairs whose grad
    arrays are freshly allocated (the engine accumulates into them in place).
    """
    if _check_finite and not np.all(np.isfinite(data)):
        raise FloatingPointError("non-finite value in op result")
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.requires_grad = False
    needs_tape = _grad_enabled and any(
        p.requires_grad or p._backward is not None for p in parents
    )
    if needs_tape:
        out._parents = tuple(parents)
        out._backward = backward_fn
    else:
        out._parents = ()
        out._backward = None
    return out


def backward(loss: Tensor) -> None:
    """Accumulate d(loss)/d(leaf) into every reachable leaf's ``grad``.

    ``loss`` must be scalar.  Repeated calls keep accumulating until grads
    are cleared.
    """
    if loss.data.size != 1:
        raise UsageError("backward expects a scalar loss")

    # Iterative reverse topological order; graphs can be deep.
    topo: list[Tensor] = []
    visited: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(loss, False)]
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
            if id(p) not in visited and (p._backward is not None or p.requires_grad):
                stack.append((p, False))

    grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
    for node in reversed(topo):
        g = grads.pop(id(node), None)
        if g is None:
            continue
        if node.requires_grad:
            node.accumulate_grad(g)
        if node._backward is None:
            continue
        for parent, pg in node._backward(g):
            if parent._backward is None and not parent.requires_grad:
                continue
            key = id(parent)
            if key in grads:
                grads[key] += pg
            else:
                grads[key] = pg


def parameter(data, rng=None, scale: float | None = None, dtype=None) -> Tensor:
    """Build a trainable tensor.

    With ``rng`` and ``scale``, fills with ``scale *`` standard-normal draws
    (He-style init when the caller passes ``sqrt(2/fan_in)``); otherwise wraps
    ``data`` as-is.
    """
    if rng is not None:
        shape = tuple(data)
        n = int(np.prod(shape)) if shape else 1
        vals = rng.normal(n).reshape(shape) * (scale if scale is not None else 1.0)
        arr = vals.astype(dtype or DEFAULT_DTYPE)
        return Tensor(arr, requires_grad=True)
    return Tensor(data, requires_grad=True)
