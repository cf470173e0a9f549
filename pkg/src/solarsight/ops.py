"""Differentiable operators over :class:`~solarsight.tensor.Tensor`.

Layout convention is NCHW for feature maps.  Convolutions use "same"
padding when the caller passes ``pad=k//2``; spatial shapes follow
``H' = (H + 2*pad - k)//stride + 1`` with exact division enforced for
``conv2d`` and floor division for pooling.  All forward passes are plain
numpy, so results are bitwise deterministic for fixed inputs and seeds.
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import as_strided

from . import _kernels
from .errors import ConfigurationError, DataError
from .tensor import Tensor, make_result

__all__ = [
    "add", "mul", "scale", "tsum", "relu", "concat_channels", "conv2d",
    "avg_pool", "bilinear_upsample", "transposed_conv1x1", "spatial_dropout",
    "batch_norm", "global_avg_pool", "fully_connected", "softmax",
    "weighted_cross_entropy", "pixelwise_cross_entropy", "max_index",
    "bilinear_resize",
]


def _windows(xp: np.ndarray, k: int, stride: int, oh: int, ow: int) -> np.ndarray:
    """Strided (N, C, k, k, oh, ow) view over a padded NCHW array."""
    n, c, _, _ = xp.shape
    sn, sc, sh, sw = xp.strides
    return as_strided(xp, (n, c, k, k, oh, ow), (sn, sc, sh, sw, sh * stride, sw * stride))


# ---------------------------------------------------------------------------
# elementwise plumbing

def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigurationError(f"add shape mismatch: {a.shape} vs {b.shape}")

    def bwd(g):
        return ((a, g), (b, g.copy()))

    return make_result(a.data + b.data, (a, b), bwd)


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ConfigurationError(f"mul shape mismatch: {a.shape} vs {b.shape}")

    def bwd(g):
        return ((a, g * b.data), (b, g * a.data))

    return make_result(a.data * b.data, (a, b), bwd)


def scale(a: Tensor, s: float) -> Tensor:
    def bwd(g):
        return ((a, g * s),)

    return make_result(a.data * s, (a,), bwd)


def tsum(a: Tensor) -> Tensor:
    """Sum of all elements, as a scalar tensor."""

    def bwd(g):
        return ((a, np.full_like(a.data, float(g))),)

    return make_result(np.asarray(a.data.sum(), dtype=a.dtype), (a,), bwd)


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0

    def bwd(g):
        return ((a, g * mask),)

    return make_result(np.where(mask, a.data, a.dtype.type(0)), (a,), bwd)


def concat_channels(parts: list[Tensor]) -> Tensor:
    if not parts:
        raise ConfigurationError("concat of zero tensors")
    sizes = [p.shape[1] for p in parts]
    bounds = np.cumsum([0] + sizes)

    def bwd(g):
        return tuple(
            (p, g[:, bounds[i]:bounds[i + 1]].copy()) for i, p in enumerate(parts)
        )

    return make_result(np.concatenate([p.data for p in parts], axis=1), tuple(parts), bwd)


# ---------------------------------------------------------------------------
# convolution / pooling / resampling

def conv2d(x: Tensor, w: Tensor, b: Tensor | None = None, stride: int = 1, pad: int = 0,
           truncate: bool = False) -> Tensor:
    """2D cross-correlation of NCHW input with an (F, C, k, k) kernel.

    Requires odd k, stride >= 1, pad >= 0 and exact output division
    (``H' = (H + 2*pad - k)/stride + 1``).  ``truncate=True`` opts into
    floor division, dropping trailing windows; no odd kernel with symmetric
    padding can halve an even extent exactly, so strided stages pass it.
    Passing ``b=None`` skips the bias add entirely (this keeps the 1x1
    identity kernel an exact identity map).
    """
    n, c, h, wdt = x.shape
    f, cw, k, k2 = w.shape
    if k != k2 or k % 2 == 0:
        raise ConfigurationError(f"kernel must be square with odd side, got {k}x{k2}")
    if cw != c:
        raise ConfigurationError(f"channel mismatch: input {c}, kernel {cw}")
    if stride < 1 or pad < 0:
        raise ConfigurationError("stride must be >= 1 and pad >= 0")
    if not truncate and ((h + 2 * pad - k) % stride or (wdt + 2 * pad - k) % stride):
        raise ConfigurationError(
            f"non-integral output size for {h}x{wdt}, k={k}, stride={stride}, pad={pad}"
        )
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wdt + 2 * pad - k) // stride + 1
    if b is not None and b.shape != (f,):
        raise ConfigurationError(f"bias must have shape ({f},), got {b.shape}")

    xd = np.ascontiguousarray(x.data)
    xp = np.pad(xd, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else xd
    out = _kernels.conv_fwd(xp, np.ascontiguousarray(w.data), stride, oh, ow)
    if b is not None:
        out += b.data[None, :, None, None]

    def bwd(g):
        g = np.ascontiguousarray(g)
        dxp = _kernels.conv_bwd_dx(g, w.data, stride, h + 2 * pad, wdt + 2 * pad)
        dx = dxp[:, :, pad:pad + h, pad:pad + wdt] if pad else dxp
        dw = _kernels.conv_bwd_dw(g, xp, k, stride)
        grads = [(x, np.ascontiguousarray(dx)), (w, dw)]
        if b is not None:
            grads.append((b, g.sum(axis=(0, 2, 3))))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, bwd)


def avg_pool(x: Tensor, k: int = 3, stride: int = 1) -> Tensor:
    """k x k mean pooling with pad k//2; padded positions are excluded from
    each window's divisor, so constant inputs stay constant at the borders."""
    n, c, h, wdt = x.shape
    pad = k // 2
    if h + 2 * pad < k or wdt + 2 * pad < k:
        raise ConfigurationError(f"spatial dims {h}x{wdt} too small for k={k}")
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    oh = (h + 2 * pad - k) // stride + 1
    ow = (wdt + 2 * pad - k) // stride + 1

    xp = np.pad(x.data, ((0, 0), (0, 0), (pad, pad), (pad, pad))) if pad else x.data
    sums = _windows(xp, k, stride, oh, ow).sum(axis=(2, 3))
    ones = np.pad(np.ones((1, 1, h, wdt), dtype=x.dtype), ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    counts = _windows(ones, k, stride, oh, ow).sum(axis=(2, 3))  # (1, 1, oh, ow)
    out = sums / counts

    def bwd(g):
        gn = g / counts
        dxp = np.zeros_like(xp)
        for i in range(k):
            for j in range(k):
                dxp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += gn
        dx = dxp[:, :, pad:pad + h, pad:pad + wdt] if pad else dxp
        return ((x, np.ascontiguousarray(dx)),)

    return make_result(out, (x,), bwd)


def _bilinear_coords(n_in: int, n_out: int):
    """Align-corners source coordinates split into floor index and weight."""
    if n_out == 1:
        src = np.zeros(1)
    else:
        src = np.arange(n_out) * ((n_in - 1) / (n_out - 1))
    lo = np.minimum(np.floor(src).astype(np.intp), n_in - 1)
    hi = np.minimum(lo + 1, n_in - 1)
    w = (src - lo).astype(np.float64)
    return lo, hi, w


def bilinear_resize(a: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Align-corners bilinear resize of the trailing two axes (plain numpy)."""
    h, w = a.shape[-2:]
    if out_h == h and out_w == w:
        return a.copy()
    y0, y1, wy = _bilinear_coords(h, out_h)
    x0, x1, wx = _bilinear_coords(w, out_w)
    wy = wy.reshape(-1, 1)
    wx = wx.reshape(1, -1)
    top = a[..., y0, :][..., x0] * (1 - wx) + a[..., y0, :][..., x1] * wx
    bot = a[..., y1, :][..., x0] * (1 - wx) + a[..., y1, :][..., x1] * wx
    return (top * (1 - wy) + bot * wy).astype(a.dtype)


def bilinear_upsample(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Align-corners bilinear upsampling; exact identity when sizes match."""
    n, c, h, w = x.shape
    if out_h < h or out_w < w:
        raise ConfigurationError(f"cannot downscale {h}x{w} to {out_h}x{out_w}")
    if out_h == h and out_w == w:
        def bwd_id(g):
            return ((x, g.copy()),)
        return make_result(x.data.copy(), (x,), bwd_id)

    y0, y1, wy = _bilinear_coords(h, out_h)
    x0, x1, wx = _bilinear_coords(w, out_w)
    out = bilinear_resize(x.data, out_h, out_w)

    def bwd(g):
        dx = np.zeros(x.shape, dtype=np.float64)
        wyc = wy.reshape(-1, 1)
        wxc = wx.reshape(1, -1)
        for yy, ww in ((y0, (1 - wyc)), (y1, wyc)):
            for xx, vv in ((x0, (1 - wxc)), (x1, wxc)):
                contrib = g * (ww * vv)
                np.add.at(dx, (slice(None), slice(None), yy.reshape(-1, 1), xx.reshape(1, -1)), contrib)
        return ((x, dx.astype(x.dtype)),)

    return make_result(out, (x,), bwd)


def transposed_conv1x1(x: Tensor, w: Tensor, stride: int, out_h: int, out_w: int) -> Tensor:
    """1x1 transposed convolution: project channels with ``w`` (C, F) and
    scatter values to stride-spaced positions; everything else stays zero."""
    n, c, h, wdt = x.shape
    cw, f = w.shape
    if cw != c:
        raise ConfigurationError(f"channel mismatch: input {c}, weight {cw}")
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    base_h = (h - 1) * stride + 1
    base_w = (wdt - 1) * stride + 1
    if not (base_h <= out_h < base_h + stride and base_w <= out_w < base_w + stride):
        raise ConfigurationError(
            f"output {out_h}x{out_w} unreachable from {h}x{wdt} with stride {stride}"
        )

    proj = np.tensordot(x.data, w.data, axes=([1], [0])).transpose(0, 3, 1, 2)
    out = np.zeros((n, f, out_h, out_w), dtype=x.dtype)
    out[:, :, :base_h:stride, :base_w:stride] = proj

    def bwd(g):
        gs = g[:, :, :base_h:stride, :base_w:stride]
        dx = np.tensordot(gs, w.data, axes=([1], [1])).transpose(0, 3, 1, 2)
        dw = np.tensordot(x.data, gs, axes=([0, 2, 3], [0, 2, 3]))
        return ((x, np.ascontiguousarray(dx)), (w, dw))

    return make_result(out, (x, w), bwd)


def spatial_dropout(x: Tensor, p: float, training: bool, rng) -> Tensor:
    """Zero whole channels with probability p during training; survivors are
    scaled by 1/(1-p).  Consumes exactly N*C uniforms in (n, c) row-major
    order; channel (n, c) is dropped when its draw is < p."""
    if not 0.0 <= p < 1.0:
        raise ConfigurationError(f"dropout probability must be in [0, 1), got {p}")
    if not training or p == 0.0:
        return x
    n, c = x.shape[:2]
    u = rng.uniform(n * c).reshape(n, c)
    mask = ((u >= p) / (1.0 - p)).astype(x.dtype).reshape(n, c, *([1] * (x.data.ndim - 2)))

    def bwd(g):
        return ((x, g * mask),)

    return make_result(x.data * mask, (x,), bwd)


# ---------------------------------------------------------------------------
# normalization / heads

def batch_norm(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
               running_var: np.ndarray, training: bool, momentum: float = 0.1,
               eps: float = 1e-5) -> Tensor:
    """Per-channel batch normalization over (N, H, W) with running statistics.

    Training mode normalizes by biased batch statistics and updates the
    running buffers in place; eval mode uses the buffers as constants.
    """
    n, c, h, w = x.shape
    if training:
        mu = x.data.mean(axis=(0, 2, 3))
        var = x.data.var(axis=(0, 2, 3))
        running_mean *= 1.0 - momentum
        running_mean += momentum * mu
        running_var *= 1.0 - momentum
        running_var += momentum * var
    else:
        mu = running_mean
        var = running_var
    ivar = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu[None, :, None, None]) * ivar[None, :, None, None]
    out = gamma.data[None, :, None, None] * xhat + beta.data[None, :, None, None]
    out = out.astype(x.dtype)

    def bwd(g):
        dgamma = (g * xhat).sum(axis=(0, 2, 3))
        dbeta = g.sum(axis=(0, 2, 3))
        if training:
            m = n * h * w
            dxhat = g * gamma.data[None, :, None, None]
            s1 = dxhat.sum(axis=(0, 2, 3))
            s2 = (dxhat * xhat).sum(axis=(0, 2, 3))
            dx = (dxhat - (s1[None, :, None, None] + xhat * s2[None, :, None, None]) / m) \
                * ivar[None, :, None, None]
        else:
            dx = g * (gamma.data * ivar)[None, :, None, None]
        return ((x, dx.astype(x.dtype)), (gamma, dgamma), (beta, dbeta))

    return make_result(out, (x, gamma, beta), bwd)


def global_avg_pool(x: Tensor) -> Tensor:
    n, c, h, w = x.shape

    def bwd(g):
        return ((x, np.broadcast_to(g[:, :, None, None] / (h * w), x.shape).copy()),)

    return make_result(x.data.mean(axis=(2, 3)), (x,), bwd)


def fully_connected(x: Tensor, w: Tensor, b: Tensor | None = None) -> Tensor:
    if x.shape[-1] != w.shape[0]:
        raise ConfigurationError(f"fc shape mismatch: {x.shape} @ {w.shape}")
    out = x.data @ w.data
    if b is not None:
        out = out + b.data

    def bwd(g):
        grads = [(x, g @ w.data.T), (w, x.data.T @ g)]
        if b is not None:
            grads.append((b, g.sum(axis=0)))
        return tuple(grads)

    parents = (x, w) if b is None else (x, w, b)
    return make_result(out, parents, bwd)


def _stable_softmax(z: np.ndarray, axis: int) -> np.ndarray:
    z = z - z.max(axis=axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    s = _stable_softmax(x.data, axis)

    def bwd(g):
        return ((x, (g - (g * s).sum(axis=axis, keepdims=True)) * s),)

    return make_result(s, (x,), bwd)


def weighted_cross_entropy(logits: Tensor, targets: np.ndarray, class_weights: Tensor | np.ndarray) -> Tensor:
    """Mean over the batch of w[t_i] * (-log softmax(logits_i)[t_i]).

    Shapes: logits (N, K), integer targets (N,), positive weights (K,).
    """
    wdata = class_weights.data if isinstance(class_weights, Tensor) else np.asarray(class_weights)
    n, k = logits.shape
    t = np.asarray(targets)
    if t.shape != (n,):
        raise ConfigurationError(f"targets must have shape ({n},), got {t.shape}")
    if t.min(initial=0) < 0 or t.max(initial=0) >= k:
        raise DataError(f"target outside [0, {k})")
    if np.any(wdata <= 0):
        raise DataError("class weights must be positive")

    p = _stable_softmax(logits.data.astype(np.float64), axis=1)
    wt = wdata[t].astype(np.float64)
    picked = np.clip(p[np.arange(n), t], 1e-300, None)
    loss = np.asarray((wt * -np.log(picked)).mean(), dtype=logits.dtype)

    def bwd(g):
        d = p.copy()
        d[np.arange(n), t] -= 1.0
        d *= (wt * float(g) / n)[:, None]
        return ((logits, d.astype(logits.dtype)),)

    return make_result(loss, (logits,), bwd)


def pixelwise_cross_entropy(mask_logits: Tensor, targets: np.ndarray,
                            class_weights: Tensor | np.ndarray) -> Tensor:
    """Weighted cross entropy per pixel, averaged over every pixel of the
    batch.  Shapes: logits (N, K, H, W), integer targets (N, H, W)."""
    wdata = class_weights.data if isinstance(class_weights, Tensor) else np.asarray(class_weights)
    n, k, h, w = mask_logits.shape
    t = np.asarray(targets)
    if t.shape != (n, h, w):
        raise ConfigurationError(f"targets must have shape {(n, h, w)}, got {t.shape}")
    if t.min(initial=0) < 0 or t.max(initial=0) >= k:
        raise DataError(f"pixel label outside [0, {k})")
    if np.any(wdata <= 0):
        raise DataError("class weights must be positive")

    p = _stable_softmax(mask_logits.data.astype(np.float64), axis=1)
    tk = t[:, None]  # (N, 1, H, W) gather index per pixel
    picked = np.clip(np.take_along_axis(p, tk, axis=1)[:, 0], 1e-300, None)
    wt = wdata[t].astype(np.float64)
    loss = np.asarray((wt * -np.log(picked)).mean(), dtype=mask_logits.dtype)

    def bwd(g):
        d = p.copy()
        np.put_along_axis(d, tk, np.take_along_axis(d, tk, axis=1) - 1.0, axis=1)
        d *= (wt * (float(g) / (n * h * w)))[:, None]
        return ((mask_logits, d.astype(mask_logits.dtype)),)

    return make_result(loss, (mask_logits,), bwd)


def max_index(x: Tensor | np.ndarray, axis: int = -1) -> np.ndarray:
    """Argmax along ``axis``; a plain index array, not differentiable."""
    data = x.data if isinstance(x, Tensor) else np.asarray(x)
    return np.argmax(data, axis=axis)
