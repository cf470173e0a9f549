"""Parameter-free candidate soiling masks from classifier feature taps.

Per tap level the trunk and auxiliary maps are gated multiplicatively and
boosted by the auxiliary stream, ``(trunk * aux) + aux``, reduced over
channels, then fused across levels Laplacian-style: start at the coarsest
level, bilinearly upsample, add the next finer level's map, repeat, and
min-max normalize at input resolution.  No learned parameters enter at any
point, so a trained classifier is all this stage needs.

The panel itself is found classically (Gaussian blur, Sobel magnitude,
mean+sigma threshold, largest active span of the row/column edge
profiles), and the mask is discretized against the mean level inside the
panel into the 3-class label map {1 background, 2 panel, 3 soiling}.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError
from .ops import bilinear_resize
from .tensor import Tensor

LABEL_BACKGROUND = 1
LABEL_PANEL = 2
LABEL_SOILING = 3


@dataclass(frozen=True)
class PanelRegion:
    """Axis-aligned panel rectangle, half-open pixel bounds."""
    r0: int
    r1: int
    c0: int
    c1: int

    def __post_init__(self):
        if self.r1 <= self.r0 or self.c1 <= self.c0:
            raise ConfigurationError(f"degenerate panel region {self}")

    def mask(self, h: int, w: int) -> np.ndarray:
        m = np.zeros((h, w), dtype=bool)
        m[self.r0:self.r1, self.c0:self.c1] = True
        return m

    def contains(self, y: int, x: int) -> bool:
        return self.r0 <= y < self.r1 and self.c0 <= x < self.c1


@dataclass
class CandidateMask:
    """Normalized soiling-evidence map at input resolution."""
    values: np.ndarray
    source_levels: tuple[int, ...]


def _as_array(t) -> np.ndarray:
    return t.data if isinstance(t, Tensor) else np.asarray(t)


def _fuse_level(trunk: np.ndarray, aux: np.ndarray, reduce: str) -> np.ndarray:
    if trunk.shape != aux.shape:
        raise ConfigurationError(f"tap shapes differ: {trunk.shape} vs {aux.shape}")
    fused = trunk * aux + aux
    if reduce == "mean":
        return fused.mean(axis=1)
    if reduce == "max":
        return fused.max(axis=1)
    raise ConfigurationError(f"unknown channel reduction {reduce!r}")


def pyramid_masks(taps, out_h: int, out_w: int, reduce: str = "mean") -> np.ndarray:
    """Batched candidate masks (N, out_h, out_w) in [0, 1] from taps ordered
    finest to coarsest."""
    if len(taps) < 2:
        raise ConfigurationError("need at least two tap levels")
    levels = [( _as_array(t.trunk), _as_array(t.aux)) for t in taps]
    running = _fuse_level(*levels[-1], reduce)
    for trunk, aux in reversed(levels[:-1]):
        running = bilinear_resize(running, trunk.shape[2], trunk.shape[3])
        running = running + _fuse_level(trunk, aux, reduce)
    running = bilinear_resize(running.astype(np.float64), out_h, out_w)

    lo = running.min(axis=(1, 2), keepdims=True)
    hi = running.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    span[span == 0] = 1.0  # constant map normalizes to zero
    return (running - lo) / span


def pyramid_mask(taps, out_h: int, out_w: int, reduce: str = "mean") -> CandidateMask:
    """Single-sample convenience wrapper around :func:`pyramid_masks`."""
    values = pyramid_masks(taps, out_h, out_w, reduce)
    if values.shape[0] != 1:
        raise ConfigurationError("pyramid_mask expects a single-sample batch")
    return CandidateMask(values[0], tuple(range(len(taps))))


# ---------------------------------------------------------------------------
# classical panel detection

_GAUSS5 = None


def _gauss_kernel():
    global _GAUSS5
    if _GAUSS5 is None:
        x = np.arange(-2, 3, dtype=np.float64)
        k = np.exp(-0.5 * x * x)  # sigma = 1
        _GAUSS5 = k / k.sum()
    return _GAUSS5


def _sep_filter(img: np.ndarray, kernel: np.ndarray) -> np.ndarray:
    """Separable filtering with edge-replicated borders."""
    r = len(kernel) // 2
    padded = np.pad(img, ((r, r), (0, 0)), mode="edge")
    rows = sum(padded[i:i + img.shape[0]] * kernel[i] for i in range(len(kernel)))
    padded = np.pad(rows, ((0, 0), (r, r)), mode="edge")
    return sum(padded[:, i:i + img.shape[1]] * kernel[i] for i in range(len(kernel)))


def _sobel_magnitude(gray: np.ndarray) -> np.ndarray:
    smooth = np.array([1.0, 2.0, 1.0])
    diff = np.array([-1.0, 0.0, 1.0])
    r = 1
    pad = np.pad(gray, r, mode="edge")
    gx = sum(pad[1:-1, i:i + gray.shape[1]] * diff[i] for i in range(3))
    gx = sum(np.pad(gx, ((r, r), (0, 0)), mode="edge")[i:i + gray.shape[0]] * smooth[i]
             for i in range(3))
    gy = sum(pad[i:i + gray.shape[0], 1:-1] * diff[i] for i in range(3))
    gy = sum(np.pad(gy, ((0, 0), (r, r)), mode="edge")[:, i:i + gray.shape[1]] * smooth[i]
             for i in range(3))
    return np.hypot(gx, gy)


def _largest_active_span(profile: np.ndarray, size: int) -> tuple[int, int] | None:
    """Largest-energy run of active profile entries; small gaps are bridged."""
    active = np.flatnonzero(profile > 0.02 * profile.max()) if profile.max() > 0 else []
    if len(active) == 0:
        return None
    gap = max(3, size // 8)
    runs = []
    start = prev = active[0]
    for idx in active[1:]:
        if idx - prev > gap:
            runs.append((start, prev))
            start = idx
        prev = idx
    runs.append((start, prev))
    best = max(runs, key=lambda r: profile[r[0]:r[1] + 1].sum())
    return int(best[0]), int(best[1]) + 1


def detect_panel(image: np.ndarray) -> PanelRegion:
    """Locate the panel rectangle; falls back to the full frame minus a
    2-pixel border when nothing edge-like is found.  Invariant under global
    brightness scaling: the threshold is mean+1*std of a linearly scaled
    magnitude and the profiles count binary edge pixels."""
    h, w = image.shape[:2]
    gray = image.astype(np.float64).mean(axis=2) if image.ndim == 3 else image.astype(np.float64)
    blurred = _sep_filter(gray, _gauss_kernel())
    mag = _sobel_magnitude(blurred)
    edges = mag > (mag.mean() + mag.std())
    rows = _largest_active_span(edges.sum(axis=1).astype(np.float64), h)
    cols = _largest_active_span(edges.sum(axis=0).astype(np.float64), w)
    if rows is None or cols is None:
        return PanelRegion(2, h - 2, 2, w - 2)
    return PanelRegion(rows[0], rows[1], cols[0], cols[1])


def mask_to_label(mask, panel: PanelRegion) -> np.ndarray:
    """Discretize a candidate mask into {1, 2, 3}.

    Outside the panel: 1.  Inside: 2 where the value is strictly below the
    panel-interior mean, else 3.  A constant mask therefore maps the whole
    panel to 3 (documented edge case of the strict comparison).
    """
    values = mask.values if isinstance(mask, CandidateMask) else np.asarray(mask)
    h, w = values.shape
    out = np.full((h, w), LABEL_BACKGROUND, dtype=np.uint8)
    inside = values[panel.r0:panel.r1, panel.c0:panel.c1]
    mean = inside.mean()
    region = np.where(inside < mean, LABEL_PANEL, LABEL_SOILING).astype(np.uint8)
    out[panel.r0:panel.r1, panel.c0:panel.c1] = region
    return out
