"""Soiling-type identification from the localized region of interest.

The ROI (all pixels the mask labels as soiling) is summarized as a
24-dimensional color histogram: 8 uniform bins per RGB channel, each
channel block L1-normalized, so the feature ignores ROI size and pixel
order.  A small fully connected network (24 -> 50 -> 100 -> 150 -> K,
ReLU between layers, softmax out) maps histograms to type probabilities.

Training data is synthesized: per-class color swatches drawn from the
same palettes the panel generator soils with, blended over panel-colored
backgrounds at varying thickness.  Bird drops and cracks get their
characteristic bimodal mixtures.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .errors import ConfigurationError, DataError
from .optim import SGD
from .panelgen import PANEL_BASE, SOILING_PALETTES, SOILING_TYPES
from .rng import SplitMix64, derive_seed
from .tensor import Tensor, backward, no_grad

HIDDEN = (50, 100, 150)
N_BINS = 8


def roi_from_mask(image: np.ndarray, label_map: np.ndarray) -> np.ndarray:
    """RGB pixels (M, 3) where the label map says soiling (label 3)."""
    if image.shape[:2] != label_map.shape:
        raise ConfigurationError(
            f"image {image.shape[:2]} and label map {label_map.shape} misaligned")
    return image[label_map == 3]


def rgb_histogram24(roi: np.ndarray) -> np.ndarray:
    """Per-channel 8-bin histogram, each block L1-normalized.

    Values are intensities in [0, 1]; 255-scaled inputs are divided down
    first.  An empty ROI is a data error ("no soiling detected"); callers
    map that case to a clean verdict.
    """
    roi = np.asarray(roi, dtype=np.float64).reshape(-1, 3)
    if roi.shape[0] == 0:
        raise DataError("no soiling detected: empty region of interest")
    if roi.max(initial=0.0) > 1.0:
        roi = roi / 255.0
    idx = np.minimum((roi * N_BINS).astype(np.intp), N_BINS - 1)
    out = np.zeros(3 * N_BINS, dtype=np.float64)
    for ch in range(3):
        counts = np.bincount(idx[:, ch], minlength=N_BINS).astype(np.float64)
        out[ch * N_BINS:(ch + 1) * N_BINS] = counts / counts.sum()
    return out.astype(np.float32)


# ---------------------------------------------------------------------------
# classifier

def build_type_classifier(n_classes: int, rng: SplitMix64) -> dict[str, Tensor]:
    dims = (3 * N_BINS, *HIDDEN, n_classes)
    params: dict[str, Tensor] = {}
    for i in range(len(dims) - 1):
        d_in, d_out = dims[i], dims[i + 1]
        scale = float(np.sqrt(2.0 / d_in))
        params[f"fc{i + 1}.w"] = Tensor(
            (rng.normal(d_in * d_out).reshape(d_in, d_out) * scale).astype(np.float32),
            requires_grad=True)
        params[f"fc{i + 1}.b"] = Tensor(np.zeros(d_out, dtype=np.float32), requires_grad=True)
    return params


def type_logits(params: dict[str, Tensor], hist: Tensor) -> Tensor:
    h = hist
    n_layers = len(HIDDEN) + 1
    for i in range(1, n_layers + 1):
        h = ops.fully_connected(h, params[f"fc{i}.w"], params[f"fc{i}.b"])
        if i < n_layers:
            h = ops.relu(h)
    return h


def type_forward(params: dict[str, Tensor], hist: Tensor) -> Tensor:
    """Label distribution (rows sum to 1) for a batch of histograms."""
    return ops.softmax(type_logits(params, hist), axis=-1)


def classify_roi(params: dict[str, Tensor], image: np.ndarray,
                 label_map: np.ndarray, classes=SOILING_TYPES) -> str:
    """Type name for one image+mask; 'clean' when the ROI is empty."""
    roi = roi_from_mask(image, label_map)
    if roi.shape[0] == 0:
        return "clean"
    hist = Tensor(rgb_histogram24(roi)[None, :])
    with no_grad():
        probs = type_forward(params, hist)
    return classes[int(np.argmax(probs.data[0]))]


# ---------------------------------------------------------------------------
# swatch synthesis

def render_swatch(rng: SplitMix64, soiling_type: str, size: int = 16) -> np.ndarray:
    """One (size, size, 3) texture patch of the given soiling material over
    a panel-colored background."""
    mean_rgb, sigma = SOILING_PALETTES[soiling_type]
    base = np.asarray(PANEL_BASE) + rng.normal(3) * 0.02
    n = size * size
    color = np.asarray(mean_rgb) + rng.normal(3 * n).reshape(n, 3) * sigma

    if soiling_type == "bird_drop":
        dark = np.array([0.32, 0.27, 0.20])
        speck = rng.uniform(n) < 0.25
        color = np.where(speck[:, None], dark + rng.normal(3 * n).reshape(n, 3) * 0.03, color)
        alpha = 0.85 + rng.uniform(n) * 0.15
    elif soiling_type == "crack":
        line = rng.uniform(n) < 0.35
        alpha = np.where(line, 0.75 + rng.uniform(n) * 0.25, 0.0)
    elif soiling_type == "snow":
        alpha = 0.85 + rng.uniform(n) * 0.15
    else:
        alpha = 0.55 + rng.uniform(n) * 0.45

    px = alpha[:, None] * color + (1.0 - alpha[:, None]) * base
    px = px + rng.normal(3 * n).reshape(n, 3) * 0.01
    return np.clip(px, 0.0, 1.0).reshape(size, size, 3).astype(np.float32)


def generate_swatches(seed: int, per_class: int, size: int = 16,
                      classes=SOILING_TYPES) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic swatch set: (N, size, size, 3) images and labels."""
    images, labels = [], []
    for ci, name in enumerate(classes):
        for j in range(per_class):
            rng = SplitMix64(derive_seed(seed, ci * 1_000_003 + j))
            images.append(render_swatch(rng, name, size))
            labels.append(ci)
    return np.stack(images), np.asarray(labels, dtype=np.int64)


def swatch_histograms(images: np.ndarray) -> np.ndarray:
    return np.stack([rgb_histogram24(img.reshape(-1, 3)) for img in images])


# ---------------------------------------------------------------------------
# training

@dataclass
class TypeTrainResult:
    params: dict[str, Tensor]
    holdout_accuracy: float
    history: list[dict]


def split_holdout(n: int, holdout_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic interleaved split (every k-th sample held out)."""
    if not 0.0 < holdout_fraction < 1.0:
        raise ConfigurationError("holdout fraction must be in (0, 1)")
    k = max(2, int(round(1.0 / holdout_fraction)))
    idx = np.arange(n)
    return idx[idx % k != 0], idx[idx % k == 0]


def train_type_classifier(hists: np.ndarray, labels: np.ndarray, n_classes: int,
                          seed: int, lr: float = 0.1, epochs: int = 60,
                          batch_size: int = 32,
                          holdout_fraction: float = 0.25) -> TypeTrainResult:
    """SGD training on histogram features with a held-out accuracy report."""
    present = np.unique(labels)
    if len(present) < n_classes:
        raise ConfigurationError(
            f"training data covers {len(present)} of {n_classes} classes")
    train_idx, hold_idx = split_holdout(len(labels), holdout_fraction)
    params = build_type_classifier(n_classes, SplitMix64(derive_seed(seed, 1)))
    opt = SGD(params, lr, momentum=0.9, weight_decay=1e-4)
    weights = np.ones(n_classes, dtype=np.float32)
    history = []
    for epoch in range(epochs):
        ep_rng = SplitMix64(derive_seed(seed, 30_000 + epoch))
        order = list(train_idx)
        ep_rng.shuffle(order)
        losses = []
        for start in range(0, len(order), batch_size):
            idxs = np.asarray(order[start:start + batch_size])
            logits = type_logits(params, Tensor(hists[idxs]))
            loss = ops.weighted_cross_entropy(logits, labels[idxs], weights)
            opt.zero_grad()
            backward(loss)
            opt.step()
            losses.append(float(loss.data))
        history.append({"epoch": epoch, "loss": float(np.mean(losses))})

    with no_grad():
        probs = type_forward(params, Tensor(hists[hold_idx]))
    acc = float((np.argmax(probs.data, axis=1) == labels[hold_idx]).mean())
    return TypeTrainResult(params=params, holdout_accuracy=acc, history=history)
