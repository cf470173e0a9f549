"""Procedural solar-panel imagery with physically motivated power labels.

Each sample renders a cell-grid panel on a soft background, composites
zero or more soiling blobs (dust splats, bird drops, snow fields, cracks,
chalk powder), then derives the power loss from the soiling opacity with a
bypass-diode model: cells sit in series columns, two columns share one
diode, and a segment's current is capped by its most-shaded cell.  A small
concentrated deposit can therefore cost far more power than a large thin
film, which is exactly the behavior the downstream classifier must learn.

All randomness flows through one SplitMix64 stream per sample, so samples
are bitwise reproducible and independent of generation order.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ConfigurationError, DataError
from .netpbm import write_pgm, write_ppm
from .rng import SplitMix64, derive_seed

SOILING_TYPES = (
    "brown_dust", "gray_dust", "red_dust", "black_dust",
    "white_powder", "bird_drop", "snow", "crack",
)

# Mean RGB and per-channel sigma for each soiling material; shared with the
# soiling-type classifier's swatch generator so both stages see one palette.
SOILING_PALETTES: dict[str, tuple[tuple[float, float, float], float]] = {
    "brown_dust": ((0.47, 0.33, 0.18), 0.035),
    "gray_dust": ((0.52, 0.52, 0.50), 0.035),
    "red_dust": ((0.58, 0.22, 0.14), 0.035),
    "black_dust": ((0.10, 0.09, 0.08), 0.025),
    "white_powder": ((0.93, 0.90, 0.82), 0.025),
    "bird_drop": ((0.88, 0.87, 0.80), 0.04),
    "snow": ((0.96, 0.97, 1.00), 0.015),
    "crack": ((0.85, 0.90, 0.97), 0.03),
}

PANEL_BASE = (0.10, 0.16, 0.38)
BUSBAR_COLOR = (0.58, 0.62, 0.68)
FRAME_COLOR = (0.72, 0.74, 0.76)
FRAME_PX = 2
SOLAR_CONSTANT = 1361.0


@dataclass(frozen=True)
class PanelLayout:
    """Cell geometry: ``rows x cols`` square cells, one bypass diode per two
    series columns."""
    rows: int = 6
    cols: int = 4
    cell_px: int = 8

    def __post_init__(self):
        if self.cols % 2:
            raise ConfigurationError("cols must be even (two columns per diode)")
        if min(self.rows, self.cols, self.cell_px) < 1:
            raise ConfigurationError("layout extents must be positive")

    @property
    def diode_segments(self) -> int:
        return self.cols // 2

    @property
    def grid_shape(self) -> tuple[int, int]:
        return self.rows * self.cell_px, self.cols * self.cell_px


@dataclass(frozen=True)
class GeneratorSpec:
    image_size: int = 64
    layout: PanelLayout = field(default_factory=PanelLayout)
    n_classes: int = 4
    clean_fraction: float = 0.15
    soil_threshold: float = 0.15
    max_blobs: int = 4
    noise_sigma: float = 0.01
    # test hooks: force a specific soiling field instead of drawing one
    forced_opacity: np.ndarray | None = None
    forced_type: str | None = None


@dataclass
class SoilingField:
    """Opacity and blended deposit color over the panel interior."""
    opacity: np.ndarray
    color_map: np.ndarray
    soiling_type: str

    def __post_init__(self):
        if self.opacity.min() < 0 or self.opacity.max() > 1:
            raise DataError("opacity must stay within [0, 1]")
        if self.soiling_type == "clean" and self.opacity.any():
            raise DataError("clean field must have zero opacity")


@dataclass
class Sample:
    """One panel observation.  ``gt_mask``, ``panel_rect`` and ``opacity``
    are generator ground truth for evaluation only; training never reads
    them."""
    image: np.ndarray
    irradiance: float
    time_of_day: float
    power_loss: float
    class_bin: int
    soiling_type: str
    gt_mask: np.ndarray | None = None
    panel_rect: tuple[int, int, int, int] | None = None
    opacity: np.ndarray | None = None


# ---------------------------------------------------------------------------
# electrical model

def power_loss(opacity: np.ndarray, layout: PanelLayout, irradiance: float = 1000.0) -> float:
    """Fractional power loss of a soiled panel relative to a clean one.

    Per cell, transmitted light is the mean of (1 - opacity) over the
    cell's pixels.  Each diode segment (two adjacent columns in series)
    carries the current of its most-shaded cell; panel power is the sum of
    segment currents.  The result is a ratio, so ``irradiance`` does not
    enter it.
    """
    expect = layout.grid_shape
    if opacity.shape != expect:
        raise ConfigurationError(f"opacity grid {opacity.shape} != layout {expect}")
    if opacity.min() < 0 or opacity.max() > 1:
        raise DataError("opacity must stay within [0, 1]")
    px = layout.cell_px
    trans = 1.0 - opacity
    cells = trans.reshape(layout.rows, px, layout.cols, px).mean(axis=(1, 3))
    segments = cells.reshape(layout.rows, layout.diode_segments, 2)
    seg_current = segments.min(axis=(0, 2))
    loss = 1.0 - float(seg_current.sum()) / layout.diode_segments
    return min(max(loss, 0.0), 1.0)


def bin_power_loss(loss: float, n_classes: int) -> int:
    """Equal-width binning of a loss fraction: floor(loss*C) clamped to C-1."""
    if n_classes not in (2, 4, 8, 16):
        raise ConfigurationError(f"class count must be 2/4/8/16, got {n_classes}")
    if not 0.0 <= loss <= 1.0:
        raise DataError(f"loss {loss} outside [0, 1]")
    return min(int(loss * n_classes), n_classes - 1)


def bin_range(class_bin: int, n_classes: int) -> tuple[float, float]:
    return class_bin / n_classes, (class_bin + 1) / n_classes


# ---------------------------------------------------------------------------
# soiling fields

def _gaussian_splat(shape, rng, cy, cx, sy, sx, theta, amp):
    h, w = shape
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    ct, st = np.cos(theta), np.sin(theta)
    u = ct * dx + st * dy
    v = -st * dx + ct * dy
    return amp * np.exp(-0.5 * ((u / sx) ** 2 + (v / sy) ** 2))


def _draw_dust(shape, rng, heavy_bias):
    h, w = shape
    ops_list = []
    n_splats = 1 + rng.randint(4)
    for _ in range(n_splats):
        streak = rng.uniform() < 0.25
        cy, cx = rng.uniform() * h, rng.uniform() * w
        if streak:
            sy = 8.0 + rng.uniform() * 20.0
            sx = 1.5 + rng.uniform() * 2.5
            amp = 0.55 + rng.uniform() * 0.40
        else:
            sy = 2.0 + rng.uniform() * 7.0
            sx = 2.0 + rng.uniform() * 7.0
            amp = 0.30 + rng.uniform() * 0.62
        if heavy_bias:
            amp = min(1.0, amp + 0.2)
        theta = rng.uniform() * np.pi
        ops_list.append(_gaussian_splat(shape, rng, cy, cx, sy, sx, theta, amp))
    return ops_list


def _draw_bird_drop(shape, rng):
    h, w = shape
    ops_list = []
    for _ in range(1 + rng.randint(3)):
        cy, cx = rng.uniform() * h, rng.uniform() * w
        r = 2.0 + rng.uniform() * 3.5
        yy, xx = np.mgrid[0:h, 0:w]
        d2 = ((yy - cy) ** 2 + (xx - cx) ** 2) / (r * r)
        amp = 0.85 + rng.uniform() * 0.15
        ops_list.append(amp * np.exp(-0.5 * d2 * d2))  # compact, hard-edged
    return ops_list


def _draw_snow(shape, rng):
    h, w = shape
    frac = 0.22 + rng.uniform() * 0.65
    edge = h * (1.0 - frac)
    wobble = rng.normal(w) * 1.5
    yy = np.arange(h)[:, None] - wobble[None, :]
    opm = 1.0 / (1.0 + np.exp(-(yy - edge) / 1.5))
    return [np.clip(opm * (0.88 + rng.uniform() * 0.12), 0.0, 1.0)]


def _draw_crack(shape, rng):
    h, w = shape
    op = np.zeros(shape)
    y = rng.uniform() * h
    x = 0.0 if rng.uniform() < 0.5 else w - 1.0
    direction = 0.0 if x == 0.0 else np.pi
    steps = 20 + rng.randint(40)
    for _ in range(steps):
        direction += (rng.uniform() - 0.5) * 0.9
        y += np.sin(direction)
        x += np.cos(direction)
        yi, xi = int(round(y)), int(round(x))
        if not (0 <= yi < h and 0 <= xi < w):
            break
        op[yi, xi] = 0.8
        if yi + 1 < h:
            op[yi + 1, xi] = max(op[yi + 1, xi], 0.35)
    return [op]


def render_soiling(rng: SplitMix64, spec: GeneratorSpec, soiling_type: str) -> SoilingField:
    """Draw a soiling field of the given type on the panel interior grid."""
    shape = spec.layout.grid_shape
    mean_rgb, sigma = SOILING_PALETTES[soiling_type]
    if soiling_type in ("brown_dust", "gray_dust", "red_dust", "black_dust", "white_powder"):
        blobs = _draw_dust(shape, rng, heavy_bias=rng.uniform() < 0.3)
    elif soiling_type == "bird_drop":
        blobs = _draw_bird_drop(shape, rng)
    elif soiling_type == "snow":
        blobs = _draw_snow(shape, rng)
    elif soiling_type == "crack":
        blobs = _draw_crack(shape, rng)
    else:
        raise ConfigurationError(f"unknown soiling type {soiling_type!r}")

    total = np.zeros(shape)
    color_acc = np.zeros((*shape, 3))
    weight = np.zeros(shape)
    for blob in blobs:
        blob = np.clip(blob, 0.0, 1.0)
        jitter = rng.normal(3) * sigma
        color = np.clip(np.asarray(mean_rgb) + jitter, 0.0, 1.0)
        total = 1.0 - (1.0 - total) * (1.0 - blob)
        color_acc += blob[..., None] * color
        weight += blob
    color_map = np.where(weight[..., None] > 1e-9,
                         color_acc / np.maximum(weight, 1e-9)[..., None],
                         0.0)
    return SoilingField(np.clip(total, 0.0, 1.0), color_map, soiling_type)


# ---------------------------------------------------------------------------
# rendering

def _render_panel(rng: SplitMix64, spec: GeneratorSpec):
    """Panel RGB (interior incl. busbars), frame and placement."""
    layout = spec.layout
    hp, wp = layout.grid_shape
    cellvar = rng.normal(layout.rows * layout.cols).reshape(layout.rows, layout.cols) * 0.02
    interior = np.empty((hp, wp, 3), dtype=np.float64)
    base = np.asarray(PANEL_BASE)
    var = np.kron(cellvar, np.ones((layout.cell_px, layout.cell_px)))
    for ch in range(3):
        interior[..., ch] = base[ch] + var
    for r in range(1, layout.rows):
        interior[r * layout.cell_px, :, :] = BUSBAR_COLOR
    for c in range(1, layout.cols):
        interior[:, c * layout.cell_px, :] = BUSBAR_COLOR
    return np.clip(interior, 0.0, 1.0)


def _diurnal_irradiance(rng: SplitMix64) -> tuple[float, float]:
    t = 7.0 + rng.uniform() * 10.0
    elevation = max(0.0, np.sin(np.pi * (t - 6.0) / 12.0))
    cloud = 0.35 + rng.uniform() * 0.65
    irr = min(SOLAR_CONSTANT, SOLAR_CONSTANT * elevation * cloud)
    return float(irr), float(t)


def generate_sample(seed: int, spec: GeneratorSpec) -> Sample:
    """Render one fully labeled sample, bitwise deterministic in ``seed``."""
    rng = SplitMix64(seed)
    layout = spec.layout
    s = spec.image_size
    hp, wp = layout.grid_shape
    panel_h, panel_w = hp + 2 * FRAME_PX, wp + 2 * FRAME_PX
    if panel_h + 2 > s or panel_w + 2 > s:
        raise ConfigurationError("panel does not fit the image")

    irradiance, t = _diurnal_irradiance(rng)

    # background: vertical blend of two earthy tones, no sharp edges
    top = np.array([0.43, 0.41, 0.37]) + rng.normal(3) * 0.03
    bot = np.array([0.50, 0.47, 0.41]) + rng.normal(3) * 0.03
    ramp = np.linspace(0.0, 1.0, s)[:, None, None]
    img = np.clip(top * (1 - ramp) + bot * ramp, 0.0, 1.0) * np.ones((s, s, 3))

    # placement with jitter
    max_r = s - panel_h
    max_c = s - panel_w
    r0 = max_r // 2 + rng.randint(5) - 2
    c0 = max_c // 2 + rng.randint(7) - 3
    r0 = min(max(r0, 1), max_r - 1)
    c0 = min(max(c0, 1), max_c - 1)
    r1, c1 = r0 + panel_h, c0 + panel_w

    img[r0:r1, c0:c1] = FRAME_COLOR
    interior = _render_panel(rng, spec)

    # soiling
    if spec.forced_opacity is not None:
        stype = spec.forced_type or "gray_dust"
        color = np.clip(np.asarray(SOILING_PALETTES[stype][0]), 0.0, 1.0)
        fld = SoilingField(np.clip(spec.forced_opacity.astype(np.float64), 0, 1),
                           np.broadcast_to(color, (*layout.grid_shape, 3)).copy(), stype)
    elif spec.forced_type == "clean" or (spec.forced_type is None
                                         and rng.uniform() < spec.clean_fraction):
        fld = SoilingField(np.zeros(layout.grid_shape), np.zeros((*layout.grid_shape, 3)), "clean")
    else:
        stype = spec.forced_type or SOILING_TYPES[rng.randint(len(SOILING_TYPES))]
        fld = render_soiling(rng, spec, stype)

    op = fld.opacity[..., None]
    composited = (1.0 - op) * interior + op * fld.color_map
    img[r0 + FRAME_PX:r0 + FRAME_PX + hp, c0 + FRAME_PX:c0 + FRAME_PX + wp] = composited

    # irradiance-dependent brightness, then mild sensor noise
    brightness = 0.45 + 0.55 * np.sqrt(irradiance / SOLAR_CONSTANT)
    img = img * brightness
    img = img + rng.normal(s * s * 3).reshape(s, s, 3) * spec.noise_sigma
    img = np.clip(img, 0.0, 1.0)
    # snap to the PPM byte grid so written files round-trip exactly
    img = (np.rint(img * 255.0) / 255.0).astype(np.float32)

    loss = power_loss(fld.opacity, layout)
    gt = np.ones((s, s), dtype=np.uint8)
    gt[r0:r1, c0:c1] = 2
    soiled = fld.opacity > spec.soil_threshold
    gt[r0 + FRAME_PX:r0 + FRAME_PX + hp, c0 + FRAME_PX:c0 + FRAME_PX + wp][soiled] = 3

    return Sample(
        image=img,
        irradiance=round(irradiance, 3),
        time_of_day=round(t, 4),
        power_loss=loss,
        class_bin=bin_power_loss(loss, spec.n_classes),
        soiling_type=fld.soiling_type,
        gt_mask=gt,
        panel_rect=(r0, r1, c0, c1),
        opacity=fld.opacity,
    )


# ---------------------------------------------------------------------------
# augmentation

@dataclass(frozen=True)
class AugmentParams:
    hflip: bool
    vflip: bool
    angle_deg: float


def draw_augment_params(rng: SplitMix64) -> AugmentParams:
    """Three draws, always in the same order: hflip, vflip, angle."""
    return AugmentParams(rng.uniform() < 0.5, rng.uniform() < 0.5,
                         rng.uniform() * 20.0 - 10.0)


def _rotate_nearest(arr: np.ndarray, angle_deg: float) -> np.ndarray:
    if angle_deg == 0.0:
        return arr.copy()
    h, w = arr.shape[:2]
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    theta = np.deg2rad(angle_deg)
    ct, st = np.cos(theta), np.sin(theta)
    yy, xx = np.mgrid[0:h, 0:w]
    dy, dx = yy - cy, xx - cx
    sy = np.clip(np.rint(ct * dy + st * dx + cy), 0, h - 1).astype(np.intp)
    sx = np.clip(np.rint(-st * dy + ct * dx + cx), 0, w - 1).astype(np.intp)
    return arr[sy, sx]


def apply_augment(arr: np.ndarray, params: AugmentParams) -> np.ndarray:
    """Apply flips then rotation; nearest-neighbor with edge clamp, so label
    maps stay in their original value set."""
    out = arr
    if params.hflip:
        out = out[:, ::-1]
    if params.vflip:
        out = out[::-1, :]
    return _rotate_nearest(np.ascontiguousarray(out), params.angle_deg)


def augment(sample: Sample, rng: SplitMix64) -> Sample:
    """Geometric training augmentation; labels and power loss are unchanged
    and no color jitter is applied (panel color carries physical signal)."""
    params = draw_augment_params(rng)
    return replace(
        sample,
        image=apply_augment(sample.image, params),
        gt_mask=None if sample.gt_mask is None else apply_augment(sample.gt_mask, params),
        opacity=None,      # no longer aligned to the cell grid
        panel_rect=None,
    )


# ---------------------------------------------------------------------------
# dataset writer

MANIFEST_HEADER = ["image", "gt_mask", "power_loss", "irradiance",
                   "time_of_day", "class_bin", "soiling_type"]


def generate_dataset(n: int, spec: GeneratorSpec, out_dir, seed: int = 0) -> str:
    """Write ``n`` samples (PPM image + PGM ground-truth mask) and a CSV
    manifest; returns the manifest path.  Also emits a class report."""
    img_dir = os.path.join(out_dir, "img")
    gt_dir = os.path.join(out_dir, "gt")
    os.makedirs(img_dir, exist_ok=True)
    os.makedirs(gt_dir, exist_ok=True)
    manifest_path = os.path.join(out_dir, "manifest.csv")

    rows = []
    bin_counts = np.zeros(spec.n_classes, dtype=int)
    type_counts: dict[str, int] = {}
    for i in range(n):
        sample = generate_sample(derive_seed(seed, i), spec)
        img_rel = f"img/s{i:05d}.ppm"
        gt_rel = f"gt/s{i:05d}.pgm"
        write_ppm(os.path.join(out_dir, img_rel), sample.image)
        write_pgm(os.path.join(out_dir, gt_rel), sample.gt_mask)
        rows.append([img_rel, gt_rel, f"{sample.power_loss:.6f}",
                     f"{sample.irradiance:.3f}", f"{sample.time_of_day:.4f}",
                     str(sample.class_bin), sample.soiling_type])
        bin_counts[sample.class_bin] += 1
        type_counts[sample.soiling_type] = type_counts.get(sample.soiling_type, 0) + 1

    with open(manifest_path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(MANIFEST_HEADER)
        writer.writerows(rows)

    report = ["class_bin distribution:"]
    for b, cnt in enumerate(bin_counts):
        report.append(f"  bin {b}: {cnt}")
    report.append("soiling types:")
    for k in sorted(type_counts):
        report.append(f"  {k}: {type_counts[k]}")
    text = "\n".join(report) + "\n"
    with open(os.path.join(out_dir, "class_report.txt"), "w") as f:
        f.write(text)
    print(text, end="")
    return manifest_path


def read_manifest(path) -> list[dict[str, str]]:
    with open(path, newline="") as f:
        return list(csv.DictReader(f))
