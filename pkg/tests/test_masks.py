import numpy as np
import pytest

from solarsight.classifier import TapLevel
from solarsight.errors import ConfigurationError
from solarsight.masks import (
    CandidateMask, PanelRegion, detect_panel, mask_to_label, pyramid_mask,
    pyramid_masks,
)
from solarsight.panelgen import GeneratorSpec, generate_sample
from solarsight.rng import SplitMix64, derive_seed
from solarsight.tensor import Tensor


def tap(trunk, aux):
    t = Tensor(np.asarray(trunk, dtype=np.float32))
    a = Tensor(np.asarray(aux, dtype=np.float32))
    return TapLevel(trunk=t, aux=a, image=t)


# ---------------------------------------------------------------------------
# pyramid fusion

def test_zero_aux_gives_zero_mask_before_normalization():
    rng = SplitMix64(1)
    levels = [
        tap(rng.normal(1 * 4 * 8 * 8).reshape(1, 4, 8, 8), np.zeros((1, 4, 8, 8))),
        tap(rng.normal(1 * 4 * 4 * 4).reshape(1, 4, 4, 4), np.zeros((1, 4, 4, 4))),
    ]
    out = pyramid_masks(levels, 8, 8)
    assert np.all(out == 0.0)  # constant zero map normalizes to zero


def test_single_level_fusion_hand_oracle():
    # (trunk * aux) + aux on a 2x2 single-channel map: [[2,0],[0,5]]
    trunk = np.array([[[[1.0, 2.0], [3.0, 4.0]]]])
    aux = np.array([[[[1.0, 0.0], [0.0, 1.0]]]])
    levels = [tap(trunk, aux), tap(np.zeros((1, 1, 1, 1)), np.zeros((1, 1, 1, 1)))]
    raw = trunk[0, 0] * aux[0, 0] + aux[0, 0]
    assert np.array_equal(raw, np.array([[2.0, 0.0], [0.0, 5.0]]))
    out = pyramid_masks(levels, 2, 2)
    want = (raw - raw.min()) / (raw.max() - raw.min())
    assert np.allclose(out[0], want, atol=1e-6)


def test_mask_has_input_resolution_and_unit_range():
    rng = SplitMix64(2)
    levels = [
        tap(rng.normal(2 * 3 * 16 * 16).reshape(2, 3, 16, 16),
            rng.normal(2 * 3 * 16 * 16).reshape(2, 3, 16, 16)),
        tap(rng.normal(2 * 3 * 8 * 8).reshape(2, 3, 8, 8),
            rng.normal(2 * 3 * 8 * 8).reshape(2, 3, 8, 8)),
    ]
    out = pyramid_masks(levels, 64, 64)
    assert out.shape == (2, 64, 64)
    assert out.min() >= 0.0 and out.max() <= 1.0
    # non-constant maps attain both bounds
    assert np.isclose(out.min(axis=(1, 2)), 0.0).all()
    assert np.isclose(out.max(axis=(1, 2)), 1.0).all()


def test_positive_homogeneity_before_normalization():
    rng = SplitMix64(3)
    trunk = rng.normal(1 * 2 * 4 * 4).reshape(1, 2, 4, 4)
    aux = rng.normal(1 * 2 * 4 * 4).reshape(1, 2, 4, 4)
    lam = 3.7
    base = (trunk * aux + aux).mean(axis=1)
    scaled = (trunk * (lam * aux) + lam * aux).mean(axis=1)
    assert np.allclose(scaled, lam * base, atol=1e-9)


def test_pyramid_requires_two_levels_and_matched_shapes():
    rng = SplitMix64(4)
    single = [tap(rng.normal(16).reshape(1, 1, 4, 4), rng.normal(16).reshape(1, 1, 4, 4))]
    with pytest.raises(ConfigurationError):
        pyramid_masks(single, 4, 4)
    bad = single + [TapLevel(Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32)),
                             Tensor(np.zeros((1, 2, 2, 2), dtype=np.float32)),
                             Tensor(np.zeros((1, 1, 2, 2), dtype=np.float32)))]
    with pytest.raises(ConfigurationError):
        pyramid_masks(bad, 4, 4)


def test_pyramid_mask_wrapper_reports_levels():
    rng = SplitMix64(5)
    levels = [
        tap(rng.normal(16).reshape(1, 1, 4, 4), rng.normal(16).reshape(1, 1, 4, 4)),
        tap(rng.normal(4).reshape(1, 1, 2, 2), rng.normal(4).reshape(1, 1, 2, 2)),
    ]
    cm = pyramid_mask(levels, 8, 8)
    assert isinstance(cm, CandidateMask)
    assert cm.values.shape == (8, 8)
    assert cm.source_levels == (0, 1)


# ---------------------------------------------------------------------------
# panel detection

def iou(a, b):
    ra = np.zeros((64, 64), dtype=bool)
    rb = np.zeros((64, 64), dtype=bool)
    ra[a[0]:a[1], a[2]:a[3]] = True
    rb[b[0]:b[1], b[2]:b[3]] = True
    return (ra & rb).sum() / (ra | rb).sum()


def test_detect_panel_matches_generator_placement():
    spec = GeneratorSpec()
    scores = []
    for i in range(12):
        s = generate_sample(derive_seed(31, i), spec)
        region = detect_panel(s.image)
        scores.append(iou((region.r0, region.r1, region.c0, region.c1), s.panel_rect))
    assert np.mean(scores) >= 0.9
    assert min(scores) >= 0.8


def test_uniform_image_falls_back_to_full_frame():
    img = np.full((32, 40, 3), 0.5, dtype=np.float32)
    region = detect_panel(img)
    assert (region.r0, region.r1, region.c0, region.c1) == (2, 30, 2, 38)


def test_detection_invariant_to_brightness_scale():
    spec = GeneratorSpec()
    s = generate_sample(derive_seed(32, 3), spec)
    a = detect_panel(s.image)
    b = detect_panel(s.image.astype(np.float64) * 1.2)  # pre-clipping scale
    assert (a.r0, a.r1, a.c0, a.c1) == (b.r0, b.r1, b.c0, b.c1)


def test_panel_region_rejects_degenerate():
    with pytest.raises(ConfigurationError):
        PanelRegion(5, 5, 0, 3)


# ---------------------------------------------------------------------------
# mask -> label map

def test_constant_mask_marks_whole_panel_as_soiling():
    mask = np.full((8, 8), 0.4)
    region = PanelRegion(2, 6, 2, 6)
    labels = mask_to_label(mask, region)
    inside = labels[2:6, 2:6]
    assert np.all(inside == 3)  # nothing is strictly below the mean
    assert np.all(labels[(labels != 3)] == 1)


def test_half_low_half_high_split_at_mean():
    mask = np.zeros((4, 8))
    mask[:, :4] = 0.2
    mask[:, 4:] = 0.8
    region = PanelRegion(0, 4, 0, 8)
    labels = mask_to_label(mask, region)
    assert np.all(labels[:, :4] == 2)
    assert np.all(labels[:, 4:] == 3)


def test_labels_partition_panel_and_background():
    rng = SplitMix64(6)
    mask = rng.uniform(64 * 64).reshape(64, 64)
    region = PanelRegion(10, 50, 12, 52)
    labels = mask_to_label(mask, region)
    assert set(np.unique(labels)) <= {1, 2, 3}
    outside = ~region.mask(64, 64)
    assert np.all(labels[outside] == 1)
    assert np.all(labels[region.mask(64, 64)] != 1)
