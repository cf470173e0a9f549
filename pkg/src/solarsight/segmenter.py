"""Joint refinement network: classifier trunk plus a synthesis decoder.

The decoder stacks synthesis units from the coarsest tap level upward.
Each unit projects the fine level's trunk/aux taps to the decoder width
with 1x1 convolutions, lifts the coarse level's two streams through a 1x1
convolution followed by a stride-2 1x1 transposed convolution, sums the
four streams and mixes them with a 3x3 convolution:

    x_s = conv3x3( proj(m_l) + proj(a_l) + lift(m_c) + lift(a_c) )

The deepest unit consumes the raw coarse taps; above it, the previous
synthesis output stands in for the coarse trunk stream while the coarse
auxiliary tap enters raw, so every unit feeds the final mask head.  A last
3x3 convolution maps the finest synthesis map to 3 per-pixel classes
(background / panel / soiling), bilinearly upsampled if the finest tap
sits below input resolution.

Training minimizes classification plus mask cross-entropy with the mask
head supervised by stage-2 candidate label maps, never by ground truth.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .classifier import ClassifierConfig, TapLevel, build_classifier, classifier_forward
from .errors import ConfigurationError, DataError
from .rng import SplitMix64
from .tensor import Tensor

N_MASK_CLASSES = 3


@dataclass(frozen=True)
class SegmenterConfig:
    classifier: ClassifierConfig = field(default_factory=ClassifierConfig)
    decoder_channels: int = 32


def _he_conv(rng, f, c, k):
    scale = float(np.sqrt(2.0 / (c * k * k)))
    return Tensor((rng.normal(f * c * k * k).reshape(f, c, k, k) * scale).astype(np.float32),
                  requires_grad=True)


def _bias(n):
    return Tensor(np.zeros(n, dtype=np.float32), requires_grad=True)


def build_decoder(cfg: SegmenterConfig, rng: SplitMix64) -> dict[str, Tensor]:
    """Parameters for the synthesis stack and mask head."""
    widths = cfg.classifier.widths
    cd = cfg.decoder_channels
    p: dict[str, Tensor] = {}
    n_levels = len(widths)
    for l in range(n_levels - 1, 0, -1):  # units at levels L-1 .. 1
        fine_c = widths[l - 1]
        coarse_trunk_c = widths[l] if l == n_levels - 1 else cd
        coarse_aux_c = widths[l]
        base = f"dec{l}"
        p[f"{base}.proj_m.w"] = _he_conv(rng, cd, fine_c, 1)
        p[f"{base}.proj_m.b"] = _bias(cd)
        p[f"{base}.proj_a.w"] = _he_conv(rng, cd, fine_c, 1)
        p[f"{base}.proj_a.b"] = _bias(cd)
        p[f"{base}.lift_m.proj.w"] = _he_conv(rng, cd, coarse_trunk_c, 1)
        p[f"{base}.lift_m.proj.b"] = _bias(cd)
        p[f"{base}.lift_m.up.w"] = Tensor(
            (rng.normal(cd * cd).reshape(cd, cd) * np.sqrt(2.0 / cd)).astype(np.float32),
            requires_grad=True)
        p[f"{base}.lift_a.proj.w"] = _he_conv(rng, cd, coarse_aux_c, 1)
        p[f"{base}.lift_a.proj.b"] = _bias(cd)
        p[f"{base}.lift_a.up.w"] = Tensor(
            (rng.normal(cd * cd).reshape(cd, cd) * np.sqrt(2.0 / cd)).astype(np.float32),
            requires_grad=True)
        p[f"{base}.merge.w"] = _he_conv(rng, cd, cd, 3)
        p[f"{base}.merge.b"] = _bias(cd)
    p["mask_head.w"] = _he_conv(rng, N_MASK_CLASSES, cd, 3)
    p["mask_head.b"] = _bias(N_MASK_CLASSES)
    return p


def build_segmenter(cfg: SegmenterConfig, rng: SplitMix64,
                    encoder: dict[str, Tensor] | None = None) -> dict[str, Tensor]:
    """Encoder plus decoder parameters.  Pass ``encoder`` to warm-start from
    a trained classifier (arrays are adopted as-is)."""
    params = encoder if encoder is not None else build_classifier(cfg.classifier, rng)
    params = dict(params)
    params.update(build_decoder(cfg, rng))
    return params


def _lift(x: Tensor, params, base: str, out_h: int, out_w: int) -> Tensor:
    proj = ops.conv2d(x, params[f"{base}.proj.w"], params[f"{base}.proj.b"], 1, 0)
    return ops.transposed_conv1x1(proj, params[f"{base}.up.w"], 2, out_h, out_w)


def synthesis_unit(fine_m: Tensor, fine_a: Tensor, coarse_m: Tensor, coarse_a: Tensor,
                   params: dict[str, Tensor], base: str) -> Tensor:
    """One decoder stage; coarse inputs must be exactly half the fine size."""
    h, w = fine_m.shape[2], fine_m.shape[3]
    for t in (coarse_m, coarse_a):
        if (t.shape[2] * 2, t.shape[3] * 2) != (h, w):
            raise ConfigurationError(
                f"coarse level {t.shape[2]}x{t.shape[3]} is not half of {h}x{w}")
    if fine_m.shape != fine_a.shape:
        raise ConfigurationError("fine trunk/aux taps must share a shape")
    streams = ops.add(
        ops.add(ops.conv2d(fine_m, params[f"{base}.proj_m.w"], params[f"{base}.proj_m.b"], 1, 0),
                ops.conv2d(fine_a, params[f"{base}.proj_a.w"], params[f"{base}.proj_a.b"], 1, 0)),
        ops.add(_lift(coarse_m, params, f"{base}.lift_m", h, w),
                _lift(coarse_a, params, f"{base}.lift_a", h, w)),
    )
    return ops.conv2d(streams, params[f"{base}.merge.w"], params[f"{base}.merge.b"], 1, 1)


def decode_masks(params: dict[str, Tensor], taps: list[TapLevel],
                 out_h: int, out_w: int) -> Tensor:
    """Run the synthesis stack over classifier taps; (N, 3, out_h, out_w)."""
    n_levels = len(taps)
    if n_levels < 2:
        raise ConfigurationError("decoder needs at least two tap levels")
    x = synthesis_unit(taps[-2].trunk, taps[-2].aux, taps[-1].trunk, taps[-1].aux,
                       params, f"dec{n_levels - 1}")
    for l in range(n_levels - 2, 0, -1):
        x = synthesis_unit(taps[l - 1].trunk, taps[l - 1].aux, x, taps[l].aux,
                           params, f"dec{l}")
    logits = ops.conv2d(x, params["mask_head.w"], params["mask_head.b"], 1, 1)
    if logits.shape[2] != out_h or logits.shape[3] != out_w:
        logits = ops.bilinear_upsample(logits, out_h, out_w)
    return logits


def segmenter_forward(params: dict[str, Tensor], images: Tensor, env: Tensor | None,
                      cfg: SegmenterConfig, training: bool = False,
                      rng: SplitMix64 | None = None
                      ) -> tuple[Tensor, Tensor, list[TapLevel]]:
    """Classification logits and per-pixel mask logits in one pass."""
    logits, taps = classifier_forward(params, images, env, cfg.classifier,
                                      training=training, rng=rng)
    mask_logits = decode_masks(params, taps, images.shape[2], images.shape[3])
    return logits, mask_logits, taps


# ---------------------------------------------------------------------------
# multi-task loss

@dataclass
class MultiTaskLoss:
    l_cls: Tensor
    l_mask: Tensor
    l_multi: Tensor


def multitask_loss(logits: Tensor, class_targets: np.ndarray, mask_logits: Tensor,
                   label_maps: np.ndarray, class_weights, mask_weights) -> MultiTaskLoss:
    """Classification CE plus per-pixel mask CE; ``l_multi`` is their exact
    sum.  ``label_maps`` hold values in {1, 2, 3}."""
    labels = np.asarray(label_maps)
    if labels.min() < 1 or labels.max() > N_MASK_CLASSES:
        raise DataError("label maps must contain only values in {1, 2, 3}")
    l_cls = ops.weighted_cross_entropy(logits, class_targets, class_weights)
    l_mask = ops.pixelwise_cross_entropy(mask_logits, labels.astype(np.int64) - 1,
                                         mask_weights)
    return MultiTaskLoss(l_cls=l_cls, l_mask=l_mask, l_multi=ops.add(l_cls, l_mask))


def predict_label_maps(mask_logits: Tensor | np.ndarray) -> np.ndarray:
    """Argmax over mask classes, back in {1, 2, 3} (uint8, N x H x W)."""
    data = mask_logits.data if isinstance(mask_logits, Tensor) else np.asarray(mask_logits)
    return (np.argmax(data, axis=1) + 1).astype(np.uint8)
