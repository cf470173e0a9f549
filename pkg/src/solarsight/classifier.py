"""Power-loss classifier: residual stages with input-aware fusion.

The trunk is a small ResNet: a stride-1 stem and four residual stages
(default widths 16/32/64/128, stages 2..4 downsample by 2).  After each
stage, a fusion block re-injects a pooled copy of the input image:

    aux_next  = merge1x1( concat[ trunk_out, img5x5(pool(I)), prev1x1(aux) ] )
    trunk_next = trunk_out + aux_next

so every stage sees the raw image at its own scale and feeds the fused map
back into the trunk.  Both streams are exported per stage as taps for the
localization consumers.

Variants:
    full        fusion blocks active (the default)
    plain       no fusion blocks at all (vanilla residual net); taps record
                aux = trunk so downstream stages still work
    detached    fusion maps are computed but never added back to the trunk
    env_sum     full + environment features added to the pooled image vector
    env_concat  full + environment features concatenated instead

Spatial dropout runs on the trunk continuation after every stage during
training; taps are recorded pre-dropout so localization consumers always
see intact maps.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from . import ops
from .errors import ConfigurationError, DataError
from .rng import SplitMix64
from .tensor import Tensor

VARIANTS = ("full", "plain", "detached", "env_sum", "env_concat")
SOLAR_CONSTANT = 1361.0
ENV_DIM = 4


@dataclass(frozen=True)
class ClassifierConfig:
    n_classes: int = 4
    widths: tuple[int, ...] = (16, 32, 64, 128)
    in_channels: int = 3
    dropout: float = 0.2
    variant: str = "full"
    bn_momentum: float = 0.1

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}")
        if len(self.widths) < 2:
            raise ConfigurationError("need at least two stages")

    @property
    def uses_env(self) -> bool:
        return self.variant in ("env_sum", "env_concat")

    @property
    def has_fusion(self) -> bool:
        return self.variant != "plain"


class TapLevel(NamedTuple):
    """Per-stage exports: trunk map, auxiliary map, pooled input."""
    trunk: Tensor
    aux: Tensor
    image: Tensor


# ---------------------------------------------------------------------------
# parameter construction

def _he_conv(rng, f, c, k):
    scale = float(np.sqrt(2.0 / (c * k * k)))
    vals = rng.normal(f * c * k * k).reshape(f, c, k, k) * scale
    return Tensor(vals.astype(np.float32), requires_grad=True)


def _he_fc(rng, d_in, d_out):
    scale = float(np.sqrt(2.0 / d_in))
    vals = rng.normal(d_in * d_out).reshape(d_in, d_out) * scale
    return Tensor(vals.astype(np.float32), requires_grad=True)


def _bias(n):
    return Tensor(np.zeros(n, dtype=np.float32), requires_grad=True)


def _bn(params, name, c):
    params[f"{name}.gamma"] = Tensor(np.ones(c, dtype=np.float32), requires_grad=True)
    params[f"{name}.beta"] = _bias(c)
    params[f"{name}.mean"] = Tensor(np.zeros(c, dtype=np.float32))
    params[f"{name}.var"] = Tensor(np.ones(c, dtype=np.float32))


def build_classifier(cfg: ClassifierConfig, rng: SplitMix64) -> dict[str, Tensor]:
    """He-initialized parameter dictionary (BN buffers ride along without
    gradients)."""
    p: dict[str, Tensor] = {}
    w = cfg.widths
    p["stem.w"] = _he_conv(rng, w[0], cfg.in_channels, 3)
    _bn(p, "stem.bn", w[0])

    c_prev = w[0]
    for l, c in enumerate(w, start=1):
        base = f"au{l}"
        p[f"{base}.rcu.conv1.w"] = _he_conv(rng, c, c_prev, 3)
        _bn(p, f"{base}.rcu.bn1", c)
        p[f"{base}.rcu.conv2.w"] = _he_conv(rng, c, c, 3)
        _bn(p, f"{base}.rcu.bn2", c)
        if l > 1:  # stride-2 stage: projection skip
            p[f"{base}.rcu.skip.w"] = _he_conv(rng, c, c_prev, 1)
            _bn(p, f"{base}.rcu.skipbn", c)
        if cfg.has_fusion:
            p[f"{base}.fus.img.w"] = _he_conv(rng, c, cfg.in_channels, 5)
            p[f"{base}.fus.img.b"] = _bias(c)
            concat_ch = 2 * c
            if l > 1:
                p[f"{base}.fus.prev.w"] = _he_conv(rng, c, c_prev, 1)
                p[f"{base}.fus.prev.b"] = _bias(c)
                concat_ch = 3 * c
            p[f"{base}.fus.merge.w"] = _he_conv(rng, c, concat_ch, 1)
            p[f"{base}.fus.merge.b"] = _bias(c)
        c_prev = c

    feat = w[-1]
    if cfg.uses_env:
        p["env.fc.w"] = _he_fc(rng, ENV_DIM, feat)
        p["env.fc.b"] = _bias(feat)
    head_in = 2 * feat if cfg.variant == "env_concat" else feat
    p["head.fc.w"] = _he_fc(rng, head_in, cfg.n_classes)
    p["head.fc.b"] = _bias(cfg.n_classes)
    return p


def parameter_count(params: dict[str, Tensor]) -> int:
    """Total trainable scalars (BN buffers excluded)."""
    return sum(t.data.size for t in params.values() if t.requires_grad)


# ---------------------------------------------------------------------------
# blocks

def _batch_norm(params, name, x, training, momentum):
    return ops.batch_norm(x, params[f"{name}.gamma"], params[f"{name}.beta"],
                          params[f"{name}.mean"].data, params[f"{name}.var"].data,
                          training, momentum=momentum)


def residual_unit(params: dict[str, Tensor], base: str, x: Tensor, downsample: bool,
                  training: bool, momentum: float) -> Tensor:
    """Two 3x3 convs with BN, identity skip; stride-2 first conv and a 1x1
    stride-2 projection skip when the stage downsamples."""
    stride = 2 if downsample else 1
    h = ops.conv2d(x, params[f"{base}.conv1.w"], None, stride=stride, pad=1, truncate=True)
    h = ops.relu(_batch_norm(params, f"{base}.bn1", h, training, momentum))
    h = ops.conv2d(h, params[f"{base}.conv2.w"], None, stride=1, pad=1)
    h = _batch_norm(params, f"{base}.bn2", h, training, momentum)
    if downsample:
        skip = ops.conv2d(x, params[f"{base}.skip.w"], None, stride=2, pad=0, truncate=True)
        skip = _batch_norm(params, f"{base}.skipbn", skip, training, momentum)
    else:
        skip = x
    return ops.relu(ops.add(h, skip))


def subsample_to(image: Tensor, h: int, w: int) -> Tensor:
    """Repeated 3x3/stride-2 average pooling until the image matches (h, w)."""
    cur = image
    while cur.shape[2] > h and cur.shape[3] > w:
        cur = ops.avg_pool(cur, k=3, stride=2)
    if cur.shape[2] != h or cur.shape[3] != w:
        raise ConfigurationError(
            f"image {image.shape[2]}x{image.shape[3]} not reachable to {h}x{w} by halving"
        )
    return cur


def bidiaf_forward(x_r: Tensor, x_a_prev: Tensor | None, image: Tensor,
                   params: dict[str, Tensor], base: str,
                   feed_back: bool = True) -> tuple[Tensor, Tensor, Tensor]:
    """One fusion block.

    Returns (trunk_next, aux_next, pooled_image).  ``trunk_next`` is
    ``x_r + aux_next``; with ``feed_back=False`` (the detached variant) the
    trunk passes through unchanged.  When ``x_a_prev`` is spatially larger
    than ``x_r`` it is average-pooled by stride 2 first; the concat then has
    two or three members depending on whether a previous aux map exists.
    """
    sub = subsample_to(image, x_r.shape[2], x_r.shape[3])
    img_feat = ops.conv2d(sub, params[f"{base}.img.w"], params[f"{base}.img.b"],
                          stride=1, pad=2)
    parts = [x_r, img_feat]
    if x_a_prev is not None:
        prev = x_a_prev
        if prev.shape[2] > x_r.shape[2]:
            prev = ops.avg_pool(prev, k=3, stride=2)
        if prev.shape[2:] != x_r.shape[2:]:
            raise ConfigurationError(
                f"aux map {tuple(x_a_prev.shape)} does not reduce to trunk {tuple(x_r.shape)}"
            )
        parts.append(ops.conv2d(prev, params[f"{base}.prev.w"], params[f"{base}.prev.b"],
                                stride=1, pad=0))
    aux_next = ops.conv2d(ops.concat_channels(parts), params[f"{base}.merge.w"],
                          params[f"{base}.merge.b"], stride=1, pad=0)
    trunk_next = ops.add(x_r, aux_next) if feed_back else x_r
    return trunk_next, aux_next, sub


def env_encode(irradiance: float, time_of_day: float) -> np.ndarray:
    """[irradiance/1361, sin(2*pi*t/24), cos(2*pi*t/24), 1] as float32."""
    if irradiance < 0:
        raise DataError(f"irradiance must be >= 0, got {irradiance}")
    if not 0.0 <= time_of_day < 24.0:
        raise DataError(f"time_of_day must be in [0, 24), got {time_of_day}")
    phase = 2.0 * np.pi * time_of_day / 24.0
    return np.array([irradiance / SOLAR_CONSTANT, np.sin(phase), np.cos(phase), 1.0],
                    dtype=np.float32)


def env_encode_batch(irradiances, times) -> np.ndarray:
    return np.stack([env_encode(i, t) for i, t in zip(irradiances, times)])


def fuse_env(img_feat: Tensor, env_feat: Tensor, mode: str,
             params: dict[str, Tensor]) -> Tensor:
    """Map environment features to the image-feature width, then combine by
    elementwise sum or concatenation."""
    mapped = ops.fully_connected(env_feat, params["env.fc.w"], params["env.fc.b"])
    if mode == "sum":
        return ops.add(img_feat, mapped)
    if mode == "concat":
        return ops.concat_channels([img_feat, mapped])
    raise ConfigurationError(f"unknown fusion mode {mode!r}")


# ---------------------------------------------------------------------------
# whole network

def classifier_forward(params: dict[str, Tensor], images: Tensor,
                       env: Tensor | None, cfg: ClassifierConfig,
                       training: bool = False, rng: SplitMix64 | None = None
                       ) -> tuple[Tensor, list[TapLevel]]:
    """Forward pass: logits (N, n_classes) plus per-stage feature taps,
    ordered finest to coarsest."""
    n, c, h, w = images.shape
    halvings = len(cfg.widths) - 1
    if h % (1 << halvings) or w % (1 << halvings):
        raise ConfigurationError(f"input {h}x{w} must be divisible by {1 << halvings}")
    if cfg.uses_env and env is None:
        raise ConfigurationError(f"variant {cfg.variant!r} needs environment features")
    if training and cfg.dropout > 0 and rng is None:
        raise ConfigurationError("training forward needs an rng for dropout")

    mom = cfg.bn_momentum
    trunk = ops.relu(_batch_norm(params, "stem.bn",
                                 ops.conv2d(images, params["stem.w"], None, 1, 1),
                                 training, mom))
    aux: Tensor | None = None
    taps: list[TapLevel] = []
    for l in range(1, len(cfg.widths) + 1):
        x_r = residual_unit(params, f"au{l}.rcu", trunk, downsample=l > 1,
                            training=training, momentum=mom)
        if cfg.has_fusion:
            trunk_next, aux, sub = bidiaf_forward(
                x_r, aux, images, params, f"au{l}.fus",
                feed_back=cfg.variant != "detached")
        else:
            trunk_next, aux, sub = x_r, None, subsample_to(images, x_r.shape[2], x_r.shape[3])
        tap_aux = aux if aux is not None else trunk_next
        taps.append(TapLevel(trunk=trunk_next, aux=tap_aux, image=sub))
        trunk = ops.spatial_dropout(trunk_next, cfg.dropout, training, rng)

    pooled = ops.global_avg_pool(trunk)
    if cfg.uses_env:
        pooled = fuse_env(pooled, env, cfg.variant.removeprefix("env_"), params)
    logits = ops.fully_connected(pooled, params["head.fc.w"], params["head.fc.b"])
    return logits, taps
