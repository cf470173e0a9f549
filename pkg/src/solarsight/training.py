"""Training loops for the classifier (stage 1) and joint refiner (stage 3).

Both stages run the same recipe: SGD with momentum and weight decay, the
learning rate divided by a fixed factor on a fixed epoch schedule,
inverse-class-probability loss weighting, and flip/rotate augmentation.
Every stochastic choice derives from the run seed, so a rerun reproduces
losses, metrics, and weights bitwise.

Stage 3 trains against stage-2 candidate label maps.  Its training view
(:class:`SegTrainData`) carries images, class bins, environment features
and candidate maps only; ground-truth masks are not representable in it,
which is the weak-supervision firewall.  Validation-time JI against ground
truth goes through the metrics module on a separate validation structure.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import metrics, ops
from .classifier import ClassifierConfig, classifier_forward
from .errors import UsageError
from .optim import SGD, step_decay_lr
from .panelgen import apply_augment, draw_augment_params
from .rng import SplitMix64, derive_seed
from .segmenter import SegmenterConfig, multitask_loss, predict_label_maps, segmenter_forward
from .tensor import Tensor, backward, no_grad


@dataclass(frozen=True)
class TrainRecipe:
    lr: float = 0.01
    epochs: int = 90
    lr_decay_every: int = 30
    lr_decay_factor: float = 10.0
    momentum: float = 0.9
    weight_decay: float = 0.0005
    batch_size: int = 32

    @staticmethod
    def from_config(cfg) -> "TrainRecipe":
        return TrainRecipe(
            lr=cfg["training.lr"], epochs=cfg["training.epochs"],
            lr_decay_every=cfg["training.lr_decay_every"],
            lr_decay_factor=cfg["training.lr_decay_factor"],
            momentum=cfg["training.momentum"],
            weight_decay=cfg["training.weight_decay"],
            batch_size=cfg["training.batch_size"],
        )


@dataclass
class ClsTrainData:
    """Stage-1 training view: images as uint8 HWC, class bins, env features."""
    images: np.ndarray
    bins: np.ndarray
    env: np.ndarray

    def __len__(self):
        return len(self.images)


@dataclass
class SegTrainData(ClsTrainData):
    """Stage-3 training view; has candidate label maps and nothing else.

    There is deliberately no field for ground-truth masks here."""
    candidates: np.ndarray = None


@dataclass
class EvalData:
    """Validation-side data; ``gt_masks`` is evaluation-only ground truth."""
    images: np.ndarray
    bins: np.ndarray
    env: np.ndarray
    power_loss: np.ndarray | None = None
    gt_masks: np.ndarray | None = None

    def __len__(self):
        return len(self.images)


def inverse_class_weights(bins: np.ndarray, n_classes: int) -> np.ndarray:
    """w_k = N / (K * count_k), absent classes clamped to count 1."""
    counts = np.bincount(np.asarray(bins, dtype=np.int64), minlength=n_classes).astype(np.float64)
    counts = np.maximum(counts, 1.0)
    return (len(bins) / (n_classes * counts)).astype(np.float32)


def mask_class_weights(candidates: np.ndarray) -> np.ndarray:
    """Inverse pixel-frequency weights over label values {1, 2, 3}."""
    counts = np.bincount(candidates.reshape(-1).astype(np.int64), minlength=4)[1:4]
    counts = np.maximum(counts, 1).astype(np.float64)
    total = counts.sum()
    return (total / (3.0 * counts)).astype(np.float32)


def _to_chw(img_u8: np.ndarray) -> np.ndarray:
    return (img_u8.astype(np.float32) / 255.0).transpose(2, 0, 1)


def _assemble_batch(data, idxs, rng, with_masks: bool):
    imgs, masks = [], []
    for i in idxs:
        params = draw_augment_params(rng)
        img = apply_augment(data.images[i], params)
        imgs.append(_to_chw(img))
        if with_masks:
            masks.append(apply_augment(data.candidates[i], params))
    x = Tensor(np.stack(imgs))
    y = data.bins[idxs]
    env = Tensor(data.env[idxs])
    m = np.stack(masks) if with_masks else None
    return x, y, env, m


def _eval_batches(n, batch_size):
    for start in range(0, n, batch_size):
        yield np.arange(start, min(start + batch_size, n))


def evaluate_classifier(params, cfg: ClassifierConfig, data: EvalData,
                        batch_size: int = 32) -> tuple[float, np.ndarray]:
    """Top-1 and predictions over an evaluation split (no augmentation)."""
    preds = []
    with no_grad():
        for idxs in _eval_batches(len(data), batch_size):
            x = Tensor(np.stack([_to_chw(im) for im in data.images[idxs]]))
            env = Tensor(data.env[idxs]) if cfg.uses_env else None
            logits, _ = classifier_forward(params, x, env, cfg, training=False)
            preds.append(ops.max_index(logits, axis=1))
    preds = np.concatenate(preds)
    return float((preds == data.bins).mean()), preds


def evaluate_segmenter(params, cfg: SegmenterConfig, data: EvalData,
                       batch_size: int = 32) -> tuple[float, np.ndarray, np.ndarray]:
    """Top-1, class predictions, and predicted label maps for a split."""
    preds, maps = [], []
    with no_grad():
        for idxs in _eval_batches(len(data), batch_size):
            x = Tensor(np.stack([_to_chw(im) for im in data.images[idxs]]))
            env = Tensor(data.env[idxs]) if cfg.classifier.uses_env else None
            logits, mask_logits, _ = segmenter_forward(params, x, env, cfg, training=False)
            preds.append(ops.max_index(logits, axis=1))
            maps.append(predict_label_maps(mask_logits))
    return (float((np.concatenate(preds) == data.bins).mean()),
            np.concatenate(preds), np.concatenate(maps))


def train_classifier_loop(params: dict[str, Tensor], cfg: ClassifierConfig,
                          recipe: TrainRecipe, data: ClsTrainData, val: EvalData,
                          seed: int, log=None) -> list[dict]:
    """Returns one history row per epoch: epoch, l_cls, val_top1."""
    if len(data) == 0:
        raise UsageError("empty training set")
    opt = SGD(params, recipe.lr, recipe.momentum, recipe.weight_decay)
    weights = inverse_class_weights(data.bins, cfg.n_classes)
    env_used = cfg.uses_env
    history = []
    for epoch in range(recipe.epochs):
        opt.learning_rate = step_decay_lr(recipe.lr, epoch, recipe.lr_decay_every,
                                          recipe.lr_decay_factor)
        ep_rng = SplitMix64(derive_seed(seed, 10_000 + epoch))
        order = list(range(len(data)))
        ep_rng.shuffle(order)
        losses = []
        for start in range(0, len(order), recipe.batch_size):
            idxs = np.asarray(order[start:start + recipe.batch_size])
            x, y, env, _ = _assemble_batch(data, idxs, ep_rng, with_masks=False)
            logits, _ = classifier_forward(params, x, env if env_used else None,
                                           cfg, training=True, rng=ep_rng)
            loss = ops.weighted_cross_entropy(logits, y, weights)
            opt.zero_grad()
            backward(loss)
            opt.step()
            losses.append(float(loss.data))
        val_top1, _ = evaluate_classifier(params, cfg, val, recipe.batch_size)
        row = {"epoch": epoch, "l_cls": float(np.mean(losses)), "val_top1": val_top1}
        history.append(row)
        if log:
            log(row)
    return history


def train_segmenter_loop(params: dict[str, Tensor], cfg: SegmenterConfig,
                         recipe: TrainRecipe, data: SegTrainData, val: EvalData,
                         seed: int, log=None) -> list[dict]:
    """Returns one history row per epoch: epoch, l_cls, l_mask, val_top1,
    val_ji.  Training reads candidate maps only; JI uses validation ground
    truth through the metrics module."""
    if len(data) == 0:
        raise UsageError("empty training set")
    if data.candidates is None:
        raise UsageError("stage-3 training needs candidate label maps")
    opt = SGD(params, recipe.lr, recipe.momentum, recipe.weight_decay)
    cls_w = inverse_class_weights(data.bins, cfg.classifier.n_classes)
    mask_w = mask_class_weights(data.candidates)
    env_used = cfg.classifier.uses_env
    history = []
    for epoch in range(recipe.epochs):
        opt.learning_rate = step_decay_lr(recipe.lr, epoch, recipe.lr_decay_every,
                                          recipe.lr_decay_factor)
        ep_rng = SplitMix64(derive_seed(seed, 20_000 + epoch))
        order = list(range(len(data)))
        ep_rng.shuffle(order)
        cls_losses, mask_losses = [], []
        for start in range(0, len(order), recipe.batch_size):
            idxs = np.asarray(order[start:start + recipe.batch_size])
            x, y, env, cand = _assemble_batch(data, idxs, ep_rng, with_masks=True)
            logits, mask_logits, _ = segmenter_forward(
                params, x, env if env_used else None, cfg, training=True, rng=ep_rng)
            loss = multitask_loss(logits, y, mask_logits, cand, cls_w, mask_w)
            opt.zero_grad()
            backward(loss.l_multi)
            opt.step()
            cls_losses.append(float(loss.l_cls.data))
            mask_losses.append(float(loss.l_mask.data))
        val_top1, _, val_maps = evaluate_segmenter(params, cfg, val, recipe.batch_size)
        if val.gt_masks is not None:
            val_ji = metrics.jaccard_mean(val_maps, val.gt_masks)
        else:
            val_ji = float("nan")
        row = {"epoch": epoch, "l_cls": float(np.mean(cls_losses)),
               "l_mask": float(np.mean(mask_losses)), "val_top1": val_top1,
               "val_ji": val_ji}
        history.append(row)
        if log:
            log(row)
    return history


def write_history_csv(path, history: list[dict], columns: list[str]) -> None:
    with open(path, "w") as f:
        f.write(",".join(columns) + "\n")
        for row in history:
            cells = []
            for c in columns:
                v = row[c]
                cells.append(str(v) if isinstance(v, int) else f"{v:.6f}")
            f.write(",".join(cells) + "\n")
