"""Evaluation metrics: top-1/confusion, boundary-relaxed accuracy, and
background-excluded Jaccard index, plus report writers."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError

LABEL_BACKGROUND = 1


def top1_and_confusion(preds, targets, n_classes: int) -> tuple[float, np.ndarray]:
    """Accuracy and a (true, predicted) count matrix."""
    preds = np.asarray(preds)
    targets = np.asarray(targets)
    if preds.size == 0:
        raise UsageError("no predictions to score")
    if preds.shape != targets.shape:
        raise UsageError(f"shape mismatch: {preds.shape} vs {targets.shape}")
    if preds.min() < 0 or preds.max() >= n_classes or targets.min() < 0 or targets.max() >= n_classes:
        raise UsageError(f"class outside [0, {n_classes})")
    confusion = np.zeros((n_classes, n_classes), dtype=np.int64)
    np.add.at(confusion, (targets, preds), 1)
    return float((preds == targets).mean()), confusion


def relaxed_accuracy(pred_bins, true_losses, n_classes: int, alpha: float) -> float:
    """Accuracy with each bin's boundaries widened by ``alpha``.

    A prediction ``b`` scores when the continuous true loss falls inside
    the closed interval [b/C - alpha, (b+1)/C + alpha].  At alpha=0 this
    matches plain top-1 except for losses landing exactly on an interior
    bin edge (which the closed interval credits to both neighbors).
    """
    if alpha < 0:
        raise UsageError("alpha must be >= 0")
    b = np.asarray(pred_bins, dtype=np.float64)
    loss = np.asarray(true_losses, dtype=np.float64)
    lo = b / n_classes - alpha
    hi = (b + 1) / n_classes + alpha
    return float(((loss >= lo) & (loss <= hi)).mean())


def relaxed_curve(pred_bins, true_losses, n_classes: int, alphas) -> list[tuple[float, float]]:
    return [(float(a), relaxed_accuracy(pred_bins, true_losses, n_classes, a))
            for a in alphas]


def jaccard(pred: np.ndarray, gt: np.ndarray, class_of_interest: int = 3,
            exclude_background: bool = True) -> float:
    """Intersection over union of one label class between two label maps.

    With ``exclude_background`` only pixels where the reference is not
    background (label 1) participate.  Empty-union cases score 1.0: a clean
    panel predicted clean is perfect localization.
    """
    pred = np.asarray(pred)
    gt = np.asarray(gt)
    if pred.shape != gt.shape:
        raise UsageError(f"misaligned label maps: {pred.shape} vs {gt.shape}")
    region = gt != LABEL_BACKGROUND if exclude_background else np.ones_like(gt, dtype=bool)
    p = (pred == class_of_interest) & region
    g = (gt == class_of_interest) & region
    union = (p | g).sum()
    if union == 0:
        return 1.0
    return float((p & g).sum() / union)


def jaccard_macro(pred: np.ndarray, gt: np.ndarray,
                  classes=(2, 3), exclude_background: bool = True) -> float:
    return float(np.mean([jaccard(pred, gt, c, exclude_background) for c in classes]))


def jaccard_mean(preds, gts, average: str = "per_image", macro: bool = False) -> float:
    """Mean JI over samples (default) or pooled over all pixels."""
    if average == "per_image":
        fn = jaccard_macro if macro else jaccard
        return float(np.mean([fn(p, g) for p, g in zip(preds, gts)]))
    if average == "pooled":
        pred_all = np.concatenate([np.asarray(p).ravel() for p in preds])
        gt_all = np.concatenate([np.asarray(g).ravel() for g in gts])
        if macro:
            return jaccard_macro(pred_all, gt_all)
        return jaccard(pred_all, gt_all)
    raise UsageError(f"unknown averaging mode {average!r}")


@dataclass
class EvalReport:
    top1: float
    confusion: np.ndarray
    relaxed: list[tuple[float, float]]
    ji_mean: float | None = None
    per_sample_ji: list[float] = field(default_factory=list)
    extras: dict[str, float] = field(default_factory=dict)

    def rows(self) -> list[tuple[str, str]]:
        out = [("top1", f"{self.top1:.6f}")]
        for a, acc in self.relaxed:
            out.append((f"relaxed_accuracy@{a:.4f}", f"{acc:.6f}"))
        if self.ji_mean is not None:
            out.append(("ji_mean", f"{self.ji_mean:.6f}"))
        for k in sorted(self.extras):
            out.append((k, f"{self.extras[k]:.6f}"))
        return out


def write_report_csv(path, report: EvalReport) -> None:
    with open(path, "w") as f:
        f.write("metric,value\n")
        for k, v in report.rows():
            f.write(f"{k},{v}\n")


def write_confusion_csv(path, confusion: np.ndarray) -> None:
    with open(path, "w") as f:
        k = confusion.shape[0]
        f.write("true\\pred," + ",".join(str(i) for i in range(k)) + "\n")
        for i in range(k):
            f.write(f"{i}," + ",".join(str(int(v)) for v in confusion[i]) + "\n")


def write_report_text(path, report: EvalReport, title: str) -> None:
    lines = [title, "=" * len(title)]
    for k, v in report.rows():
        lines.append(f"{k:>28}: {v}")
    lines.append("confusion (rows=true, cols=pred):")
    for row in report.confusion:
        lines.append("  " + " ".join(f"{int(v):6d}" for v in row))
    text = "\n".join(lines) + "\n"
    with open(path, "w") as f:
        f.write(text)
