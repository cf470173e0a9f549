"""Cleaning recommendations from impact level, coverage, and soiling type.

How to clean follows the material: loose deposits (dusts, chalk powder,
snow) blow off, sticky bird droppings need wiping, cracks need a human
inspection.  When to clean combines the predicted impact level with the
soiled fraction of the panel; either signal alone can raise the priority,
since a concentrated deposit can throttle a whole diode segment while a
thin film can cover everything.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError

ACTIONS = ("none", "air_blow", "wipe", "scrape", "inspect")
PRIORITIES = ("low", "medium", "high")

_ACTION_BY_TYPE = {
    "brown_dust": "air_blow",
    "gray_dust": "air_blow",
    "red_dust": "air_blow",
    "black_dust": "air_blow",
    "white_powder": "air_blow",
    "snow": "air_blow",
    "bird_drop": "wipe",
    "crack": "inspect",
    "clean": "none",
}


@dataclass(frozen=True)
class Recommendation:
    action: str
    priority: str
    rationale: str


@dataclass(frozen=True)
class PriorityThresholds:
    high_impact: float = 0.25
    high_coverage: float = 0.25
    medium_impact: float = 0.125
    medium_coverage: float = 0.10


def coverage(label_map: np.ndarray) -> float:
    """Soiled fraction of the panel: |label 3| / |label != 1|; 0 without
    any panel pixels."""
    label_map = np.asarray(label_map)
    panel = (label_map != 1).sum()
    if panel == 0:
        return 0.0
    return float((label_map == 3).sum() / panel)


def recommend(impact_bin: int, n_classes: int, cov: float, soiling_type: str,
              thresholds: PriorityThresholds = PriorityThresholds()) -> Recommendation:
    """Decision table: action from the material, priority from impact level
    and coverage.  A clean panel is always (none, low)."""
    if soiling_type not in _ACTION_BY_TYPE:
        raise ConfigurationError(f"unknown soiling type {soiling_type!r}")
    if not 0 <= impact_bin < n_classes:
        raise ConfigurationError(f"impact bin {impact_bin} outside [0, {n_classes})")
    action = _ACTION_BY_TYPE[soiling_type]
    impact = impact_bin / n_classes
    if action == "none":
        priority = "low"
    elif impact >= thresholds.high_impact or cov >= thresholds.high_coverage:
        priority = "high"
    elif impact >= thresholds.medium_impact or cov >= thresholds.medium_coverage:
        priority = "medium"
    else:
        priority = "low"
    lo, hi = 100.0 * impact_bin / n_classes, 100.0 * (impact_bin + 1) / n_classes
    rationale = (f"{soiling_type} covering {cov:.0%} of the panel, "
                 f"predicted impact {lo:.1f}-{hi:.1f}%")
    return Recommendation(action=action, priority=priority, rationale=rationale)
