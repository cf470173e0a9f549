"""Flat key=value configuration with dotted sections.

Files hold one ``section.key=value`` per line, ``#`` comments allowed.
Every key has a typed default below; values from files or ``--set``
overrides are coerced to the default's type, and unknown keys are
rejected.  ``config_hash`` is the SHA-256 of the canonical (sorted)
rendering, used for run provenance.
"""

from __future__ import annotations

import hashlib

from .errors import ConfigurationError

DEFAULTS: dict[str, object] = {
    "seed": 7,
    "run.dir": "runs/default",
    # dataset generation
    "data.n_train": 2000,
    "data.n_val": 500,
    "data.image_size": 64,
    "data.classes": 4,
    "data.rows": 6,
    "data.cols": 4,
    "data.cell_px": 8,
    "data.clean_fraction": 0.15,
    "data.soil_threshold": 0.15,
    # model
    "model.variant": "full",   # full | plain | detached | env_sum | env_concat
    "model.widths": "16,32,64,128",
    "model.decoder_channels": 32,
    "model.dropout": 0.2,
    "model.warm_start": True,
    # shared training recipe (stage 1 and stage 3)
    "training.lr": 0.01,
    "training.epochs": 90,
    "training.lr_decay_every": 30,
    "training.lr_decay_factor": 10.0,
    "training.momentum": 0.9,
    "training.weight_decay": 0.0005,
    "training.batch_size": 32,
    # soiling-type classifier
    "webnn.swatches_per_class": 150,
    "webnn.holdout_fraction": 0.25,
    "webnn.epochs": 60,
    "webnn.lr": 0.1,
    "webnn.batch_size": 32,
    # localization
    "pyramid.reduce": "mean",  # mean | max
    "ji.average": "per_image",  # per_image | pooled
    # evaluation
    "eval.alpha_max": 0.02,
    "eval.alpha_steps": 11,
    # single-image inference
    "infer.image": "",
    "infer.irradiance": 800.0,
    "infer.time_of_day": 12.0,
}


def _coerce(key: str, raw: str):
    default = DEFAULTS[key]
    if isinstance(default, bool):
        low = raw.strip().lower()
        if low in ("true", "1", "yes"):
            return True
        if low in ("false", "0", "no"):
            return False
        raise ConfigurationError(f"{key}: expected true/false, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    return raw.strip()


class Config:
    def __init__(self, values: dict[str, object] | None = None):
        self.values = dict(DEFAULTS)
        if values:
            for k, v in values.items():
                if k not in DEFAULTS:
                    raise ConfigurationError(f"unknown config key {k!r}")
                self.values[k] = v

    def __getitem__(self, key: str):
        try:
            return self.values[key]
        except KeyError:
            raise ConfigurationError(f"unknown config key {key!r}") from None

    def set(self, key: str, raw: str) -> None:
        if key not in DEFAULTS:
            raise ConfigurationError(f"unknown config key {key!r}")
        self.values[key] = _coerce(key, raw)

    def widths(self) -> tuple[int, ...]:
        try:
            parts = tuple(int(p) for p in str(self["model.widths"]).split(","))
        except ValueError:
            raise ConfigurationError(f"bad model.widths: {self['model.widths']!r}") from None
        if len(parts) != 4 or any(p <= 0 for p in parts):
            raise ConfigurationError("model.widths needs 4 positive integers")
        return parts

    def canonical(self) -> str:
        lines = []
        for k in sorted(self.values):
            v = self.values[k]
            if isinstance(v, bool):
                v = "true" if v else "false"
            elif isinstance(v, float):
                v = repr(v)
            lines.append(f"{k}={v}")
        return "\n".join(lines) + "\n"

    def hash(self) -> str:
        return hashlib.sha256(self.canonical().encode()).hexdigest()


def load_config(path=None, overrides: list[str] | None = None, seed: int | None = None) -> Config:
    """Build a Config from an optional file, ``key=value`` overrides, and a
    seed override (highest precedence)."""
    cfg = Config()
    if path is not None:
        with open(path, "r", encoding="utf-8") as f:
            for lineno, line in enumerate(f, 1):
                line = line.split("#", 1)[0].strip()
                if not line:
                    continue
                if "=" not in line:
                    raise ConfigurationError(f"{path}:{lineno}: expected key=value")
                key, raw = line.split("=", 1)
                cfg.set(key.strip(), raw)
    for item in overrides or []:
        if "=" not in item:
            raise ConfigurationError(f"--set expects key=value, got {item!r}")
        key, raw = item.split("=", 1)
        cfg.set(key.strip(), raw)
    if seed is not None:
        cfg.values["seed"] = int(seed)
    return cfg
