"""Stage orchestration: dataset generation, the four training/inference
stages, evaluation, and single-image inference.

Stages write their artifacts under the configured run directory:

    data/         images, ground-truth masks, manifest + train/val splits
    checkpoints/  impactnet.ckpt, maskfcnn.ckpt, webnn.ckpt
    masks/        stage-2 candidate label maps + derived manifests
    swatches/     the soiling-type training patches
    metrics/      per-epoch training CSVs
    eval/         metric reports
    infer/        inference JSON + predicted label map
    run.lock      provenance: one line per completed stage with the config
                  hash and seed (deterministic content)

One stage runs at a time per run directory, enforced with an O_EXCL
sentinel file.  Every stage checks its prerequisites and fails with a
message naming the stage that must run first.
"""

from __future__ import annotations

import json
import os
import time

import numpy as np

from . import metrics as metrics_mod
from .checkpoint import load_checkpoint, save_checkpoint
from .classifier import ClassifierConfig, build_classifier, classifier_forward, env_encode
from .config import Config
from .errors import DataError, UsageError
from .masks import detect_panel, mask_to_label, pyramid_masks
from .netpbm import read_pgm, read_ppm_u8, write_pgm, write_ppm
from .panelgen import (GeneratorSpec, PanelLayout, read_manifest, generate_dataset)
from .recommend import coverage, recommend
from .rng import SplitMix64, derive_seed
from .segmenter import SegmenterConfig, build_segmenter, predict_label_maps, segmenter_forward
from .soiltype import (classify_roi, generate_swatches, swatch_histograms,
                       train_type_classifier)
from .tensor import Tensor, no_grad
from .training import (ClsTrainData, EvalData, SegTrainData, TrainRecipe,
                       evaluate_classifier, evaluate_segmenter,
                       train_classifier_loop, train_segmenter_loop,
                       write_history_csv)

STAGES = ("generate", "train-impactnet", "make-masks", "train-maskfcnn",
          "train-webnn", "eval", "infer")

MASKS_HEADER_EXTRA = "candidate_mask"


# ---------------------------------------------------------------------------
# config plumbing

def generator_spec(cfg: Config) -> GeneratorSpec:
    layout = PanelLayout(rows=cfg["data.rows"], cols=cfg["data.cols"],
                         cell_px=cfg["data.cell_px"])
    return GeneratorSpec(image_size=cfg["data.image_size"], layout=layout,
                         n_classes=cfg["data.classes"],
                         clean_fraction=cfg["data.clean_fraction"],
                         soil_threshold=cfg["data.soil_threshold"])


def classifier_config(cfg: Config) -> ClassifierConfig:
    return ClassifierConfig(n_classes=cfg["data.classes"], widths=cfg.widths(),
                            dropout=cfg["model.dropout"], variant=cfg["model.variant"])


def segmenter_config(cfg: Config) -> SegmenterConfig:
    return SegmenterConfig(classifier=classifier_config(cfg),
                           decoder_channels=cfg["model.decoder_channels"])


def _paths(cfg: Config) -> dict[str, str]:
    run = cfg["run.dir"]
    return {
        "run": run,
        "data": os.path.join(run, "data"),
        "checkpoints": os.path.join(run, "checkpoints"),
        "masks": os.path.join(run, "masks"),
        "swatches": os.path.join(run, "swatches"),
        "metrics": os.path.join(run, "metrics"),
        "eval": os.path.join(run, "eval"),
        "infer": os.path.join(run, "infer"),
        "lock": os.path.join(run, "run.lock"),
        "sentinel": os.path.join(run, ".running"),
    }


def _require(path: str, stage_needed: str):
    if not os.path.exists(path):
        raise UsageError(f"{stage_needed} required: missing {path}")


# ---------------------------------------------------------------------------
# data loading

def _stack_images(rows, base) -> np.ndarray:
    return np.stack([read_ppm_u8(os.path.join(base, r["image"])) for r in rows])


def _env_features(rows) -> np.ndarray:
    return np.stack([env_encode(float(r["irradiance"]), float(r["time_of_day"]))
                     for r in rows])


def _bins(rows) -> np.ndarray:
    return np.asarray([int(r["class_bin"]) for r in rows], dtype=np.int64)


def load_cls_train(manifest_path) -> ClsTrainData:
    rows = read_manifest(manifest_path)
    base = os.path.dirname(manifest_path)
    return ClsTrainData(images=_stack_images(rows, base), bins=_bins(rows),
                        env=_env_features(rows))


def load_seg_train(masks_manifest_path) -> SegTrainData:
    """Stage-3 training view: images, bins, env, candidate maps.

    The gt_mask column is present in the file but deliberately never read;
    the returned structure cannot carry it."""
    rows = read_manifest(masks_manifest_path)
    base = os.path.dirname(masks_manifest_path)
    cands = np.stack([read_pgm(os.path.join(base, r[MASKS_HEADER_EXTRA])) for r in rows])
    return SegTrainData(images=_stack_images(rows, base), bins=_bins(rows),
                        env=_env_features(rows), candidates=cands)


def load_eval(manifest_path, with_gt: bool = True) -> EvalData:
    rows = read_manifest(manifest_path)
    base = os.path.dirname(manifest_path)
    gts = None
    if with_gt:
        gts = np.stack([read_pgm(os.path.join(base, r["gt_mask"])) for r in rows])
    return EvalData(images=_stack_images(rows, base), bins=_bins(rows),
                    env=_env_features(rows),
                    power_loss=np.asarray([float(r["power_loss"]) for r in rows]),
                    gt_masks=gts)


def _save_params(path, params: dict[str, Tensor]) -> None:
    save_checkpoint(path, {k: v.data for k, v in params.items()})


def _load_params_into(path, params: dict[str, Tensor]) -> None:
    arrays = load_checkpoint(path)
    missing = set(params) ^ set(arrays)
    if missing:
        raise DataError(f"{path}: parameter names do not match the model ({sorted(missing)[:4]} ...)")
    for k, t in params.items():
        if tuple(arrays[k].shape) != tuple(t.data.shape):
            raise DataError(f"{path}: shape mismatch for {k}")
        t.data = arrays[k]


# ---------------------------------------------------------------------------
# stages

def _split_manifest(data_dir, n_train: int, n_val: int) -> None:
    rows = read_manifest(os.path.join(data_dir, "manifest.csv"))
    header = "image,gt_mask,power_loss,irradiance,time_of_day,class_bin,soiling_type"
    with open(os.path.join(data_dir, "manifest.csv")) as f:
        lines = f.read().splitlines()
    train, val = lines[1:n_train + 1], lines[n_train + 1:n_train + 1 + n_val]
    if len(train) < n_train or len(val) < n_val:
        raise UsageError("manifest smaller than requested split")
    for name, chunk in (("train.csv", train), ("val.csv", val)):
        with open(os.path.join(data_dir, name), "w") as f:
            f.write(header + "\n")
            f.write("\n".join(chunk) + ("\n" if chunk else ""))
    del rows


def stage_generate(cfg: Config) -> None:
    p = _paths(cfg)
    n = cfg["data.n_train"] + cfg["data.n_val"]
    generate_dataset(n, generator_spec(cfg), p["data"], seed=derive_seed(cfg["seed"], 0))
    _split_manifest(p["data"], cfg["data.n_train"], cfg["data.n_val"])


def stage_train_impactnet(cfg: Config) -> None:
    p = _paths(cfg)
    _require(os.path.join(p["data"], "train.csv"), "generate")
    os.makedirs(p["checkpoints"], exist_ok=True)
    os.makedirs(p["metrics"], exist_ok=True)
    ccfg = classifier_config(cfg)
    seed = derive_seed(cfg["seed"], 1)
    params = build_classifier(ccfg, SplitMix64(seed))
    data = load_cls_train(os.path.join(p["data"], "train.csv"))
    val = load_eval(os.path.join(p["data"], "val.csv"), with_gt=False)
    from .classifier import parameter_count
    print(f"impactnet[{ccfg.variant}] parameters: {parameter_count(params)}")
    history = train_classifier_loop(params, ccfg, TrainRecipe.from_config(cfg),
                                    data, val, seed,
                                    log=lambda r: print(f"  epoch {r['epoch']}: "
                                                        f"l_cls={r['l_cls']:.4f} "
                                                        f"val_top1={r['val_top1']:.4f}"))
    write_history_csv(os.path.join(p["metrics"], "impactnet_train.csv"), history,
                      ["epoch", "l_cls", "val_top1"])
    _save_params(os.path.join(p["checkpoints"], "impactnet.ckpt"), params)


def _candidate_maps_for(params, ccfg, images_u8, env, cfg, batch_size=32):
    """Pyramid masks + panel detection + discretization for a batch array."""
    out = []
    reduce = cfg["pyramid.reduce"]
    with no_grad():
        for start in range(0, len(images_u8), batch_size):
            chunk = images_u8[start:start + batch_size]
            x = Tensor(np.stack([(im.astype(np.float32) / 255.0).transpose(2, 0, 1)
                                 for im in chunk]))
            envt = Tensor(env[start:start + batch_size]) if ccfg.uses_env else None
            _, taps = classifier_forward(params, x, envt, ccfg, training=False)
            masks = pyramid_masks(taps, x.shape[2], x.shape[3], reduce=reduce)
            for i, im in enumerate(chunk):
                region = detect_panel(im.astype(np.float32) / 255.0)
                out.append(mask_to_label(masks[i], region))
    return np.stack(out)


def stage_make_masks(cfg: Config) -> None:
    p = _paths(cfg)
    ckpt = os.path.join(p["checkpoints"], "impactnet.ckpt")
    _require(ckpt, "train-impactnet")
    ccfg = classifier_config(cfg)
    params = build_classifier(ccfg, SplitMix64(0))
    _load_params_into(ckpt, params)
    os.makedirs(os.path.join(p["masks"], "cand"), exist_ok=True)

    for split in ("train", "val"):
        manifest = os.path.join(p["data"], f"{split}.csv")
        _require(manifest, "generate")
        rows = read_manifest(manifest)
        base = os.path.dirname(manifest)
        images = _stack_images(rows, base)
        env = _env_features(rows)
        cands = _candidate_maps_for(params, ccfg, images, env, cfg,
                                    cfg["training.batch_size"])
        out_rows = []
        for i, row in enumerate(rows):
            stem = os.path.splitext(os.path.basename(row["image"]))[0]
            rel = f"cand/{split}_{stem}.pgm"
            write_pgm(os.path.join(p["masks"], rel), cands[i])
            out_rows.append(row | {MASKS_HEADER_EXTRA: rel})
        header = list(rows[0].keys()) + [MASKS_HEADER_EXTRA] if rows else []
        with open(os.path.join(p["masks"], f"{split}.csv"), "w") as f:
            f.write(",".join(header) + "\n")
            for row in out_rows:
                f.write(",".join(row[h] for h in header) + "\n")
        # image/gt paths in masks manifests are relative to data/, fix them up
    _relink_mask_manifests(p)


def _relink_mask_manifests(p) -> None:
    """Rewrite image/gt paths in masks manifests to be relative to masks/."""
    for split in ("train", "val"):
        path = os.path.join(p["masks"], f"{split}.csv")
        rows = read_manifest(path)
        if not rows:
            continue
        header = list(rows[0].keys())
        rel = os.path.relpath(p["data"], p["masks"])
        with open(path, "w") as f:
            f.write(",".join(header) + "\n")
            for row in rows:
                row = dict(row)
                for col in ("image", "gt_mask"):
                    if not row[col].startswith(rel):
                        row[col] = os.path.join(rel, row[col])
                f.write(",".join(row[h] for h in header) + "\n")


def stage_train_maskfcnn(cfg: Config) -> None:
    p = _paths(cfg)
    masks_train = os.path.join(p["masks"], "train.csv")
    _require(masks_train, "make-masks")
    os.makedirs(p["metrics"], exist_ok=True)
    scfg = segmenter_config(cfg)
    seed = derive_seed(cfg["seed"], 2)

    encoder = None
    if cfg["model.warm_start"]:
        ckpt = os.path.join(p["checkpoints"], "impactnet.ckpt")
        _require(ckpt, "train-impactnet")
        encoder = build_classifier(scfg.classifier, SplitMix64(seed))
        _load_params_into(ckpt, encoder)
    params = build_segmenter(scfg, SplitMix64(seed), encoder=encoder)

    data = load_seg_train(masks_train)
    val = load_eval(os.path.join(p["data"], "val.csv"), with_gt=True)
    history = train_segmenter_loop(params, scfg, TrainRecipe.from_config(cfg),
                                   data, val, seed,
                                   log=lambda r: print(f"  epoch {r['epoch']}: "
                                                       f"l_cls={r['l_cls']:.4f} "
                                                       f"l_mask={r['l_mask']:.4f} "
                                                       f"val_top1={r['val_top1']:.4f} "
                                                       f"val_ji={r['val_ji']:.4f}"))
    write_history_csv(os.path.join(p["metrics"], "maskfcnn_train.csv"), history,
                      ["epoch", "l_cls", "l_mask", "val_top1", "val_ji"])
    _save_params(os.path.join(p["checkpoints"], "maskfcnn.ckpt"), params)


def stage_train_webnn(cfg: Config) -> None:
    p = _paths(cfg)
    os.makedirs(p["checkpoints"], exist_ok=True)
    os.makedirs(p["metrics"], exist_ok=True)
    os.makedirs(os.path.join(p["swatches"], "img"), exist_ok=True)
    seed = derive_seed(cfg["seed"], 3)
    per_class = cfg["webnn.swatches_per_class"]
    images, labels = generate_swatches(seed, per_class)
    from .panelgen import SOILING_TYPES
    with open(os.path.join(p["swatches"], "manifest.csv"), "w") as f:
        f.write("image,soiling_type\n")
        for i, (img, lab) in enumerate(zip(images, labels)):
            rel = f"img/w{i:05d}.ppm"
            write_ppm(os.path.join(p["swatches"], rel), img)
            f.write(f"{rel},{SOILING_TYPES[lab]}\n")
    hists = swatch_histograms(images)
    result = train_type_classifier(
        hists, labels, n_classes=len(SOILING_TYPES), seed=seed,
        lr=cfg["webnn.lr"], epochs=cfg["webnn.epochs"],
        batch_size=cfg["webnn.batch_size"],
        holdout_fraction=cfg["webnn.holdout_fraction"])
    print(f"webnn holdout accuracy: {result.holdout_accuracy:.4f}")
    write_history_csv(os.path.join(p["metrics"], "webnn_train.csv"),
                      result.history, ["epoch", "loss"])
    with open(os.path.join(p["metrics"], "webnn_holdout.txt"), "w") as f:
        f.write(f"holdout_accuracy={result.holdout_accuracy:.6f}\n")
    _save_params(os.path.join(p["checkpoints"], "webnn.ckpt"), result.params)


def stage_eval(cfg: Config) -> None:
    p = _paths(cfg)
    ckpt = os.path.join(p["checkpoints"], "impactnet.ckpt")
    _require(ckpt, "train-impactnet")
    os.makedirs(p["eval"], exist_ok=True)
    ccfg = classifier_config(cfg)
    params = build_classifier(ccfg, SplitMix64(0))
    _load_params_into(ckpt, params)
    val = load_eval(os.path.join(p["data"], "val.csv"), with_gt=True)

    top1, preds = evaluate_classifier(params, ccfg, val, cfg["training.batch_size"])
    _, confusion = metrics_mod.top1_and_confusion(preds, val.bins, ccfg.n_classes)
    alphas = np.linspace(0.0, cfg["eval.alpha_max"], cfg["eval.alpha_steps"])
    curve = metrics_mod.relaxed_curve(preds, val.power_loss, ccfg.n_classes, alphas)

    cands = _candidate_maps_for(params, ccfg, val.images, val.env, cfg,
                                cfg["training.batch_size"])
    macro = False
    ji_pyramid = metrics_mod.jaccard_mean(cands, val.gt_masks,
                                          average=cfg["ji.average"], macro=macro)
    extras = {"ji_pyramid": ji_pyramid}

    seg_ckpt = os.path.join(p["checkpoints"], "maskfcnn.ckpt")
    ji_main = None
    if os.path.exists(seg_ckpt):
        scfg = segmenter_config(cfg)
        sparams = build_segmenter(scfg, SplitMix64(0))
        _load_params_into(seg_ckpt, sparams)
        seg_top1, _, seg_maps = evaluate_segmenter(sparams, scfg, val,
                                                   cfg["training.batch_size"])
        ji_main = metrics_mod.jaccard_mean(seg_maps, val.gt_masks,
                                           average=cfg["ji.average"], macro=macro)
        extras["maskfcnn_top1"] = seg_top1
        extras["ji_maskfcnn"] = ji_main

    report = metrics_mod.EvalReport(top1=top1, confusion=confusion, relaxed=curve,
                                    ji_mean=ji_main, extras=extras)
    metrics_mod.write_report_csv(os.path.join(p["eval"], "report.csv"), report)
    metrics_mod.write_confusion_csv(os.path.join(p["eval"], "confusion.csv"), confusion)
    metrics_mod.write_report_text(os.path.join(p["eval"], "report.txt"), report,
                                  "validation metrics")
    print(f"eval: top1={top1:.4f} ji_pyramid={ji_pyramid:.4f}"
          + (f" ji_maskfcnn={ji_main:.4f}" if ji_main is not None else ""))


def infer_image(cfg: Config, image_path: str, irradiance: float, time_of_day: float,
                out_dir: str | None = None) -> dict:
    """Run the full inference path on one image; returns the JSON record."""
    p = _paths(cfg)
    seg_ckpt = os.path.join(p["checkpoints"], "maskfcnn.ckpt")
    web_ckpt = os.path.join(p["checkpoints"], "webnn.ckpt")
    _require(seg_ckpt, "train-maskfcnn")
    _require(web_ckpt, "train-webnn")
    if not os.path.exists(image_path):
        raise DataError(f"cannot read image: {image_path}")
    out_dir = out_dir or p["infer"]
    os.makedirs(out_dir, exist_ok=True)

    scfg = segmenter_config(cfg)
    sparams = build_segmenter(scfg, SplitMix64(0))
    _load_params_into(seg_ckpt, sparams)
    from .soiltype import build_type_classifier
    from .panelgen import SOILING_TYPES
    wparams = build_type_classifier(len(SOILING_TYPES), SplitMix64(0))
    _load_params_into(web_ckpt, wparams)

    start = time.perf_counter()
    img = read_ppm_u8(image_path).astype(np.float32) / 255.0
    x = Tensor(img.transpose(2, 0, 1)[None])
    env = None
    if scfg.classifier.uses_env:
        env = Tensor(env_encode(irradiance, time_of_day)[None])
    with no_grad():
        logits, mask_logits, _ = segmenter_forward(sparams, x, env, scfg, training=False)
    class_bin = int(np.argmax(logits.data[0]))
    label_map = predict_label_maps(mask_logits)[0]
    cov = coverage(label_map)
    stype = classify_roi(wparams, img, label_map)
    rec = recommend(class_bin, scfg.classifier.n_classes, cov, stype)
    latency_ms = (time.perf_counter() - start) * 1000.0

    map_path = os.path.join(out_dir, "label_map.pgm")
    write_pgm(map_path, label_map)
    n_classes = scfg.classifier.n_classes
    record = {
        "class_bin": class_bin,
        "bin_range": [class_bin / n_classes, (class_bin + 1) / n_classes],
        "label_map": map_path,
        "coverage": round(cov, 6),
        "soiling_type": stype,
        "recommendation": {"action": rec.action, "priority": rec.priority,
                           "rationale": rec.rationale},
        "latency_ms": round(latency_ms, 3),
    }
    with open(os.path.join(out_dir, "result.json"), "w") as f:
        json.dump(record, f, indent=2, sort_keys=True)
        f.write("\n")
    return record


def stage_infer(cfg: Config) -> None:
    image = cfg["infer.image"]
    if not image:
        raise UsageError("set infer.image=<path to PPM> (via config or --set)")
    record = infer_image(cfg, image, cfg["infer.irradiance"], cfg["infer.time_of_day"])
    print(json.dumps(record, indent=2, sort_keys=True))


# ---------------------------------------------------------------------------
# runner

_STAGE_FNS = {
    "generate": stage_generate,
    "train-impactnet": stage_train_impactnet,
    "make-masks": stage_make_masks,
    "train-maskfcnn": stage_train_maskfcnn,
    "train-webnn": stage_train_webnn,
    "eval": stage_eval,
    "infer": stage_infer,
}


def _update_lock(cfg: Config, stage: str) -> None:
    p = _paths(cfg)
    entries: dict[str, str] = {}
    if os.path.exists(p["lock"]):
        for line in open(p["lock"]):
            name, rest = line.split(" ", 1)
            entries[name] = rest.rstrip("\n")
    entries[stage] = f"config_sha256={cfg.hash()} seed={cfg['seed']}"
    with open(p["lock"], "w") as f:
        for name in STAGES:
            if name in entries:
                f.write(f"{name} {entries[name]}\n")


def run_stage(stage: str, cfg: Config) -> int:
    """Execute one stage under the run-directory lock; returns an exit code."""
    if stage not in _STAGE_FNS:
        raise UsageError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    p = _paths(cfg)
    os.makedirs(p["run"], exist_ok=True)
    try:
        fd = os.open(p["sentinel"], os.O_CREAT | os.O_EXCL | os.O_WRONLY)
    except FileExistsError:
        raise UsageError(
            f"another stage appears to be running in {p['run']} "
            f"(delete {p['sentinel']} if that is stale)") from None
    try:
        os.write(fd, f"{stage} pid={os.getpid()}\n".encode())
        os.close(fd)
        _STAGE_FNS[stage](cfg)
        _update_lock(cfg, stage)
    finally:
        os.unlink(p["sentinel"])
    return 0
