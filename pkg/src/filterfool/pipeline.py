"""Batch runs: attack a list of images, evaluate the results, apply defenses.

A run directory looks like::

    run.json             resolved config and its hash
    adv/<id>.png         adversarial images (8-bit)
    results/<id>.json    one attack record per image
    traces/<id>.jsonl    per-iteration losses (FilterFool with trace = true)
    errors.log           per-image failures, if any

Runs are resumable: images whose result file already exists are skipped.
"""

import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from multiprocessing import get_context
from pathlib import Path

import numpy as np
import torch
from PIL import Image as PILImage

from .attack import AttackConfig, filterfool_attack
from .baselines import bim, fgsm, ll_target, p_fgsm
from .classifiers import load_model, predict_topk
from .config import ConfigError, read_image_list
from .defenses import apply_defense
from .eval import EvalRecord
from .image_core import quantize8, save_png
from .taxonomy import imagenet_hypernyms, imagenet_taxonomy, load_taxonomy, wu_palmer
from .toy import toy_hypernyms, toy_taxonomy

log = logging.getLogger(__name__)

RESIZE_RATIO = 256 / 224


def load_input(path, size):
    """RGB image in [0, 1] at ``size`` (H, W).

    Images already at ``size`` are used as is; otherwise the shorter side is
    resized to ``size * 256 / 224`` and the centre is cropped.
    """
    with PILImage.open(path) as im:
        im = im.convert("RGB")
        h, w = size
        if (im.height, im.width) != (h, w):
            short = round(min(h, w) * RESIZE_RATIO)
            scale = short / min(im.width, im.height)
            im = im.resize((max(w, round(im.width * scale)), max(h, round(im.height * scale))), PILImage.BILINEAR)
            left, top = (im.width - w) // 2, (im.height - h) // 2
            im = im.crop((left, top, left + w, top + h))
        return np.asarray(im, dtype=np.float64) / 255.0


def image_id(rel):
    return str(Path(rel).with_suffix("")).replace(os.sep, "__").replace("/", "__")


def sample_per_class(entries, per_class=3, seed=0):
    """Deterministic subset with ``per_class`` images for every label.

    ``entries`` are (path, label) pairs; the result is sorted by label then path.
    """
    by_label = {}
    for path, label in entries:
        if label is None:
            raise ValueError(f"{path} has no label")
        by_label.setdefault(label, []).append(path)
    rng = np.random.default_rng(seed)
    out = []
    for label in sorted(by_label):
        paths = sorted(by_label[label])
        pick = rng.choice(len(paths), size=min(per_class, len(paths)), replace=False)
        out += [(paths[i], label) for i in sorted(pick)]
    return out


def taxonomy_for(num_labels, path=None):
    """(taxonomy, hypernym graph or None) for a model with ``num_labels`` outputs."""
    if path is not None:
        return load_taxonomy(path), None
    if num_labels == 10:
        return toy_taxonomy(), toy_hypernyms()
    if num_labels == 1000:
        return imagenet_taxonomy(), imagenet_hypernyms()
    raise ConfigError(f"no built-in taxonomy for {num_labels} labels; set 'taxonomy' in the config")


def run_attack_on_image(name, acfg, img, model, tax, trace_file=None):
    """Adversarial image (8-bit) and an info dict for one input."""
    if isinstance(acfg, AttackConfig):
        res = filterfool_attack(img, model, tax, acfg, trace_file=trace_file)
        return res.adversarial, res.to_dict()
    y = predict_topk(model, img).label
    if name == "fgsm":
        adv = fgsm(img, model, y, acfg.epsilon)
    elif name == "bim":
        adv = bim(img, model, y, acfg)
    elif name == "ll-fgsm":
        adv = fgsm(img, model, ll_target(model, img), acfg.epsilon, direction=-1)
    elif name == "ll-bim":
        adv = bim(img, model, ll_target(model, img), acfg, direction=-1)
    elif name == "p-fgsm":
        adv = p_fgsm(img, model, tax, acfg)
    else:
        raise ConfigError(f"unknown attack {name!r}")
    adv = quantize8(adv)
    pred = predict_topk(model, adv).label
    info = {
        "original_label": y,
        "adversarial_label": pred,
        "original_class": int(tax.class_of[y]),
        "adversarial_class": int(tax.class_of[pred]),
        "success": bool(pred != y),
    }
    return adv, info


# worker state, set once per process
_STATE = {}


def _init_worker(cfg):
    torch.set_num_threads(1)
    model = load_model(cfg.source_model, cfg.cache_dir, cfg.offline)
    _STATE.update(cfg=cfg, model=model, tax=taxonomy_for(model.meta.num_labels, cfg.taxonomy)[0])


def _attack_task(item):
    cfg, model, tax = _STATE["cfg"], _STATE["model"], _STATE["tax"]
    rel, label = item
    iid = image_id(rel)
    out = Path(cfg.output_dir)
    try:
        img = load_input(Path(cfg.data_root) / rel, model.meta.input_size)
        trace = getattr(cfg.attack, "trace", False)
        if trace:
            (out / "traces").mkdir(parents=True, exist_ok=True)
            with open(out / "traces" / f"{iid}.jsonl", "w") as fh:
                adv, info = run_attack_on_image(cfg.attack_name, cfg.attack, img, model, tax, fh)
        else:
            adv, info = run_attack_on_image(cfg.attack_name, cfg.attack, img, model, tax)
    except (OSError, ValueError, RuntimeError) as exc:
        return iid, f"{type(exc).__name__}: {exc}"
    save_png(adv, out / "adv" / f"{iid}.png")
    record = {"config_hash": cfg.hash, "image_id": iid, "path": rel, "true_label": label, **info}
    tmp = out / "results" / f"{iid}.json.tmp"
    tmp.write_text(json.dumps(record, sort_keys=True, indent=1) + "\n")
    tmp.replace(out / "results" / f"{iid}.json")
    return iid, None


def _check_run_dir(out, cfg_hash):
    manifest = out / "run.json"
    if manifest.exists():
        old = json.loads(manifest.read_text()).get("config_hash")
        if old != cfg_hash:
            raise ConfigError(f"{out} holds a run with config hash {old}, this config hashes to {cfg_hash}")


def run_attack(cfg):
    """Attack every listed image not attacked yet. Returns (done, skipped, failed ids)."""
    out = Path(cfg.output_dir)
    items = read_image_list(cfg.image_list)
    _check_run_dir(out, cfg.hash)
    for sub in ("adv", "results"):
        (out / sub).mkdir(parents=True, exist_ok=True)
    manifest = {
        "config_hash": cfg.hash,
        "config": cfg.resolved(),
        "data_root": os.path.relpath(Path(cfg.data_root).resolve(), out.resolve()),
        "image_list": os.path.relpath(Path(cfg.image_list).resolve(), out.resolve()),
    }
    (out / "run.json").write_text(json.dumps(manifest, sort_keys=True, indent=1) + "\n")
    todo = [it for it in items if not (out / "results" / f"{image_id(it[0])}.json").exists()]
    skipped = len(items) - len(todo)
    failed = []
    if todo:
        if cfg.workers > 1:
            with ProcessPoolExecutor(cfg.workers, mp_context=get_context("fork"), initializer=_init_worker, initargs=(cfg,)) as ex:
                results = list(ex.map(_attack_task, todo))
        else:
            _init_worker(cfg)
            results = []
            for i, it in enumerate(todo):
                results.append(_attack_task(it))
                log.info("%d/%d %s", i + 1, len(todo), results[-1][0])
        failed = [(iid, err) for iid, err in results if err]
    if failed:
        with open(out / "errors.log", "a") as fh:
            for iid, err in failed:
                fh.write(f"{iid}\t{err}\n")
    return len(todo) - len(failed), skipped, failed


def read_run(run_dir):
    """(manifest, {image_id: result}) for a run directory."""
    run_dir = Path(run_dir)
    manifest_path = run_dir / "run.json"
    if not manifest_path.exists():
        raise ConfigError(f"{run_dir} is not a run directory (no run.json)")
    manifest = json.loads(manifest_path.read_text())
    results = {}
    for p in sorted((run_dir / "results").glob("*.json")):
        r = json.loads(p.read_text())
        if r["config_hash"] != manifest["config_hash"]:
            raise ConfigError(f"{p} was written by a different config")
        results[r["image_id"]] = r
    return manifest, results


def evaluate_run(run_dir, models, defenses, cache_dir=None, offline=False, taxonomy_path=None):
    """EvalRecords for every attacked image, eval model and defense (None first).

    The original label on each eval model is its own prediction on the clean
    image, so off-source cells measure transferability.
    """
    run_dir = Path(run_dir)
    manifest, results = read_run(run_dir)
    cfg = manifest["config"]
    data_root = run_dir / manifest["data_root"]
    records = []
    for name in models:
        model = load_model(name, cache_dir, offline)
        tax, graph = taxonomy_for(model.meta.num_labels, taxonomy_path)
        for iid, res in results.items():
            clean = load_input(data_root / res["path"], model.meta.input_size)
            adv = load_input(run_dir / "adv" / f"{iid}.png", model.meta.input_size)
            y = predict_topk(model, clean).label
            for d in [None, *defenses]:
                pred = predict_topk(model, apply_defense(adv, d), k=min(5, tax.D))
                labels = [label for label, _ in pred.topk]
                wu = wu_palmer(graph, tax.wnid[y], tax.wnid[labels[0]]) if graph is not None else None
                records.append(
                    EvalRecord(
                        image_id=iid,
                        attack_name=cfg["attack_name"],
                        source_model=cfg["source_model"],
                        eval_model=name,
                        original_label=y,
                        original_class=int(tax.class_of[y]),
                        adversarial_label=labels[0],
                        adversarial_class=int(tax.class_of[labels[0]]),
                        topk_labels=labels,
                        wu_similarity=wu,
                        defense=str(d) if d is not None else None,
                        true_label=res.get("true_label"),
                    )
                )
    return manifest["config_hash"], records


def defend_dir(in_dir, out_dir, spec):
    """Apply one defense to every PNG under ``in_dir``; returns the file count."""
    in_dir, out_dir = Path(in_dir), Path(out_dir)
    paths = sorted(in_dir.rglob("*.png"))
    for p in paths:
        with PILImage.open(p) as im:
            img = np.asarray(im.convert("RGB"), dtype=np.float64) / 255.0
        save_png(apply_defense(img, spec), out_dir / p.relative_to(in_dir))
    return len(paths)
