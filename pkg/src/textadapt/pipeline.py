"""Two-stage adaptation: adversarial pretraining, filtered pseudo-labels, fine-tuning."""

from __future__ import annotations

import hashlib
import json
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from scipy import ndimage

from textadapt import geometry
from textadapt.core import GrayImage, PixelPartition, PseudoLabel, QuadBox, ScoreMap, boxes_mask
from textadapt.evaluation import evaluate
from textadapt.io import read_icdar_file, read_partition, write_icdar_file, write_smap
from textadapt.losses import LossConfig, full_partition, select_negatives
from textadapt.strokestats import TstConfig, filter_boxes, rejection_report
from textadapt.swt import SwtConfig, stroke_width_transform
from textadapt.toymodel import (
    AtaConfig,
    Optimizers,
    Sample,
    ToyModel,
    TrainResult,
    extract_features,
    init_model,
    predict_scoremap,
    pretrain,
    train_loop,
)

log = logging.getLogger(__name__)

_EIGHT = np.ones((3, 3), dtype=int)


def extract_boxes(scores, score_threshold: float = 0.8, min_box_area: float = 16.0) -> List[QuadBox]:
    """Threshold, 8-connected components, min-area rotated rectangle per component.

    Each box's confidence is the mean score over its component.
    """
    if not 0 < score_threshold < 1:
        raise ValueError("score_threshold must lie in (0, 1)")
    data = np.asarray(getattr(scores, "data", scores), dtype=np.float64)
    labels, n = ndimage.label(data > score_threshold, structure=_EIGHT)
    if n == 0:
        return []
    boxes = []
    objects = ndimage.find_objects(labels)
    means = ndimage.mean(data, labels, index=np.arange(1, n + 1))
    for lab, sl in enumerate(objects, start=1):
        comp = labels[sl] == lab
        # hull over pixel corners of boundary pixels only
        edge = comp & ~ndimage.binary_erosion(comp, structure=np.ones((3, 3)))
        rr, cc = np.nonzero(edge)
        rr = rr + sl[0].start
        cc = cc + sl[1].start
        corners = np.concatenate(
            [np.stack([cc + dx, rr + dy], axis=1) for dx in (-0.5, 0.5) for dy in (-0.5, 0.5)]
        )
        rect = geometry.min_area_rect(corners)
        if geometry.polygon_area(rect) < min_box_area:
            continue
        conf = float(np.clip(means[lab - 1], 0.0, 1.0))
        boxes.append(QuadBox(rect, confidence=conf))
    return boxes


def detect(model: ToyModel, image: GrayImage, tst: TstConfig = TstConfig(),
           features: Optional[np.ndarray] = None) -> List[QuadBox]:
    return extract_boxes(predict_scoremap(model, image, features), tst.score_threshold,
                         tst.min_box_area)


# ---------------------------------------------------------------- pseudo-labels


@dataclass
class PseudoLabelStats:
    image_id: str
    extracted: int
    kept: int
    rejected_sigma: int
    rejected_sws: int
    low_evidence: int
    negative_kept: int
    ignored: int
    positive: int
    report: str = ""


def _pseudo_label_one(args):
    model, image_id, image, features, tst, swt_cfg = args
    scores = predict_scoremap(model, image, features)
    boxes = extract_boxes(scores, tst.score_threshold, tst.min_box_area)
    swmap = stroke_width_transform(image, swt_cfg)
    kept, stats, rejected = filter_boxes(boxes, swmap, tst)
    positive = boxes_mask(kept, image.width, image.height)
    partition = select_negatives(scores, ~positive, tst.eta)
    label = PseudoLabel(image_id, kept, partition)
    counts = partition.counts()
    st = PseudoLabelStats(
        image_id=image_id,
        extracted=len(boxes),
        kept=len(kept),
        rejected_sigma=sum(1 for _, r in rejected if r == "SIGMA"),
        rejected_sws=sum(1 for _, r in rejected if r == "SWS"),
        low_evidence=sum(1 for s in stats if s.low_evidence),
        negative_kept=counts["NEGATIVE_KEPT"],
        ignored=counts["IGNORED"],
        positive=counts["POSITIVE"],
        report=rejection_report(stats, tst),
    )
    return label, st


def generate_pseudo_labels(
    model: ToyModel,
    target_images: Sequence[Tuple[str, GrayImage]],
    tst: TstConfig = TstConfig(),
    swt_cfg: SwtConfig = SwtConfig(),
    features: Optional[Sequence[np.ndarray]] = None,
    jobs: int = 1,
) -> Tuple[List[PseudoLabel], List[PseudoLabelStats]]:
    """Per image: predict, extract boxes, drop boxes failing the stroke filter,
    mark kept-box pixels POSITIVE and keep the least confident ``eta`` share
    of the remaining pixels as negatives."""
    feats = features if features is not None else [None] * len(target_images)
    work = [(model, i, img, f, tst, swt_cfg) for (i, img), f in zip(target_images, feats)]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as ex:
            results = list(ex.map(_pseudo_label_one, work))
    else:
        results = [_pseudo_label_one(w) for w in work]
    return [r[0] for r in results], [r[1] for r in results]


def pseudo_samples(labels: Sequence[PseudoLabel], features: Sequence[np.ndarray]) -> List[Sample]:
    return [
        Sample(lab.image_id, f, lab.score_target, lab.partition.data)
        for lab, f in zip(labels, features)
    ]


def save_pseudo_labels(labels: Sequence[PseudoLabel], out_dir, meta: dict) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for lab in labels:
        write_icdar_file(lab.boxes, os.path.join(out_dir, f"{lab.image_id}.txt"))
        write_smap(lab.partition.data.astype(np.float32), os.path.join(out_dir, f"{lab.image_id}.smap"))
    manifest = dict(meta)
    manifest["image_ids"] = [lab.image_id for lab in labels]
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_pseudo_labels(label_dir) -> List[PseudoLabel]:
    with open(os.path.join(label_dir, "manifest.json")) as fh:
        manifest = json.load(fh)
    out = []
    for image_id in manifest["image_ids"]:
        boxes = read_icdar_file(os.path.join(label_dir, f"{image_id}.txt"), scored="auto")
        part = read_partition(os.path.join(label_dir, f"{image_id}.smap"))
        out.append(PseudoLabel(image_id, boxes, part))
    return out


def config_hash(*configs) -> str:
    blob = json.dumps([_jsonable(c) for c in configs], sort_keys=True)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def _jsonable(cfg):
    d = asdict(cfg)
    return {k: (v.value if hasattr(v, "value") else v) for k, v in d.items()}


# ---------------------------------------------------------------- training stages


def source_samples(items: Sequence[Tuple[str, GrayImage, List[QuadBox]]]) -> List[Sample]:
    """Labeled samples; don't-care boxes become IGNORED pixels."""
    out = []
    for image_id, image, boxes in items:
        h, w = image.shape
        gt = boxes_mask([b for b in boxes if not b.ignore_flag], w, h).astype(np.float64)
        ignore = boxes_mask([b for b in boxes if b.ignore_flag], w, h)
        part = full_partition(gt, ignore & (gt == 0)).data if ignore.any() else None
        out.append(Sample(image_id, extract_features(image), gt, part))
    return out


def unlabeled_samples(items: Sequence[Tuple[str, GrayImage]]) -> List[Sample]:
    return [Sample(image_id, extract_features(image)) for image_id, image in items]


def fine_tune(
    model: ToyModel,
    source_set: Sequence[Sample],
    pseudo_target: Sequence[Sample],
    cfg: AtaConfig,
    loss_cfg: LossConfig = LossConfig(),
    ata: bool = True,
    callback=None,
    optimizers: Optional[Optimizers] = None,
) -> TrainResult:
    """Continue training with the weak loss on pseudo-labeled target images.

    ``ata=False`` turns the domain branch off for this stage. ``optimizers``
    from the pretraining run carry its Adam moments over.
    """
    if cfg.iters == 0:
        return TrainResult(model, [], optimizers)
    if not ata:
        cfg = replace(cfg, lam=0.0)
    return train_loop(model, source_set, pseudo_target, cfg, loss_cfg, callback, optimizers)


@dataclass(frozen=True)
class AdaptConfig:
    pretrain: AtaConfig = AtaConfig()
    finetune_iters: int = 2000
    tst: TstConfig = TstConfig()
    swt: SwtConfig = SwtConfig()
    loss: LossConfig = LossConfig()
    self_train: bool = True
    ata_in_finetune: bool = False
    rounds: int = 1

    def finetune_cfg(self) -> AtaConfig:
        return replace(self.pretrain, iters=self.finetune_iters, seed=self.pretrain.seed + 1)


def adapt(
    source: Sequence[Sample],
    target_images: Sequence[Tuple[str, GrayImage]],
    cfg: AdaptConfig = AdaptConfig(),
    target_features: Optional[Sequence[np.ndarray]] = None,
    eval_set=None,
    jobs: int = 1,
    stage1: Optional[TrainResult] = None,
):
    """Pretrain with alignment, then (optionally) pseudo-label and fine-tune.

    With ``self_train=False`` the second stage still runs for the same
    number of iterations, on unlabeled target images, so every variant
    sees the same training budget. A finished ``stage1`` (from ``pretrain``
    with ``cfg.pretrain``) skips the first stage. Returns ``(model, report)``.
    """
    feats = (
        list(target_features)
        if target_features is not None
        else [extract_features(img) for _, img in target_images]
    )
    unlabeled = [Sample(i, f) for (i, _), f in zip(target_images, feats)]
    report: Dict = {"config": {
        "pretrain": _jsonable(cfg.pretrain),
        "finetune_iters": cfg.finetune_iters,
        "tst": _jsonable(cfg.tst),
        "swt": _jsonable(cfg.swt),
        "loss": _jsonable(cfg.loss),
        "self_train": cfg.self_train,
        "ata_in_finetune": cfg.ata_in_finetune,
        "rounds": cfg.rounds,
    }}
    if stage1 is None:
        stage1 = pretrain(source, unlabeled, cfg.pretrain, cfg.loss,
                          model=init_model(cfg.pretrain.seed))
    model, opt = stage1.model, stage1.optimizers
    report["pretrain"] = {"final": stage1.history[-1] if stage1.history else None}
    if eval_set is not None:
        report["pretrain"]["target_eval"] = evaluate_model(model, eval_set, cfg.tst).as_dict()

    ft_cfg = cfg.finetune_cfg()
    rounds = []
    for r in range(max(cfg.rounds, 1) if cfg.self_train else 1):
        if cfg.self_train:
            labels, stats = generate_pseudo_labels(model, target_images, cfg.tst, cfg.swt, feats, jobs)
            targets = pseudo_samples(labels, feats)
            filt = {
                "extracted": sum(s.extracted for s in stats),
                "kept": sum(s.kept for s in stats),
                "rejected_sigma": sum(s.rejected_sigma for s in stats),
                "rejected_sws": sum(s.rejected_sws for s in stats),
                "low_evidence": sum(s.low_evidence for s in stats),
                "negative_kept": sum(s.negative_kept for s in stats),
                "ignored": sum(s.ignored for s in stats),
                "positive": sum(s.positive for s in stats),
            }
        else:
            targets, filt = unlabeled, None
        stage2 = fine_tune(model, source, targets, replace(ft_cfg, seed=ft_cfg.seed + r), cfg.loss,
                           ata=cfg.ata_in_finetune, optimizers=opt)
        model, opt = stage2.model, stage2.optimizers
        entry = {"round": r, "filter": filt,
                 "final": stage2.history[-1] if stage2.history else None}
        if eval_set is not None:
            entry["target_eval"] = evaluate_model(model, eval_set, cfg.tst).as_dict()
        rounds.append(entry)
    report["finetune"] = rounds
    return model, report


def predict_boxes(model: ToyModel, items, tst: TstConfig = TstConfig(), features=None):
    feats = features if features is not None else [None] * len(items)
    return {item[0]: detect(model, item[1], tst, f) for item, f in zip(items, feats)}


def evaluate_model(model: ToyModel, labeled_items, tst: TstConfig = TstConfig(),
                   iou_threshold: float = 0.5, features=None):
    preds = predict_boxes(model, labeled_items, tst, features)
    gts = {image_id: boxes for image_id, _, boxes in labeled_items}
    return evaluate(preds, gts, iou_threshold)
