"""Desk-scale experiments: domain probes and the four-way adaptation ablation.

The ablation trains two stage-one models (lambda 0 and lambda > 0) and
continues each one twice, with and without pseudo-labels, so that all four
variants get the same number of updates:

* baseline   lambda 0,  second stage on unlabeled target images
* ata        lambda,    second stage on unlabeled target images
* tst        lambda 0,  second stage on pseudo-labeled target images
* combined   lambda,    second stage on pseudo-labeled target images
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np
from sklearn.linear_model import LogisticRegression
from sklearn.model_selection import StratifiedKFold, cross_val_score
from sklearn.pipeline import make_pipeline
from sklearn.preprocessing import StandardScaler

from textadapt.core import GrayImage, QuadBox
from textadapt.datagen import DESK, SPLITS, DatagenConfig, Domain, image_name, render_scene
from textadapt.pipeline import AdaptConfig, adapt, evaluate_model, source_samples
from textadapt.strokestats import TstConfig
from textadapt.toymodel import (
    AtaConfig,
    Sample,
    ToyModel,
    extract_features,
    init_model,
    pooled_embedding,
    pretrain,
)

# split codes for the held-out probe scenes, disjoint from the dataset splits
PROBE_SOURCE, PROBE_TARGET = 7, 8

VARIANTS = ("baseline", "ata", "tst", "combined")

# desk recipe: 40 source, 40 unlabeled target, 30 target test scenes at 128 px;
# 600 + 600 iterations on 64 px crops with a decaying lr
DESK_COUNTS = (40, 40, 30)
DESK_PRETRAIN = AtaConfig(lam=0.2, iters=600, crop=64, lr_anneal=True)
DESK_FINETUNE_ITERS = 600
PROBE_IMAGES = 40

Labeled = List[Tuple[str, GrayImage, List[QuadBox]]]


@dataclass
class DeskData:
    source: Labeled
    target_train: Labeled  # boxes kept for analysis; training never reads them
    target_test: Labeled
    seed: int
    cfg: DatagenConfig


def desk_data(seed: int, cfg: DatagenConfig, n_source: int, n_target_train: int,
              n_target_test: int) -> DeskData:
    """The scenes ``make_dataset`` would write, rendered in memory."""
    def split(name, n):
        dom = Domain.SOURCE if name == "source" else Domain.TARGET
        code = SPLITS.index(name)
        return [(image_name(i),) + render_scene(dom, seed, cfg, index=i, split_code=code)
                for i in range(n)]

    return DeskData(split("source", n_source), split("target_train", n_target_train),
                    split("target_test", n_target_test), seed, cfg)


def probe_scenes(seed: int, cfg: DatagenConfig, n: int) -> Tuple[Labeled, Labeled]:
    """``n`` held-out source and ``n`` held-out target scenes with their boxes."""
    def scenes(dom, code):
        return [(image_name(i),) + render_scene(dom, seed, cfg, index=i, split_code=code)
                for i in range(n)]

    return scenes(Domain.SOURCE, PROBE_SOURCE), scenes(Domain.TARGET, PROBE_TARGET)


def probe_features(seed: int, cfg: DatagenConfig, n: int):
    src, tgt = probe_scenes(seed, cfg, n)
    return ([extract_features(img) for _, img, _ in src],
            [extract_features(img) for _, img, _ in tgt])


def probe_accuracy(x_source: np.ndarray, x_target: np.ndarray, folds: int = 5,
                   seed: int = 0) -> float:
    """Held-out accuracy of a fresh standardized logistic-regression domain probe.

    Mean over stratified k-fold splits; chance is 0.5 for equal class sizes.
    """
    x = np.vstack([x_source, x_target]).astype(np.float64)
    y = np.r_[np.zeros(len(x_source)), np.ones(len(x_target))]
    cv = StratifiedKFold(folds, shuffle=True, random_state=seed)
    clf = make_pipeline(StandardScaler(), LogisticRegression(max_iter=2000))
    return float(cross_val_score(clf, x, y, cv=cv).mean())


def raw_statistics(features: np.ndarray) -> np.ndarray:
    """Per-channel mean and std of an image's handcrafted features."""
    f = features.reshape(-1, features.shape[-1])
    return np.concatenate([f.mean(axis=0), f.std(axis=0)])


def raw_separability(src_feats: Sequence[np.ndarray], tgt_feats: Sequence[np.ndarray]) -> float:
    """Probe accuracy on untrained feature statistics: how far apart the domains start."""
    return probe_accuracy(np.array([raw_statistics(f) for f in src_feats]),
                          np.array([raw_statistics(f) for f in tgt_feats]))


def embedding_probe(model: ToyModel, src_feats, tgt_feats) -> float:
    """Probe accuracy on the frozen backbone's pooled embeddings."""
    return probe_accuracy(np.array([pooled_embedding(model, f) for f in src_feats]),
                          np.array([pooled_embedding(model, f) for f in tgt_feats]))


@dataclass
class VariantResult:
    name: str
    target: Dict[str, float]
    source: Dict[str, float]
    filter: Optional[dict] = None


@dataclass
class AblationResult:
    seed: int
    variants: Dict[str, VariantResult]
    pretrained: Dict[float, ToyModel] = field(default_factory=dict)
    seconds: float = 0.0

    def fscore(self, name: str) -> float:
        return self.variants[name].target["fscore"]

    def gains(self) -> Dict[str, float]:
        base = self.fscore("baseline")
        return {v: self.fscore(v) - base for v in VARIANTS if v != "baseline"}

    def summary(self) -> str:
        parts = [f"{v} {self.fscore(v):.3f}" for v in VARIANTS]
        return f"seed {self.seed}: " + " ".join(parts) + f" ({self.seconds:.0f} s)"


def run_ablation(
    data: DeskData,
    pretrain_cfg: AtaConfig,
    finetune_iters: int,
    tst: TstConfig = TstConfig(),
    source_eval: int = 15,
    variants: Sequence[str] = VARIANTS,
    ata_in_finetune: bool = False,
    rounds: int = 1,
) -> AblationResult:
    """Train and score the four variants on one desk dataset.

    ``pretrain_cfg.lam`` is the alignment weight of the ATA variants; the
    other two use 0. With several ``rounds`` each round re-labels the target
    and trains ``finetune_iters`` more steps. Scores are corpus P/R/F on target_test and on the
    first ``source_eval`` source images.
    """
    t0 = time.perf_counter()
    source = source_samples(data.source)
    target = [(i, img) for i, img, _ in data.target_train]
    tfeats = [extract_features(img) for _, img in target]
    unlabeled = [Sample(i, f) for (i, _), f in zip(target, tfeats)]
    test_feats = [extract_features(img) for _, img, _ in data.target_test]
    src_eval = data.source[:source_eval]
    src_feats = [s.features for s in source[:source_eval]]

    lams = {"baseline": 0.0, "tst": 0.0, "ata": pretrain_cfg.lam, "combined": pretrain_cfg.lam}
    stage1 = {}
    for lam in sorted({lams[v] for v in variants}):
        cfg = replace(pretrain_cfg, lam=lam)
        stage1[lam] = pretrain(source, unlabeled, cfg, model=init_model(cfg.seed))

    out = {}
    for name in variants:
        lam = lams[name]
        cfg = AdaptConfig(pretrain=replace(pretrain_cfg, lam=lam), finetune_iters=finetune_iters,
                          tst=tst, self_train=name in ("tst", "combined"),
                          ata_in_finetune=ata_in_finetune, rounds=rounds)
        model, report = adapt(source, target, cfg, target_features=tfeats, stage1=stage1[lam])
        out[name] = VariantResult(
            name,
            evaluate_model(model, data.target_test, tst, features=test_feats).as_dict(),
            evaluate_model(model, src_eval, tst, features=src_feats).as_dict(),
            report["finetune"][-1]["filter"],
        )
    return AblationResult(data.seed, out, {lam: r.model for lam, r in stage1.items()},
                          time.perf_counter() - t0)


@dataclass
class ConfusionResult:
    seed: int
    lam: float
    raw_accuracy: float  # probe on untrained feature statistics
    probe: Dict[float, float]  # lambda -> embedding probe accuracy
    source_f: Dict[float, float]  # lambda -> F on held-out source scenes
    seconds: float = 0.0

    def source_drop(self) -> float:
        """Relative source F loss of the aligned run against the lambda 0 run."""
        f0 = self.source_f[0.0]
        return (f0 - self.source_f[self.lam]) / f0 if f0 > 0 else 0.0


def domain_confusion(
    seed: int,
    cfg: DatagenConfig = DESK,
    pretrain_cfg: AtaConfig = DESK_PRETRAIN,
    counts: Tuple[int, int] = DESK_COUNTS[:2],
    probe_images: int = PROBE_IMAGES,
    tst: TstConfig = TstConfig(),
) -> ConfusionResult:
    """Pretrain at lambda 0 and at ``pretrain_cfg.lam``, then probe both backbones.

    Probes and source scores use held-out scenes that neither run trained on.
    """
    t0 = time.perf_counter()
    data = desk_data(seed, cfg, counts[0], counts[1], 0)
    source = source_samples(data.source)
    unlabeled = [Sample(i, extract_features(img)) for i, img, _ in data.target_train]
    src_items, tgt_items = probe_scenes(seed, cfg, probe_images)
    src_feats = [extract_features(img) for _, img, _ in src_items]
    tgt_feats = [extract_features(img) for _, img, _ in tgt_items]
    probe, source_f = {}, {}
    for lam in (0.0, pretrain_cfg.lam):
        run = replace(pretrain_cfg, lam=lam, seed=seed)
        model = pretrain(source, unlabeled, run, model=init_model(seed)).model
        probe[lam] = embedding_probe(model, src_feats, tgt_feats)
        source_f[lam] = evaluate_model(model, src_items, tst, features=src_feats).fscore
    return ConfusionResult(seed, pretrain_cfg.lam, raw_separability(src_feats, tgt_feats),
                           probe, source_f, time.perf_counter() - t0)


def desk_ablation(seed: int, cfg: DatagenConfig = DESK, pretrain_cfg: AtaConfig = DESK_PRETRAIN,
                  finetune_iters: int = DESK_FINETUNE_ITERS,
                  counts: Tuple[int, int, int] = DESK_COUNTS) -> AblationResult:
    data = desk_data(seed, cfg, *counts)
    return run_ablation(data, replace(pretrain_cfg, seed=seed), finetune_iters)
