"""Command-line entry point: ``python -m textadapt <command> ...``.

Exit codes: 0 success, 1 usage error, 2 data or format error, 3 numeric
failure during training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from dataclasses import replace
from typing import Dict, Optional, Sequence

from textadapt.core import FormatError
from textadapt.datagen import PRESETS, load_images, load_labeled, make_dataset
from textadapt.evaluation import evaluate
from textadapt.io import (
    load_model,
    read_icdar_file,
    read_pgm,
    save_model,
    write_icdar_file,
    write_smap,
)
from textadapt.losses import LossConfig
from textadapt.pipeline import (
    AdaptConfig,
    adapt,
    config_hash,
    fine_tune,
    generate_pseudo_labels,
    load_pseudo_labels,
    predict_boxes,
    pseudo_samples,
    save_pseudo_labels,
    source_samples,
    unlabeled_samples,
)
from textadapt.strokestats import TstConfig
from textadapt.swt import Polarity, SwtConfig, stroke_width_transform
from textadapt.toymodel import AtaConfig, NumericError, extract_features, pretrain

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_NUMERIC = 0, 1, 2, 3

log = logging.getLogger("textadapt")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad flags; 2 is reserved for data errors here
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


# ---------------------------------------------------------------- helpers


def _parent(path: str) -> str:
    """Create the directory a file output goes into; returns the path."""
    d = os.path.dirname(os.path.abspath(path))
    os.makedirs(d, exist_ok=True)
    return path


def _write_json(obj, path: str) -> None:
    with open(_parent(path), "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _box_files(d: str) -> Dict[str, str]:
    """Map image id -> box file, accepting both ``gt_<id>.txt`` and ``<id>.txt``."""
    if not os.path.isdir(d):
        raise FileNotFoundError(f"not a directory: {d}")
    out: Dict[str, str] = {}
    for name in sorted(os.listdir(d)):
        if not name.endswith(".txt"):
            continue
        image_id = name[:-4]
        if image_id.startswith("gt_"):
            image_id = image_id[3:]
        if image_id in out:
            raise ValueError(f"duplicate image id {image_id!r} in {d}")
        out[image_id] = os.path.join(d, name)
    return out


def _tst(args) -> TstConfig:
    return TstConfig(eta=args.eta, eps1=args.eps1, eps2=args.eps2,
                     score_threshold=args.score_threshold, min_box_area=args.min_box_area)


def _ata(args, iters: int, lam: Optional[float] = None) -> AtaConfig:
    return AtaConfig(lam=args.lam if lam is None else lam, lr=args.lr, iters=iters,
                     batch_source=args.batch_source, batch_target=args.batch_target,
                     seed=args.seed, crop=args.crop, lr_anneal=args.lr_anneal)


def _progress(every: int):
    if every <= 0:
        return None

    def cb(diag):
        if diag["iter"] % every == 0:
            log.info("iter %d L_src %.4f L_d %s acc %s", diag["iter"], diag["L_task_src"],
                     diag["L_d"], diag["domain_acc"])

    return cb


def _write_predictions(model, items, out_dir: str, tst: TstConfig) -> None:
    os.makedirs(out_dir, exist_ok=True)
    feats = [extract_features(it[1]) for it in items]
    for image_id, boxes in predict_boxes(model, items, tst, feats).items():
        write_icdar_file(boxes, os.path.join(out_dir, image_id + ".txt"))


# ---------------------------------------------------------------- commands


def cmd_datagen(args) -> int:
    cfg = PRESETS[args.preset]
    if args.size is not None:
        cfg = replace(cfg, size=args.size)
    make_dataset(args.out, args.n_source, args.n_target_train, args.n_target_test, args.seed,
                 cfg, jobs=args.jobs)
    return EXIT_OK


def cmd_swt(args) -> int:
    cfg = SwtConfig(canny_low=args.canny_low, canny_high=args.canny_high,
                    polarity=Polarity(args.polarity), max_ray_len=args.max_ray_len)
    swmap = stroke_width_transform(read_pgm(args.image), cfg)
    write_smap(swmap.data.astype("float32"), _parent(args.out))
    return EXIT_OK


def cmd_pretrain(args) -> int:
    source = source_samples(load_labeled(args.data, "source"))
    target = unlabeled_samples(load_images(args.data, "target_train"))
    cfg = _ata(args, args.iters)
    result = pretrain(source, target, cfg, callback=_progress(args.log_every))
    save_model(result.model, _parent(args.out))
    if args.diagnostics:
        with open(_parent(args.diagnostics), "w") as fh:
            fh.write(result.csv())
    return EXIT_OK


def cmd_pseudolabel(args) -> int:
    model = load_model(args.model)
    images = load_images(args.data, "target_train")
    tst = _tst(args)
    swt_cfg = SwtConfig()
    labels, stats = generate_pseudo_labels(model, images, tst, swt_cfg, jobs=args.jobs)
    with open(args.model, "rb") as fh:
        model_sha = hashlib.sha256(fh.read()).hexdigest()
    # content hash rather than a path, so the manifest does not depend on where runs live
    meta = {"model": os.path.basename(args.model), "model_sha256": model_sha, "config_hash": config_hash(tst, swt_cfg),
            "tst": {k: getattr(tst, k) for k in ("eta", "eps1", "eps2", "score_threshold",
                                                 "min_box_area")}}
    save_pseudo_labels(labels, args.out, meta)
    with open(os.path.join(args.out, "rejections.csv"), "w") as fh:
        for st in stats:
            for line in st.report.splitlines()[1:]:
                fh.write(f"{st.image_id},{line}\n")
    kept = sum(s.kept for s in stats)
    total = sum(s.extracted for s in stats)
    print(f"kept {kept} of {total} boxes over {len(stats)} images")
    return EXIT_OK


def cmd_finetune(args) -> int:
    model = load_model(args.model)
    source = source_samples(load_labeled(args.data, "source"))
    images = dict(load_images(args.data, "target_train"))
    labels = load_pseudo_labels(args.labels)
    missing = [lab.image_id for lab in labels if lab.image_id not in images]
    if missing:
        raise ValueError(f"pseudo-labels for unknown images: {missing[:3]}")
    feats = [extract_features(images[lab.image_id]) for lab in labels]
    cfg = _ata(args, args.iters)
    result = fine_tune(model, source, pseudo_samples(labels, feats), cfg,
                       callback=_progress(args.log_every))
    save_model(result.model, _parent(args.out))
    if args.diagnostics:
        with open(_parent(args.diagnostics), "w") as fh:
            fh.write(result.csv())
    return EXIT_OK


def cmd_adapt(args) -> int:
    source = source_samples(load_labeled(args.data, "source"))
    target = load_images(args.data, "target_train")
    test_dir = os.path.join(args.data, "target_test")
    eval_set = load_labeled(args.data, "target_test") if os.path.isdir(test_dir) else None
    cfg = AdaptConfig(
        pretrain=_ata(args, args.pretrain_iters),
        finetune_iters=args.finetune_iters,
        tst=_tst(args),
        loss=LossConfig(),
        self_train=not args.skip_selftrain,
        ata_in_finetune=args.finetune_align and args.lam > 0,
    )
    model, report = adapt(source, target, cfg, eval_set=eval_set, jobs=args.jobs)
    os.makedirs(args.out, exist_ok=True)
    save_model(model, os.path.join(args.out, "model.tadm"))
    if eval_set is not None:
        _write_predictions(model, eval_set, os.path.join(args.out, "pred"), cfg.tst)
    report["data"] = os.path.abspath(args.data)
    _write_json(report, os.path.join(args.out, "report.json"))
    if eval_set is not None:
        m = report["finetune"][-1].get("target_eval") or report["pretrain"]["target_eval"]
        print(f"target_test {100 * m['precision']:.3f} {100 * m['recall']:.3f} "
              f"{100 * m['fscore']:.3f}")
    return EXIT_OK


def cmd_ablate(args) -> int:
    from textadapt.experiments import VARIANTS, DeskData, run_ablation

    data = DeskData(
        load_labeled(args.data, "source"),
        [(i, img, []) for i, img in load_images(args.data, "target_train")],
        load_labeled(args.data, "target_test"),
        args.seed,
        None,
    )
    result = run_ablation(data, _ata(args, args.pretrain_iters), args.finetune_iters,
                          _tst(args), ata_in_finetune=args.finetune_align)
    blob = {
        "seed": args.seed,
        "lambda": args.lam,
        "variants": {v: {"target_test": result.variants[v].target,
                         "source": result.variants[v].source,
                         "filter": result.variants[v].filter} for v in VARIANTS},
        "gains": result.gains(),
    }
    for v in VARIANTS:
        m = result.variants[v].target
        print(f"{v:<9} {100 * m['precision']:.3f} {100 * m['recall']:.3f} {100 * m['fscore']:.3f}")
    if args.out:
        _write_json(blob, args.out)
    return EXIT_OK


def cmd_predict(args) -> int:
    model = load_model(args.model)
    d = args.images
    names = sorted(f for f in os.listdir(d) if f.endswith(".pgm") and not f.startswith("gt_"))
    items = [(n[:-4], read_pgm(os.path.join(d, n))) for n in names]
    _write_predictions(model, items, args.out, _tst(args))
    return EXIT_OK


def cmd_eval(args) -> int:
    pred_files = _box_files(args.pred)
    gt_files = _box_files(args.gt)
    gts = {i: read_icdar_file(p) for i, p in gt_files.items()}
    preds = {i: read_icdar_file(p, scored="auto") for i, p in pred_files.items()}
    extra = sorted(set(preds) - set(gts))
    if extra:
        log.warning("%d prediction files have no ground truth, e.g. %s", len(extra), extra[0])
    m = evaluate(preds, gts, args.iou)
    print(f"{100 * m.precision:.3f} {100 * m.recall:.3f} {100 * m.fscore:.3f}")
    blob = dict(m.as_dict(), iou=args.iou, images=len(set(gts) | set(preds)))
    print(json.dumps(blob, sort_keys=True))
    if args.json:
        _write_json(blob, args.json)
    return EXIT_OK


# ---------------------------------------------------------------- parser


def _add_train_flags(p, iters_flags=("--iters",), iters_default=2000):
    p.add_argument("--lambda", dest="lam", type=float, default=0.2,
                   help="gradient reversal weight; 0 disables alignment (default 0.2)")
    p.add_argument("--lr", type=float, default=1e-2)
    p.add_argument("--batch-source", type=int, default=6)
    p.add_argument("--batch-target", type=int, default=6)
    p.add_argument("--seed", type=int, default=0, help="RNG seed (default 0)")
    for flag in iters_flags:
        p.add_argument(flag, type=int, default=iters_default)
    p.add_argument("--crop", type=int, default=None,
                   help="train on random CROP x CROP windows (default: whole images)")
    p.add_argument("--lr-anneal", action="store_true",
                   help="decay lr as lr / (1 + 10 p) ** 0.75 over each stage")


def _add_tst_flags(p):
    p.add_argument("--eta", type=float, default=1.0 / 3.0,
                   help="share of candidate negatives kept (default 1/3)")
    p.add_argument("--eps1", type=float, default=3.0, help="max stroke-width std (default 3.0)")
    p.add_argument("--eps2", type=float, default=0.30, help="min stroke-width score (default 0.30)")
    p.add_argument("--score-threshold", type=float, default=0.8)
    p.add_argument("--min-box-area", type=float, default=16.0)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="textadapt", description="Domain-adaptive toy text detection.")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("datagen", help="render the two-domain dataset")
    p.add_argument("--out", required=True)
    p.add_argument("--n-source", type=int, default=100)
    p.add_argument("--n-target-train", type=int, default=100)
    p.add_argument("--n-target-test", type=int, default=50)
    p.add_argument("--preset", choices=sorted(PRESETS), default="default",
                   help="scene settings; 'desk' is the small setup the experiments use")
    p.add_argument("--size", type=int, default=None, help="image side (default from preset)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_datagen)

    p = sub.add_parser("swt", help="stroke width transform of one PGM image")
    p.add_argument("--image", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--polarity", choices=[x.value for x in Polarity], default="dark")
    p.add_argument("--canny-low", type=float, default=0.1)
    p.add_argument("--canny-high", type=float, default=0.3)
    p.add_argument("--max-ray-len", type=float, default=None)
    p.set_defaults(func=cmd_swt)

    p = sub.add_parser("pretrain", help="source training with adversarial alignment")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.add_argument("--diagnostics", help="write per-iteration loss CSV here")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("pseudolabel", help="filtered pseudo-labels for target_train")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_tst_flags(p)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_pseudolabel)

    p = sub.add_parser("finetune", help="fine-tune on source plus pseudo-labeled target")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--labels", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p)
    p.add_argument("--diagnostics")
    p.add_argument("--log-every", type=int, default=0)
    p.set_defaults(func=cmd_finetune)

    p = sub.add_parser("adapt", help="pretrain, pseudo-label, fine-tune; writes a report")
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    _add_train_flags(p, ("--pretrain-iters", "--finetune-iters"))
    _add_tst_flags(p)
    p.add_argument("--skip-selftrain", action="store_true",
                   help="second stage trains without pseudo-labels")
    p.add_argument("--finetune-align", action="store_true",
                   help="keep the adversarial branch on during fine-tuning")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("ablate", help="baseline / ATA / TST / combined on one dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--out", help="write the JSON report here")
    _add_train_flags(p, ("--pretrain-iters", "--finetune-iters"))
    _add_tst_flags(p)
    p.add_argument("--finetune-align", action="store_true",
                   help="keep the adversarial branch on during fine-tuning")
    p.set_defaults(func=cmd_ablate)

    p = sub.add_parser("predict", help="write detected boxes for a directory of PGM images")
    p.add_argument("--model", required=True)
    p.add_argument("--images", required=True)
    p.add_argument("--out", required=True)
    _add_tst_flags(p)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("eval", help="precision / recall / F of box files against ground truth")
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--iou", type=float, default=0.5)
    p.add_argument("--json", help="also write the metrics JSON here")
    p.set_defaults(func=cmd_eval)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    for name in ("jobs", "iters", "pretrain_iters", "finetune_iters", "batch_source",
                 "batch_target", "n_source", "n_target_train", "n_target_test", "size"):
        v = getattr(args, name, None)
        if v is not None and v < (1 if name in ("jobs", "batch_source", "batch_target", "size")
                                  else 0):
            parser.error(f"--{name.replace('_', '-')} out of range: {v}")
    if getattr(args, "crop", None) is not None and args.crop < 3:
        parser.error(f"--crop out of range: {args.crop}")
    try:
        return args.func(args)
    except NumericError as exc:
        print(f"textadapt: numeric failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except (FormatError, OSError, ValueError, KeyError) as exc:
        print(f"textadapt: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
