"""ICDAR-style detection scoring: quad IoU and greedy one-to-one matching."""

from __future__ import annotations

from typing import Dict, List, Sequence

import numpy as np

from textadapt import geometry
from textadapt.core import DetectionMetrics, QuadBox


def _raster_iou(a: QuadBox, b: QuadBox) -> float:
    pts = np.vstack([a.vertices, b.vertices])
    x0, y0 = np.floor(pts.min(axis=0)).astype(int)
    x1, y1 = np.ceil(pts.max(axis=0)).astype(int)
    w, h = x1 - x0 + 1, y1 - y0 + 1
    shift = np.array([x0, y0], dtype=np.float64)
    ma = geometry.polygon_mask(a.vertices - shift, w, h)
    mb = geometry.polygon_mask(b.vertices - shift, w, h)
    union = np.count_nonzero(ma | mb)
    return np.count_nonzero(ma & mb) / union if union else 0.0


def quad_iou(a: QuadBox, b: QuadBox) -> float:
    """Exact IoU by convex clipping; 1-px rasterized IoU if either quad is concave."""
    if a.area <= 0 or b.area <= 0:
        raise ValueError("zero-area quad")
    if not (a.is_convex and b.is_convex):
        return _raster_iou(a, b)
    inter_poly = geometry.clip_convex(a.vertices, b.vertices)
    inter = geometry.polygon_area(inter_poly) if len(inter_poly) >= 3 else 0.0
    union = a.area + b.area - inter
    return float(min(max(inter / union, 0.0), 1.0))


def match_image(preds: Sequence[QuadBox], gts: Sequence[QuadBox], iou_threshold: float = 0.5):
    """Greedy matching for one image.

    Predictions go in descending confidence (stable on input order). Each
    takes the unmatched non-ignored GT with the highest IoU at or above the
    threshold. A prediction whose best candidate is a don't-care GT is
    dropped from the count instead.

    Returns ``(tp, n_pred_counted, n_gt_counted, pairs)``.
    """
    order = sorted(
        range(len(preds)),
        key=lambda i: -(preds[i].confidence if preds[i].confidence is not None else 1.0),
    )
    gt_used = [False] * len(gts)
    tp = 0
    discarded = 0
    pairs = []
    for pi in order:
        best, best_iou = None, iou_threshold
        for gi, g in enumerate(gts):
            if gt_used[gi] and not g.ignore_flag:
                continue
            iou = quad_iou(preds[pi], g)
            if iou >= best_iou and (best is None or iou > best_iou):
                best, best_iou = gi, iou
        if best is None:
            continue
        if gts[best].ignore_flag:
            discarded += 1
            continue
        gt_used[best] = True
        tp += 1
        pairs.append((pi, best))
    n_gt = sum(1 for g in gts if not g.ignore_flag)
    return tp, len(preds) - discarded, n_gt, pairs


def _metrics(tp: int, n_pred: int, n_gt: int) -> DetectionMetrics:
    precision = tp / n_pred if n_pred else 0.0
    recall = tp / n_gt if n_gt else 0.0
    return DetectionMetrics(precision, recall)


def evaluate(preds: Dict[str, List[QuadBox]], gts: Dict[str, List[QuadBox]],
             iou_threshold: float = 0.5) -> DetectionMetrics:
    """Corpus-level precision/recall/F over images keyed by id.

    Images missing from ``preds`` count as having no detections. Lists of
    ``(image_id, boxes)`` pairs are accepted and must not repeat an id.
    """
    preds = _as_mapping(preds)
    gts = _as_mapping(gts)
    tp = n_pred = n_gt = 0
    for image_id in sorted(set(gts) | set(preds)):
        t, p, g, _ = match_image(preds.get(image_id, []), gts.get(image_id, []), iou_threshold)
        tp += t
        n_pred += p
        n_gt += g
    return _metrics(tp, n_pred, n_gt)


def _as_mapping(items) -> Dict[str, List[QuadBox]]:
    if isinstance(items, dict):
        return items
    out: Dict[str, List[QuadBox]] = {}
    for image_id, boxes in items:
        if image_id in out:
            raise ValueError(f"duplicate image id {image_id!r}")
        out[image_id] = list(boxes)
    return out
