"""Per-box stroke-width statistics and the sigma/SWS false-positive filter."""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np

from textadapt.core import NO_STROKE, QuadBox, StrokeWidthMap

SIGMA = "SIGMA"
SWS = "SWS"


@dataclass(frozen=True)
class TstConfig:
    eta: float = 1.0 / 3.0
    eps1: float = 3.0
    eps2: float = 0.30
    score_threshold: float = 0.8
    min_box_area: float = 16.0
    min_stroke_pixels: int = 10
    sigma_floor: float = 1e-6  # floor on sigma^2 in the SWS denominator

    def __post_init__(self):
        if not 0 < self.eta <= 1:
            raise ValueError("eta must lie in (0, 1]")
        if self.eps1 < 0 or self.eps2 < 0:
            raise ValueError("eps1 and eps2 must be >= 0")
        if not 0 < self.score_threshold < 1:
            raise ValueError("score_threshold must lie in (0, 1)")
        if self.min_box_area < 0 or self.min_stroke_pixels < 0:
            raise ValueError("min_box_area and min_stroke_pixels must be >= 0")
        if self.sigma_floor <= 0:
            raise ValueError("sigma_floor must be > 0")


@dataclass(frozen=True)
class BoxStrokeStats:
    n_samples: int
    mean_width: float
    std_dev: float
    mode_width: float
    sws: float
    low_evidence: bool = False


def collect_widths(swmap: StrokeWidthMap, box: QuadBox) -> np.ndarray:
    data = swmap.data
    inside = box.mask(swmap.width, swmap.height)
    vals = data[inside]
    return vals[vals != NO_STROKE].astype(np.float64)


def mode_width(widths) -> float:
    """Most common integer-rounded width; ties go to the smaller width."""
    w = np.floor(np.asarray(widths, dtype=np.float64) + 0.5).astype(np.int64)
    values, counts = np.unique(w, return_counts=True)  # sorted ascending
    return float(values[int(np.argmax(counts))])


def stroke_stats(widths, cfg: TstConfig = TstConfig()) -> BoxStrokeStats:
    w = np.asarray(widths, dtype=np.float64).ravel()
    n = int(w.size)
    low = n < cfg.min_stroke_pixels
    if n == 0:
        return BoxStrokeStats(0, 0.0, 0.0, 0.0, 0.0, low_evidence=low)
    mu = float(w.mean())
    var = float(np.mean((w - mu) ** 2))
    wv = mode_width(w)
    # divide by the variance itself, not sigma squared, to avoid a rounding step
    sws = wv / max(var, cfg.sigma_floor)
    sigma = math.sqrt(var)
    return BoxStrokeStats(n, mu, sigma, wv, sws, low_evidence=low)


def decide(stats: BoxStrokeStats, cfg: TstConfig):
    """Rejection reason for one box, or None to keep it."""
    if stats.low_evidence:
        return None
    if stats.std_dev > cfg.eps1:
        return SIGMA
    if stats.sws < cfg.eps2:
        return SWS
    return None


def filter_boxes(
    boxes: Sequence[QuadBox], swmap: StrokeWidthMap, cfg: TstConfig = TstConfig()
) -> Tuple[List[QuadBox], List[BoxStrokeStats], List[Tuple[QuadBox, str]]]:
    """Keep boxes whose stroke widths look like text.

    Sigma above ``eps1`` rejects first, then SWS below ``eps2``. Boxes with
    fewer than ``min_stroke_pixels`` stroke samples are kept and flagged.
    """
    kept, stats, rejected = [], [], []
    for box in boxes:
        st = stroke_stats(collect_widths(swmap, box), cfg)
        stats.append(st)
        reason = decide(st, cfg)
        if reason is None:
            kept.append(box)
        else:
            rejected.append((box, reason))
    return kept, stats, rejected


def rejection_report(stats: Sequence[BoxStrokeStats], cfg: TstConfig = TstConfig()) -> str:
    lines = ["box_index,reason,sigma,sws,n_samples"]
    for i, st in enumerate(stats):
        reason = decide(st, cfg)
        if reason is not None:
            lines.append(f"{i},{reason},{st.std_dev!r},{st.sws!r},{st.n_samples}")
    return "\n".join(lines) + "\n"
