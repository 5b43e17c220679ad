"""Synthetic-to-real domain adaptation toolkit for scene text detection.

Text self-training (negative mining plus stroke-width box filtering) and
adversarial text instance alignment (gradient reversal), exercised on a
small per-pixel detector with hand-written gradients.
"""

from textadapt.core import (
    NO_STROKE,
    DetectionMetrics,
    GrayImage,
    PixelPartition,
    PseudoLabel,
    QuadBox,
    ScoreMap,
    StrokeWidthMap,
)

__version__ = "0.1.0"

__all__ = [
    "NO_STROKE",
    "DetectionMetrics",
    "GrayImage",
    "PixelPartition",
    "PseudoLabel",
    "QuadBox",
    "ScoreMap",
    "StrokeWidthMap",
]
