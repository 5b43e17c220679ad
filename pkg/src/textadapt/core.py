"""Domain types shared across the toolkit.

Rasters are stored as read-only ``(height, width)`` numpy arrays. All
types are immutable once built.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum
from typing import Optional, Sequence

import numpy as np

from textadapt import geometry

NO_STROKE = -1.0


class FormatError(ValueError):
    """Malformed file or text payload."""


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, copy=True)
    arr.setflags(write=False)
    return arr


def _as_raster(data, width: Optional[int], height: Optional[int], dtype) -> np.ndarray:
    arr = np.asarray(data, dtype=dtype)
    if width is None and height is None:
        if arr.ndim != 2:
            raise ValueError(f"raster data must be 2-D, got shape {arr.shape}")
        return arr
    if width is None or height is None or width < 1 or height < 1:
        raise ValueError(f"invalid raster size {width}x{height}")
    if arr.size != width * height:
        raise ValueError(
            f"raster data length {arr.size} does not match {width}x{height}={width * height}"
        )
    return arr.reshape(height, width)


@dataclass(frozen=True)
class _Raster:
    data: np.ndarray

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def shape(self) -> tuple:
        return self.data.shape

    def __eq__(self, other):
        return (
            type(self) is type(other)
            and self.data.shape == other.data.shape
            and np.array_equal(self.data, other.data)
        )

    __hash__ = None


@dataclass(frozen=True, eq=False)
class GrayImage(_Raster):
    """Luminance in [0, 1]."""

    def __init__(self, data, width: Optional[int] = None, height: Optional[int] = None):
        arr = _as_raster(data, width, height, np.float64)
        if arr.size == 0:
            raise ValueError("image must have at least one pixel")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("image luminance must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))

    def inverted(self) -> "GrayImage":
        return GrayImage(1.0 - self.data)


@dataclass(frozen=True, eq=False)
class ScoreMap(_Raster):
    """Per-pixel text confidence in [0, 1]; binary maps double as ground truth.

    The dtype of ``data`` is kept as given (float32 from files, float64
    from the model) so gradient checks are not limited by storage precision.
    """

    def __init__(self, data, width: Optional[int] = None, height: Optional[int] = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        arr = _as_raster(arr, width, height, arr.dtype)
        if arr.size == 0:
            raise ValueError("score map must have at least one pixel")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("score values must lie in [0, 1]")
        object.__setattr__(self, "data", _freeze(arr))


@dataclass(frozen=True, eq=False)
class StrokeWidthMap(_Raster):
    """Per-pixel stroke width in pixels, ``NO_STROKE`` where no ray landed."""

    def __init__(self, data, width: Optional[int] = None, height: Optional[int] = None):
        arr = np.asarray(data)
        if not np.issubdtype(arr.dtype, np.floating):
            arr = arr.astype(np.float64)
        arr = _as_raster(arr, width, height, arr.dtype)
        if arr.size == 0:
            raise ValueError("stroke width map must have at least one pixel")
        diag = float(np.hypot(arr.shape[0], arr.shape[1]))
        valid = arr != NO_STROKE
        vals = arr[valid]
        if vals.size and (
            not np.all(np.isfinite(vals)) or vals.min() < 1.0 or vals.max() > diag + 1e-6
        ):
            raise ValueError("stroke widths must lie in [1, image diagonal]")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def support(self) -> np.ndarray:
        return self.data != NO_STROKE


@dataclass(frozen=True)
class QuadBox:
    """Four-vertex text box, stored clockwise as seen on screen."""

    vertices: np.ndarray
    confidence: Optional[float] = None
    ignore_flag: bool = False
    transcription: Optional[str] = None

    def __post_init__(self):
        v = np.asarray(self.vertices, dtype=np.float64)
        if v.shape != (4, 2):
            raise ValueError(f"a quad needs 4 (x, y) vertices, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValueError("quad vertices must be finite")
        if geometry.polygon_area(v) <= 0.0:
            raise ValueError("quad has zero area")
        if not geometry.quad_is_simple(v):
            raise ValueError("quad is self-intersecting")
        if geometry.signed_area(v) < 0:
            v = v[[0, 3, 2, 1]]
        if self.confidence is not None and not 0.0 <= self.confidence <= 1.0:
            raise ValueError("confidence must lie in [0, 1]")
        object.__setattr__(self, "vertices", _freeze(v))

    @classmethod
    def from_rect(cls, x0: float, y0: float, x1: float, y1: float, **kw) -> "QuadBox":
        return cls(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]), **kw)

    @property
    def area(self) -> float:
        return geometry.polygon_area(self.vertices)

    @property
    def is_convex(self) -> bool:
        return geometry.is_convex(self.vertices)

    def mask(self, width: int, height: int) -> np.ndarray:
        return geometry.polygon_mask(self.vertices, width, height)

    def __eq__(self, other):
        if not isinstance(other, QuadBox):
            return NotImplemented
        return (
            np.array_equal(self.vertices, other.vertices)
            and self.confidence == other.confidence
            and self.ignore_flag == other.ignore_flag
            and self.transcription == other.transcription
        )

    __hash__ = None


class PixelState(IntEnum):
    IGNORED = 0
    NEGATIVE_KEPT = 1
    POSITIVE = 2


@dataclass(frozen=True, eq=False)
class PixelPartition(_Raster):
    """Per-pixel training role; values are ``PixelState`` codes."""

    def __init__(self, data, width: Optional[int] = None, height: Optional[int] = None):
        arr = _as_raster(data, width, height, np.int8)
        if not np.all(np.isin(arr, [s.value for s in PixelState])):
            raise ValueError("partition holds an unknown pixel state")
        object.__setattr__(self, "data", _freeze(arr))

    @property
    def positive(self) -> np.ndarray:
        return self.data == PixelState.POSITIVE

    @property
    def negative_kept(self) -> np.ndarray:
        return self.data == PixelState.NEGATIVE_KEPT

    @property
    def ignored(self) -> np.ndarray:
        return self.data == PixelState.IGNORED

    def counts(self) -> dict:
        return {s.name: int(np.count_nonzero(self.data == s)) for s in PixelState}


@dataclass(frozen=True)
class PseudoLabel:
    image_id: str
    boxes: tuple
    partition: PixelPartition

    def __post_init__(self):
        object.__setattr__(self, "boxes", tuple(self.boxes))
        h, w = self.partition.shape
        covered = np.zeros((h, w), dtype=bool)
        for b in self.boxes:
            covered |= b.mask(w, h)
        if np.any(self.partition.positive & ~covered):
            raise ValueError("POSITIVE pixel outside every pseudo box")

    @property
    def score_target(self) -> np.ndarray:
        return self.partition.positive.astype(np.float64)


@dataclass(frozen=True)
class DetectionMetrics:
    precision: float
    recall: float
    fscore: float = field(default=None)

    def __post_init__(self):
        p, r = float(self.precision), float(self.recall)
        for name, v in (("precision", p), ("recall", r)):
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        f = 0.0 if p + r == 0 else 2 * p * r / (p + r)
        object.__setattr__(self, "precision", p)
        object.__setattr__(self, "recall", r)
        object.__setattr__(self, "fscore", f)

    def as_dict(self) -> dict:
        return {"precision": self.precision, "recall": self.recall, "fscore": self.fscore}


def boxes_mask(boxes: Sequence[QuadBox], width: int, height: int) -> np.ndarray:
    mask = np.zeros((height, width), dtype=bool)
    for b in boxes:
        mask |= b.mask(width, height)
    return mask
