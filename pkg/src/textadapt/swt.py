"""Stroke Width Transform.

Edges come from a Canny-style detector (Sobel gradients, non-maximum
suppression, hysteresis). From every edge pixel a ray is marched against
or along the gradient, depending on polarity, until it lands on another
edge pixel. The ray is kept only if that pixel's gradient roughly opposes
the starting one; its length is then written to every pixel it crossed.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy import ndimage

from textadapt.core import NO_STROKE, GrayImage, StrokeWidthMap

# Sobel response of a unit step edge; maps gradient magnitude to step contrast.
SOBEL_GAIN = 4.0
RAY_STEP = 0.5


class Polarity(str, enum.Enum):
    DARK_ON_LIGHT = "dark"
    LIGHT_ON_DARK = "light"
    BOTH = "both"

    def flipped(self) -> "Polarity":
        if self is Polarity.DARK_ON_LIGHT:
            return Polarity.LIGHT_ON_DARK
        if self is Polarity.LIGHT_ON_DARK:
            return Polarity.DARK_ON_LIGHT
        return self


@dataclass(frozen=True)
class SwtConfig:
    canny_low: float = 0.1
    canny_high: float = 0.3
    polarity: Polarity = Polarity.DARK_ON_LIGHT
    max_ray_len: Optional[float] = None  # None: image diagonal / 4
    angle_tolerance: float = math.pi / 6
    blur_sigma: float = 0.0

    def __post_init__(self):
        object.__setattr__(self, "polarity", Polarity(self.polarity))
        if not 0 < self.canny_low < self.canny_high:
            raise ValueError(
                f"need 0 < canny_low < canny_high, got {self.canny_low}, {self.canny_high}"
            )
        if self.max_ray_len is not None and self.max_ray_len < 1:
            raise ValueError("max_ray_len must be >= 1")
        if not 0 < self.angle_tolerance <= math.pi:
            raise ValueError("angle_tolerance must lie in (0, pi]")
        if self.blur_sigma < 0:
            raise ValueError("blur_sigma must be >= 0")

    def ray_limit(self, width: int, height: int) -> float:
        if self.max_ray_len is not None:
            return float(self.max_ray_len)
        return max(1.0, math.hypot(width, height) / 4.0)


@dataclass(frozen=True)
class EdgeMask:
    mask: np.ndarray  # bool (h, w)
    gradient_dir: np.ndarray  # (h, w, 2) unit (gx, gy) on edge pixels, zero elsewhere

    @property
    def shape(self):
        return self.mask.shape


def sobel_gradients(data: np.ndarray):
    gx = ndimage.sobel(data, axis=1, mode="nearest") / SOBEL_GAIN
    gy = ndimage.sobel(data, axis=0, mode="nearest") / SOBEL_GAIN
    return gx, gy


def _non_max_suppression(mag: np.ndarray, gx: np.ndarray, gy: np.ndarray) -> np.ndarray:
    h, w = mag.shape
    padded = np.pad(mag, 1)
    angle = np.degrees(np.arctan2(gy, gx)) % 180.0
    # neighbour offsets (dy, dx) along the quantized gradient, "forward" side
    sectors = [
        ((angle < 22.5) | (angle >= 157.5), (0, 1)),
        ((angle >= 22.5) & (angle < 67.5), (1, 1)),
        ((angle >= 67.5) & (angle < 112.5), (1, 0)),
        ((angle >= 112.5) & (angle < 157.5), (1, -1)),
    ]
    keep = np.zeros_like(mag, dtype=bool)
    for sel, (dy, dx) in sectors:
        fwd = padded[1 + dy : 1 + dy + h, 1 + dx : 1 + dx + w]
        bwd = padded[1 - dy : 1 - dy + h, 1 - dx : 1 - dx + w]
        # ties go to the backward pixel so a two-pixel plateau yields one edge
        keep |= sel & (mag >= fwd) & (mag > bwd)
    return keep & (mag > 0)


def detect_edges(image: GrayImage, cfg: SwtConfig = SwtConfig()) -> EdgeMask:
    data = np.asarray(image.data, dtype=np.float64)
    if cfg.blur_sigma > 0:
        data = ndimage.gaussian_filter(data, cfg.blur_sigma, mode="nearest")
    gx, gy = sobel_gradients(data)
    mag = np.hypot(gx, gy)
    thin = _non_max_suppression(mag, gx, gy)
    strong = thin & (mag >= cfg.canny_high)
    weak = thin & (mag >= cfg.canny_low)
    labels, n = ndimage.label(weak, structure=np.ones((3, 3), dtype=int))
    if n:
        has_strong = np.zeros(n + 1, dtype=bool)
        has_strong[labels[strong]] = True
        has_strong[0] = False
        mask = has_strong[labels]
    else:
        mask = np.zeros_like(weak)
    direction = np.zeros(mag.shape + (2,), dtype=np.float64)
    direction[mask, 0] = gx[mask] / mag[mask]
    direction[mask, 1] = gy[mask] / mag[mask]
    return EdgeMask(mask=mask, gradient_dir=direction)


def _cast_rays(edges: EdgeMask, sign: float, max_len: float, tol: float):
    """March all rays in lock-step. Returns start/end pixel coords of accepted rays."""
    h, w = edges.shape
    ys, xs = np.nonzero(edges.mask)
    if ys.size == 0:
        empty = np.zeros(0, dtype=np.int64)
        return empty, empty, empty, empty, np.zeros((0, 2))
    d = sign * edges.gradient_dir[ys, xs]
    cos_tol = math.cos(tol)
    n = ys.size
    active = np.ones(n, dtype=bool)
    accepted = np.zeros(n, dtype=bool)
    end_y = np.zeros(n, dtype=np.int64)
    end_x = np.zeros(n, dtype=np.int64)
    max_steps = int(math.floor(max_len / RAY_STEP)) + 2
    for k in range(1, max_steps + 1):
        idx = np.nonzero(active)[0]
        if idx.size == 0:
            break
        t = k * RAY_STEP
        px = np.floor(xs[idx] + t * d[idx, 0] + 0.5).astype(np.int64)
        py = np.floor(ys[idx] + t * d[idx, 1] + 0.5).astype(np.int64)
        outside = (px < 0) | (px >= w) | (py < 0) | (py >= h)
        active[idx[outside]] = False
        idx, px, py = idx[~outside], px[~outside], py[~outside]
        moved = (px != xs[idx]) | (py != ys[idx])
        hit = moved & edges.mask[py.clip(0, h - 1), px.clip(0, w - 1)]
        hit_idx = idx[hit]
        if hit_idx.size:
            gq = edges.gradient_dir[py[hit], px[hit]]
            gp = edges.gradient_dir[ys[hit_idx], xs[hit_idx]]
            opposed = np.einsum("ij,ij->i", gq, gp) <= -cos_tol
            length = np.hypot(px[hit] - xs[hit_idx], py[hit] - ys[hit_idx])
            ok = opposed & (length <= max_len)
            accepted[hit_idx[ok]] = True
            end_y[hit_idx] = py[hit]
            end_x[hit_idx] = px[hit]
            active[hit_idx] = False
    sel = np.nonzero(accepted)[0]
    return ys[sel], xs[sel], end_y[sel], end_x[sel], d[sel]


def _ray_pixels(y0, x0, y1, x1, d, h, w):
    """Flat pixel indices crossed by each accepted ray, as (ray_id, flat) pairs."""
    steps = np.ceil(np.hypot(x1 - x0, y1 - y0) / RAY_STEP).astype(np.int64) + 1
    ray_ids = []
    flats = []
    for k in range(int(steps.max()) + 1):
        live = np.nonzero(steps >= k)[0]
        t = k * RAY_STEP
        px = np.floor(x0[live] + t * d[live, 0] + 0.5).astype(np.int64)
        py = np.floor(y0[live] + t * d[live, 1] + 0.5).astype(np.int64)
        # stop exactly at the terminating edge pixel
        before_end = (
            (px - x0[live]) * (x1[live] - x0[live]) + (py - y0[live]) * (y1[live] - y0[live])
        ) <= (x1[live] - x0[live]) ** 2 + (y1[live] - y0[live]) ** 2
        inb = (px >= 0) & (px < w) & (py >= 0) & (py < h) & before_end
        ray_ids.append(live[inb])
        flats.append(py[inb] * w + px[inb])
    ray_ids = np.concatenate(ray_ids)
    flats = np.concatenate(flats)
    # always include both endpoints
    ray_ids = np.concatenate([ray_ids, np.arange(y0.size), np.arange(y0.size)])
    flats = np.concatenate([flats, y0 * w + x0, y1 * w + x1])
    pairs = np.unique(np.stack([ray_ids, flats], axis=1), axis=0)
    return pairs[:, 0], pairs[:, 1]


def _swt_single(image: GrayImage, cfg: SwtConfig, polarity: Polarity) -> np.ndarray:
    h, w = image.shape
    edges = detect_edges(image, cfg)
    sign = -1.0 if polarity is Polarity.DARK_ON_LIGHT else 1.0
    max_len = cfg.ray_limit(w, h)
    y0, x0, y1, x1, d = _cast_rays(edges, sign, max_len, cfg.angle_tolerance)
    out = np.full(h * w, np.inf)
    if y0.size == 0:
        return np.full((h, w), NO_STROKE)
    widths = np.maximum(1.0, np.floor(np.hypot(x1 - x0, y1 - y0) + 0.5))
    ray_id, flat = _ray_pixels(y0, x0, y1, x1, d, h, w)
    np.minimum.at(out, flat, widths[ray_id])
    # second pass: clamp each ray's pixels to the median width along that ray
    vals = out[flat]
    order = np.lexsort((vals, ray_id))
    ray_sorted = ray_id[order]
    vals_sorted = vals[order]
    starts = np.searchsorted(ray_sorted, np.arange(y0.size), side="left")
    ends = np.searchsorted(ray_sorted, np.arange(y0.size), side="right")
    counts = ends - starts
    lo = vals_sorted[starts + (counts - 1) // 2]
    hi = vals_sorted[starts + counts // 2]
    medians = 0.5 * (lo + hi)
    np.minimum.at(out, flat, medians[ray_id])
    out[~np.isfinite(out)] = NO_STROKE
    return out.reshape(h, w)


def merge_min(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    both = (a != NO_STROKE) & (b != NO_STROKE)
    out = np.where(a != NO_STROKE, a, b)
    out[both] = np.minimum(a[both], b[both])
    return out


def stroke_width_transform(image: GrayImage, cfg: SwtConfig = SwtConfig()) -> StrokeWidthMap:
    if cfg.polarity is Polarity.BOTH:
        dark = _swt_single(image, cfg, Polarity.DARK_ON_LIGHT)
        light = _swt_single(image, cfg, Polarity.LIGHT_ON_DARK)
        return StrokeWidthMap(merge_min(dark, light))
    return StrokeWidthMap(_swt_single(image, cfg, cfg.polarity))
