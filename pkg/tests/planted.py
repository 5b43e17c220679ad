"""Synthetic stroke images with known widths."""

import numpy as np

from textadapt.core import GrayImage


def bar_image(k: int, size: int = 64, angle: float = 0.0, ink=0.1, bg=0.9):
    """Dark bar of width k through the center; returns (image, stroke mask)."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    c = (size - 1) / 2.0
    # distance across the bar, measured along the bar normal
    nx, ny = np.cos(angle), np.sin(angle)
    across = (xx - c) * nx + (yy - c) * ny
    along = -(xx - c) * ny + (yy - c) * nx
    if angle == 0.0:
        # axis-aligned: exactly k pixel columns
        lo = int(round(c - k / 2.0 + 0.5))
        mask = (xx >= lo) & (xx < lo + k) & (np.abs(along) <= size * 0.35)
    else:
        mask = (np.abs(across) <= k / 2.0 - 1e-9) & (np.abs(along) <= size * 0.35)
    img = np.where(mask, ink, bg)
    return GrayImage(img), mask


def ring_image(k: int, radius: float = 14.0, size: int = 64, ink=0.1, bg=0.9):
    """Dark annulus of radial width k."""
    yy, xx = np.mgrid[0:size, 0:size].astype(float)
    c = (size - 1) / 2.0
    r = np.hypot(xx - c, yy - c)
    mask = (r >= radius) & (r < radius + k)
    return GrayImage(np.where(mask, ink, bg)), mask


def within_one(swmap, mask, k):
    vals = swmap.data[mask]
    return float(np.mean(np.abs(vals - k) <= 1.0))
