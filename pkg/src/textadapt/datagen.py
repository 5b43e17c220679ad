"""Two-domain desk dataset.

SOURCE scenes are clean: flat light background, dark high-contrast
pseudo-words. TARGET scenes add a value-noise texture, sensor noise,
blur, per-word contrast jitter (some words nearly vanish) and distractors:
filled blobs and hatched patches whose stroke widths vary a lot.

A pseudo-word is a square-wave polyline of constant stroke width, so its
stroke-width spread is near zero by construction.

``DESK`` is the smaller setup the experiments run on; it also gives the
source mild texture and noise.
"""

from __future__ import annotations

import dataclasses
import enum
import hashlib
import json
import logging
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy import ndimage

from textadapt.core import GrayImage, QuadBox
from textadapt.io import read_icdar_file, read_pgm, write_icdar_file, write_pgm
from textadapt.strokestats import TstConfig, collect_widths, stroke_stats
from textadapt.swt import SwtConfig, stroke_width_transform

log = logging.getLogger(__name__)

SPLITS = ("source", "target_train", "target_test")
MAX_TRIES = 100


class Domain(enum.IntEnum):
    SOURCE = 0
    TARGET = 1


@dataclass(frozen=True)
class DatagenConfig:
    size: int = 256
    words_min: int = 1
    words_max: int = 6
    stroke_min: int = 3
    stroke_max: int = 9
    bars_min: int = 3
    bars_max: int = 7
    max_angle_deg: float = 30.0
    margin: float = 3.0
    # source appearance
    source_bg: Tuple[float, float] = (0.70, 0.95)
    source_ink: Tuple[float, float] = (0.02, 0.25)
    source_texture_amp: Tuple[float, float] = (0.0, 0.0)
    source_noise_std: Tuple[float, float] = (0.0, 0.0)
    # target appearance
    target_bg: Tuple[float, float] = (0.50, 0.80)
    texture_amp: Tuple[float, float] = (0.06, 0.16)
    target_contrast: Tuple[float, float] = (0.12, 0.50)
    noise_std: Tuple[float, float] = (0.01, 0.03)
    blur_sigma: Tuple[float, float] = (0.0, 0.7)
    blobs: Tuple[int, int] = (1, 2)
    hatches: Tuple[int, int] = (1, 2)
    distractor_contrast: Tuple[float, float] = (0.30, 0.55)
    distractor_min_sigma: float = 3.0

    def as_dict(self) -> dict:
        return dataclasses.asdict(self)


# Small scenes the desk experiments use. The source gets mild texture and noise
# and the target background matches the source brightness; with a perfectly
# flat source the detector learns "any texture is background" and the target
# gap is too wide for adaptation to close.
DESK = DatagenConfig(
    size=128, words_max=4, stroke_max=5, bars_max=5,
    source_texture_amp=(0.06, 0.16), source_noise_std=(0.01, 0.03), target_bg=(0.70, 0.95),
)

PRESETS = {"default": DatagenConfig(), "desk": DESK}


def image_rng(seed: int, split_code: int, index: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence([seed, split_code, index]))


# ---------------------------------------------------------------- shapes


def _rot(theta: float) -> np.ndarray:
    c, s = math.cos(theta), math.sin(theta)
    return np.array([[c, -s], [s, c]])


def _segment_distance(px, py, segs: np.ndarray) -> np.ndarray:
    """Min distance from points to a set of segments (n, 4) = x0, y0, x1, y1."""
    best = np.full(np.shape(px), np.inf)
    for x0, y0, x1, y1 in segs:
        dx, dy = x1 - x0, y1 - y0
        den = dx * dx + dy * dy
        if den == 0:
            t = np.zeros_like(px)
        else:
            t = np.clip(((px - x0) * dx + (py - y0) * dy) / den, 0.0, 1.0)
        best = np.minimum(best, np.hypot(px - (x0 + t * dx), py - (y0 + t * dy)))
    return best


@dataclass
class Shape:
    """A stroke drawing in a local frame placed by rotation + translation."""

    segs: np.ndarray  # (n, 4) local segments
    widths: np.ndarray  # (n,) stroke width per segment
    extent: Tuple[float, float, float, float]  # local bounding rect x0, y0, x1, y1
    theta: float = 0.0
    center: Tuple[float, float] = (0.0, 0.0)

    def local_center(self):
        x0, y0, x1, y1 = self.extent
        return np.array([(x0 + x1) / 2, (y0 + y1) / 2])

    def quad(self) -> np.ndarray:
        x0, y0, x1, y1 = self.extent
        local = np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]]) - self.local_center()
        return local @ _rot(self.theta).T + np.asarray(self.center)

    def raster(self, size: int) -> np.ndarray:
        quad = self.quad()
        bx0 = max(int(math.floor(quad[:, 0].min())) - 1, 0)
        bx1 = min(int(math.ceil(quad[:, 0].max())) + 1, size - 1)
        by0 = max(int(math.floor(quad[:, 1].min())) - 1, 0)
        by1 = min(int(math.ceil(quad[:, 1].max())) + 1, size - 1)
        mask = np.zeros((size, size), dtype=bool)
        if bx0 > bx1 or by0 > by1:
            return mask
        ys, xs = np.mgrid[by0 : by1 + 1, bx0 : bx1 + 1].astype(np.float64)
        rel = np.stack([xs - self.center[0], ys - self.center[1]], axis=-1)
        local = rel @ _rot(self.theta) + self.local_center()
        lx, ly = local[..., 0], local[..., 1]
        inside = np.zeros(lx.shape, dtype=bool)
        for seg, w in zip(self.segs, self.widths):
            inside |= _segment_distance(lx, ly, seg[None, :]) <= w / 2.0
        mask[by0 : by1 + 1, bx0 : bx1 + 1] = inside
        return mask


def make_word(rng: np.random.Generator, cfg: DatagenConfig) -> Shape:
    w = float(rng.integers(cfg.stroke_min, cfg.stroke_max + 1))
    height = w * rng.uniform(3.0, 4.5)
    spacing = w + w * rng.uniform(1.0, 1.6)
    n = int(rng.integers(cfg.bars_min, cfg.bars_max + 1))
    pts = []
    for i in range(n):
        x = i * spacing
        if i % 2 == 0:
            pts += [(x, 0.0), (x, height)]
        else:
            pts += [(x, height), (x, 0.0)]
    pts = np.array(pts)
    segs = np.concatenate([pts[:-1], pts[1:]], axis=1)
    half = w / 2.0
    extent = (-half, -half, (n - 1) * spacing + half, height + half)
    return Shape(segs, np.full(len(segs), w), extent)


def make_hatch(rng: np.random.Generator, cfg: DatagenConfig) -> Shape:
    """Comb: one thick spine with thin teeth hanging off it, all one component."""
    spine_w = float(rng.integers(9, 14))
    n_teeth = int(rng.integers(4, 7))
    gap = rng.uniform(4.0, 7.0)
    tooth_len = rng.uniform(10.0, 16.0)
    length = (n_teeth - 1) * gap + 6.0
    segs = [(0.0, 0.0, length, 0.0)]
    ws = [spine_w]
    for i in range(n_teeth):
        x = 3.0 + i * gap
        segs.append((x, 0.0, x, spine_w / 2 + tooth_len))
        ws.append(float(rng.integers(2, 4)))
    half = spine_w / 2
    return Shape(np.array(segs), np.array(ws), (-half, -half, length + half,
                                                 half + tooth_len + 1.5))


def make_blob(rng: np.random.Generator, cfg: DatagenConfig) -> Shape:
    """Filled disc with thin spokes radiating from it."""
    r = rng.uniform(7.0, 10.0)
    n = int(rng.integers(3, 6))
    start = rng.uniform(0, 2 * math.pi)
    segs = [(0.0, 0.0, 0.0, 0.0)]
    ws = [2 * r]
    for i in range(n):
        ang = start + 2 * math.pi * (i + rng.uniform(-0.2, 0.2)) / n
        reach = r + rng.uniform(5.0, 10.0)
        segs.append((0.0, 0.0, reach * math.cos(ang), reach * math.sin(ang)))
        ws.append(float(rng.uniform(2.0, 4.0)))
    segs = np.array(segs)
    pad = max(ws[1:]) / 2
    xs = np.concatenate([segs[:, 0], segs[:, 2]])
    ys = np.concatenate([segs[:, 1], segs[:, 3]])
    extent = (
        min(float(xs.min()) - pad, -r), min(float(ys.min()) - pad, -r),
        max(float(xs.max()) + pad, r), max(float(ys.max()) + pad, r),
    )
    return Shape(segs, np.array(ws), extent)


def _place(shape: Shape, rng, cfg: DatagenConfig, occupied: np.ndarray, angle: bool) -> bool:
    size = cfg.size
    for _ in range(MAX_TRIES):
        shape.theta = math.radians(rng.uniform(-cfg.max_angle_deg, cfg.max_angle_deg)) if angle else 0.0
        shape.center = (rng.uniform(0, size - 1), rng.uniform(0, size - 1))
        q = shape.quad()
        if q.min() < cfg.margin or q.max() > size - 1 - cfg.margin:
            continue
        grown = _grown_footprint(q, size, cfg.margin)
        if np.any(grown & occupied):
            continue
        occupied |= grown
        return True
    return False


def _grown_footprint(quad: np.ndarray, size: int, margin: float) -> np.ndarray:
    """Quad mask dilated by ``margin + 1`` pixels, computed in a local window."""
    pad = int(margin) + 2
    x0 = max(int(math.floor(quad[:, 0].min())) - pad, 0)
    y0 = max(int(math.floor(quad[:, 1].min())) - pad, 0)
    x1 = min(int(math.ceil(quad[:, 0].max())) + pad, size - 1)
    y1 = min(int(math.ceil(quad[:, 1].max())) + pad, size - 1)
    local = QuadBox(quad - [x0, y0]).mask(x1 - x0 + 1, y1 - y0 + 1)
    local = ndimage.binary_dilation(local, iterations=int(margin) + 1)
    out = np.zeros((size, size), dtype=bool)
    out[y0 : y1 + 1, x0 : x1 + 1] = local
    return out


def distractor_sigma(shape: Shape, size: int, swt_cfg: SwtConfig = SwtConfig()) -> float:
    """Stroke-width spread of a distractor drawn alone, dark on flat light ground.

    Measured on a local canvas; ``size`` caps the ray length as in the full scene.
    """
    x0, y0, x1, y1 = shape.extent
    side = int(math.ceil(math.hypot(x1 - x0, y1 - y0))) + 8
    local = dataclasses.replace(shape, center=((side - 1) / 2.0, (side - 1) / 2.0))
    canvas = np.where(local.raster(side), 0.1, 0.9)
    cfg = swt_cfg
    if cfg.max_ray_len is None:
        cfg = dataclasses.replace(cfg, max_ray_len=cfg.ray_limit(size, size))
    swmap = stroke_width_transform(GrayImage(canvas), cfg)
    return stroke_stats(collect_widths(swmap, QuadBox(local.quad())), TstConfig()).std_dev


def value_noise(rng: np.random.Generator, size: int) -> np.ndarray:
    """Perlin-like texture in [-1, 1] from a few upsampled random grids."""
    acc = np.zeros((size, size))
    amp = 1.0
    for cells in (4, 8, 16):
        grid = rng.uniform(-1, 1, size=(cells + 3, cells + 3))
        up = ndimage.zoom(grid, (size + 1) / cells, order=3, mode="nearest")[:size, :size]
        acc += amp * up
        amp *= 0.5
    acc -= acc.mean()
    peak = np.abs(acc).max()
    return acc / peak if peak > 0 else acc


def render_scene(domain: Domain, seed: int, cfg: DatagenConfig = DatagenConfig(),
                 index: int = 0, split_code: Optional[int] = None, info: Optional[dict] = None):
    """Render one scene. Returns ``(GrayImage, list[QuadBox])``.

    If ``info`` is a dict it receives the planted ``stroke_widths`` (one per
    word, GT order) and the ``distractors`` quads.
    """
    domain = Domain(domain)
    code = int(domain) if split_code is None else split_code
    rng = image_rng(seed, code, index)
    size = cfg.size
    occupied = np.zeros((size, size), dtype=bool)

    if domain is Domain.SOURCE:
        bg = rng.uniform(*cfg.source_bg) + rng.uniform(*cfg.source_texture_amp) * value_noise(rng, size)
    else:
        bg = rng.uniform(*cfg.target_bg) + rng.uniform(*cfg.texture_amp) * value_noise(rng, size)
    img = bg.copy()

    n_words = int(rng.integers(cfg.words_min, cfg.words_max + 1))
    boxes: List[QuadBox] = []
    widths: List[float] = []
    distractors: List[np.ndarray] = []
    for _ in range(n_words):
        word = make_word(rng, cfg)
        if not _place(word, rng, cfg, occupied, angle=True):
            log.warning("image %d: placement failed after %d tries, %d words", index,
                        MAX_TRIES, len(boxes))
            break
        mask = word.raster(size)
        if domain is Domain.SOURCE:
            img[mask] = rng.uniform(*cfg.source_ink)
        else:
            img[mask] = bg[mask] - rng.uniform(*cfg.target_contrast)
        boxes.append(QuadBox(word.quad()))
        widths.append(float(word.widths[0]))

    if domain is Domain.TARGET:
        makers = [make_blob] * int(rng.integers(cfg.blobs[0], cfg.blobs[1] + 1))
        makers += [make_hatch] * int(rng.integers(cfg.hatches[0], cfg.hatches[1] + 1))
        for maker in makers:
            for _ in range(MAX_TRIES):
                shape = maker(rng, cfg)
                if not _place(shape, rng, cfg, occupied, angle=maker is make_hatch):
                    shape = None
                    break
                if distractor_sigma(shape, size) > cfg.distractor_min_sigma:
                    break
                occupied &= ~_grown_footprint(shape.quad(), size, cfg.margin)
                shape = None
            if shape is None:
                continue
            dmask = shape.raster(size)
            img[dmask] = bg[dmask] - rng.uniform(*cfg.distractor_contrast)
            distractors.append(shape.quad())
        sigma = rng.uniform(*cfg.blur_sigma)
        if sigma > 0.05:
            img = ndimage.gaussian_filter(img, sigma, mode="nearest")
        img = img + rng.normal(0.0, rng.uniform(*cfg.noise_std), size=img.shape)
    elif cfg.source_noise_std[1] > 0:
        img = img + rng.normal(0.0, rng.uniform(*cfg.source_noise_std), size=img.shape)

    img = np.clip(img, 0.0, 1.0)
    # quantize so the in-memory image equals its PGM round trip
    img = np.floor(img * 255.0 + 0.5) / 255.0
    if info is not None:
        info["stroke_widths"] = widths
        info["distractors"] = distractors
    return GrayImage(img), boxes


# ---------------------------------------------------------------- dataset tree


def _split_domain(split: str) -> Domain:
    return Domain.SOURCE if split == "source" else Domain.TARGET


def image_name(i: int) -> str:
    return f"img_{i:05d}"


def _render_job(args):
    split, i, seed, cfg = args
    return render_scene(_split_domain(split), seed, cfg, index=i, split_code=SPLITS.index(split))


def make_dataset(root, n_source: int, n_target_train: int, n_target_test: int, seed: int,
                 cfg: DatagenConfig = DatagenConfig(), jobs: int = 1) -> dict:
    counts = {"source": n_source, "target_train": n_target_train, "target_test": n_target_test}
    manifest = {"seed": seed, "config": cfg.as_dict(), "splits": {}}
    for split in SPLITS:
        d = os.path.join(root, split)
        os.makedirs(d, exist_ok=True)
        work = [(split, i, seed, cfg) for i in range(counts[split])]
        if jobs > 1:
            with ProcessPoolExecutor(jobs) as ex:
                scenes = list(ex.map(_render_job, work))
        else:
            scenes = [_render_job(w) for w in work]
        ids = []
        for i, (image, boxes) in enumerate(scenes):
            name = image_name(i)
            write_pgm(image, os.path.join(d, name + ".pgm"))
            write_icdar_file(boxes, os.path.join(d, f"gt_{name}.txt"))
            ids.append(name)
        manifest["splits"][split] = {"count": len(ids), "ids": ids}
    blob = json.dumps(manifest, indent=2, sort_keys=True)
    manifest["config_hash"] = hashlib.sha256(blob.encode()).hexdigest()
    with open(os.path.join(root, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return manifest


def list_images(root, split: str) -> List[str]:
    d = os.path.join(root, split)
    return sorted(f[:-4] for f in os.listdir(d) if f.endswith(".pgm") and not f.startswith("gt_"))


def load_images(root, split: str) -> List[Tuple[str, GrayImage]]:
    """Images only; used for target_train so training never touches its GT."""
    d = os.path.join(root, split)
    return [(name, read_pgm(os.path.join(d, name + ".pgm"))) for name in list_images(root, split)]


def load_labeled(root, split: str) -> List[Tuple[str, GrayImage, List[QuadBox]]]:
    d = os.path.join(root, split)
    out = []
    for name in list_images(root, split):
        image = read_pgm(os.path.join(d, name + ".pgm"))
        out.append((name, image, read_icdar_file(os.path.join(d, f"gt_{name}.txt"))))
    return out
