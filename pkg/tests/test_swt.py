import math

import numpy as np
import pytest

from planted import bar_image, ring_image, within_one
from textadapt.core import NO_STROKE, GrayImage
from textadapt.swt import (
    Polarity,
    SwtConfig,
    detect_edges,
    merge_min,
    sobel_gradients,
    stroke_width_transform,
)


def test_sobel_unit_step_gives_unit_gradient():
    img = np.zeros((5, 6))
    img[:, 3:] = 1.0
    gx, gy = sobel_gradients(img)
    assert gx[2, 2] == 1.0 and gx[2, 3] == 1.0 and gx[2, 1] == 0.0
    assert np.all(gy == 0)


def test_edges_are_thin():
    img, _ = bar_image(5)
    e = detect_edges(img)
    rows = e.mask[20:44]
    # a vertical bar gives exactly one edge column per side
    assert np.all(rows.sum(axis=1) == 2)
    d = e.gradient_dir[e.mask]
    assert np.allclose(np.hypot(d[:, 0], d[:, 1]), 1.0)


@pytest.mark.parametrize("k", [3, 5, 9, 15])
def test_bar_width_recovered(k):
    img, mask = bar_image(k)
    sw = stroke_width_transform(img)
    assert within_one(sw, mask, k) >= 0.9
    assert np.median(sw.data[mask]) == k


@pytest.mark.parametrize("k", [3, 5, 9])
def test_ring_width_recovered(k):
    img, mask = ring_image(k)
    sw = stroke_width_transform(img)
    assert within_one(sw, mask, k) >= 0.9


@pytest.mark.parametrize("angle", [0.3, 0.7, 1.1])
def test_rotated_bar(angle):
    img, mask = bar_image(7, size=80, angle=angle)
    sw = stroke_width_transform(img)
    vals = sw.data[mask]
    assert np.median(vals[vals != NO_STROKE]) == pytest.approx(7, abs=1)


@pytest.mark.parametrize("value", [0.0, 0.37, 1.0])
def test_constant_image_has_no_strokes(value):
    sw = stroke_width_transform(GrayImage(np.full((20, 30), value)))
    assert np.all(sw.data == NO_STROKE)


def test_polarity():
    img, mask = bar_image(5)
    assert np.all(stroke_width_transform(img, SwtConfig(polarity="light")).data == NO_STROKE)
    inv = stroke_width_transform(img.inverted(), SwtConfig(polarity="light"))
    assert inv == stroke_width_transform(img)
    both = stroke_width_transform(img, SwtConfig(polarity=Polarity.BOTH))
    assert within_one(both, mask, 5) >= 0.9


def test_widths_monotone_in_planted_width():
    medians = []
    for k in range(3, 13):
        img, mask = bar_image(k)
        medians.append(np.median(stroke_width_transform(img).data[mask]))
    assert all(a < b for a, b in zip(medians, medians[1:]))


def test_max_ray_length_cuts_wide_strokes():
    img, mask = bar_image(15)
    sw = stroke_width_transform(img, SwtConfig(max_ray_len=10))
    assert np.all(sw.data[mask] == NO_STROKE)


def test_values_bounded_by_diagonal(rng):
    img = GrayImage(rng.random((24, 24)))
    sw = stroke_width_transform(img, SwtConfig(polarity="both"))
    v = sw.data[sw.support]
    assert np.all(v >= 1) and np.all(v <= math.hypot(24, 24))


def test_deterministic():
    img, _ = ring_image(5)
    a = stroke_width_transform(img).data
    b = stroke_width_transform(img).data
    assert a.tobytes() == b.tobytes()


def test_merge_min():
    a = np.array([NO_STROKE, 3.0, 5.0, NO_STROKE])
    b = np.array([2.0, NO_STROKE, 4.0, NO_STROKE])
    assert merge_min(a, b).tolist() == [2.0, 3.0, 4.0, NO_STROKE]


@pytest.mark.parametrize("kw", [dict(canny_low=0.3, canny_high=0.1), dict(max_ray_len=0.5),
                                dict(angle_tolerance=0.0), dict(polarity="sideways")])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SwtConfig(**kw)
