import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, strategies as st

from shapely.geometry import Point, Polygon

from textadapt.core import NO_STROKE, QuadBox, StrokeWidthMap
from textadapt.strokestats import (
    SIGMA,
    SWS,
    TstConfig,
    collect_widths,
    filter_boxes,
    mode_width,
    rejection_report,
    stroke_stats,
)

from conftest import random_convex_quad


def naive_stats(widths, floor=1e-6):
    n = len(widths)
    mu = sum(widths) / n
    var = sum((w - mu) ** 2 for w in widths) / n
    counts = Counter(math.floor(w + 0.5) for w in widths)
    top = max(counts.values())
    mode = min(v for v, c in counts.items() if c == top)
    return mu, math.sqrt(var), mode, mode / max(var, floor)


def swmap_from(arr):
    return StrokeWidthMap(np.asarray(arr, dtype=np.int32))


def box_xywh(x0, y0, x1, y1):
    return QuadBox(np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=np.float64))


# collect_widths

def test_collect_all_sentinel_is_empty():
    m = swmap_from(np.full((8, 8), NO_STROKE))
    assert collect_widths(m, box_xywh(1, 1, 5, 5)).size == 0


def test_collect_two_by_two_skips_sentinel():
    arr = np.full((6, 6), NO_STROKE)
    arr[2, 2], arr[2, 3], arr[3, 2], arr[3, 3] = 3, 3, NO_STROKE, 5
    got = collect_widths(swmap_from(arr), box_xywh(2, 2, 3, 3))
    assert sorted(got.tolist()) == [3, 3, 5]


def test_collect_rotated_quad_matches_pixel_oracle(rng):
    for _ in range(20):
        arr = rng.integers(1, 12, size=(40, 40))
        arr[rng.random((40, 40)) < 0.3] = NO_STROKE
        quad = QuadBox(random_convex_quad(rng, 2, 37, min_area=20.0))
        got = sorted(collect_widths(swmap_from(arr), quad).tolist())
        poly = Polygon(quad.vertices)
        want = []
        for r in range(40):
            for c in range(40):
                if arr[r, c] != NO_STROKE and poly.covers(Point(c, r)):
                    want.append(float(arr[r, c]))
        assert got == sorted(want)


# stroke_stats

def test_uniform_widths():
    s = stroke_stats([4, 4, 4, 4])
    assert (s.n_samples, s.mean_width, s.std_dev, s.mode_width) == (4, 4.0, 0.0, 4.0)
    assert s.sws == pytest.approx(4 / 1e-6)


def test_three_three_three_five():
    s = stroke_stats([3, 3, 3, 5])
    assert s.mean_width == pytest.approx(3.5)
    assert s.std_dev == pytest.approx(math.sqrt(0.75), abs=1e-12)
    assert s.mode_width == 3.0
    assert s.sws == pytest.approx(4.0, abs=1e-12)


def test_two_two_ten_ten():
    s = stroke_stats([2, 2, 10, 10])
    assert (s.mean_width, s.std_dev, s.mode_width) == (6.0, 4.0, 2.0)
    assert s.sws == pytest.approx(0.125)


def test_empty_stats_are_zero():
    s = stroke_stats([])
    assert (s.n_samples, s.mean_width, s.std_dev, s.mode_width, s.sws) == (0, 0, 0, 0, 0)
    assert s.low_evidence


def test_mode_ties_go_small():
    assert mode_width([7, 7, 2, 2, 5]) == 2.0
    assert mode_width([2.6, 3.4, 4.0]) == 3.0


def test_stats_match_naive_oracle_on_1000_multisets(rng):
    for _ in range(1000):
        n = int(rng.integers(1, 60))
        if rng.random() < 0.5:
            w = rng.integers(1, 20, size=n).astype(float).tolist()
        else:
            w = rng.uniform(0.5, 20.0, size=n).tolist()
        mu, sd, mode, sws = naive_stats(w)
        s = stroke_stats(w)
        assert s.mean_width == pytest.approx(mu, abs=1e-9)
        assert s.std_dev == pytest.approx(sd, abs=1e-9)
        assert s.mode_width == mode
        assert s.sws == pytest.approx(sws, rel=1e-9)


@given(st.integers(1, 30), st.floats(1e-2, 10), st.floats(1e-2, 10))
def test_sws_decreasing_in_sigma(mode, s1, s2):
    # two-point spreads around the mode keep w_v fixed while sigma varies
    def sws_for(sd):
        return stroke_stats([mode] * 5 + [mode - sd, mode + sd]).sws, stroke_stats(
            [mode] * 5 + [mode - sd, mode + sd]
        ).std_dev

    (a, sa), (b, sb) = sws_for(s1), sws_for(s2)
    if sa < sb - 1e-9:
        assert a > b


def test_config_validation():
    for bad in [dict(eta=0), dict(eta=1.5), dict(eps1=-1), dict(eps2=-0.1),
                dict(score_threshold=1.0), dict(sigma_floor=0), dict(min_box_area=-1)]:
        with pytest.raises(ValueError):
            TstConfig(**bad)


# filter_boxes

def _map_with_boxes(fills):
    arr = np.full((20, 10 * len(fills)), NO_STROKE)
    boxes = []
    for i, vals in enumerate(fills):
        block = np.full(20, NO_STROKE)
        block[: len(vals)] = vals
        arr[0:4, 10 * i : 10 * i + 5] = block.reshape(4, 5)
        boxes.append(box_xywh(10 * i, 0, 10 * i + 4, 3))
    return swmap_from(arr), boxes


def test_filter_worked_examples():
    m, boxes = _map_with_boxes([[3, 3, 3, 5] * 3, [2, 2, 10, 10] * 3])
    kept, stats, rejected = filter_boxes(boxes, m)
    assert kept == [boxes[0]]
    assert rejected == [(boxes[1], SIGMA)]
    assert stats[0].sws == pytest.approx(4.0)


def test_filter_sws_rejection():
    # sigma 2.5 passes eps1 but 3 / 6.25 = 0.48 ... use mode 1 for 1 / 6.25 < 0.3
    vals = [1] * 6 + [6] * 4 + [1, 1]
    s = stroke_stats(vals)
    assert s.std_dev <= 3.0 and s.sws < 0.30
    m, boxes = _map_with_boxes([vals])
    kept, _, rejected = filter_boxes(boxes, m)
    assert kept == [] and rejected == [(boxes[0], SWS)]


def test_low_evidence_fails_open():
    m, boxes = _map_with_boxes([[2, 2, 10, 10]])
    kept, stats, rejected = filter_boxes(boxes, m)
    assert kept == boxes and rejected == [] and stats[0].low_evidence


def test_filter_empty():
    m = swmap_from(np.full((5, 5), NO_STROKE))
    assert filter_boxes([], m) == ([], [], [])


def test_filter_partitions_input(rng):
    arr = rng.integers(1, 15, size=(50, 50))
    m = swmap_from(arr)
    boxes = [QuadBox(random_convex_quad(rng, 0, 49, min_area=10.0)) for _ in range(30)]
    kept, stats, rejected = filter_boxes(boxes, m)
    assert len(stats) == len(boxes)
    rej = [b for b, _ in rejected]
    assert len(kept) + len(rej) == len(boxes)
    ids = {id(b) for b in kept} | {id(b) for b in rej}
    assert ids == {id(b) for b in boxes}
    # order preserved
    assert [b for b in boxes if any(b is k for k in kept)] == kept


def test_uniform_boxes_always_kept(rng):
    for w in range(1, 21):
        m, boxes = _map_with_boxes([[w] * 20])
        assert filter_boxes(boxes, m)[0] == boxes


def test_rejection_report_format():
    m, boxes = _map_with_boxes([[3] * 12, [2, 2, 10, 10] * 3])
    _, stats, _ = filter_boxes(boxes, m)
    lines = rejection_report(stats).splitlines()
    assert lines[0] == "box_index,reason,sigma,sws,n_samples"
    assert len(lines) == 2 and lines[1].startswith("1,SIGMA,4.0,0.125,12")
