"""Planar polygon helpers in image coordinates.

Pixel (row r, col c) has its center at (x=c, y=r) and covers the unit
square around it. The y axis points down, so a clockwise polygon as seen
on screen has a positive shoelace sum.
"""

from __future__ import annotations

import numpy as np

_EPS = 1e-9


def signed_area(pts) -> float:
    pts = np.asarray(pts, dtype=np.float64)
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(pts) -> float:
    return abs(signed_area(pts))


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _segments_cross(p1, p2, p3, p4) -> bool:
    """Proper or touching intersection of segments p1p2 and p3p4."""
    d1 = _cross(p3, p4, p1)
    d2 = _cross(p3, p4, p2)
    d3 = _cross(p1, p2, p3)
    d4 = _cross(p1, p2, p4)
    if ((d1 > 0 and d2 < 0) or (d1 < 0 and d2 > 0)) and (
        (d3 > 0 and d4 < 0) or (d3 < 0 and d4 > 0)
    ):
        return True

    def on_seg(p, q, r):
        return (
            min(p[0], q[0]) - _EPS <= r[0] <= max(p[0], q[0]) + _EPS
            and min(p[1], q[1]) - _EPS <= r[1] <= max(p[1], q[1]) + _EPS
        )

    if abs(d1) <= _EPS and on_seg(p3, p4, p1):
        return True
    if abs(d2) <= _EPS and on_seg(p3, p4, p2):
        return True
    if abs(d3) <= _EPS and on_seg(p1, p2, p3):
        return True
    if abs(d4) <= _EPS and on_seg(p1, p2, p4):
        return True
    return False


def quad_is_simple(pts) -> bool:
    """True when the two pairs of non-adjacent edges do not meet."""
    p = [tuple(v) for v in np.asarray(pts, dtype=np.float64)]
    return not (
        _segments_cross(p[0], p[1], p[2], p[3]) or _segments_cross(p[1], p[2], p[3], p[0])
    )


def is_convex(pts) -> bool:
    pts = np.asarray(pts, dtype=np.float64)
    n = len(pts)
    sign = 0
    for i in range(n):
        c = _cross(pts[i], pts[(i + 1) % n], pts[(i + 2) % n])
        if abs(c) <= _EPS:
            continue
        s = 1 if c > 0 else -1
        if sign == 0:
            sign = s
        elif s != sign:
            return False
    return True


def points_in_polygon(xs, ys, poly) -> np.ndarray:
    """Vectorized point-in-polygon test; points on the boundary count as inside."""
    xs = np.asarray(xs, dtype=np.float64)
    ys = np.asarray(ys, dtype=np.float64)
    poly = np.asarray(poly, dtype=np.float64)
    inside = np.zeros(np.broadcast(xs, ys).shape, dtype=bool)
    on_edge = np.zeros_like(inside)
    n = len(poly)
    for i in range(n):
        x1, y1 = poly[i]
        x2, y2 = poly[(i + 1) % n]
        # crossing-number half-open rule
        straddle = (y1 > ys) != (y2 > ys)
        with np.errstate(divide="ignore", invalid="ignore"):
            x_at = x1 + (ys - y1) * (x2 - x1) / (y2 - y1)
        inside ^= straddle & (xs < x_at)
        # boundary
        cross = (x2 - x1) * (ys - y1) - (y2 - y1) * (xs - x1)
        seg_len = np.hypot(x2 - x1, y2 - y1)
        within = (
            (xs >= min(x1, x2) - _EPS)
            & (xs <= max(x1, x2) + _EPS)
            & (ys >= min(y1, y2) - _EPS)
            & (ys <= max(y1, y2) + _EPS)
        )
        on_edge |= within & (np.abs(cross) <= _EPS * max(seg_len, 1.0))
    return inside | on_edge


def polygon_mask(poly, width: int, height: int) -> np.ndarray:
    """Boolean (height, width) raster of pixels whose centers lie in ``poly``."""
    poly = np.asarray(poly, dtype=np.float64)
    mask = np.zeros((height, width), dtype=bool)
    x0 = max(int(np.floor(poly[:, 0].min())), 0)
    x1 = min(int(np.ceil(poly[:, 0].max())), width - 1)
    y0 = max(int(np.floor(poly[:, 1].min())), 0)
    y1 = min(int(np.ceil(poly[:, 1].max())), height - 1)
    if x0 > x1 or y0 > y1:
        return mask
    ys, xs = np.mgrid[y0 : y1 + 1, x0 : x1 + 1]
    mask[y0 : y1 + 1, x0 : x1 + 1] = points_in_polygon(xs, ys, poly)
    return mask


def convex_hull(points) -> np.ndarray:
    """Andrew's monotone chain; returns hull vertices in positive-shoelace order."""
    pts = np.unique(np.asarray(points, dtype=np.float64), axis=0)
    if len(pts) <= 2:
        return pts
    pts = [tuple(p) for p in pts]  # unique() already sorted lexicographically

    lower: list = []
    for p in pts:
        while len(lower) >= 2 and _cross(lower[-2], lower[-1], p) <= 0:
            lower.pop()
        lower.append(p)
    upper: list = []
    for p in reversed(pts):
        while len(upper) >= 2 and _cross(upper[-2], upper[-1], p) <= 0:
            upper.pop()
        upper.append(p)
    hull = np.array(lower[:-1] + upper[:-1])
    if signed_area(hull) < 0:
        hull = hull[::-1]
    return hull


def canonical_quad(pts) -> np.ndarray:
    """Clockwise (screen) order, starting from the vertex nearest the top-left."""
    pts = np.asarray(pts, dtype=np.float64)
    if signed_area(pts) < 0:
        pts = pts[::-1]
    start = int(np.lexsort((pts[:, 1], pts[:, 0] + pts[:, 1]))[0])
    return np.roll(pts, -start, axis=0)


def min_area_rect(points) -> np.ndarray:
    """Minimum-area enclosing rectangle by rotating calipers over the hull edges."""
    hull = convex_hull(points)
    if len(hull) < 3:
        raise ValueError("min_area_rect needs at least three non-collinear points")
    best = None
    n = len(hull)
    for i in range(n):
        edge = hull[(i + 1) % n] - hull[i]
        length = np.hypot(*edge)
        if length <= _EPS:
            continue
        u = edge / length
        v = np.array([-u[1], u[0]])
        pu = hull @ u
        pv = hull @ v
        area = (pu.max() - pu.min()) * (pv.max() - pv.min())
        if best is None or area < best[0] - 1e-12:
            best = (area, u, v, pu.min(), pu.max(), pv.min(), pv.max())
    _, u, v, a0, a1, b0, b1 = best
    corners = np.array(
        [a0 * u + b0 * v, a1 * u + b0 * v, a1 * u + b1 * v, a0 * u + b1 * v]
    )
    return canonical_quad(corners)


def clip_convex(subject, clipper) -> np.ndarray:
    """Sutherland-Hodgman clip of ``subject`` by convex ``clipper``.

    Both polygons must share the positive-shoelace orientation.
    """
    output = [tuple(p) for p in np.asarray(subject, dtype=np.float64)]
    clip = np.asarray(clipper, dtype=np.float64)
    m = len(clip)
    for i in range(m):
        if not output:
            break
        a = clip[i]
        b = clip[(i + 1) % m]
        inp = output
        output = []

        def inside(p):
            return _cross(a, b, p) >= -_EPS

        def intersect(p, q):
            # line p-q against line a-b
            dx1, dy1 = q[0] - p[0], q[1] - p[1]
            dx2, dy2 = b[0] - a[0], b[1] - a[1]
            den = dx1 * dy2 - dy1 * dx2
            if abs(den) <= 1e-15:
                return q
            t = ((a[0] - p[0]) * dy2 - (a[1] - p[1]) * dx2) / den
            return (p[0] + t * dx1, p[1] + t * dy1)

        prev = inp[-1]
        for cur in inp:
            if inside(cur):
                if not inside(prev):
                    output.append(intersect(prev, cur))
                output.append(cur)
            elif inside(prev):
                output.append(intersect(prev, cur))
            prev = cur
    return np.array(output, dtype=np.float64).reshape(-1, 2)
