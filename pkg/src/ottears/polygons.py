"""Small 2D convex polygon toolkit.

Polygons are (V, 2) float arrays of vertices in counterclockwise order.
Clipping keeps per-edge tags so Laguerre-cell walls remember which neighbor
generated them.
"""

from __future__ import annotations

import numpy as np


def polygon_area(verts):
    v = np.asarray(verts, dtype=float)
    if len(v) < 3:
        return 0.0
    x, y = v[:, 0], v[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def polygon_moment(verts):
    """(area, integral of x dA, integral of y dA) over the polygon."""
    v = np.asarray(verts, dtype=float)
    if len(v) < 3:
        return 0.0, 0.0, 0.0
    x, y = v[:, 0], v[:, 1]
    xn, yn = np.roll(x, -1), np.roll(y, -1)
    cross = x * yn - xn * y
    area = 0.5 * float(cross.sum())
    mx = float(((x + xn) * cross).sum()) / 6.0
    my = float(((y + yn) * cross).sum()) / 6.0
    return area, mx, my


def clip_halfplane(verts, tags, a, b, new_tag):
    """Clip polygon to {x : <a, x> <= b}; cut edges get ``new_tag``.

    ``tags[i]`` belongs to the edge from vertex i to vertex i+1.  Returns
    (verts, tags); empty arrays when the polygon is wiped out.
    """
    v = np.asarray(verts, dtype=float)
    if len(v) == 0:
        return v, tags
    margin = v @ a - b
    inside = margin <= 0.0
    if inside.all():
        return verts, tags
    if not inside.any():
        return v[:0], tags[:0]
    out_v = []
    out_t = []
    m = len(v)
    for i in range(m):
        j = (i + 1) % m
        if inside[i]:
            # The part of edge i starting at v_i keeps its tag.
            out_v.append(v[i])
            out_t.append(tags[i])
        if inside[i] != inside[j]:
            t = margin[i] / (margin[i] - margin[j])
            out_v.append(v[i] + t * (v[j] - v[i]))
            # Leaving: the chord along the cut line starts here (new_tag).
            # Entering: the remainder of edge i starts here (original tag).
            out_t.append(new_tag if inside[i] else tags[i])
    return np.asarray(out_v), list(out_t)


def box_polygon(low, high):
    (x0, y0), (x1, y1) = low, high
    return np.array([[x0, y0], [x1, y0], [x1, y1], [x0, y1]], dtype=float)


def convex_hull_2d(points):
    """Monotone-chain convex hull; counterclockwise, no repeated endpoint."""
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if len(pts) <= 2:
        return pts
    pts = pts[np.lexsort((pts[:, 1], pts[:, 0]))]

    def half(seq):
        out = []
        for p in seq:
            while len(out) >= 2:
                u = out[-1] - out[-2]
                w = p - out[-2]
                if u[0] * w[1] - u[1] * w[0] <= 0:
                    out.pop()
                else:
                    break
            out.append(p)
        return out

    lower = half(pts)
    upper = half(pts[::-1])
    hull = np.asarray(lower[:-1] + upper[:-1])
    return hull


def points_in_convex_polygon(points, poly, slack=0.0):
    """Boolean mask: which points lie inside a CCW convex polygon."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.asarray(poly, dtype=float)
    if len(poly) == 0:
        return np.zeros(len(pts), dtype=bool)
    if len(poly) == 1:
        return np.all(np.abs(pts - poly[0]) <= slack, axis=1)
    edges = np.roll(poly, -1, axis=0) - poly
    rel = pts[:, None, :] - poly[None, :, :]
    cross = edges[None, :, 0] * rel[:, :, 1] - edges[None, :, 1] * rel[:, :, 0]
    return np.all(cross >= -slack, axis=1)


def segment_point_distance(points, seg_a, seg_b):
    """Distances from points (N,2) to one segment [a, b]."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.asarray(seg_a, dtype=float)
    b = np.asarray(seg_b, dtype=float)
    ab = b - a
    denom = float(ab @ ab)
    if denom == 0.0:
        return np.linalg.norm(pts - a, axis=1)
    t = np.clip((pts - a) @ ab / denom, 0.0, 1.0)
    proj = a + t[:, None] * ab
    return np.linalg.norm(pts - proj, axis=1)


def _segments(poly):
    poly = np.asarray(poly, dtype=float)
    if len(poly) == 1:
        return poly, poly
    return poly, np.roll(poly, -1, axis=0)


def points_to_segments_min(points, seg_a, seg_b):
    """Min distance from each point to a family of segments (vectorized)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = np.atleast_2d(np.asarray(seg_a, dtype=float))
    b = np.atleast_2d(np.asarray(seg_b, dtype=float))
    ab = b - a                                    # (m, 2)
    denom = np.einsum("md,md->m", ab, ab)
    denom = np.where(denom == 0.0, 1.0, denom)
    rel = pts[:, None, :] - a[None, :, :]         # (n, m, 2)
    t = np.clip(np.einsum("nmd,md->nm", rel, ab) / denom, 0.0, 1.0)
    proj = a[None, :, :] + t[..., None] * ab[None, :, :]
    d = np.linalg.norm(pts[:, None, :] - proj, axis=2)
    return d.min(axis=1)


def decimate_polygon(poly, max_vertices):
    """Evenly subsample a convex polygon's vertex loop."""
    poly = np.asarray(poly, dtype=float)
    if len(poly) <= max_vertices:
        return poly
    idx = np.unique(np.linspace(0, len(poly) - 1, max_vertices).astype(int))
    return poly[idx]


def points_to_polygon_distance(points, poly):
    """Distance from each point to a convex polygon (0 inside)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    poly = np.atleast_2d(np.asarray(poly, dtype=float))
    if len(poly) == 1:
        return np.linalg.norm(pts - poly[0], axis=1)
    a, b = _segments(poly)
    dists = np.stack([segment_point_distance(pts, a[k], b[k])
                      for k in range(len(a))], axis=1).min(axis=1)
    if len(poly) >= 3:
        dists[points_in_convex_polygon(pts, poly)] = 0.0
    return dists


def convex_polygon_distance(p, q):
    """Distance between two convex polygons (0 when they intersect).

    Accepts degenerate polygons (points, segments).  For disjoint convex
    shapes the minimum distance is attained between an endpoint of one and an
    edge of the other, so checking both directions suffices.
    """
    p = np.atleast_2d(np.asarray(p, dtype=float))
    q = np.atleast_2d(np.asarray(q, dtype=float))
    if len(p) == 0 or len(q) == 0:
        return np.inf
    if len(p) >= 3 and points_in_convex_polygon(q, p).any():
        return 0.0
    if len(q) >= 3 and points_in_convex_polygon(p, q).any():
        return 0.0
    pa, pb = _segments(p)
    qa, qb = _segments(q)
    best = min(float(points_to_segments_min(p, qa, qb).min()),
               float(points_to_segments_min(q, pa, pb).min()))
    # Proper edge crossings (interiors intersecting without contained
    # vertices) are covered by the containment checks for convex inputs
    # except in exact-touch cases, which report distance ~0 anyway.
    if len(p) >= 2 and len(q) >= 2 and _convex_polygons_intersect(p, q):
        return 0.0
    return best


def _convex_polygons_intersect(p, q):
    """Separating-axis test for convex polygons (degenerate allowed)."""
    for poly in (p, q):
        if len(poly) < 2:
            continue
        a0, a1 = _segments(poly)
        normals = np.stack([-(a1 - a0)[:, 1], (a1 - a0)[:, 0]], axis=1)
        norms = np.linalg.norm(normals, axis=1)
        normals = normals[norms > 0] / norms[norms > 0][:, None]
        for nrm in normals:
            lo_p, hi_p = float(np.min(p @ nrm)), float(np.max(p @ nrm))
            lo_q, hi_q = float(np.min(q @ nrm)), float(np.max(q @ nrm))
            if hi_p < lo_q or hi_q < lo_p:
                return False
    return True
