"""Planar hulls: convex hull and two concave-hull strategies.

* ``"chi"`` (default): start from the Delaunay triangulation's convex
  boundary and repeatedly peel the boundary triangle behind the longest
  boundary edge, as long as that edge exceeds a length threshold and the
  peel keeps the polygon simple. The threshold is the median distance from
  a point to its k-th nearest neighbour, so ``k`` plays the same role as in
  the walk below. Always returns a simple polygon containing every point.
* ``"knn"``: the k-nearest-neighbour boundary walk, retried with larger k
  whenever it gets stuck or leaves points outside.

Polygons are (m, 2) vertex arrays in counter-clockwise order without the
closing vertex repeated.
"""

from __future__ import annotations

import heapq

import numpy as np
from scipy.spatial import Delaunay, QhullError, cKDTree

from ..errors import DegenerateGeometry

_EPS = 1e-12


def _cross(o, a, b) -> float:
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _unique(points: np.ndarray) -> np.ndarray:
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2:
        raise ValueError("points must be an (n, 2) array")
    return np.unique(pts, axis=0)


def check_not_collinear(points: np.ndarray) -> None:
    pts = _unique(points)
    if len(pts) < 3:
        raise DegenerateGeometry(f"{len(pts)} distinct points cannot enclose an area")
    centred = pts - pts.mean(axis=0)
    s = np.linalg.svd(centred, compute_uv=False)
    if s[1] <= 1e-10 * max(s[0], 1e-300):
        raise DegenerateGeometry("points are collinear")


def convex_hull(points: np.ndarray) -> np.ndarray:
    """Andrew's monotone chain; collinear boundary points are dropped."""
    check_not_collinear(points)
    pts = sorted(map(tuple, _unique(points)))
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
    return np.array(lower[:-1] + upper[:-1])


def _segments_intersect(p1, p2, q1, q2) -> bool:
    """Proper or touching intersection of segments p1p2 and q1q2 (shared endpoints excluded)."""
    if (np.allclose(p1, q1) or np.allclose(p1, q2) or np.allclose(p2, q1) or np.allclose(p2, q2)):
        return False
    d1 = _cross(q1, q2, p1)
    d2 = _cross(q1, q2, p2)
    d3 = _cross(p1, p2, q1)
    d4 = _cross(p1, p2, q2)
    if ((d1 > _EPS and d2 < -_EPS) or (d1 < -_EPS and d2 > _EPS)) and \
            ((d3 > _EPS and d4 < -_EPS) or (d3 < -_EPS and d4 > _EPS)):
        return True

    def on_seg(a, b, c, d):
        return abs(d) <= _EPS and min(a[0], b[0]) - _EPS <= c[0] <= max(a[0], b[0]) + _EPS \
            and min(a[1], b[1]) - _EPS <= c[1] <= max(a[1], b[1]) + _EPS

    return on_seg(q1, q2, p1, d1) or on_seg(q1, q2, p2, d2) or on_seg(p1, p2, q1, d3) or on_seg(p1, p2, q2, d4)


def polygon_area(poly: np.ndarray) -> float:
    x, y = poly[:, 0], poly[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(y, np.roll(x, -1)))


def is_simple(poly: np.ndarray) -> bool:
    m = len(poly)
    for i in range(m):
        a, b = poly[i], poly[(i + 1) % m]
        for j in range(i + 2, m):
            if i == 0 and j == m - 1:
                continue
            if _segments_intersect(a, b, poly[j], poly[(j + 1) % m]):
                return False
    return True


def boundary_distance(poly: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Euclidean distance from every point to the polygon boundary."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    a = poly
    b = np.roll(poly, -1, axis=0)
    ab = b - a
    denom = np.maximum(np.einsum("ij,ij->i", ab, ab), 1e-300)
    ap = pts[:, None, :] - a[None, :, :]
    t = np.clip(np.einsum("pij,ij->pi", ap, ab) / denom, 0.0, 1.0)
    closest = a[None] + t[..., None] * ab[None]
    return np.sqrt(np.min(np.sum((pts[:, None, :] - closest) ** 2, axis=2), axis=1))


def point_in_polygon(poly: np.ndarray, points: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Even-odd ray casting; points within ``tol`` of the boundary count as inside."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    x, y = pts[:, 0][:, None], pts[:, 1][:, None]
    xa, ya = poly[:, 0][None], poly[:, 1][None]
    xb, yb = np.roll(poly[:, 0], -1)[None], np.roll(poly[:, 1], -1)[None]
    straddle = (ya > y) != (yb > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xcross = xa + (y - ya) * (xb - xa) / (yb - ya)
    inside = np.sum(straddle & (x < xcross), axis=1) % 2 == 1
    return inside | (boundary_distance(poly, pts) <= tol)


def outside_distance(poly: np.ndarray, points: np.ndarray) -> np.ndarray:
    """0 for points inside (or on) the polygon, distance to its boundary otherwise."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    d = boundary_distance(poly, pts)
    return np.where(point_in_polygon(poly, pts), 0.0, d)


def _turn_angle(prev_dir: float, origin, pts: np.ndarray) -> np.ndarray:
    """Clockwise turn from ``prev_dir`` to each candidate direction, in [0, 2 pi)."""
    ang = np.arctan2(pts[:, 1] - origin[1], pts[:, 0] - origin[0])
    return (prev_dir - ang) % (2.0 * np.pi)


def _knn_attempt(pts: np.ndarray, k: int) -> np.ndarray | None:
    n = len(pts)
    first = int(np.lexsort((pts[:, 0], pts[:, 1]))[0])  # lowest y, then lowest x
    hull = [first]
    available = np.ones(n, dtype=bool)
    available[first] = False
    current = first
    prev_dir = np.pi  # pretend we arrived heading west, so the walk starts eastward
    step = 1
    while True:
        if step == 3:
            available[first] = True
        idx = np.nonzero(available)[0]
        if idx.size == 0:
            return None
        d = np.sum((pts[idx] - pts[current]) ** 2, axis=1)
        near = idx[np.argsort(d, kind="stable")[:k]]
        # Prefer the sharpest right-hand turn so the walk hugs the point set counter-clockwise.
        order = np.argsort(-_turn_angle(prev_dir, pts[current], pts[near]), kind="stable")
        chosen = None
        for cand in near[order]:
            closing = cand == first
            crosses = False
            # Skip the edge adjacent to the new one; when closing also skip the first edge.
            last = len(hull) - 2
            start = 1 if closing else 0
            for j in range(start, last):
                if _segments_intersect(pts[current], pts[cand], pts[hull[j]], pts[hull[j + 1]]):
                    crosses = True
                    break
            if not crosses:
                chosen = int(cand)
                break
        if chosen is None:
            return None
        prev_dir = float(np.arctan2(pts[current][1] - pts[chosen][1], pts[current][0] - pts[chosen][0]))
        current = chosen
        if current == first:
            break
        hull.append(current)
        available[current] = False
        step += 1
    if current != first or len(hull) < 3:
        return None
    poly = pts[hull]
    if polygon_area(poly) < 0:
        poly = poly[::-1]
    if not np.all(point_in_polygon(poly, pts, tol=1e-9)):
        return None
    return poly


def _chi_shape(pts: np.ndarray, k: int) -> np.ndarray:
    try:
        tri = Delaunay(pts)
    except QhullError as exc:
        raise DegenerateGeometry(f"triangulation failed: {exc}") from exc
    kk = min(k, len(pts) - 1)
    dist, _ = cKDTree(pts).query(pts, k=kk + 1)
    threshold = float(np.median(dist[:, kk]))

    # Edge -> triangles sharing it; boundary edges have exactly one.
    owners: dict[tuple[int, int], list[int]] = {}
    for t, simplex in enumerate(tri.simplices):
        for a, b in ((0, 1), (1, 2), (2, 0)):
            e = tuple(sorted((int(simplex[a]), int(simplex[b]))))
            owners.setdefault(e, []).append(t)
    alive = np.ones(len(tri.simplices), dtype=bool)
    boundary = {e for e, ts in owners.items() if len(ts) == 1}
    on_boundary = np.zeros(len(pts), dtype=bool)
    for a, b in boundary:
        on_boundary[a] = on_boundary[b] = True

    def length(e):
        return float(np.hypot(*(pts[e[0]] - pts[e[1]])))

    heap = [(-length(e), e) for e in boundary]
    heapq.heapify(heap)
    while heap:
        neg, e = heapq.heappop(heap)
        if -neg <= threshold:
            break
        if e not in boundary:
            continue
        t = next(t for t in owners[e] if alive[t])
        v = int(next(x for x in tri.simplices[t] if x not in e))
        # Peeling onto an existing boundary vertex would pinch the polygon.
        if on_boundary[v]:
            continue
        alive[t] = False
        boundary.discard(e)
        on_boundary[v] = True
        for w in e:
            ne = tuple(sorted((w, v)))
            boundary.add(ne)
            heapq.heappush(heap, (-length(ne), ne))

    nxt: dict[int, list[int]] = {}
    for a, b in boundary:
        nxt.setdefault(a, []).append(b)
        nxt.setdefault(b, []).append(a)
    start = min(nxt)
    order = [start]
    prev, cur = None, start
    while True:
        a, b = nxt[cur]
        step = b if a == prev else a
        if step == start:
            break
        order.append(step)
        prev, cur = cur, step
    poly = pts[order]
    if polygon_area(poly) < 0:
        poly = poly[::-1]
    return poly


def concave_hull(points: np.ndarray, k: int | None = 8, strategy: str = "chi") -> np.ndarray:
    """Concave hull with concavity ``k``; ``k=None`` gives the convex hull.

    Larger ``k`` gives a smoother, more convex boundary.
    """
    check_not_collinear(points)
    if k is None:
        return convex_hull(points)
    pts = _unique(points)
    k = max(3, int(k))
    if strategy == "chi":
        return _chi_shape(pts, k)
    if strategy != "knn":
        raise ValueError(f"unknown concave-hull strategy {strategy!r}")
    while k < len(pts):
        poly = _knn_attempt(pts, k)
        if poly is not None:
            return poly
        k += 1
    return convex_hull(points)
