"""Finite pieces of stable and unstable manifolds, and their intersections.

A piece is grown from a fundamental domain on the relevant eigendirection:
the bracket I = [fp + s0 v, fp + lambda s0 v] maps onto the adjacent bracket
under the return map (unstable) or the time-reversed return map (stable), so
the union of its first `depth` images is a connected arc of the manifold
parameterized away from the fixed point.  New sample points are inserted by
bisecting the previous depth's polyline and mapping once, until consecutive
images sit closer than max_spacing.

Stable pieces use the backward return map (the first return of the
time-reversed flow), not an inversion of the forward map.  Because the
discrete forward and backward flows are only inverse up to the integrator's
reversibility defect, manifold work wants a finer step than portrait work;
`refine_section` builds the conventional quarter-step section.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .fixed_points import FixedPoint, chart_distance
from .model import Parameters
from .poincare import (InadmissibleSeed, NoReturn, Section, backward_return_map,
                       build_section, half_circle_dist, return_map, wrap_half)


def refine_section(section: Section, params: Parameters,
                   factor: int = 4) -> Section:
    """The same section with the integration step divided by factor."""
    return replace(section, delta=section.delta / factor,
                   t_min=section.t_min / factor)


@dataclass
class ManifoldPiece:
    """A connected arc of a manifold, grown to a given depth.

    points is the ordered polyline from the fundamental domain outward;
    point_depths labels each point with the number of map images applied to
    it.  segments[d] is the image of the fundamental domain after d maps
    (segments[0] is the discretized domain itself).  A truncated piece
    stopped early; reason says why and at which depth.
    """

    owner: FixedPoint
    kind: str
    branch: int
    points: np.ndarray
    point_depths: np.ndarray
    segments: list[np.ndarray]
    depth: int
    truncated: bool = False
    reason: str = ""

    def arc_length(self, depth: int | None = None) -> float:
        """Length of one depth's segment, or of the whole polyline."""
        pts = self.points if depth is None else self.segments[depth]
        return float(sum(chart_distance(pts[i], pts[i + 1])
                         for i in range(len(pts) - 1)))


def _interp(a, b, t: float) -> np.ndarray:
    """Linear interpolation between seeds, g taken on the half circle."""
    g = a[0] + t * half_circle_dist(b[0], a[0])
    return np.array([wrap_half(g), a[1] + t * (b[1] - a[1])])


def grow_manifold(section: Section, params: Parameters, fp: FixedPoint,
                  kind: str, branch: int = 1, depth: int = 4,
                  max_spacing: float = 5e-3, max_points: int = 20000,
                  s0: float = 1e-5, seed_count: int = 9) -> ManifoldPiece:
    """Grow one branch of a manifold of a hyperbolic fixed point.

    kind is "stable" or "unstable"; branch (+1 or -1) picks the side of the
    eigendirection.  Each depth maps the previous polyline once and inserts
    midpoints (interpolated on the previous polyline, then mapped) until
    consecutive images are within max_spacing.  An iterate that leaves the
    admissible region truncates the piece at that depth.
    """
    if fp.kind != "hyperbolic":
        raise ValueError(f"cannot grow manifolds of a {fp.kind} point")
    if kind == "unstable":
        v = fp.unstable_direction
        lam = abs(fp.eigenvalues[0])
        step = return_map
    elif kind == "stable":
        v = fp.stable_direction
        lam = abs(fp.eigenvalues[1])
        step = backward_return_map
    else:
        raise ValueError("kind must be 'stable' or 'unstable'")

    q = np.asarray(fp.seed)
    ts = np.linspace(1.0, lam, seed_count)
    fund = np.array([[wrap_half(q[0] + branch * s0 * t * v[0]),
                      q[1] + branch * s0 * t * v[1]] for t in ts])
    segments = [fund]
    truncated = False
    reason = ""
    total = len(fund)

    for d in range(depth):
        src = list(segments[-1])
        img = []
        for pt in src:
            try:
                z, _ = step(section, params, pt)
            except (InadmissibleSeed, NoReturn) as exc:
                truncated = True
                reason = f"depth {d + 1}: {exc}"
                break
            img.append(np.asarray(z))
        if truncated:
            break

        # refine gaps against the source polyline until spacing holds
        i = 0
        while i < len(img) - 1 and total + len(img) < max_points:
            if chart_distance(img[i], img[i + 1]) <= max_spacing:
                i += 1
                continue
            mid = _interp(src[i], src[i + 1], 0.5)
            try:
                z, _ = step(section, params, mid)
            except (InadmissibleSeed, NoReturn) as exc:
                truncated = True
                reason = f"depth {d + 1} refinement: {exc}"
                break
            src.insert(i + 1, mid)
            img.insert(i + 1, np.asarray(z))
        if truncated:
            break
        segments[-1] = np.array(src)
        segments.append(np.array(img))
        total += len(img)
        if total >= max_points:
            truncated = True
            reason = f"depth {d + 1}: point budget {max_points} exhausted"
            break

    parts = [segments[0]] + [s[1:] for s in segments[1:]]
    points = np.vstack(parts)
    point_depths = np.concatenate(
        [np.full(len(part), d) for d, part in enumerate(parts)])
    return ManifoldPiece(owner=fp, kind=kind, branch=branch, points=points,
                         point_depths=point_depths, segments=segments,
                         depth=len(segments) - 1, truncated=truncated,
                         reason=reason)


def manifold_section(params: Parameters, factor: int = 4, **kwargs) -> Section:
    """Convenience: a fresh section with the quarter step used for manifolds."""
    section = build_section(params, **kwargs)
    return refine_section(section, params, factor)


def _segment_intersection(p0, p1, q0, q1):
    """Intersection point of two segments, or None.

    Solves p0 + t (p1 - p0) = q0 + u (q1 - q0) and accepts t, u in [0, 1];
    near-parallel pairs (|det| below 1e-14 of the scale) return None.
    """
    d1 = p1 - p0
    d2 = q1 - q0
    det = d1[0] * d2[1] - d1[1] * d2[0]
    scale = max(np.hypot(*d1) * np.hypot(*d2), 1e-300)
    if abs(det) < 1e-14 * scale:
        return None
    rhs = q0 - p0
    t = (rhs[0] * d2[1] - rhs[1] * d2[0]) / det
    u = (rhs[0] * d1[1] - rhs[1] * d1[0]) / det
    if not (0.0 <= t <= 1.0 and 0.0 <= u <= 1.0):
        return None
    # bisection polish on the side-of-line function along the p-segment
    def side(s: float) -> float:
        w = p0 + s * d1 - q0
        return d2[0] * w[1] - d2[1] * w[0]

    a, b = 0.0, 1.0
    fa = side(a)
    if fa == 0.0:
        return p0
    if side(b) * fa > 0.0:
        return p0 + t * d1
    for _ in range(80):
        m = 0.5 * (a + b)
        fm = side(m)
        if fm == 0.0 or (b - a) < 1e-16:
            break
        if fm * fa > 0.0:
            a, fa = m, fm
        else:
            b = m
    return p0 + 0.5 * (a + b) * d1


def _unwrapped(points: np.ndarray) -> np.ndarray:
    """Continuous g along a polyline (undo the mod-pi wrap jumps)."""
    out = points.copy()
    for i in range(1, len(out)):
        out[i, 0] = out[i - 1, 0] + half_circle_dist(points[i, 0],
                                                     out[i - 1, 0])
    return out


def find_heteroclinic(pieceA: ManifoldPiece, pieceB: ManifoldPiece,
                      tol: float = 1e-9) -> list[tuple[float, float]]:
    """Intersection seeds of two manifold polylines.

    Runs segment-segment intersection over both polylines (with g unwrapped
    to a continuous representative first), refines each hit by bisection,
    and deduplicates within tol.  An empty list is a valid result.
    """
    A = _unwrapped(pieceA.points)
    B = _unwrapped(pieceB.points)
    hits: list[np.ndarray] = []
    for i in range(len(A) - 1):
        p0, p1 = A[i], A[i + 1]
        lo = min(p0[0], p1[0]) - 1e-12
        hi = max(p0[0], p1[0]) + 1e-12
        for j in range(len(B) - 1):
            q0, q1 = B[j], B[j + 1]
            # the two unwrapped polylines may live on shifted g-representatives
            d_mid = 0.5 * ((q0[0] + q1[0]) - (p0[0] + p1[0]))
            shift = np.round(d_mid / np.pi) * np.pi
            if max(q0[0], q1[0]) - shift < lo or min(q0[0], q1[0]) - shift > hi:
                continue
            pt = _segment_intersection(p0, p1, q0 - [shift, 0], q1 - [shift, 0])
            if pt is not None:
                hits.append(np.array([wrap_half(pt[0]), pt[1]]))
    distinct: list[np.ndarray] = []
    for h in hits:
        if all(chart_distance(h, other) >= tol for other in distinct):
            distinct.append(h)
    distinct.sort(key=lambda z: (z[0], z[1]))
    return [(float(z[0]), float(z[1])) for z in distinct]
