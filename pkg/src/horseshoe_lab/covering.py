"""Parallelogram h-sets in the section chart and covering-relation checks.

An h-set is N = q + A v_s + B v_u: a parallelogram spanned by two unit
directions around a center seed, with closed coefficient intervals A (along
v_s) and B (along v_u).  Its chart is the affine map onto [-1, 1]^2 that
sends the exit direction v_u to the first coordinate u and v_s to the second
coordinate s.  The exit set N- is the pair of edges u = +-1, the entry set
N+ the pair s = +-1.

A covering relation M => N under a map f asks, in the practical sampled
form: the image of M lies inside the horizontal strip |s| < 1 of N, and the
two exit edges of M are thrown entirely beyond N on opposite sides, u < -1
and u > 1.  Which exit edge lands on which side is an orientation choice;
both pairings are accepted and the report records the one used.  Verdicts
carry explicit margins (chart units): the check only reports "holds" when
every condition clears the sampling-resolution threshold, and a margin
within the threshold of zero is "inconclusive" rather than false.

Verification is by dense sampling with margins, not interval arithmetic;
the aim is a numerical certificate in the same sense as the stability and
manifold computations, with the rigor question left open.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .model import Parameters
from .poincare import InadmissibleSeed, NoReturn, Section, half_circle_dist, return_map

#: Margins within this distance of zero (chart units) are below sampling
#: resolution; verdicts there are "inconclusive" rather than true or false.
RESOLUTION = 1e-3


@dataclass(frozen=True)
class HSet:
    """Parallelogram N = q + A v_s + B v_u with its chart.

    q is the center seed, v_s and v_u unit spanning directions (v_u is the
    exit direction by convention), A and B closed intervals of coefficients
    along v_s and v_u.
    """

    q: tuple[float, float]
    v_s: tuple[float, float]
    v_u: tuple[float, float]
    A: tuple[float, float]
    B: tuple[float, float]

    def __post_init__(self):
        M = np.column_stack((self.v_s, self.v_u))
        if abs(np.linalg.det(M)) <= 1e-6:
            raise ValueError(f"degenerate directions, det = {np.linalg.det(M):.2e}")
        if not (self.A[0] < self.A[1] and self.B[0] < self.B[1]):
            raise ValueError("intervals must have positive length")

    def coefficients(self, point) -> tuple[float, float]:
        """Solve point - q = a v_s + b v_u for (a, b)."""
        M = np.column_stack((self.v_s, self.v_u))
        a, b = np.linalg.solve(M, np.asarray(point, float) - np.asarray(self.q))
        return float(a), float(b)

    def point_at(self, a: float, b: float) -> np.ndarray:
        return (np.asarray(self.q)
                + a * np.asarray(self.v_s) + b * np.asarray(self.v_u))

    def chart_point(self, u: float, s: float) -> np.ndarray:
        """Inverse chart: (u, s) in [-1,1]^2 to the plane."""
        a = 0.5 * (self.A[0] + self.A[1]) + 0.5 * s * (self.A[1] - self.A[0])
        b = 0.5 * (self.B[0] + self.B[1]) + 0.5 * u * (self.B[1] - self.B[0])
        return self.point_at(a, b)


def make_hset(q, v_s, v_u, A, B) -> HSet:
    """Assemble an h-set from center, directions and coefficient intervals."""
    v_s = np.asarray(v_s, float)
    v_u = np.asarray(v_u, float)
    return HSet(q=(float(q[0]), float(q[1])),
                v_s=tuple(v_s / np.linalg.norm(v_s)),
                v_u=tuple(v_u / np.linalg.norm(v_u)),
                A=(float(A[0]), float(A[1])), B=(float(B[0]), float(B[1])))


def hset_coords(hset: HSet, point) -> tuple[float, float]:
    """Chart value (u, s) of a plane point.

    point is in N iff max(|u|, |s|) <= 1; u < -1 is the left side of N,
    u > 1 the right side.
    """
    a, b = hset.coefficients(point)
    s = (2.0 * a - (hset.A[0] + hset.A[1])) / (hset.A[1] - hset.A[0])
    u = (2.0 * b - (hset.B[0] + hset.B[1])) / (hset.B[1] - hset.B[0])
    return u, s


@dataclass
class CoveringReport:
    """Outcome of one covering check M => N under dense sampling.

    margins holds the signed clearance of each condition (strip, left-exit,
    right-exit, fiber): the worst sampled value, positive when the condition
    holds with room.  holds is True only when every margin clears the
    sampling resolution; inconclusive flags margins inside that band.
    swapped records the exit-side pairing used (image orientation).
    """

    holds: bool
    inconclusive: bool
    swapped: bool
    margins: dict[str, float]
    samples: dict[str, int]
    edge_images: dict[str, np.ndarray] = field(repr=False, default_factory=dict)

    @property
    def min_margin(self) -> float:
        return min(self.margins.values())


def _rep_near(g: float, center: float) -> float:
    """Representative of g (mod pi) nearest to center."""
    return center + half_circle_dist(g, center)


def _image_chart(f, M: HSet, N: HSet, u: float, s: float):
    x = M.chart_point(u, s)
    y = np.asarray(f(x), float)
    y[0] = _rep_near(y[0], N.q[0])
    return hset_coords(N, y), y


def check_covering_map(f, M: HSet, N: HSet, n_samples: int = 64) -> CoveringReport:
    """Covering check M => N for a plain chart map f: seed -> seed.

    Three sampled conditions: every interior point of M lands in the strip
    |s| < 1 of N; the two exit edges (u = -1 and u = +1 in M's chart) land
    entirely beyond N, one on each side.  The horizontal fiber through the
    chart midpoint s = 0 is additionally checked to stay in the strip; if
    only that fiber fails, 16 fibers are scanned before the fiber condition
    is declared failed.
    """
    grid = np.linspace(-1.0, 1.0, n_samples)

    s_strip = math.inf
    for u in grid:
        for s in grid:
            (ui, si), _ = _image_chart(f, M, N, u, s)
            s_strip = min(s_strip, 1.0 - abs(si))

    edge_u = {}
    edge_pts = {}
    for name, u_edge in (("left", -1.0), ("right", 1.0)):
        vals = np.empty(n_samples)
        pts = np.empty((n_samples, 2))
        for i, s in enumerate(grid):
            (ui, _), y = _image_chart(f, M, N, u_edge, s)
            vals[i] = ui
            pts[i] = y
        edge_u[name] = vals
        edge_pts[name] = pts

    # Exit-side pairing by majority: direct sends left -> u < -1.
    direct_votes = int(np.sum(edge_u["left"] < 0.0) + np.sum(edge_u["right"] > 0.0))
    swapped = direct_votes < n_samples
    lo, hi = ("right", "left") if swapped else ("left", "right")
    m_left = float(np.min(-1.0 - edge_u[lo]))
    m_right = float(np.min(edge_u[hi] - 1.0))

    m_fiber = -math.inf
    fibers_tried = 0
    for s_fiber in (0.0, *np.linspace(-1.0, 1.0, 16)):
        vals = np.empty(n_samples)
        for i, u in enumerate(grid):
            (_, si), _ = _image_chart(f, M, N, u, s_fiber)
            vals[i] = si
        fibers_tried += 1
        m_fiber = max(m_fiber, float(np.min(1.0 - np.abs(vals))))
        if m_fiber > 0.0:
            break

    margins = {"strip": float(s_strip), "left_exit": m_left,
               "right_exit": m_right, "fiber": m_fiber}
    worst = min(margins.values())
    return CoveringReport(
        holds=worst > RESOLUTION,
        inconclusive=abs(worst) <= RESOLUTION,
        swapped=swapped,
        margins=margins,
        samples={"strip": n_samples * n_samples,
                 "left_exit": n_samples, "right_exit": n_samples,
                 "fiber": fibers_tried * n_samples},
        edge_images=edge_pts)


def check_covering(section: Section, params: Parameters, M: HSet, N: HSet,
                   n_samples: int = 64) -> CoveringReport:
    """Covering check M => N under the section return map.

    Image g-values are taken as the mod-pi representative nearest the target
    center, so sides are judged in the target's local chart.  An
    inadmissible or non-returning sample aborts the check with its location.
    """

    def f_located(x):
        try:
            z, _ = return_map(section, params, x)
            return z
        except InadmissibleSeed as exc:
            raise InadmissibleSeed(tuple(np.round(x, 12)), exc.reason) from exc
        except NoReturn as exc:
            raise NoReturn(tuple(np.round(x, 12)), section.t_max) from exc

    return check_covering_map(f_located, M, N, n_samples)


@dataclass
class HorseshoeReport:
    """Aggregate of the four ordered covering checks on a pair of h-sets."""

    holds: bool
    inconclusive: bool
    relations: dict[str, CoveringReport]

    @property
    def min_margin(self) -> float:
        return min(r.min_margin for r in self.relations.values())


def check_horseshoe(section: Section, params: Parameters, N1: HSet,
                    N2: HSet, n_samples: int = 64) -> HorseshoeReport:
    """Check the four relations N1 => N1, N1 => N2, N2 => N1, N2 => N2.

    holds iff all four hold; any inconclusive sub-report makes the aggregate
    inconclusive.
    """
    sets = {"N1": N1, "N2": N2}
    relations = {}
    for a in ("N1", "N2"):
        for b in ("N1", "N2"):
            relations[f"{a}=>{b}"] = check_covering(
                section, params, sets[a], sets[b], n_samples)
    return HorseshoeReport(
        holds=all(r.holds for r in relations.values()),
        inconclusive=any(r.inconclusive for r in relations.values()),
        relations=relations)


def saddle_hsets(fp1, fp2, A1, B1, A2, B2,
                 orientation=(1, 1, 1, 1)) -> tuple[HSet, HSet]:
    """Build the h-set pair around two hyperbolic fixed points.

    Directions come from the classified eigensystems; orientation holds the
    four sign choices (s1, u1, s2, u2) applied to the eigenvectors.  An
    eigenvector's sign is a free choice, but with asymmetric coefficient
    intervals it moves the parallelogram, so certifying a covering may
    require a particular orientation; `orient_horseshoe` searches them.
    """
    s1, u1, s2, u2 = orientation
    N1 = make_hset(fp1.seed, s1 * fp1.stable_direction,
                   u1 * fp1.unstable_direction, A1, B1)
    N2 = make_hset(fp2.seed, s2 * fp2.stable_direction,
                   u2 * fp2.unstable_direction, A2, B2)
    return N1, N2


def orient_horseshoe(section: Section, params: Parameters, fp1, fp2,
                     A1, B1, A2, B2, n_samples: int = 64):
    """Search eigenvector orientations for a certified horseshoe.

    Exit-edge sides already tolerate either pairing, so only the stable-
    direction signs move the verdict; the four (s1, s2) combinations are
    tried in a fixed order and the first certified one is returned as
    (orientation, HorseshoeReport).  If none holds, the orientation with the
    largest minimum margin is returned instead.
    """
    best = None
    for s1 in (1, -1):
        for s2 in (1, -1):
            orientation = (s1, 1, s2, 1)
            N1, N2 = saddle_hsets(fp1, fp2, A1, B1, A2, B2, orientation)
            report = check_horseshoe(section, params, N1, N2, n_samples)
            if report.holds:
                return orientation, report
            if best is None or report.min_margin > best[1].min_margin:
                best = (orientation, report)
    return best
