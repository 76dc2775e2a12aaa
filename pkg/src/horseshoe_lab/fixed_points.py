"""Fixed points of the return map: Newton search, classification, surveying.

The derivative of the return map is available through two independent
computations.  `map_jacobian` differences the map centrally; it needs nothing
but map evaluations and is the reference the self-checks compare against.
`variational_jacobian` propagates the tangent of the lift through the
variational flow to the return time and applies the section and energy
corrections; it is exact to integrator order and is what the Newton solver
uses by default.  Finite differences alone cannot drive the residual to the
10^-10 scale demanded of reported fixed points: near the strong saddles the
unstable multiplier (20-40 per return) amplifies the differencing error
enough to stall or misdirect the final Newton steps.

Coordinates are chart seeds (g, G) with g on [0, pi); distances and residuals
take g modulo pi throughout.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import Parameters, kernel_pack
from .poincare import (InadmissibleSeed, NoReturn, Section, half_circle_dist,
                       lift, return_map, wrap_half)

#: Real eigenvalue pairs closer to the unit circle than this are not trusted
#: as hyperbolic (or elliptic) and are excluded from manifold/covering use.
MARGINAL_BAND = 1e-4


class NewtonFailure(RuntimeError):
    """Newton did not produce a verified fixed point.

    `reason` is one of "diverged" (left the chart domain or lost the lift),
    "singular" (an eigenvalue of DP within 1e-8 of unity makes DP - I
    unusable), "maxit" or "no_return".
    """

    def __init__(self, guess, reason: str, detail: str = ""):
        msg = f"Newton from {tuple(guess)} failed: {reason}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)
        self.guess = tuple(guess)
        self.reason = reason


@dataclass(frozen=True)
class FixedPoint:
    """A verified fixed point of the return map.

    eigenvalues are sorted by descending modulus; for a real pair the columns
    of eigenvectors are the matching unit vectors (first component positive),
    for a complex pair eigenvectors is None.  residual is ||P(z) - z|| from a
    fresh map evaluation at the reported seed.
    """

    seed: tuple[float, float]
    jacobian: np.ndarray
    eigenvalues: tuple[complex, complex]
    eigenvectors: np.ndarray | None
    kind: str
    residual: float
    tau: float

    @property
    def unstable_direction(self) -> np.ndarray:
        if self.kind != "hyperbolic":
            raise ValueError(f"{self.kind} point has no unstable direction")
        return self.eigenvectors[:, 0]

    @property
    def stable_direction(self) -> np.ndarray:
        if self.kind != "hyperbolic":
            raise ValueError(f"{self.kind} point has no stable direction")
        return self.eigenvectors[:, 1]


def chart_distance(a, b) -> float:
    """Euclidean seed distance with the g-leg taken on the half circle."""
    return float(np.hypot(half_circle_dist(a[0], b[0]), a[1] - b[1]))


def map_jacobian(section: Section, params: Parameters, seed,
                 h: float = 1e-7) -> np.ndarray:
    """Central-difference DP at a seed.

    If a stencil point loses admissibility the step is halved once before
    giving up, per the boundary-seed contract.
    """
    for attempt in (h, 0.5 * h):
        try:
            return _fd_jacobian(section, params, seed, attempt)
        except InadmissibleSeed:
            continue
    raise InadmissibleSeed(tuple(seed), "radius")


def _fd_jacobian(section: Section, params: Parameters, seed, h: float) -> np.ndarray:
    g, G = seed
    J = np.empty((2, 2))
    for j, (dg, dG) in enumerate(((h, 0.0), (0.0, h))):
        zp, _ = return_map(section, params, (g + dg, G + dG))
        zm, _ = return_map(section, params, (g - dg, G - dG))
        J[0, j] = half_circle_dist(zp[0], zm[0]) / (2.0 * h)
        J[1, j] = (zp[1] - zm[1]) / (2.0 * h)
    return J


def _lift_differential(section: Section, params: Parameters,
                       y: np.ndarray) -> np.ndarray:
    """4x2 derivative of the lift, columns d/dg and d/dG of (G, R, g, r).

    r follows the plane equation; R follows the energy level.  The energy
    gradient is read off the canonical field (components are proportional to
    (H_G, H_R, H_g, H_r) with one common factor, and only ratios enter).
    """
    con, kmax, cosx, sinx = kernel_pack(params)
    dy = np.empty(4)
    kernels.vf(con, kmax, cosx, sinx, y, dy, np.empty(4))
    nG, ng, nr = section.normal
    L = np.zeros((4, 2))
    dr_dg = -ng / nr
    L[2, 0] = 1.0
    L[3, 0] = dr_dg
    L[1, 0] = (dy[0] + dy[1] * dr_dg) / dy[3]
    dr_dG = -nG / nr
    L[0, 1] = 1.0
    L[3, 1] = dr_dG
    L[1, 1] = -(dy[2] - dy[1] * dr_dG) / dy[3]
    return L


def variational_jacobian(section: Section, params: Parameters,
                         seed) -> tuple[tuple[float, float], float, np.ndarray]:
    """Return-map image, return time and the variational DP at a seed.

    The tangent of the lift is propagated by the variational flow over the
    whole steps of the crossing plus the bisected remainder; at arrival the
    return-time variation is removed by the oblique projection
    I - f n^T / (n^T f) before reading off the chart rows.
    """
    con, kmax, cosx, sinx = kernel_pack(params)
    y0 = lift(section, params, seed).array()
    L = _lift_differential(section, params, y0)

    y = y0.copy()
    dy = np.empty(4)
    kernels.vf(con, kmax, cosx, sinx, y, dy, np.empty(4))
    vdep = np.array([dy[0], dy[2], dy[3]])
    nrm = np.array(section.normal)
    ref = np.array([section.point[0], section.point[1], section.point[2]])
    status, tau = kernels.advance_to_section(
        con, kmax, cosx, sinx, y, section.delta, nrm, ref, vdep,
        section.t_min, section.t_max, section.tol)
    if status != kernels.SEC_OK:
        raise NoReturn(tuple(seed), section.t_max)

    n_full = int(tau / section.delta)
    rem = tau - n_full * section.delta
    yv = y0.copy()
    w = L.copy()
    kernels.var_steps(con, kmax, cosx, sinx, yv, w, section.delta, n_full)
    if rem > 0.0:
        kernels.var_steps(con, kmax, cosx, sinx, yv, w, rem, 1)
    kernels.vf(con, kmax, cosx, sinx, yv, dy, np.empty(4))
    n4 = np.array([nrm[0], 0.0, nrm[1], nrm[2]])
    w -= np.outer(dy, n4 @ w) / (n4 @ dy)
    J = np.array([[w[2, 0], w[2, 1]],
                  [w[0, 0], w[0, 1]]])
    return (wrap_half(y[2]), y[0]), tau, J


def classify(jacobian: np.ndarray) -> tuple[tuple[complex, complex],
                                            np.ndarray | None, str]:
    """Eigen data and stability class of a 2x2 map derivative.

    Returns (eigenvalues, eigenvectors, kind) with eigenvalues sorted by
    descending modulus.  A complex pair is elliptic; a real pair is
    hyperbolic when it straddles the unit circle with clearance
    MARGINAL_BAND, marginal otherwise.
    """
    lam, vec = np.linalg.eig(jacobian)
    order = np.argsort(-np.abs(lam))
    lam = lam[order]
    vec = vec[:, order]
    if abs(lam[0].imag) > 1e-12 * abs(lam[0]):
        return (complex(lam[0]), complex(lam[1])), None, "elliptic"
    lam = lam.real
    vec = vec.real
    for j in range(2):
        lead = vec[0, j] if vec[0, j] != 0.0 else vec[1, j]
        vec[:, j] *= np.sign(lead) / np.linalg.norm(vec[:, j])
    if min(abs(abs(lam[0]) - 1.0), abs(abs(lam[1]) - 1.0)) < MARGINAL_BAND:
        kind = "marginal"
    elif abs(lam[0]) > 1.0 > abs(lam[1]):
        kind = "hyperbolic"
    else:
        kind = "marginal"
    return (complex(lam[0]), complex(lam[1])), vec, kind


def newton_fixed_point(section: Section, params: Parameters, guess,
                       tol: float = 1e-10, maxit: int = 30,
                       jacobian: str = "fd",
                       max_step: float = 0.02) -> FixedPoint:
    """Newton iteration on P(z) - z from a guess seed.

    jacobian selects the derivative route ("fd" or "variational"; the two
    agree to a few parts in 1e7 and converge to the same points).  Steps are
    undamped Newton steps clamped to max_step chart units; the tight default
    clamp matters because DP - I passes close to singular between basins and
    an unclamped step can jump basins or leave the chart.  The returned
    residual comes from a fresh map call at the final seed.
    """
    if jacobian not in ("variational", "fd"):
        raise ValueError("jacobian must be 'variational' or 'fd'")
    g, G = float(guess[0]), float(guess[1])
    fnorm = np.inf
    for _ in range(maxit):
        try:
            if jacobian == "variational":
                (g1, G1), tau, J = variational_jacobian(section, params, (g, G))
            else:
                (g1, G1), tau = return_map(section, params, (g, G))
                J = map_jacobian(section, params, (g, G))
        except InadmissibleSeed as exc:
            raise NewtonFailure(guess, "diverged", str(exc)) from exc
        except NoReturn as exc:
            raise NewtonFailure(guess, "no_return", str(exc)) from exc
        F = np.array([half_circle_dist(g1, g), G1 - G])
        fnorm = float(np.hypot(*F))
        if fnorm < tol:
            return _verify(section, params, (g, G), J, tau, tol)
        lam = np.linalg.eigvals(J)
        if np.min(np.abs(lam - 1.0)) < 1e-8:
            raise NewtonFailure(guess, "singular",
                                f"unit eigenvalue {lam}")
        step = np.linalg.solve(J - np.eye(2), -F)
        ns = float(np.hypot(*step))
        if ns > max_step:
            step *= max_step / ns
        g, G = wrap_half(g + step[0]), G + step[1]
        if abs(G) >= params.Lambda:
            raise NewtonFailure(guess, "diverged",
                                f"left the chart at G = {G:.4f}")
    raise NewtonFailure(guess, "maxit", f"last residual {fnorm:.2e}")


def _verify(section: Section, params: Parameters, seed, J, tau,
            tol: float) -> FixedPoint:
    z1, tau1 = return_map(section, params, seed)
    residual = float(np.hypot(half_circle_dist(z1[0], seed[0]), z1[1] - seed[1]))
    if residual > 10.0 * tol:
        raise NewtonFailure(seed, "diverged",
                            f"re-verification residual {residual:.2e}")
    lam, vec, kind = classify(J)
    return FixedPoint(seed=(float(seed[0]), float(seed[1])), jacobian=J,
                      eigenvalues=lam, eigenvectors=vec, kind=kind,
                      residual=residual, tau=float(tau1))


def survey(section: Section, params: Parameters, g_grid, G_grid,
           dedup_radius: float = 1e-5, tol: float = 1e-10,
           maxit: int = 20) -> tuple[list[FixedPoint], dict]:
    """Newton from every admissible node of a seed grid, deduplicated.

    Returns the distinct fixed points (ordered by (G, g) for determinism) and
    a counter dict of per-node outcomes.  Nodes whose iteration leaves the
    chart or exceeds maxit are counted, not raised.
    """
    found: list[FixedPoint] = []
    counts = {"converged": 0, "duplicate": 0, "inadmissible": 0,
              "diverged": 0, "no_return": 0, "singular": 0, "maxit": 0,
              "marginal": 0}
    for G in G_grid:
        for g in g_grid:
            try:
                fp = newton_fixed_point(section, params, (g, G), tol=tol,
                                        maxit=maxit)
            except InadmissibleSeed:
                counts["inadmissible"] += 1
                continue
            except NewtonFailure as exc:
                counts[exc.reason] += 1
                continue
            counts["converged"] += 1
            if fp.kind == "marginal":
                counts["marginal"] += 1
            for i, other in enumerate(found):
                if chart_distance(fp.seed, other.seed) < dedup_radius:
                    counts["duplicate"] += 1
                    if fp.residual < other.residual:
                        found[i] = fp
                    break
            else:
                found.append(fp)
    found.sort(key=lambda fp: (fp.seed[1], fp.seed[0]))
    return found, counts
