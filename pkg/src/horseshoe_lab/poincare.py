"""Poincaré section through the reference datum and its first-return map.

The section is the plane through the datum whose normal is the velocity there,
restricted to the (G, g, r) components and intersected with the energy level
of the datum.  A point of the two-dimensional chart is a seed (g, G) with g on
the half circle [0, pi); the remaining coordinates are reconstructed by

  * planarity — r solves the plane equation given (G, g), and
  * the energy condition — R solves H(G, R, g, r) = h with the configured
    sign branch (H is quadratic in R, so this is a square root).

Because the secular Hamiltonian is pi-periodic in g while g itself circulates,
the plane equation uses the mod-pi representative of g - g*; the chart lives
on the quotient circle.  The first-return map advances the lifted state until
the plane function changes sign in the direction of the departure velocity,
then refines the crossing by step halving.

The flow has the reversing symmetry (R, g, t) -> (-R, -g, -t): the potential
is even in g and R enters the kinetic term squared.  One visible consequence
is that the opposite-branch map is the mirror conjugate of the map under
g -> -g (its fixed points sit at (pi - g, G)).  Time reversal itself is
exposed as `backward_return_map`, the first return under backward
integration; it inverts the forward map up to the integrator's reversibility
defect, which shrinks like delta^4.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import Parameters, SecularState, kernel_pack, secular_hamiltonian, \
    secular_vector_field

#: Bootstrap step and horizon for measuring the reference period: the datum
#: orbit returns after roughly 450 time units, so a half-unit scan step with a
#: generous ceiling finds the crossing without tuning.
_BOOT_DELTA = 0.5
_BOOT_TMAX = 5000.0


class InadmissibleSeed(ValueError):
    """Seed has no lift: negative R^2, bad radius, or series divergence.

    `reason` is one of "radius" (plane equation gave r <= 0 or eps >= 1/2) or
    "energy" (R^2 < 0 at the energy level).
    """

    def __init__(self, seed, reason: str):
        super().__init__(f"seed {seed} is inadmissible ({reason})")
        self.seed = tuple(seed)
        self.reason = reason


class NoReturn(RuntimeError):
    """Orbit failed to re-cross the section within the time budget."""

    def __init__(self, seed, t_max: float):
        super().__init__(f"no section return from {seed} within t = {t_max:.3g}")
        self.seed = tuple(seed)
        self.t_max = t_max


def wrap_half(g: float) -> float:
    """Representative of g on [0, pi)."""
    return g % np.pi


def half_circle_dist(a: float, b: float) -> float:
    """Signed distance a - b on the half circle, in (-pi/2, pi/2]."""
    d = a - b
    return d - np.pi * np.round(d / np.pi)


@dataclass(frozen=True)
class Section:
    """Section data plus the numerical policy of the return map.

    normal holds the (G, g, r) velocity components at the datum; h_star the
    energy level; branch the sign given to R in the lift.  delta is the scan
    step of the crossing detector, t_min the guard against re-detecting the
    departure, t_max the give-up horizon and tol the plane-residual target of
    the bisection refinement.  period is the measured first-return time of
    the datum itself and only informs the defaults above.
    """

    point: tuple[float, float, float]
    normal: tuple[float, float, float]
    h_star: float
    branch: float
    period: float
    delta: float
    t_min: float
    t_max: float
    tol: float

    def plane_offset(self, G: float, g: float, r: float) -> float:
        """Signed plane function; zero on the section."""
        nG, ng, nr = self.normal
        return (nG * (G - self.point[0])
                + ng * half_circle_dist(g, self.point[1])
                + nr * (r - self.point[2]))

    def _arrays(self):
        return np.array(self.normal), np.array(self.point)


def build_section(params: Parameters, branch: float | None = None,
                  delta: float | None = None, t_min: float | None = None,
                  t_max: float | None = None, tol: float = 1e-12) -> Section:
    """Assemble the section through the datum of `params`.

    The branch defaults to the sign of the datum's R, so the datum is a fixed
    point of lift-after-project.  The scan step defaults to period/1000; the
    re-detection guard to 10 steps; the give-up horizon to 100 periods.
    """
    d = params.datum
    v = secular_vector_field(params, d)
    normal = (float(v[0]), float(v[2]), float(v[3]))
    if max(abs(c) for c in normal) < 1e-14:
        raise ValueError("datum velocity is degenerate; cannot span a section")
    if branch is None:
        branch = 1.0 if d.R >= 0.0 else -1.0
    if branch not in (1.0, -1.0):
        raise ValueError("branch must be +1.0 or -1.0")

    # First-return time of the datum orbit, from a coarse bootstrap scan.
    con, kmax, cosx, sinx = kernel_pack(params)
    y = d.array()
    dy = np.empty(4)
    kernels.vf(con, kmax, cosx, sinx, y, dy, np.empty(4))
    vdep = np.array([dy[0], dy[2], dy[3]])
    nrm = np.array(normal)
    ref = np.array([d.G, d.g, d.r])
    status, period = kernels.advance_to_section(
        con, kmax, cosx, sinx, y, _BOOT_DELTA, nrm, ref, vdep,
        10.0 * _BOOT_DELTA, _BOOT_TMAX, tol)
    if status != kernels.SEC_OK:
        raise ValueError("datum orbit does not return to its own section")

    if delta is None:
        delta = period / 1000.0
    if t_min is None:
        t_min = 10.0 * delta
    if t_max is None:
        t_max = 100.0 * period
    return Section(point=(d.G, d.g, d.r), normal=normal,
                   h_star=params.h_star, branch=float(branch), period=period,
                   delta=delta, t_min=t_min, t_max=t_max, tol=tol)


def lift(section: Section, params: Parameters, seed) -> SecularState:
    """Reconstruct the full state of a seed (g, G), or raise InadmissibleSeed."""
    g, G = float(seed[0]), float(seed[1])
    nG, ng, nr = section.normal
    G0, g0, r0 = section.point
    r = r0 - (nG * (G - G0) + ng * half_circle_dist(g, g0)) / nr
    if r <= 0.0 or not params.admissible_r(r) or abs(G) > params.Lambda:
        raise InadmissibleSeed((g, G), "radius")
    # H = R^2/2m0 + W(G, g, r); the branch picks the root's sign.
    con, kmax, cosx, sinx = kernel_pack(params)
    w = kernels.ham_value(con, kmax, cosx, sinx, G, 0.0, g, r)
    r2 = 2.0 * params.m0 * (section.h_star - w)
    if r2 < 0.0:
        raise InadmissibleSeed((g, G), "energy")
    return SecularState(G=G, R=section.branch * np.sqrt(r2), g=g, r=r)


def project(state: SecularState) -> tuple[float, float]:
    """Chart coordinates (g mod pi, G) of a full state."""
    return (wrap_half(state.g), state.G)


def is_admissible(section: Section, params: Parameters, seed) -> bool:
    try:
        lift(section, params, seed)
    except InadmissibleSeed:
        return False
    return True


def admissible_region(section: Section, params: Parameters,
                      g_grid: np.ndarray, G_grid: np.ndarray) -> np.ndarray:
    """Boolean admissibility mask, shape (len(G_grid), len(g_grid))."""
    mask = np.empty((len(G_grid), len(g_grid)), dtype=bool)
    for i, G in enumerate(G_grid):
        for j, g in enumerate(g_grid):
            mask[i, j] = is_admissible(section, params, (g, G))
    return mask


def _advance(section: Section, params: Parameters, y: np.ndarray) -> float:
    """Advance the lifted state in place to its next oriented crossing."""
    con, kmax, cosx, sinx = kernel_pack(params)
    nrm, _ = section._arrays()
    ref = np.array([section.point[0], section.point[1], section.point[2]])
    dy = np.empty(4)
    kernels.vf(con, kmax, cosx, sinx, y, dy, np.empty(4))
    vdep = np.array([dy[0], dy[2], dy[3]])
    seed = (wrap_half(y[2]), y[0])
    status, tau = kernels.advance_to_section(
        con, kmax, cosx, sinx, y, section.delta, nrm, ref, vdep,
        section.t_min, section.t_max, section.tol)
    if status != kernels.SEC_OK:
        raise NoReturn(seed, section.t_max)
    return tau


def return_map(section: Section, params: Parameters,
               seed) -> tuple[tuple[float, float], float]:
    """First-return image of a seed and the elapsed time tau."""
    y = lift(section, params, seed).array()
    tau = _advance(section, params, y)
    return (wrap_half(y[2]), y[0]), tau


def backward_return_map(section: Section, params: Parameters,
                        seed) -> tuple[tuple[float, float], float]:
    """First return under the time-reversed flow (approximate inverse of P).

    Integrates backward with the same step magnitude; a crossing counts when
    the forward-time velocity there is co-oriented with the departure
    velocity, exactly as in the forward map.  The composition with the
    forward map misses the identity by the RK4 reversibility defect (the
    forward and backward discrete flows are not exact inverses), which is
    why the manifold grower runs on a finer step than the portrait work.
    """
    con, kmax, cosx, sinx = kernel_pack(params)
    y = lift(section, params, seed).array()
    nrm, _ = section._arrays()
    ref = np.array([section.point[0], section.point[1], section.point[2]])
    dy = np.empty(4)
    kernels.vf(con, kmax, cosx, sinx, y, dy, np.empty(4))
    vdep = np.array([dy[0], dy[2], dy[3]])
    status, tau = kernels.advance_to_section(
        con, kmax, cosx, sinx, y, -section.delta, nrm, ref, vdep,
        section.t_min, section.t_max, section.tol)
    if status != kernels.SEC_OK:
        raise NoReturn(tuple(seed), section.t_max)
    return (wrap_half(y[2]), y[0]), tau


def iterate_map(section: Section, params: Parameters, seed,
                n: int) -> tuple[np.ndarray, list[float], str]:
    """Orbit of the return map: seeds visited, return times, stop reason.

    The output array has the starting seed in row zero and up to n images
    after it.  Iteration stops early when a lift fails or the orbit escapes;
    the reason is "" (completed), "inadmissible" or "no_return".
    """
    out = np.empty((n + 1, 2))
    out[0] = seed
    taus: list[float] = []
    z = tuple(seed)
    for i in range(n):
        try:
            z, tau = return_map(section, params, z)
        except InadmissibleSeed:
            return out[:i + 1], taus, "inadmissible"
        except NoReturn:
            return out[:i + 1], taus, "no_return"
        out[i + 1] = z
        taus.append(tau)
    return out, taus, ""


def section_residuals(section: Section, params: Parameters,
                      seed) -> tuple[float, float]:
    """Plane offset and relative energy defect of a seed's lift.

    Both should be ~1e-12 for any seed produced by the return map; the pair
    is the cheap self-check the validation suite leans on.
    """
    state = lift(section, params, seed)
    plane = section.plane_offset(state.G, state.g, state.r)
    h = secular_hamiltonian(params, state)
    return plane, (h - section.h_star) / abs(section.h_star)
