"""Secular binary-asteroid / planet model.

The planar three-body problem with two equal masses in a tight binary and a
far planet reduces, after averaging over the binary's fast anomaly, to a
two-degree-of-freedom Hamiltonian in the conjugate pairs (G, g) and (R, r):

    H(G, R, g, r) = (R^2 + (G - C)^2 / r^2) / (2 m0) - 2 m0^2 / r + U(G, g, r)

where C is the fixed total angular momentum offset, r the planet distance,
G the binary angular momentum and g the perihelion anomaly.  U is the
compensated average of the two coupling terms (monopole removed); it is
pi-periodic in g and analytic wherever eps = beta*a/r < 1/2.  The overall
mass factor and the constant Keplerian term are dropped here; the factor
re-enters as the integrator's time scale so that reported times are in the
same units as the underlying (unreduced) problem.

This module owns parameter handling, the orbital geometry kernel, the three
evaluation routes for the averaged potential (direct average, reduced
one-variable integral, truncated series) and the canonical vector field with
its Jacobian.  Heavy evaluation is delegated to the compiled routines in
``kernels``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import kernels


@dataclass(frozen=True)
class SecularState:
    """Phase-space point (G, R, g, r) of the secular system."""

    G: float
    R: float
    g: float
    r: float

    def array(self) -> np.ndarray:
        return np.array([self.G, self.R, self.g, self.r])

    @staticmethod
    def from_array(y) -> "SecularState":
        return SecularState(float(y[0]), float(y[1]), float(y[2]), float(y[3]))


#: Reference point used throughout: it sits on the energy level and section
#: plane every run is built around.
DATUM = SecularState(G=-2.4915, R=-0.0039, g=1.4524, r=3132.069)


@dataclass(frozen=True)
class OrbitalGeometry:
    """Ellipse data at one mean anomaly: eccentricity, eccentric anomaly,
    normalized radius rho = 1 - e cos(xi) and projection p of the ellipse
    point on the planet direction."""

    e: float
    xi: float
    rho: float
    p: float


def jacobi_mass_constants(mu: float, kappa: float) -> tuple[float, float, float]:
    """Mass constants (beta, beta_bar, sigma) of the reduced problem.

    mu is the binary mass (each member), kappa the planet mass, both relative
    to the central mass m0 = 1 of the reduction.
    """
    if mu <= 0 or kappa <= 0:
        raise ValueError("masses must be positive")
    denom = 1.0 + mu + kappa
    beta = kappa ** 2 * (1.0 + mu) / (mu ** 2 * denom)
    beta_bar = kappa ** 2 * (1.0 + mu) / (mu * denom)
    sigma = kappa ** 3 * (1.0 + mu) ** 2 / (mu ** 2 * denom)
    return beta, beta_bar, sigma


def kappa_for_beta(beta: float, mu: float = 1.0) -> float:
    """Planet mass kappa reproducing a given beta (inverts the quadratic)."""
    if beta <= 0:
        raise ValueError("beta must be positive")
    b = beta * mu ** 2
    # kappa^2 (1+mu) - b kappa - b (1+mu) = 0
    disc = b * b + 4.0 * b * (1.0 + mu) ** 2
    return (b + math.sqrt(disc)) / (2.0 * (1.0 + mu))


def sigma_for_beta(beta: float, mu: float = 1.0) -> float:
    """Time-scale mass factor sigma for the planet mass implied by beta."""
    return jacobi_mass_constants(mu, kappa_for_beta(beta, mu))[2]


def _auto_nodes(k_max: int) -> int:
    """Smallest power of two making the series quadrature exact (> k_max+1)."""
    n = 16
    while n <= k_max + 1:
        n *= 2
    return n


@dataclass(frozen=True)
class Parameters:
    """Model constants plus numerical knobs for the potential series.

    time_scale multiplies the canonical vector field inside the integrator;
    None selects the mass factor sigma(beta) of the unreduced problem, so
    times are reported in its units.  quad_nodes None selects the smallest
    exact node count for the series quadrature.
    """

    m0: float = 1.0
    beta: float = 40.0
    C: float = 75.597
    Lambda: float = 3.099
    k_max: int = 10
    quad_nodes: int | None = None
    time_scale: float | None = None
    datum: SecularState = field(default_factory=lambda: DATUM)

    def __post_init__(self):
        if min(self.m0, self.beta, self.C, self.Lambda) <= 0:
            raise ValueError("m0, beta, C, Lambda must all be positive")
        if self.k_max < 2 or self.k_max % 2 != 0:
            raise ValueError("k_max must be even and >= 2")
        if self.quad_nodes is not None and self.quad_nodes <= self.k_max + 1:
            raise ValueError("quad_nodes must exceed k_max + 1 for exactness")
        if abs(self.datum.G) >= self.Lambda:
            raise ValueError("datum must have |G| < Lambda")
        if self.eps(self.datum.r) >= 0.5:
            raise ValueError("datum violates eps = beta*a/r < 1/2")

    @property
    def a(self) -> float:
        """Semimajor axis of the binary ellipse, a = Lambda^2 / m0^3."""
        return self.Lambda ** 2 / self.m0 ** 3

    @property
    def sigma(self) -> float:
        return sigma_for_beta(self.beta)

    @property
    def flow_time_scale(self) -> float:
        return self.sigma if self.time_scale is None else self.time_scale

    @property
    def nodes(self) -> int:
        return self.quad_nodes if self.quad_nodes is not None else _auto_nodes(self.k_max)

    @property
    def r0(self) -> float:
        """Radius of the circular planet orbit at momentum C, C^2/(2 m0^3)."""
        return self.C ** 2 / (2.0 * self.m0 ** 3)

    @property
    def h_star(self) -> float:
        """Energy level of the datum; every section run lives on it."""
        return secular_hamiltonian(self, self.datum)

    def eps(self, r: float) -> float:
        """Expansion parameter beta*a/r; the model requires eps < 1/2."""
        return self.beta * self.a / r

    def admissible_r(self, r: float) -> bool:
        return r > 0 and self.eps(r) < 0.5


@lru_cache(maxsize=32)
def _node_arrays(n: int) -> tuple[np.ndarray, np.ndarray]:
    xi = 2.0 * np.pi * np.arange(n) / n
    return np.cos(xi), np.sin(xi)


@lru_cache(maxsize=32)
def kernel_pack(params: Parameters, unit_time: bool = False):
    """Constants vector and node arrays consumed by the compiled kernels."""
    ts = 1.0 if unit_time else params.flow_time_scale
    con = np.array([params.m0, params.beta, params.C, params.Lambda,
                    params.beta * params.a, ts])
    cosx, sinx = _node_arrays(params.nodes)
    return con, params.k_max, cosx, sinx


def solve_kepler(e: float, ell: float, tol: float = 1e-13, maxit: int = 50) -> float:
    """Eccentric anomaly xi solving xi - e sin(xi) = ell, for 0 <= e < 1.

    Newton from the standard seed, falling back to bisection on
    [ell - e, ell + e] if Newton has not met the residual tolerance after
    `maxit` iterations (the equation is monotone in xi, so the bracket is
    guaranteed).
    """
    if not 0.0 <= e < 1.0:
        raise ValueError(f"eccentricity out of range [0, 1): {e}")
    xi = ell + e * math.sin(ell)
    for _ in range(maxit):
        f = xi - e * math.sin(xi) - ell
        if abs(f) < tol:
            return xi
        xi -= f / (1.0 - e * math.cos(xi))
    lo, hi = ell - e, ell + e
    for _ in range(200):
        xi = 0.5 * (lo + hi)
        f = xi - e * math.sin(xi) - ell
        if abs(f) < tol:
            return xi
        if f > 0.0:
            hi = xi
        else:
            lo = xi
    raise ArithmeticError(f"Kepler solve failed for e={e}, ell={ell}")


def eccentricity(params: Parameters, G: float) -> float:
    if abs(G) > params.Lambda:
        raise ValueError("|G| must not exceed Lambda")
    return math.sqrt(max(1.0 - (G / params.Lambda) ** 2, 0.0))


def orbital_geometry(params: Parameters, G: float, g: float, ell: float) -> OrbitalGeometry:
    """Ellipse geometry at mean anomaly ell for momentum G and perihelion g."""
    e = eccentricity(params, G)
    xi = solve_kepler(e, ell)
    rho = 1.0 - e * math.cos(xi)
    p = (math.cos(xi) - e) * math.cos(g) - (G / params.Lambda) * math.sin(xi) * math.sin(g)
    return OrbitalGeometry(e=e, xi=xi, rho=rho, p=p)


def coupling_coefficients(params: Parameters, G: float, g: float, eps: float) -> tuple[float, float]:
    """Effective coupling amplitudes (t_plus, t_minus) of the reduced
    potential integral; both lie in [-1, 1] whenever eps < 1/2."""
    w = (G / params.Lambda) ** 2
    base = math.sqrt(max(1.0 - w, 0.0)) * math.cos(g)
    return base + eps * w, base - eps * w


def averaged_potential_direct(params: Parameters, G: float, g: float, r: float,
                              nodes: int = 256) -> tuple[float, float]:
    """Coupling terms (U_plus, U_minus) averaged over the mean anomaly.

    The average is taken in the eccentric anomaly (d ell = rho d xi), which
    keeps the rule spectrally accurate and avoids the Kepler solve entirely.
    """
    cosx, sinx = _node_arrays(nodes)
    e = eccentricity(params, G)
    eta = G / params.Lambda
    rho = 1.0 - e * cosx
    p = (cosx - e) * math.cos(g) - eta * sinx * math.sin(g)
    ba = params.beta * params.a
    m0 = params.m0
    up = -m0 ** 2 * np.mean(rho / np.sqrt(r * r + 2.0 * ba * r * p + ba * ba * rho * rho))
    um = -m0 ** 2 * np.mean(rho / np.sqrt(r * r - 2.0 * ba * r * p + ba * ba * rho * rho))
    return float(up), float(um)


def averaged_potential_reduced(params: Parameters, G: float, g: float, r: float,
                               nodes: int = 256) -> tuple[float, float]:
    """Same pair (U_plus, U_minus) through the reduced one-variable integral.

    This route only sees G through t_pm and stays regular at G = 0 where the
    ellipse degenerates; it is the independent cross-check for the direct
    average.
    """
    cosx, _ = _node_arrays(nodes)
    eps = params.eps(r)
    tp, tm = coupling_coefficients(params, G, g, eps)
    omc = 1.0 - cosx
    m0 = params.m0
    # Middle term carries a factor 2: at G = 0 the ellipse degenerates to a
    # segment, rho = 1 - cos(xi), p = -rho*cos(g), and the direct denominator
    # becomes exactly 1 -+ 2 eps (1-cos xi) cos g + eps^2 (1-cos xi)^2 with
    # t_pm = cos g there.  The same factor makes the identity exact for all G
    # (checked against the direct route to machine precision).
    up = -m0 ** 2 / r * np.mean(omc / np.sqrt(1.0 - 2.0 * eps * omc * tp + eps * eps * omc * omc))
    um = -m0 ** 2 / r * np.mean(omc / np.sqrt(1.0 + 2.0 * eps * omc * tm + eps * eps * omc * omc))
    return float(up), float(um)


def truncated_potential(params: Parameters, G: float, g: float, r: float,
                        order: int | None = None, nodes: int | None = None) -> float:
    """Series form of the compensated potential U, truncated at even order."""
    k = params.k_max if order is None else order
    if k < 2 or k % 2 != 0:
        raise ValueError("order must be even and >= 2")
    n = nodes if nodes is not None else max(params.nodes, _auto_nodes(k))
    con, _, _, _ = kernel_pack(params)
    cosx, sinx = _node_arrays(n)
    return float(kernels.pot_value(con, k, cosx, sinx, G, g, r))


def truncated_potential_derivatives(params: Parameters, G: float, g: float,
                                    r: float) -> np.ndarray:
    """U with gradient and Hessian, order
    [U, U_G, U_g, U_r, U_GG, U_Gg, U_gg, U_Gr, U_gr, U_rr]."""
    con, kmax, cosx, sinx = kernel_pack(params)
    out = np.empty(10)
    kernels.pot_full(con, kmax, cosx, sinx, G, g, r, out)
    return out


def full_hamiltonian(params: Parameters, Lambda: float, G: float, R: float,
                     ell: float, g: float, r: float) -> float:
    """Unaveraged Hamiltonian, including the Keplerian constant and the
    overall mass factor; useful to check what the averaging removes."""
    m0 = params.m0
    if abs(G) > Lambda:
        raise ValueError("|G| must not exceed Lambda")
    e = math.sqrt(max(1.0 - (G / Lambda) ** 2, 0.0))
    xi = solve_kepler(e, ell)
    rho = 1.0 - e * math.cos(xi)
    p = (math.cos(xi) - e) * math.cos(g) - (G / Lambda) * math.sin(xi) * math.sin(g)
    ba = params.beta * Lambda ** 2 / m0 ** 3
    dplus = math.sqrt(r * r + 2.0 * ba * r * p + ba * ba * rho * rho)
    dminus = math.sqrt(r * r - 2.0 * ba * r * p + ba * ba * rho * rho)
    sig = params.sigma
    kin = (R * R + (G - params.C) ** 2 / (r * r)) / (2.0 * m0)
    return (-m0 ** 5 / (2.0 * Lambda ** 2)
            + sig * (kin - m0 ** 2 / dplus - m0 ** 2 / dminus))


def secular_hamiltonian(params: Parameters, state: SecularState) -> float:
    """Reduced secular Hamiltonian K + U (mass factor and constant dropped)."""
    con, kmax, cosx, sinx = kernel_pack(params)
    return float(kernels.ham_value(con, kmax, cosx, sinx,
                                   state.G, state.R, state.g, state.r))


def slow_hamiltonian(params: Parameters, G: float, g: float) -> float:
    """One-degree-of-freedom portrait Hamiltonian with r frozen at r0.

    This is the momentum-dependent part of K at the circular radius plus the
    compensated potential there; its level curves organize the (g, G) plane
    into libration islands and rotation zones.
    """
    r0 = params.r0
    k1 = G * (G - 2.0 * params.C) / (2.0 * params.m0 * r0 * r0)
    return k1 + truncated_potential(params, G, g, r0)


def secular_vector_field(params: Parameters, state: SecularState) -> np.ndarray:
    """Canonical vector field (Gdot, Rdot, gdot, rdot) of the secular
    Hamiltonian, in its own (unscaled) time."""
    con, kmax, cosx, sinx = kernel_pack(params, unit_time=True)
    y = state.array()
    dy = np.empty(4)
    work = np.empty(4)
    kernels.vf(con, kmax, cosx, sinx, y, dy, work)
    return dy


def secular_jacobian(params: Parameters, state: SecularState) -> np.ndarray:
    """Jacobian of the unscaled vector field; exactly traceless."""
    con, kmax, cosx, sinx = kernel_pack(params, unit_time=True)
    y = state.array()
    jac = np.empty((4, 4))
    work = np.empty(10)
    kernels.vf_jac(con, kmax, cosx, sinx, y, jac, work)
    return jac
