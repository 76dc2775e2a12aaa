"""Invariant suite: fast self-checks of the numerical core.

Each check measures one defensible quantity (an oracle equivalence, a
structural identity of the Hamiltonian field, a round-trip defect, a
conservation error) and compares it against a fixed tolerance.  The suite is
the backbone of the `validate` command and is reused by the test suite; it
is deliberately cheap (about a minute) so it can run on every fresh
checkout.  Longer-horizon versions of the conservation checks live in the
acceptance tests.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .config import RunConfig
from .integrator import (energy_drift, flow, forward_backward_error,
                         fundamental_matrix)
from .model import (Parameters, SecularState, averaged_potential_direct,
                    averaged_potential_reduced, secular_hamiltonian,
                    secular_jacobian, secular_vector_field,
                    truncated_potential)
from .poincare import Section, lift, project, return_map


@dataclass
class Check:
    """One measured invariant: passes iff measured <= tolerance."""

    name: str
    measured: float
    tolerance: float

    @property
    def passed(self) -> bool:
        return self.measured <= self.tolerance

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        return (f"{status}  {self.name:32s} measured {self.measured:11.4e}"
                f"  tolerance {self.tolerance:8.1e}")


def _random_states(params: Parameters, rng: np.random.Generator,
                   n: int) -> list[SecularState]:
    """Random admissible full states spread over the coordinate ranges."""
    states = []
    lo_r = params.beta * params.a / 0.45        # eps = 0.45 < 1/2
    hi_r = 3.0 * params.datum.r
    while len(states) < n:
        G = rng.uniform(-params.Lambda * 0.98, params.Lambda * 0.98)
        g = rng.uniform(0.0, np.pi)
        r = rng.uniform(lo_r, hi_r)
        R = rng.uniform(-0.05, 0.05)
        states.append(SecularState(G=G, R=R, g=g, r=r))
    return states


def check_potential_identity(params: Parameters, rng: np.random.Generator,
                             n: int = 100) -> Check:
    """Average in eccentric anomaly vs the reduced one-variable integral."""
    worst = 0.0
    for st in _random_states(params, rng, n):
        direct = averaged_potential_direct(params, st.G, st.g, st.r)
        reduced = averaged_potential_reduced(params, st.G, st.g, st.r)
        for d, q in zip(direct, reduced):
            worst = max(worst, abs(d - q) / abs(q))
    return Check("potential_identity_rel", worst, 1e-12)


def check_truncation_datum(params: Parameters) -> Check:
    """Relative truncation residual of the series potential at the datum."""
    d = params.datum
    up, um = averaged_potential_reduced(params, d.G, d.g, d.r)
    exact = up + um + 2.0 * params.m0 ** 2 / d.r  # compensated form
    trunc = truncated_potential(params, d.G, d.g, d.r)
    return Check("truncation_datum_rel", abs(trunc - exact) / abs(exact), 1e-7)


def check_field_gradient(params: Parameters, rng: np.random.Generator,
                         n: int = 25) -> Check:
    """Analytic field vs central differences of the Hamiltonian.

    The unscaled field is the symplectic gradient of the Hamiltonian, so
    each component is matched against the corresponding FD derivative.
    """
    worst = 0.0
    for st in _random_states(params, rng, n):
        y = st.array()
        v = secular_vector_field(params, st)

        def ham(q):
            return secular_hamiltonian(params, SecularState.from_array(q))

        grad = np.empty(4)
        for i in range(4):
            h = 1e-6 * max(1.0, abs(y[i]))
            yp = y.copy(); yp[i] += h
            ym = y.copy(); ym[i] -= h
            grad[i] = (ham(yp) - ham(ym)) / (2.0 * h)
        # y = (G, R, g, r); conjugate pairs (G, g) and (R, r).
        fd = np.array([-grad[2], -grad[3], grad[0], grad[1]])
        scale = max(np.max(np.abs(v)), 1e-30)
        worst = max(worst, np.max(np.abs(v - fd)) / scale)
    return Check("field_vs_fd_rel", worst, 1e-8)


def check_jacobian_trace(params: Parameters, rng: np.random.Generator,
                         n: int = 25) -> Check:
    """Trace of the field Jacobian (exactly zero for a Hamiltonian field)."""
    worst = 0.0
    for st in _random_states(params, rng, n):
        jac = secular_jacobian(params, st)
        worst = max(worst, abs(jac[0, 0] + jac[1, 1] + jac[2, 2] + jac[3, 3]))
    return Check("jacobian_trace_abs", worst, 1e-10)


def check_variational_det(section: Section, params: Parameters,
                          t_final: float = 5000.0) -> Check:
    """Volume preservation of the tangent flow over the indicator horizon."""
    state = lift(section, params, (np.pi, -2.0))
    M = fundamental_matrix(params, state, t_final, section.delta)
    return Check("variational_det_err", abs(np.linalg.det(M) - 1.0), 1e-8)


def check_lift_roundtrip(section: Section, params: Parameters,
                         rng: np.random.Generator, n: int = 100) -> Check:
    """project(lift(seed)) identity and energy pinning of the lift."""
    worst = 0.0
    h_ref = abs(params.h_star)
    count = 0
    while count < n:
        seed = (rng.uniform(0.0, np.pi), rng.uniform(-3.0, 3.0))
        try:
            state = lift(section, params, seed)
        except ValueError:
            continue
        count += 1
        g, G = project(state)
        worst = max(worst, abs(g - seed[0]), abs(G - seed[1]))
        h = secular_hamiltonian(params, state)
        worst = max(worst, abs(h - params.h_star) / h_ref)
    return Check("lift_roundtrip_err", worst, 1e-12)


def check_section_residual(section: Section, params: Parameters,
                           rng: np.random.Generator, n: int = 10) -> Check:
    """Crossings found by the return map really lie on the plane.

    Replays each return with the plain flow up to the reported return time
    and measures the plane offset there, checking the bisection target
    end to end rather than trusting the map's own bookkeeping.
    """
    worst = 0.0
    count = 0
    attempts = 0
    while count < n and attempts < 20 * n:
        attempts += 1
        seed = (rng.uniform(0.0, np.pi), rng.uniform(-2.5, 2.5))
        try:
            state = lift(section, params, seed)
            _, tau = return_map(section, params, seed)
            end = flow(params, state, tau, section.delta)
        except (ValueError, RuntimeError):
            continue
        count += 1
        worst = max(worst, abs(section.plane_offset(end.G, end.g, end.r)))
    return Check("section_plane_residual", worst, 50.0 * section.tol)


def check_energy_drift(section: Section, params: Parameters,
                       periods: float = 10.0, divisor: float = 16000.0) -> Check:
    """Relative drift along a regular orbit, short validation horizon."""
    state = lift(section, params, (np.pi, -2.0))
    drift = energy_drift(params, state, periods * section.period,
                         section.period / divisor)
    return Check("energy_drift_regular", drift, 1e-12)


def check_forward_backward(section: Section, params: Parameters,
                           periods: float = 10.0,
                           divisor: float = 24000.0) -> Check:
    """Reversibility defect along a regular orbit, short horizon."""
    state = lift(section, params, (np.pi, -2.0))
    err = forward_backward_error(params, state, periods * section.period,
                                 section.period / divisor)
    return Check("forward_backward_regular", err, 1e-12)


def run_suite(cfg: RunConfig | None = None) -> list[Check]:
    """Run every check with a configuration's parameters and seeds."""
    cfg = cfg or RunConfig()
    params = cfg.parameters()
    section = cfg.section(params)
    seed = cfg.data["run"]["random_seed"]
    checks = [
        check_potential_identity(params, np.random.default_rng(seed)),
        check_truncation_datum(params),
        check_field_gradient(params, np.random.default_rng(seed + 1)),
        check_jacobian_trace(params, np.random.default_rng(seed + 2)),
        check_variational_det(section, params),
        check_lift_roundtrip(section, params, np.random.default_rng(seed + 3)),
        check_section_residual(section, params,
                               np.random.default_rng(seed + 4)),
        check_energy_drift(section, params),
        check_forward_backward(section, params),
    ]
    return checks
