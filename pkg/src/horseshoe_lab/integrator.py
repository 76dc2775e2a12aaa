"""Fixed-step RK4 propagation of the secular state and its tangent flow.

The integrator is deliberately plain: a classical fourth-order Runge-Kutta
scheme with a constant step, applied to the time-scaled canonical field.  No
adaptivity, no interpolation beyond the final partial step — reproducibility
of long runs matters more here than per-step efficiency, and the compiled
kernels make the fixed step cheap.  Negative target times integrate backward
with the same step magnitude, which is what the forward/backward reversibility
diagnostic relies on.

Tangent (variational) propagation advances a 4xN displacement matrix together
with the state using the analytic field Jacobian at every internal stage; the
chaos indicators and the return-map derivative are built on it.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import Parameters, SecularState, kernel_pack, secular_hamiltonian

#: Steps between admissibility checks during long integrations.  One check per
#: chunk costs nothing against the ~4k kernel stages inside it.
_CHUNK = 1024


class DomainEscape(RuntimeError):
    """Trajectory left the model's admissible region.

    Carries the integration time `t` at which the violation was detected and
    the offending state (which may already contain NaNs if the potential
    series was evaluated outside its disc of convergence).
    """

    def __init__(self, t: float, y: np.ndarray):
        super().__init__(f"trajectory left the admissible region near t = {t:.6g}")
        self.t = t
        self.y = np.array(y)


@dataclass(frozen=True)
class TangentState:
    """State bundled with one tangent displacement vector."""

    base: SecularState
    w: np.ndarray

    def __post_init__(self):
        if np.linalg.norm(self.w) == 0.0:
            raise ValueError("tangent displacement must be nonzero")


def _check_admissible(params: Parameters, y: np.ndarray, t: float) -> None:
    ok = (np.all(np.isfinite(y)) and y[3] > 0.0
          and params.admissible_r(y[3]) and abs(y[0]) <= params.Lambda)
    if not ok:
        raise DomainEscape(t, y)


def rk4_step(params: Parameters, state: SecularState, delta: float) -> SecularState:
    """One RK4 step of size delta (may be negative)."""
    if delta == 0.0:
        raise ValueError("delta must be nonzero")
    con, kmax, cosx, sinx = kernel_pack(params)
    y = state.array()
    kernels.rk4_steps(con, kmax, cosx, sinx, y, np.zeros(4), delta, 1)
    _check_admissible(params, y, delta)
    return SecularState.from_array(y)


def _split_steps(t_final: float, delta: float) -> tuple[float, int, float]:
    """Signed step, whole-step count and remainder reproducing t_final."""
    if delta <= 0.0:
        raise ValueError("delta must be positive")
    sgn = 1.0 if t_final >= 0.0 else -1.0
    n = int(abs(t_final) / delta)
    rem = abs(t_final) - n * delta
    return sgn * delta, n, sgn * rem


def flow(params: Parameters, state: SecularState, t_final: float,
         delta: float) -> SecularState:
    """Advance the state by t_final (negative = backward).

    Composed of whole steps of size delta plus one shortened final step, so
    flows over times that are multiples of delta compose exactly.
    """
    con, kmax, cosx, sinx = kernel_pack(params)
    dt, n, rem = _split_steps(t_final, delta)
    y = state.array()
    comp = np.zeros(4)
    done = 0
    while done < n:
        block = min(_CHUNK, n - done)
        kernels.rk4_steps(con, kmax, cosx, sinx, y, comp, dt, block)
        done += block
        _check_admissible(params, y, done * dt)
    if rem != 0.0:
        kernels.rk4_steps(con, kmax, cosx, sinx, y, comp, rem, 1)
        _check_admissible(params, y, t_final)
    return SecularState.from_array(y)


def trajectory(params: Parameters, state: SecularState, t_final: float,
               delta: float, stride: int = 1) -> np.ndarray:
    """Sampled orbit as rows (t, G, R, g, r, H), every `stride`-th step.

    The initial state is row zero; the final partial step, if any, is not
    sampled (callers wanting the exact endpoint should use `flow`).
    """
    if stride < 1:
        raise ValueError("stride must be >= 1")
    con, kmax, cosx, sinx = kernel_pack(params)
    dt, n, _ = _split_steps(t_final, delta)
    rows = n // stride + 1
    out = np.empty((rows, 6))
    y = state.array()
    comp = np.zeros(4)
    out[0] = (0.0, y[0], y[1], y[2], y[3],
              kernels.ham_value(con, kmax, cosx, sinx, y[0], y[1], y[2], y[3]))
    for i in range(1, rows):
        kernels.rk4_steps(con, kmax, cosx, sinx, y, comp, dt, stride)
        _check_admissible(params, y, i * stride * dt)
        out[i] = (i * stride * dt, y[0], y[1], y[2], y[3],
                  kernels.ham_value(con, kmax, cosx, sinx, y[0], y[1], y[2], y[3]))
    return out


def energy_drift(params: Parameters, state: SecularState, t_final: float,
                 delta: float, stride: int = 10) -> float:
    """Worst relative energy error along the orbit, sampled every `stride` steps."""
    con, kmax, cosx, sinx = kernel_pack(params)
    dt, n, rem = _split_steps(t_final, delta)
    y = state.array()
    h0 = secular_hamiltonian(params, state)
    worst = kernels.flow_drift(con, kmax, cosx, sinx, y, dt, n, stride)
    _check_admissible(params, y, t_final)
    if rem != 0.0:
        kernels.rk4_steps(con, kmax, cosx, sinx, y, np.zeros(4), rem, 1)
        h = kernels.ham_value(con, kmax, cosx, sinx, y[0], y[1], y[2], y[3])
        worst = max(worst, abs(h - h0))
    return worst / abs(h0)


def variational_flow(params: Parameters, tangent: TangentState, t_final: float,
                     delta: float) -> TangentState:
    """Advance state and tangent displacement together."""
    con, kmax, cosx, sinx = kernel_pack(params)
    dt, n, rem = _split_steps(t_final, delta)
    y = tangent.base.array()
    w = np.array(tangent.w, dtype=float).reshape(4, 1)
    done = 0
    while done < n:
        block = min(_CHUNK, n - done)
        kernels.var_steps(con, kmax, cosx, sinx, y, w, dt, block)
        done += block
        _check_admissible(params, y, done * dt)
    if rem != 0.0:
        kernels.var_steps(con, kmax, cosx, sinx, y, w, rem, 1)
        _check_admissible(params, y, t_final)
    return TangentState(base=SecularState.from_array(y), w=w[:, 0].copy())


def fundamental_matrix(params: Parameters, state: SecularState, t_final: float,
                       delta: float) -> np.ndarray:
    """Jacobian of the flow map at `state`, integrated from the identity."""
    con, kmax, cosx, sinx = kernel_pack(params)
    dt, n, rem = _split_steps(t_final, delta)
    y = state.array()
    w = np.eye(4)
    kernels.var_steps(con, kmax, cosx, sinx, y, w, dt, n)
    _check_admissible(params, y, t_final)
    if rem != 0.0:
        kernels.var_steps(con, kmax, cosx, sinx, y, w, rem, 1)
    return w


def forward_backward_error(params: Parameters, state: SecularState, tau: float,
                           delta: float) -> float:
    """Relative reversibility defect of the integrator over [0, tau].

    The orbit is integrated forward for tau and back again with the same step
    magnitude; the result is ||x0 - back|| / ||x0||.  On chaotic orbits the
    defect grows like exp(2 tau / tau_L), so it measures the horizon on which
    the computed orbit shadows a true one, not a bug.
    """
    if tau < 0.0:
        raise ValueError("tau must be >= 0")
    if tau == 0.0:
        return 0.0
    x0 = state.array()
    mid = flow(params, state, tau, delta)
    back = flow(params, mid, -tau, delta)
    return float(np.linalg.norm(back.array() - x0) / np.linalg.norm(x0))
