"""Fast Lyapunov Indicator, largest Lyapunov exponent, stability maps.

The FLI of a seed is sup over time of log ||w(t)|| for a tangent vector w
carried by the variational flow; following the convention used for the
reference stability maps it is computed from the four canonical basis
vectors and averaged, with no renormalization (the horizons used here keep
||w|| comfortably inside floating range).  The largest-exponent estimate
chi(t) = log||w(t)|| / t instead runs long, so the tangent vector is
renormalized on a fixed cadence with the log factors accumulated; the
Lyapunov time is tau_L = 1 / chi.

Orbits may leave the admissible radius window at some point of a long run
(the averaged potential stops converging there); records are then truncated
at the last valid sample and flagged rather than discarded.

Both indicators are measured in the same (scaled) time unit as the return
times, so tau_L compares directly with the typical section period ~450.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import kernels
from .model import Parameters, kernel_pack
from .poincare import InadmissibleSeed, Section, lift

#: Reference seeds (g, G) of the calibration triple: one orbit deep in the
#: regular zone, one chaotic orbit inside the lower mixed zone, and one in
#: the strongly chaotic upper zone.
REGULAR_SEED = (math.pi, -2.0)
CHAOTIC_MILD_SEED = (1.6, -2.0)
CHAOTIC_STRONG_SEED = (math.pi, 2.0)

#: FLI values of the calibration triple at t = 5000 with the default
#: section step (period/1000); re-runnable via `calibrate`.
DEFAULT_CALIBRATION = {
    "regular": 7.40,
    "chaotic_mild": 11.66,
    "chaotic_strong": 32.37,
}


def classification_threshold(calibration: dict | None = None) -> float:
    """Chaos/regular FLI cut: midpoint of the regular and mild-chaotic
    references (the nearer pair, so the cut is conservative)."""
    cal = DEFAULT_CALIBRATION if calibration is None else calibration
    return 0.5 * (cal["regular"] + cal["chaotic_mild"])


@dataclass
class FliRecord:
    """One FLI run.

    curve rows are (t, FLI(t)) samples of the running indicator.  chi is the
    crude end-of-run rate log||w||/t implied by the same tangent data (the
    careful estimate is `mle`), tau_L its inverse.  Runs that left the
    admissible region are flagged escaped and truncated at t_reached.
    """

    seed: tuple[float, float]
    fli: float
    curve: np.ndarray
    chi: float
    tau_L: float
    escaped: bool
    t_reached: float


def fli(section: Section, params: Parameters, seed, t_final: float,
        curve_samples: int = 512) -> FliRecord:
    """Basis-averaged FLI of a seed over [0, t_final]."""
    con, kmax, cosx, sinx = kernel_pack(params)
    y = lift(section, params, seed).array()
    delta = section.delta
    nsteps = max(1, int(round(t_final / delta)))
    stride = max(1, nsteps // max(1, curve_samples))
    raw = np.empty(nsteps // stride)
    value = kernels.fli_accum(con, kmax, cosx, sinx, y, delta, nsteps,
                              stride, raw)
    t = stride * delta * np.arange(1, len(raw) + 1)
    good = np.isfinite(raw)
    escaped = (not np.isfinite(value)) or (not np.all(good)) \
        or not (np.all(np.isfinite(y)) and params.admissible_r(y[3]))
    if escaped:
        if not np.any(good):
            raise InadmissibleSeed(tuple(seed), "radius")
        last = int(np.nonzero(good)[0][-1])
        value = float(np.max(raw[good]))
        t_reached = float(t[last])
        curve = np.column_stack((t[:last + 1], raw[:last + 1]))
    else:
        value = float(value)
        t_reached = nsteps * delta
        curve = np.column_stack((t, raw))
    chi = value / t_reached
    return FliRecord(seed=(float(seed[0]), float(seed[1])), fli=value,
                     curve=curve, chi=chi,
                     tau_L=1.0 / chi if chi > 0 else math.inf,
                     escaped=escaped, t_reached=t_reached)


def mle_curve(section: Section, params: Parameters, seed, t_final: float,
              renorm_every: int = 10, w0=None):
    """Renormalized largest-exponent run.

    Returns (chi, tau_L, curve, escaped, t_reached) with curve rows
    (t, chi(t)) at the renormalization cadence.  chi is read at the last
    admissible sample; tau_L is +inf when chi is not positive.
    """
    con, kmax, cosx, sinx = kernel_pack(params)
    y = lift(section, params, seed).array()
    delta = section.delta
    nsteps = max(renorm_every, int(round(t_final / delta)))
    if w0 is None:
        w0 = np.array([0.5, 0.5, 0.5, 0.5])
    curve = np.empty((nsteps // renorm_every, 2))
    kernels.mle_accum(con, kmax, cosx, sinx, y, np.asarray(w0, float),
                      delta, nsteps, renorm_every, curve)
    good = np.isfinite(curve[:, 1])
    if not np.any(good):
        raise InadmissibleSeed(tuple(seed), "radius")
    last = int(np.nonzero(good)[0][-1])
    escaped = last < len(curve) - 1 \
        or not (np.all(np.isfinite(y)) and params.admissible_r(y[3]))
    curve = curve[:last + 1]
    chi = float(curve[-1, 1])
    t_reached = float(curve[-1, 0])
    tau_L = 1.0 / chi if chi > 0.0 else math.inf
    return chi, tau_L, curve, escaped, t_reached


def mle(section: Section, params: Parameters, seed,
        t_final: float) -> tuple[float, float]:
    """Largest Lyapunov exponent estimate and Lyapunov time of a seed."""
    chi, tau_L, _, _, _ = mle_curve(section, params, seed, t_final)
    return chi, tau_L


#: fli_map node flags.
NODE_OK = 0
NODE_INADMISSIBLE = 1
NODE_ESCAPED = 2


def fli_map(section: Section, params: Parameters, mesh, t_final: float):
    """FLI over a mesh; returns (values, flags) shaped (len(G), len(g)).

    mesh is (g_grid, G_grid).  Inadmissible nodes carry NaN and flag 1;
    nodes whose orbit escaped before t_final keep their truncated value
    with flag 2.
    """
    g_grid, G_grid = mesh
    values = np.full((len(G_grid), len(g_grid)), np.nan)
    flags = np.full((len(G_grid), len(g_grid)), NODE_INADMISSIBLE,
                    dtype=np.int8)
    for i, G in enumerate(G_grid):
        for j, g in enumerate(g_grid):
            try:
                rec = fli(section, params, (g, G), t_final, curve_samples=16)
            except InadmissibleSeed:
                continue
            values[i, j] = rec.fli
            flags[i, j] = NODE_ESCAPED if rec.escaped else NODE_OK
    return values, flags


def calibrate(section: Section, params: Parameters,
              t_final: float = 5000.0) -> dict:
    """Re-measure the calibration triple's FLI values."""
    return {
        "regular": fli(section, params, REGULAR_SEED, t_final).fli,
        "chaotic_mild": fli(section, params, CHAOTIC_MILD_SEED, t_final).fli,
        "chaotic_strong": fli(section, params, CHAOTIC_STRONG_SEED,
                              t_final).fli,
    }


def fli_core(field, jacobian, y0, t_final: float, delta: float,
             curve_samples: int = 0):
    """Generic basis-averaged FLI by explicit RK4, for any smooth field.

    field(y) -> dy and jacobian(y) -> d(dy)/dy define the system; the state
    and the full tangent basis are advanced together exactly as the
    production kernel does, in plain numpy.  Used as an independent oracle
    for the kernel on the secular field, and to run synthetic fields.
    Returns (fli, curve) with curve rows (t, FLI(t)) when curve_samples > 0.
    """
    y = np.asarray(y0, float).copy()
    n = len(y)
    w = np.eye(n)
    nsteps = max(1, int(round(t_final / delta)))
    stride = max(1, nsteps // curve_samples) if curve_samples else nsteps + 1
    sup = np.zeros(n)  # ||w(0)|| = 1, so the running sup starts at log 1
    comp = np.zeros(n)  # Kahan compensation of y, mirroring the kernel
    rows = []
    for i in range(nsteps):
        k1 = field(y);            l1 = jacobian(y) @ w
        k2 = field(y + 0.5 * delta * k1)
        l2 = jacobian(y + 0.5 * delta * k1) @ (w + 0.5 * delta * l1)
        k3 = field(y + 0.5 * delta * k2)
        l3 = jacobian(y + 0.5 * delta * k2) @ (w + 0.5 * delta * l2)
        k4 = field(y + delta * k3)
        l4 = jacobian(y + delta * k3) @ (w + delta * l3)
        inc = (delta / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        t = inc - comp
        s = y + t
        comp = (s - y) - t
        y = s
        w += (delta / 6.0) * (l1 + 2 * l2 + 2 * l3 + l4)
        sup = np.maximum(sup, np.log(np.linalg.norm(w, axis=0)))
        if (i + 1) % stride == 0:
            rows.append(((i + 1) * delta, float(np.mean(sup))))
    return float(np.mean(sup)), np.array(rows)
