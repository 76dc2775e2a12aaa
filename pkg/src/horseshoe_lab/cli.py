"""Command-line driver: one subcommand per experiment recipe.

Every subcommand reads a single TOML configuration (missing keys fall back
to defaults that reproduce the reference runs), writes CSV data files and
JSON reports into the output directory, and finishes with a manifest
listing the files it produced.  Exit codes: 0 for success, 1 for a
scientific FAIL (a certification or check that ran to completion but did
not meet its tolerance), 2 for usage, configuration or runtime errors.

Outputs are deterministic for a fixed configuration.  Mesh nodes and other
independent work items are computed in isolation, optionally across a
process pool, and always gathered in input order before anything is
written, so the emitted bytes do not depend on the worker count or on
scheduling.  Every file starts with a header carrying the tool version and
the configuration hash (which itself excludes the output directory and
worker count).
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from .chaos import (CHAOTIC_MILD_SEED, CHAOTIC_STRONG_SEED, REGULAR_SEED,
                    classification_threshold, fli, fli_map)
from .config import ConfigError, RunConfig, load_config
from .covering import check_horseshoe, orient_horseshoe, saddle_hsets
from .fixed_points import (NewtonFailure, chart_distance, newton_fixed_point)
from .integrator import DomainEscape, energy_drift, forward_backward_error
from .manifolds import find_heteroclinic, grow_manifold, refine_section
from .model import slow_hamiltonian
from .poincare import (InadmissibleSeed, admissible_region, iterate_map,
                       lift)
from .validation import run_suite

_TOOL = "horseshoe-lab"

#: Tolerances (energy drift, forward/backward defect) applied to flow-check
#: entries by label; entries with other labels are reported without a
#: verdict.
_FLOW_TOLERANCES = {
    "regular": (1e-12, 1e-12),
    "chaotic": (1e-10, 1e-8),
}


# ---------------------------------------------------------------------------
# output plumbing

def _cell(value) -> str:
    """One CSV cell: shortest round-trip form, stable across runs."""
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    if isinstance(value, (float, np.floating)):
        return repr(float(value))
    return str(value)


def _jsonable(value):
    """Recursively convert to plain JSON types; non-finite floats -> null."""
    if isinstance(value, dict):
        return {str(k): _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, (bool, np.bool_)):
        return bool(value)
    if isinstance(value, (int, np.integer)):
        return int(value)
    if isinstance(value, (float, np.floating)):
        f = float(value)
        return f if math.isfinite(f) else None
    if isinstance(value, complex):
        return [_jsonable(value.real), _jsonable(value.imag)]
    return value


class _Run:
    """Output sink for one command: writes files, then their manifest."""

    def __init__(self, command: str, cfg: RunConfig):
        self.command = command
        self.cfg = cfg
        self.outdir = Path(cfg.data["run"]["out"])
        self.outdir.mkdir(parents=True, exist_ok=True)
        self.files: list[str] = []

    def csv(self, name: str, header, rows) -> None:
        with open(self.outdir / name, "w", newline="") as fh:
            fh.write(f"# {_TOOL} {__version__}\n")
            fh.write(f"# config {self.cfg.hash()}\n")
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([_cell(v) for v in row])
        self.files.append(name)

    def json(self, name: str, payload: dict) -> None:
        doc = {"tool": _TOOL, "version": __version__,
               "config_hash": self.cfg.hash()}
        doc.update(payload)
        with open(self.outdir / name, "w") as fh:
            json.dump(_jsonable(doc), fh, indent=2, sort_keys=True)
            fh.write("\n")
        self.files.append(name)

    def manifest(self, complete: bool) -> None:
        files = {}
        for name in sorted(self.files):
            digest = hashlib.sha256((self.outdir / name).read_bytes())
            files[name] = digest.hexdigest()
        doc = {"tool": _TOOL, "version": __version__,
               "config_hash": self.cfg.hash(), "command": self.command,
               "complete": complete, "files": files}
        with open(self.outdir / f"{self.command}.manifest.json", "w") as fh:
            json.dump(doc, fh, indent=2, sort_keys=True)
            fh.write("\n")

    @property
    def workers(self) -> int:
        return self.cfg.data["run"]["workers"]


def _map_ordered(fn, tasks, workers: int) -> list:
    """Apply fn to every task, returning results in task order.

    The ordered gather (``ProcessPoolExecutor.map``, not completion order)
    is what keeps output files byte-identical regardless of the worker
    count.
    """
    tasks = list(tasks)
    if workers <= 1 or len(tasks) <= 1:
        return [fn(task) for task in tasks]
    chunksize = max(1, len(tasks) // (4 * workers))
    with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
        return list(pool.map(fn, tasks, chunksize=chunksize))


# ---------------------------------------------------------------------------
# per-node work functions (top level so they pickle for the process pool)

def _portrait_node(task):
    section, params, g, G, n = task
    pts, _taus, reason = iterate_map(section, params, (g, G), n)
    return pts, (reason or "ok")


def _fli_row(task):
    section, params, g_grid, G, t_final = task
    values, flags = fli_map(section, params, (g_grid, np.array([G])), t_final)
    return values[0], flags[0]


def _fp_node(task):
    section, params, g, G, tol, maxit = task
    try:
        fp = newton_fixed_point(section, params, (g, G), tol=tol, maxit=maxit)
    except InadmissibleSeed:
        return "inadmissible", None
    except NewtonFailure as exc:
        return exc.reason, None
    return "converged", fp


def _manifold_node(task):
    section, params, _index, fp, kind, branch, depth, max_spacing = task
    return grow_manifold(section, params, fp, kind, branch=branch,
                         depth=depth, max_spacing=max_spacing)


def _flow_node(task):
    section, params, seed, label, divisor, returns = task
    delta = section.period / float(divisor)
    _pts, taus, _reason = iterate_map(section, params, seed, returns)
    if len(taus) == returns:
        horizon = float(np.sum(taus))
        horizon_kind = "returns"
    else:
        # The orbit left the chart before completing the requested number
        # of returns; fall back to the equivalent multiple of the period.
        horizon = returns * section.period
        horizon_kind = "period_fallback"
    state = lift(section, params, seed)
    entry = {
        "label": label, "seed": list(seed),
        "divisor": float(divisor), "delta": delta,
        "returns_requested": returns, "returns_completed": len(taus),
        "horizon": horizon, "horizon_kind": horizon_kind,
    }
    for key, fn in (("drift", energy_drift),
                    ("reversibility", forward_backward_error)):
        try:
            value = float(fn(params, state, horizon, delta))
            status = "ok"
        except DomainEscape:
            value = None
            status = "escaped"
        entry[key] = {"value": value, "status": status}
    return entry


# ---------------------------------------------------------------------------
# commands

def _cmd_portrait(run: _Run) -> int:
    cfg = run.cfg
    params = cfg.parameters()
    section = cfg.section(params)
    g_grid, G_grid = cfg.mesh("portrait")
    n = cfg.data["portrait"]["iterations"]
    tasks = [(section, params, float(g), float(G), n)
             for G in G_grid for g in g_grid]
    results = _map_ordered(_portrait_node, tasks, run.workers)
    rows = []
    reasons = {"ok": 0, "inadmissible": 0, "no_return": 0}
    for (_s, _p, g, G, _n), (pts, reason) in zip(tasks, results):
        reasons[reason] += 1
        for i in range(pts.shape[0]):
            rows.append((g, G, i, pts[i, 0], pts[i, 1]))
    run.csv("portrait.csv", ("seed_g", "seed_G", "n", "g", "G"), rows)
    run.json("portrait_summary.json", {
        "nodes": len(tasks), "iterations": n, "rows": len(rows),
        "reasons": reasons,
    })
    return 0


def _cmd_admissible(run: _Run) -> int:
    cfg = run.cfg
    params = cfg.parameters()
    section = cfg.section(params)
    g_grid, G_grid = cfg.mesh("admissible")
    mask = admissible_region(section, params, g_grid, G_grid)
    rows = [(g, G, bool(mask[i, j]))
            for i, G in enumerate(G_grid) for j, g in enumerate(g_grid)]
    run.csv("admissible.csv", ("g", "G", "admissible"), rows)
    run.json("admissible_summary.json", {
        "total": int(mask.size), "admissible": int(mask.sum()),
        "inadmissible": int(mask.size - mask.sum()),
    })
    return 0


def _cmd_fli_map(run: _Run) -> int:
    cfg = run.cfg
    params = cfg.parameters()
    section = cfg.section(params)
    g_grid, G_grid = cfg.mesh("fli_map")
    t_final = cfg.data["fli_map"]["t_final"]
    tasks = [(section, params, g_grid, float(G), t_final) for G in G_grid]
    row_results = _map_ordered(_fli_row, tasks, run.workers)
    values = np.vstack([r[0] for r in row_results])
    flags = np.vstack([r[1] for r in row_results])
    rows = [(g, G, values[i, j], int(flags[i, j]))
            for i, G in enumerate(G_grid) for j, g in enumerate(g_grid)]
    run.csv("fli_map.csv", ("g", "G", "fli", "flag"), rows)

    calibration = {}
    for label, seed in (("regular", REGULAR_SEED),
                        ("chaotic_mild", CHAOTIC_MILD_SEED),
                        ("chaotic_strong", CHAOTIC_STRONG_SEED)):
        rec = fli(section, params, seed, t_final)
        calibration[label] = rec.fli
        run.csv(f"calibration_{label}.csv", ("t", "fli"),
                [(t, v) for t, v in rec.curve])
    threshold = classification_threshold(calibration)
    finite = np.isfinite(values)
    run.json("fli_summary.json", {
        "t_final": t_final,
        "calibration": calibration,
        "threshold": threshold,
        "counts": {
            "total": int(values.size),
            "chaotic": int(np.sum(finite & (values > threshold))),
            "regular": int(np.sum(finite & (values <= threshold))),
            "inadmissible": int(np.sum(flags == 1)),
            "escaped": int(np.sum(flags == 2)),
        },
    })
    return 0


def _cmd_fixed_points(run: _Run) -> int:
    cfg = run.cfg
    params = cfg.parameters()
    section = cfg.section(params)
    blk = cfg.data["fixed_points"]
    seeds = cfg.seed_pairs("fixed_points", "guesses")
    if not seeds:
        g_grid, G_grid = cfg.mesh("fixed_points")
        seeds = [(float(g), float(G)) for G in G_grid for g in g_grid]
    tasks = [(section, params, g, G, blk["tol"], blk["maxit"])
             for g, G in seeds]
    outcomes = _map_ordered(_fp_node, tasks, run.workers)

    # Sequential dedup in grid order: identical output for any worker count.
    counts = {"converged": 0, "duplicate": 0, "inadmissible": 0,
              "diverged": 0, "no_return": 0, "singular": 0, "maxit": 0,
              "marginal": 0}
    found = []
    for status, fp in outcomes:
        if status != "converged":
            counts[status] += 1
            continue
        counts["converged"] += 1
        if fp.kind == "marginal":
            counts["marginal"] += 1
        for i, other in enumerate(found):
            if chart_distance(fp.seed, other.seed) < 1e-5:
                counts["duplicate"] += 1
                if fp.residual < other.residual:
                    found[i] = fp
                break
        else:
            found.append(fp)
    found.sort(key=lambda fp: (fp.seed[1], fp.seed[0]))

    rows = [(fp.seed[0], fp.seed[1], fp.kind,
             fp.eigenvalues[0].real, fp.eigenvalues[0].imag,
             fp.eigenvalues[1].real, fp.eigenvalues[1].imag,
             fp.residual, fp.tau) for fp in found]
    run.csv("fixed_points.csv",
            ("g", "G", "kind", "eig1_re", "eig1_im", "eig2_re", "eig2_im",
             "residual", "tau"), rows)
    run.json("fixed_points_summary.json", {
        "nodes": len(tasks), "distinct": len(found), "counts": counts,
        "kinds": {kind: sum(1 for fp in found if fp.kind == kind)
                  for kind in sorted({fp.kind for fp in found})},
    })
    return 0


def _arc_length(points: np.ndarray) -> float:
    return float(sum(chart_distance(points[i], points[i + 1])
                     for i in range(len(points) - 1)))


def _cmd_manifolds(run: _Run) -> int:
    cfg = run.cfg
    params = cfg.parameters()
    blk = cfg.data["manifolds"]
    section = refine_section(cfg.section(params), params, blk["refine"])
    saddles = [newton_fixed_point(section, params, tuple(guess))
               for guess in cfg.seed_pairs("manifolds", "saddles")]
    tasks = [(section, params, index, fp, kind, branch,
              blk["depth"], blk["max_spacing"])
             for index, fp in enumerate(saddles, start=1)
             for kind in ("unstable", "stable")
             for branch in (1, -1)]
    pieces = _map_ordered(_manifold_node, tasks, run.workers)

    rows = []
    summaries = []
    by_key = {}
    for (_s, _p, index, _fp, kind, branch, _d, _m), piece in zip(tasks,
                                                                 pieces):
        by_key[(index, kind, branch)] = piece
        for i, (g, G) in enumerate(piece.points):
            rows.append((index, kind, branch, i, g, G))
        summaries.append({
            "saddle": index, "kind": kind, "branch": branch,
            "points": int(len(piece.points)), "depth": int(piece.depth),
            "arc_length": _arc_length(piece.points),
            "truncated": bool(piece.truncated), "reason": piece.reason,
        })
    run.csv("manifolds.csv",
            ("saddle", "kind", "branch", "index", "g", "G"), rows)

    heteroclinic = {}
    total = 0
    if len(saddles) >= 2:
        for bu in (1, -1):
            for bs in (1, -1):
                pts = find_heteroclinic(by_key[(1, "unstable", bu)],
                                        by_key[(2, "stable", bs)])
                key = f"u{'+' if bu > 0 else '-'}/s{'+' if bs > 0 else '-'}"
                heteroclinic[key] = [list(p) for p in pts]
                total += len(pts)
    run.json("manifolds_summary.json", {
        "saddles": [{"seed": list(fp.seed), "kind": fp.kind,
                     "eigenvalues": [fp.eigenvalues[0].real,
                                     fp.eigenvalues[1].real],
                     "residual": fp.residual, "tau": fp.tau}
                    for fp in saddles],
        "pieces": summaries,
        "heteroclinic": {"pairs": heteroclinic, "count": total},
    })
    return 0


def _cmd_horseshoe(run: _Run) -> int:
    cfg = run.cfg
    params = cfg.parameters()
    section = cfg.section(params)
    hs = cfg.data["horseshoe"]
    iv = cfg.hset_intervals()
    fp1 = newton_fixed_point(section, params, tuple(hs["saddle1"]))
    fp2 = newton_fixed_point(section, params, tuple(hs["saddle2"]))
    for name, fp in (("saddle1", fp1), ("saddle2", fp2)):
        if fp.kind != "hyperbolic":
            raise RuntimeError(f"{name} polished to a {fp.kind} point; "
                               "covering relations need a hyperbolic saddle")
    if hs["orient"]:
        orientation, report = orient_horseshoe(
            section, params, fp1, fp2, iv["A1"], iv["B1"], iv["A2"],
            iv["B2"], n_samples=hs["n_samples"])
    else:
        orientation = (1, 1, 1, 1)
        N1, N2 = saddle_hsets(fp1, fp2, iv["A1"], iv["B1"], iv["A2"],
                              iv["B2"], orientation)
        report = check_horseshoe(section, params, N1, N2,
                                 n_samples=hs["n_samples"])

    relations = {}
    for name, rel in report.relations.items():
        relations[name] = {"holds": bool(rel.holds),
                           "inconclusive": bool(rel.inconclusive),
                           "margin": rel.min_margin}
    passed = bool(report.holds)
    run.json("horseshoe.json", {
        "saddle1": {"seed": list(fp1.seed),
                    "eigenvalues": [fp1.eigenvalues[0].real,
                                    fp1.eigenvalues[1].real],
                    "residual": fp1.residual},
        "saddle2": {"seed": list(fp2.seed),
                    "eigenvalues": [fp2.eigenvalues[0].real,
                                    fp2.eigenvalues[1].real],
                    "residual": fp2.residual},
        "intervals": {k: list(v) for k, v in iv.items()},
        "orientation": list(orientation),
        "n_samples": hs["n_samples"],
        "relations": relations,
        "min_margin": report.min_margin,
        "result": "PASS" if passed else "FAIL",
    })
    return 0 if passed else 1


def _cmd_flow_check(run: _Run) -> int:
    cfg = run.cfg
    params = cfg.parameters()
    section = cfg.section(params)
    fc = cfg.data["flow_check"]
    seeds = cfg.seed_pairs("flow_check", "seeds")
    tasks = [(section, params, seed, label, div, fc["returns"])
             for seed, label, div in zip(seeds, fc["labels"],
                                         fc["delta_divisors"])]
    entries = _map_ordered(_flow_node, tasks, run.workers)

    failed = False
    for entry in entries:
        tols = _FLOW_TOLERANCES.get(entry["label"])
        for key, tol in zip(("drift", "reversibility"),
                            tols or (None, None)):
            block = entry[key]
            block["tolerance"] = tol
            if tol is None:
                block["passed"] = None
            else:
                block["passed"] = (block["value"] is not None
                                   and block["value"] <= tol)
                failed = failed or not block["passed"]
    run.json("flow_check.json", {
        "entries": entries,
        "result": "FAIL" if failed else "PASS",
    })
    return 1 if failed else 0


def _cmd_secular_portrait(run: _Run) -> int:
    cfg = run.cfg
    params = cfg.parameters()
    g_grid, G_grid = cfg.mesh("secular_portrait")
    rows = []
    values = []
    for G in G_grid:
        for g in g_grid:
            F = slow_hamiltonian(params, float(G), float(g))
            rows.append((g, G, F))
            values.append(F)
    values = np.array(values)
    finite = values[np.isfinite(values)]
    run.csv("secular_portrait.csv", ("g", "G", "F"), rows)
    run.json("secular_portrait_summary.json", {
        "nodes": int(values.size),
        "F_min": float(np.min(finite)),
        "F_max": float(np.max(finite)),
    })
    return 0


def _cmd_validate(run: _Run) -> int:
    checks = run_suite(run.cfg)
    for check in checks:
        print(check.line())
    failed = [c.name for c in checks if not c.passed]
    run.json("validation.json", {
        "checks": [{"name": c.name, "measured": c.measured,
                    "tolerance": c.tolerance, "passed": c.passed}
                   for c in checks],
        "result": "FAIL" if failed else "PASS",
        "failed": failed,
    })
    return 1 if failed else 0


_COMMANDS = {
    "portrait": (_cmd_portrait,
                 "iterate the return map over a seed mesh"),
    "admissible": (_cmd_admissible,
                   "map the admissible region of the section chart"),
    "fli-map": (_cmd_fli_map,
                "stability map: FLI over a seed mesh plus calibration "
                "curves"),
    "fixed-points": (_cmd_fixed_points,
                     "Newton survey of return-map fixed points"),
    "manifolds": (_cmd_manifolds,
                  "grow stable/unstable manifolds of the saddle pair and "
                  "locate heteroclinic points"),
    "horseshoe": (_cmd_horseshoe,
                  "check the four covering relations between the saddle "
                  "h-sets (PASS/FAIL)"),
    "flow-check": (_cmd_flow_check,
                   "energy drift and forward/backward reversibility over "
                   "a fixed horizon (PASS/FAIL)"),
    "secular-portrait": (_cmd_secular_portrait,
                         "level data of the frozen-radius Hamiltonian"),
    "validate": (_cmd_validate,
                 "run the full validation suite (PASS/FAIL table)"),
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog=_TOOL,
        description="Return-map experiments for the averaged binary-asteroid "
                    "model: portraits, stability maps, saddles, manifolds, "
                    "covering relations, integrator checks.")
    parser.add_argument("--version", action="version",
                        version=f"{_TOOL} {__version__}")
    sub = parser.add_subparsers(dest="command", metavar="<command>",
                                required=True)
    for name, (_fn, help_text) in _COMMANDS.items():
        p = sub.add_parser(name, help=help_text)
        p.add_argument("--config", default=None, metavar="FILE",
                       help="TOML configuration file (defaults reproduce "
                            "the reference runs)")
        p.add_argument("--out", default=None, metavar="DIR",
                       help="output directory (overrides run.out)")
        p.add_argument("--workers", type=int, default=None, metavar="N",
                       help="worker process count (overrides run.workers)")
    args = parser.parse_args(argv)

    overrides: dict = {"run": {}}
    if args.out is not None:
        overrides["run"]["out"] = args.out
    if args.workers is not None:
        overrides["run"]["workers"] = args.workers
    try:
        cfg = load_config(args.config,
                          overrides if overrides["run"] else None)
        run = _Run(args.command, cfg)
    except (ConfigError, OSError) as exc:
        print(f"{_TOOL}: {exc}", file=sys.stderr)
        return 2

    handler = _COMMANDS[args.command][0]
    try:
        code = handler(run)
    except Exception as exc:  # uniform runtime-error contract
        run.json("error.json", {"command": args.command,
                                "error": type(exc).__name__,
                                "message": str(exc)})
        run.manifest(complete=False)
        print(f"{_TOOL}: {args.command} failed: "
              f"{type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    run.manifest(complete=True)
    return code


if __name__ == "__main__":
    sys.exit(main())
