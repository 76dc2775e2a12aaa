"""Run configuration: TOML ingestion, validation, canonical hashing.

A run configuration is a TOML file whose sections mirror the pipeline
stages.  Every key has a default, so an empty file (or no file at all) runs
the reference experiment; unknown keys anywhere are rejected rather than
ignored, since a typo silently falling back to a default would poison a
reproduction.  The canonical JSON serialization of the merged configuration
is hashed into every output file header.
"""

from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field

try:
    import tomllib
except ImportError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from .model import DATUM, Parameters, SecularState
from .poincare import Section, build_section


class ConfigError(ValueError):
    """Invalid, unknown, or inconsistent configuration content."""


def _defaults() -> dict:
    return {
        "parameters": {
            "m0": 1.0,
            "beta": 40.0,
            "C": 75.597,
            "Lambda": 3.099,
            "k_max": 10,
            "quad_nodes": 0,          # 0 selects the automatic node count
            "datum": {"G": DATUM.G, "R": DATUM.R, "g": DATUM.g, "r": DATUM.r},
        },
        "integrator": {
            "delta": 0.0,             # 0 selects period/1000
            "t_max_periods": 100.0,
        },
        "poincare": {
            "branch": "auto",         # "auto" (sign of datum R), "+", or "-"
            "tol": 1e-12,
            "t_min_steps": 10.0,
        },
        "run": {
            "out": "out",
            "workers": 1,
            "random_seed": 0,
        },
        "portrait": {
            "g_min": 0.0, "g_max": math.pi, "g_count": 12,
            "G_min": -3.0, "G_max": 3.0, "G_count": 12,
            "iterations": 300,
        },
        "admissible": {
            "g_min": 0.0, "g_max": math.pi, "g_count": 200,
            "G_min": -3.099, "G_max": 3.099, "G_count": 200,
        },
        "fli_map": {
            "g_min": 0.0, "g_max": math.pi, "g_count": 40,
            "G_min": -3.0, "G_max": 3.0, "G_count": 40,
            "t_final": 5000.0,
        },
        "fixed_points": {
            "g_min": 0.0, "g_max": math.pi, "g_count": 60,
            "G_min": -3.0, "G_max": 3.0, "G_count": 60,
            "tol": 1e-10,
            "maxit": 20,
            "guesses": [],            # explicit (g, G) pairs instead of a grid
        },
        "manifolds": {
            "saddles": [[0.19, 2.12], [0.27, 2.26]],
            "depth": 4,
            "max_spacing": 5e-3,
            "refine": 4,              # section-step refinement for growing
        },
        "horseshoe": {
            "saddle1": [0.19, 2.12],  # Newton guesses, polished before use
            "saddle2": [0.27, 2.26],
            # h-set window intervals (stable A, unstable B), in chart units
            # along the eigendirections; [lo, hi] with lo < 0 < hi.
            "A1": [-0.02, 0.02], "B1": [-0.0065, 0.0065],
            "A2": [-0.02, 0.02], "B2": [-0.0045, 0.0045],
            "n_samples": 64,
            "orient": True,           # search stable-side signs automatically
        },
        "flow_check": {
            "seeds": [[math.pi, -2.0], [math.pi, 2.0]],
            "labels": ["regular", "chaotic"],
            "returns": 100,           # horizon, in completed section returns
            "delta_divisors": [24000.0, 36000.0],
        },
        "secular_portrait": {
            "g_min": 0.0, "g_max": math.pi, "g_count": 181,
            "G_min": -3.0, "G_max": 3.0, "G_count": 181,
        },
    }


def _merge(base: dict, override: dict, path: str = "") -> dict:
    out = {}
    for key, default in base.items():
        here = f"{path}.{key}" if path else key
        if key not in override:
            out[key] = default
            continue
        value = override[key]
        if isinstance(default, dict):
            if not isinstance(value, dict):
                raise ConfigError(f"{here}: expected a table")
            out[key] = _merge(default, value, here)
        elif isinstance(default, bool):
            if not isinstance(value, bool):
                raise ConfigError(f"{here}: expected a boolean")
            out[key] = value
        elif isinstance(default, (int, float)) and not isinstance(default, bool):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{here}: expected a number")
            out[key] = type(default)(value) if isinstance(default, float) \
                else value
        elif isinstance(default, str):
            if not isinstance(value, str):
                raise ConfigError(f"{here}: expected a string")
            out[key] = value
        elif isinstance(default, list):
            if not isinstance(value, list):
                raise ConfigError(f"{here}: expected an array")
            out[key] = value
        else:  # pragma: no cover - defaults above only use the types handled
            raise ConfigError(f"{here}: unsupported default type")
    unknown = set(override) - set(base)
    if unknown:
        where = path or "top level"
        raise ConfigError(f"unknown key(s) at {where}: {sorted(unknown)}")
    return out


def _seed_pairs(value, where: str) -> list[tuple[float, float]]:
    pairs = []
    for item in value:
        if (not isinstance(item, (list, tuple)) or len(item) != 2
                or any(isinstance(v, bool) or not isinstance(v, (int, float))
                       for v in item)):
            raise ConfigError(f"{where}: entries must be (g, G) number pairs")
        pairs.append((float(item[0]), float(item[1])))
    return pairs


@dataclass
class RunConfig:
    """Validated configuration with typed accessors for each stage."""

    data: dict = field(default_factory=_defaults)

    def __post_init__(self):
        # Constructing Parameters validates the physical block early.
        self.parameters()
        p = self.data["poincare"]
        if p["branch"] not in ("auto", "+", "-"):
            raise ConfigError('poincare.branch: must be "auto", "+" or "-"')
        if p["tol"] <= 0:
            raise ConfigError("poincare.tol: must be positive")
        r = self.data["run"]
        if r["workers"] < 1:
            raise ConfigError("run.workers: must be >= 1")
        fc = self.data["flow_check"]
        if len(fc["seeds"]) != len(fc["labels"]) \
                or len(fc["seeds"]) != len(fc["delta_divisors"]):
            raise ConfigError("flow_check: seeds, labels, delta_divisors "
                              "must have equal lengths")
        if fc["returns"] < 1:
            raise ConfigError("flow_check.returns: must be >= 1")
        if any(isinstance(d, bool) or not isinstance(d, (int, float)) or d <= 0
               for d in fc["delta_divisors"]):
            raise ConfigError("flow_check.delta_divisors: positive numbers")
        for key in ("portrait", "admissible", "fli_map", "fixed_points",
                    "secular_portrait"):
            blk = self.data[key]
            if blk["g_count"] < 1 or blk["G_count"] < 1:
                raise ConfigError(f"{key}: grid counts must be >= 1")
            if not (blk["g_min"] < blk["g_max"]
                    and blk["G_min"] < blk["G_max"]):
                raise ConfigError(f"{key}: empty mesh extents")
        if self.data["portrait"]["iterations"] < 0:
            raise ConfigError("portrait.iterations: must be >= 0")
        mf = self.data["manifolds"]
        if mf["depth"] < 0 or mf["max_spacing"] <= 0 or mf["refine"] < 1:
            raise ConfigError("manifolds: depth >= 0, max_spacing > 0, "
                              "refine >= 1 required")
        hs = self.data["horseshoe"]
        for key in ("A1", "B1", "A2", "B2"):
            iv = hs[key]
            if (not isinstance(iv, list) or len(iv) != 2
                    or any(isinstance(v, bool) or not isinstance(v, (int, float))
                           for v in iv) or not iv[0] < 0.0 < iv[1]):
                raise ConfigError(f"horseshoe.{key}: expected [lo, hi] with "
                                  "lo < 0 < hi")
        if hs["n_samples"] < 4:
            raise ConfigError("horseshoe.n_samples: must be >= 4")

    def parameters(self) -> Parameters:
        blk = self.data["parameters"]
        d = blk["datum"]
        datum = SecularState(G=d["G"], R=d["R"], g=d["g"], r=d["r"])
        try:
            return Parameters(
                m0=blk["m0"], beta=blk["beta"], C=blk["C"],
                Lambda=blk["Lambda"], k_max=blk["k_max"],
                quad_nodes=blk["quad_nodes"] or None, datum=datum)
        except ValueError as exc:
            raise ConfigError(f"parameters: {exc}") from exc

    def section(self, params: Parameters | None = None) -> Section:
        params = params or self.parameters()
        pc = self.data["poincare"]
        ig = self.data["integrator"]
        branch = {"auto": None, "+": 1.0, "-": -1.0}[pc["branch"]]
        delta = ig["delta"] or None
        section = build_section(params, branch=branch, delta=delta,
                                tol=pc["tol"])
        t_min = pc["t_min_steps"] * section.delta
        t_max = ig["t_max_periods"] * section.period
        return Section(point=section.point, normal=section.normal,
                       h_star=section.h_star, branch=section.branch,
                       period=section.period, delta=section.delta,
                       t_min=t_min, t_max=t_max, tol=section.tol)

    def mesh(self, key: str) -> tuple[np.ndarray, np.ndarray]:
        """(g_grid, G_grid) for a gridded stage; g omits its right endpoint
        (the coordinate is pi-periodic), G includes both ends."""
        blk = self.data[key]
        g = np.linspace(blk["g_min"], blk["g_max"], blk["g_count"],
                        endpoint=False)
        G = np.linspace(blk["G_min"], blk["G_max"], blk["G_count"])
        return g, G

    def seed_pairs(self, key: str, name: str) -> list[tuple[float, float]]:
        return _seed_pairs(self.data[key][name], f"{key}.{name}")

    def hset_intervals(self) -> dict[str, tuple[float, float]]:
        hs = self.data["horseshoe"]
        return {k: (float(hs[k][0]), float(hs[k][1]))
                for k in ("A1", "B1", "A2", "B2")}

    def canonical_json(self) -> str:
        """Deterministic serialization of everything that affects results.

        The output directory and worker count are excluded: identical
        science written to a different place, or computed on a different
        number of processes, must hash (and byte-compare) identically.
        """
        data = json.loads(json.dumps(self.data))
        del data["run"]["out"]
        del data["run"]["workers"]
        return json.dumps(data, sort_keys=True, separators=(",", ":"))

    def hash(self) -> str:
        return hashlib.sha256(self.canonical_json().encode()).hexdigest()[:16]


def load_config(path: str | None = None,
                overrides: dict | None = None) -> RunConfig:
    """Parse and validate a TOML file; None loads pure defaults.

    overrides is a nested partial mapping (command-line flags) merged on
    top of the file content.
    """
    if path is None:
        raw = {}
    else:
        try:
            with open(path, "rb") as fh:
                raw = tomllib.load(fh)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}")
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"config parse error: {exc}")
    data = _merge(_defaults(), raw)
    if overrides:
        data = _merge(data, overrides)
    return RunConfig(data)
