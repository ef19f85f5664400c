"""TOML run configuration with [symbols], [zone], [integrator], [harness].

Every key is optional and defaults to the values below; unknown sections or
keys are rejected.  Cross-constraints are validated at load and reported as
:class:`ConfigError` carrying the offending section/key.

Documented keys
---------------
[symbols]     delta (0.75), mu (0.08), kmax (32), lie_order (2),
              max_nodes (400000), max_steps (3), N_target (1.0), beta (fit)
[zone]        d (2), delta (0.75), mu (0.02), C (4^(j-1)), D (2^(j-1)),
              R (calibrated), h_plane_factor (0.125), eps_bnd (1e-6),
              max_plane_points (20000)
[integrator]  dt (0.01), tol_fp (1e-14), maxit (60), max_halvings (4),
              n_samples (2000), spacing ("log"), n_audits (10),
              audit_h (1e-6), audit_threshold (1e-8), t_end, a0, phi0, t0 (0)
[harness]     constant (16), decades (2), min_samples (1000),
              min_decades (3), N (none), seed (0), threads (cpu count)
"""
from __future__ import annotations

from dataclasses import dataclass, field, fields
import os
import sys

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover - depends on interpreter
    import tomli as tomllib

from .cutoffs import CutoffParams
from .cohomology import NFBudget
from .dynamics import IntegratorSettings
from .geometry import ZoneParams


class ConfigError(ValueError):
    """Validation failure; ``section``/``key`` locate the problem."""

    def __init__(self, message, section=None, key=None):
        super().__init__(message)
        self.section = section
        self.key = key

    def to_dict(self):
        return {"error": "config", "section": self.section, "key": self.key, "message": str(self)}


_SYMBOLS = {"delta": 0.75, "mu": 0.08, "kmax": 32, "lie_order": 2, "max_nodes": 400_000,
            "max_steps": 3, "N_target": 1.0, "beta": None}
_ZONE = {f.name: None for f in fields(ZoneParams)}
_INTEGRATOR = {f.name: f.default for f in fields(IntegratorSettings)}
_INTEGRATOR.update({"t_end": None, "a0": None, "phi0": None, "t0": 0.0})
_HARNESS = {"constant": 16.0, "decades": 2.0, "min_samples": 1000, "min_decades": 3.0,
            "N": None, "seed": 0, "threads": None}
SECTIONS = {"symbols": _SYMBOLS, "zone": _ZONE, "integrator": _INTEGRATOR, "harness": _HARNESS}


@dataclass
class RunConfig:
    cutoff: CutoffParams = field(default_factory=CutoffParams)
    budget: NFBudget = field(default_factory=NFBudget)
    zone: ZoneParams = field(default_factory=ZoneParams)
    integrator: IntegratorSettings = field(default_factory=IntegratorSettings)
    symbols: dict = field(default_factory=lambda: dict(_SYMBOLS))
    run: dict = field(default_factory=lambda: {k: _INTEGRATOR[k] for k in ("t_end", "a0", "phi0", "t0")})
    harness: dict = field(default_factory=lambda: dict(_HARNESS))
    raw: dict = field(default_factory=dict)
    path: str | None = None

    @property
    def seed(self) -> int:
        return int(self.harness["seed"])

    @property
    def threads(self) -> int:
        n = self.harness.get("threads")
        return int(n) if n else (os.cpu_count() or 1)

    def require(self, section: str, key: str):
        """Value of a key that has no default; ConfigError if absent."""
        src = self.run if section == "integrator" and key in self.run else \
            {"symbols": self.symbols, "harness": self.harness}.get(section, {})
        val = src.get(key)
        if val is None:
            raise ConfigError(f"missing required key [{section}] {key}", section, key)
        return val

    def to_dict(self) -> dict:
        return {
            "symbols": {**self.symbols, "delta": self.cutoff.delta, "mu": self.cutoff.mu},
            "zone": self.zone.to_dict(),
            "integrator": {**{f.name: getattr(self.integrator, f.name) for f in fields(IntegratorSettings)},
                           **self.run},
            "harness": dict(self.harness),
        }


def _check_keys(doc: dict):
    for sec, body in doc.items():
        if sec not in SECTIONS:
            raise ConfigError(f"unknown section [{sec}]", sec)
        if not isinstance(body, dict):
            raise ConfigError(f"[{sec}] must be a table", sec)
        for k in body:
            if k not in SECTIONS[sec]:
                raise ConfigError(f"unknown key [{sec}] {k}", sec, k)


def _build(ctor, section, kw):
    try:
        return ctor(**kw)
    except (TypeError, ValueError) as err:
        key = next((k for k in kw if k in str(err)), None)
        if "δ" in str(err):
            key = "delta"
        raise ConfigError(str(err), section, key) from None


def from_dict(doc: dict, path=None) -> RunConfig:
    _check_keys(doc)
    sy = {**_SYMBOLS, **doc.get("symbols", {})}
    cutoff = _build(CutoffParams, "symbols", {"delta": float(sy["delta"]), "mu": float(sy["mu"])})
    budget = _build(NFBudget, "symbols", {"kmax": int(sy["kmax"]), "lie_order": int(sy["lie_order"]),
                                          "max_nodes": int(sy["max_nodes"])})
    if int(sy["max_steps"]) < 1:
        raise ConfigError("max_steps must be >= 1", "symbols", "max_steps")
    zkw = {k: v for k, v in doc.get("zone", {}).items() if v is not None}
    for k in ("C", "D"):
        if k in zkw:
            zkw[k] = tuple(zkw[k])
    zone = _build(ZoneParams, "zone", zkw)
    try:
        cutoff.validate(zone.d)
    except ValueError as err:
        raise ConfigError(str(err), "symbols", "mu") from None
    ig = dict(doc.get("integrator", {}))
    run = {k: ig.pop(k, _INTEGRATOR[k]) for k in ("t_end", "a0", "phi0", "t0")}
    integ = _build(IntegratorSettings, "integrator", ig)
    if integ.dt <= 0:
        raise ConfigError("dt must be positive", "integrator", "dt")
    if integ.spacing not in ("log", "uniform"):
        raise ConfigError("spacing must be 'log' or 'uniform'", "integrator", "spacing")
    for k in ("a0", "phi0"):
        if run[k] is not None and len(run[k]) != zone.d:
            raise ConfigError(f"{k} needs {zone.d} entries", "integrator", k)
    hz = {**_HARNESS, **doc.get("harness", {})}
    if hz["N"] is not None and hz["N"] < 1:
        raise ConfigError("N must be >= 1", "harness", "N")
    return RunConfig(cutoff, budget, zone, integ, sy, run, hz, doc, None if path is None else str(path))


def load(path=None) -> RunConfig:
    """Parse a TOML file (``None`` gives the defaults)."""
    if path is None:
        return from_dict({})
    try:
        with open(path, "rb") as fh:
            doc = tomllib.load(fh)
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"invalid TOML in {path}: {err}") from None
    return from_dict(doc, path)
