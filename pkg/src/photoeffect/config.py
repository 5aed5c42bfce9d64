"""Run configuration: parsing, validation, defaults and a stable hash.

Configurations are TOML (or JSON, chosen by file suffix).  See the README for
the schema; every field has a default except ``[potential]``.
"""

from __future__ import annotations

import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .errors import ConfigError, InvalidInputError
from .photon_model import Cutoff, MultiPulse, RadialWindow, TransversePulse, make_pulse
from .radial_spectral import (Coulomb, Potential, RadialGrid, default_grid, free_particle,
                              gaussian_well, tabulated_potential)

SCHEMA_VERSION = 1
UNITS = "dimensionless; energies in units of 4·Rydberg; H_el = −Δ + V; ω = |k|"
DEFAULT_ALPHA = 0.0072973525693
VERIFY_CHECKS = ("ground_state", "dipole_identity", "amplitudes", "p3", "decay", "completeness",
                 "growth", "escape")


@dataclass(frozen=True)
class PotentialSpec:
    kind: str
    Z: float = 1.0
    depth: float = 1.0
    width: float = 1.0
    path: str = ""
    mu: float = 1.0
    R: float = 10.0


@dataclass(frozen=True)
class PulseSpec:
    omega_min: float
    omega_max: float
    smoothness: str | int = "bump"
    vector: tuple = (0.0, 0.0, 1.0)
    tilt: tuple = (0.0, 0.0, 0.0)
    occupation: int = 1
    normalize: bool = True
    amplitude: float = 1.0


@dataclass(frozen=True)
class GridSpec:
    r_max: float | None = None
    step: float = 0.01
    nodes: int | None = None
    r_min: float | None = None
    scale: float | None = None
    q_rtol: float = 1e-8
    t_max: float | None = None
    truncation_tol: float = 1e-7


@dataclass(frozen=True)
class EigenSpec:
    l_max: int = 2
    count: int = 3
    q: tuple = (0.1, 0.25, 0.5, 1.0, 1.5, 2.0)


@dataclass(frozen=True)
class VerifySpec:
    checks: tuple = VERIFY_CHECKS
    q_points: tuple = ()
    completeness_r_max: float = 1600.0
    growth_r_max: float = 1200.0


@dataclass(frozen=True)
class EscapeSpec:
    R: tuple = (10.0, 20.0, 30.0)
    tau: tuple = (0.0, 50.0, 100.0, 200.0)


@dataclass(frozen=True)
class DecaySpec:
    quantity: str = "stat-phase1"
    n: int = 2
    x: tuple = (0.0, 0.0, 1.0)
    alpha: float = 0.01
    t_min: float = 10.0
    t_max: float = 1000.0
    points: int = 41
    omega_min: float = 0.5
    omega_max: float = 1.5
    smoothness: int | None = None  # None: use n
    vector: tuple = (1.0, 0.0, 0.0)
    tilt: tuple = (0.0, 0.0, 0.5)

    def build_pulse(self) -> TransversePulse:
        """Test pulse of smoothness class ``n`` (tilted so the alpha|x| term is linear)."""
        cls = self.n if self.smoothness is None else self.smoothness
        try:
            return make_pulse(RadialWindow(self.omega_min, self.omega_max, cls),
                              _complex_vector(self.vector), True, self.tilt)
        except InvalidInputError as exc:
            raise ConfigError(f"decay: {exc}") from exc


@dataclass(frozen=True)
class RunConfig:
    """Validated run configuration."""

    potential: PotentialSpec
    pulses: tuple = ()
    cutoff: float = 10.0
    alpha: float = DEFAULT_ALPHA
    grids: GridSpec = field(default_factory=GridSpec)
    eigen: EigenSpec = field(default_factory=EigenSpec)
    verify: VerifySpec = field(default_factory=VerifySpec)
    escape: EscapeSpec = field(default_factory=EscapeSpec)
    decay: DecaySpec = field(default_factory=DecaySpec)
    output_prefix: str = ""
    base_dir: str = "."
    schema_version: int = SCHEMA_VERSION

    def to_dict(self) -> dict:
        d = asdict(self)
        d.pop("base_dir")
        return d

    @property
    def hash(self) -> str:
        return config_hash(self)

    # ---------------------------------------------------------------- builders

    def build_potential(self) -> Potential:
        p = self.potential
        if p.kind == "coulomb":
            return Coulomb(p.Z)
        if p.kind == "free":
            return free_particle()
        if p.kind == "gaussian":
            return gaussian_well(p.depth, p.width)
        if p.kind == "table":
            path = Path(self.base_dir) / p.path
            try:
                data = np.loadtxt(path, delimiter="," if path.suffix == ".csv" else None, comments="#")
            except (OSError, ValueError) as exc:
                raise ConfigError(f"potential.path: cannot read table {path}: {exc}") from exc
            if data.ndim != 2 or data.shape[1] < 2 or data.shape[0] < 4:
                raise ConfigError("potential.path: table needs two columns r, V and >= 4 rows")
            return tabulated_potential(data[:, 0], data[:, 1], mu=p.mu, R=p.R)
        raise ConfigError(f"potential.kind: unknown kind {p.kind!r}")

    def build_grid(self, V: Potential, r_max: float | None = None) -> RadialGrid:
        """Radial grid from ``[grids]``; ``r_max`` overrides the configured radius."""
        g = self.grids
        base = default_grid(V, r_max=r_max if r_max is not None else g.r_max, step=g.step)
        r_min = base.r_min if g.r_min is None else g.r_min
        scale = base.scale if g.scale is None else g.scale
        if g.nodes is not None and r_max is None:
            return RadialGrid(base.r_max, g.nodes, r_min, scale)
        return RadialGrid.with_step(base.r_max, g.step, r_min, scale)

    def build_cutoff(self) -> Cutoff:
        return Cutoff(self.cutoff)

    def build_pulses(self) -> list[TransversePulse]:
        out = []
        for i, p in enumerate(self.pulses):
            smooth = None if p.smoothness == "bump" else int(p.smoothness)
            try:
                window = RadialWindow(p.omega_min, p.omega_max, smooth, p.amplitude)
                out.append(make_pulse(window, _complex_vector(p.vector), p.normalize, p.tilt))
            except InvalidInputError as exc:
                raise ConfigError(f"pulses[{i}]: {exc}") from exc
        return out

    def build_multipulse(self) -> MultiPulse:
        if not self.pulses:
            raise ConfigError("pulses: at least one pulse is required")
        return MultiPulse(tuple(self.build_pulses()), tuple(p.occupation for p in self.pulses))


def _complex_vector(v) -> np.ndarray:
    out = []
    for c in v:
        if isinstance(c, (list, tuple)):
            out.append(complex(c[0], c[1]))
        else:
            out.append(complex(c))
    arr = np.array(out, dtype=complex)
    n = np.linalg.norm(arr)
    return arr / n if n > 0 else arr


def config_hash(cfg: RunConfig) -> str:
    """SHA-256 of the canonical JSON form of the validated configuration."""
    text = json.dumps(cfg.to_dict(), sort_keys=True, separators=(",", ":"), default=_jsonable)
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def _jsonable(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, tuple):
        return list(obj)
    raise TypeError(f"not JSON serializable: {type(obj).__name__}")


# ------------------------------------------------------------------- validation

def _number(section: dict, key: str, where: str, default=None, positive=False, integer=False,
            allow_none=False):
    if key not in section:
        return default
    val = section[key]
    if val is None and allow_none:
        return None
    if isinstance(val, bool) or not isinstance(val, (int, float)):
        raise ConfigError(f"{where}.{key}: expected a number, got {val!r}")
    if integer and (not isinstance(val, int)):
        raise ConfigError(f"{where}.{key}: expected an integer, got {val!r}")
    if not math.isfinite(val):
        raise ConfigError(f"{where}.{key}: must be finite")
    if positive and not val > 0:
        raise ConfigError(f"{where}.{key}: must be positive, got {val!r}")
    return val


def _table(data: dict, key: str) -> dict:
    val = data.get(key, {})
    if not isinstance(val, dict):
        raise ConfigError(f"{key}: expected a table")
    return val


def _check_keys(section: dict, allowed, where: str):
    extra = sorted(set(section) - set(allowed))
    if extra:
        raise ConfigError(f"{where}: unknown field(s) {', '.join(extra)}")


def _float_list(section, key, where, default, positive=False):
    if key not in section:
        return default
    val = section[key]
    if not isinstance(val, list) or not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                            for x in val):
        raise ConfigError(f"{where}.{key}: expected a list of numbers")
    if positive and any(not x > 0 for x in val):
        raise ConfigError(f"{where}.{key}: entries must be positive")
    return tuple(float(x) for x in val)


def _vector(section, key, where, default, allow_complex=False):
    if key not in section:
        return default
    val = section[key]
    ok = isinstance(val, list) and len(val) == 3
    if ok:
        for c in val:
            if isinstance(c, list):
                ok = ok and allow_complex and len(c) == 2 and all(isinstance(y, (int, float)) for y in c)
            else:
                ok = ok and isinstance(c, (int, float)) and not isinstance(c, bool)
    if not ok:
        raise ConfigError(f"{where}.{key}: expected a 3-vector"
                          + (" (complex entries as [re, im])" if allow_complex else ""))
    return tuple(tuple(c) if isinstance(c, list) else float(c) for c in val)


def parse_config(data: dict, base_dir: str = ".") -> RunConfig:
    """Validate a decoded configuration mapping."""
    if not isinstance(data, dict):
        raise ConfigError("configuration must be a table")
    _check_keys(data, ("schema_version", "potential", "pulses", "cutoff", "alpha", "grids", "eigen",
                       "verify", "escape", "decay", "output"), "config")
    version = data.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"schema_version: unsupported version {version!r} (expected {SCHEMA_VERSION})")

    if "potential" not in data:
        raise ConfigError("potential: section is required")
    p = _table(data, "potential")
    _check_keys(p, ("kind", "Z", "depth", "width", "path", "mu", "R"), "potential")
    kind = p.get("kind")
    if kind not in ("coulomb", "free", "gaussian", "table"):
        raise ConfigError(f"potential.kind: expected coulomb|free|gaussian|table, got {kind!r}")
    Z = _number(p, "Z", "potential", 1.0)
    if kind == "coulomb" and Z == 0:
        raise ConfigError("potential.Z: must be non-zero (use kind = \"free\")")
    if kind == "table" and not isinstance(p.get("path"), str):
        raise ConfigError("potential.path: required string for kind = \"table\"")
    pot = PotentialSpec(kind, float(Z), float(_number(p, "depth", "potential", 1.0)),
                        float(_number(p, "width", "potential", 1.0, positive=True)),
                        p.get("path", ""), float(_number(p, "mu", "potential", 1.0, positive=True)),
                        float(_number(p, "R", "potential", 10.0)))

    raw_pulses = data.get("pulses", [])
    if not isinstance(raw_pulses, list):
        raise ConfigError("pulses: expected an array of tables ([[pulses]])")
    pulses = []
    for i, q in enumerate(raw_pulses):
        where = f"pulses[{i}]"
        if not isinstance(q, dict):
            raise ConfigError(f"{where}: expected a table")
        _check_keys(q, ("omega_min", "omega_max", "smoothness", "vector", "tilt", "occupation",
                        "normalize", "amplitude"), where)
        for key in ("omega_min", "omega_max"):
            if key not in q:
                raise ConfigError(f"{where}.{key}: required")
        lo = _number(q, "omega_min", where, positive=True)
        hi = _number(q, "omega_max", where, positive=True)
        if not lo < hi:
            raise ConfigError(f"{where}: omega_min must be below omega_max")
        smooth = q.get("smoothness", "bump")
        if not (smooth == "bump" or (isinstance(smooth, int) and not isinstance(smooth, bool)
                                     and smooth >= 2)):
            raise ConfigError(f"{where}.smoothness: expected \"bump\" or an integer >= 2")
        occ = _number(q, "occupation", where, 1, positive=True, integer=True)
        norm = q.get("normalize", True)
        if not isinstance(norm, bool):
            raise ConfigError(f"{where}.normalize: expected true/false")
        pulses.append(PulseSpec(float(lo), float(hi), smooth,
                                _vector(q, "vector", where, (0.0, 0.0, 1.0), allow_complex=True),
                                _vector(q, "tilt", where, (0.0, 0.0, 0.0)), int(occ), norm,
                                float(_number(q, "amplitude", where, 1.0))))

    cutoff = _table(data, "cutoff")
    _check_keys(cutoff, ("scale",), "cutoff")
    scale = float(_number(cutoff, "scale", "cutoff", 10.0, positive=True))
    alpha = _number(data, "alpha", "config", DEFAULT_ALPHA)
    if alpha < 0:
        raise ConfigError("config.alpha: must be non-negative")

    g = _table(data, "grids")
    _check_keys(g, ("r_max", "step", "nodes", "r_min", "scale", "q_rtol", "t_max", "truncation_tol"),
                "grids")
    grids = GridSpec(_number(g, "r_max", "grids", None, positive=True),
                     float(_number(g, "step", "grids", 0.01, positive=True)),
                     _number(g, "nodes", "grids", None, positive=True, integer=True),
                     _number(g, "r_min", "grids", None, positive=True),
                     _number(g, "scale", "grids", None, positive=True),
                     float(_number(g, "q_rtol", "grids", 1e-8, positive=True)),
                     _number(g, "t_max", "grids", None, positive=True),
                     float(_number(g, "truncation_tol", "grids", 1e-7, positive=True)))

    e = _table(data, "eigen")
    _check_keys(e, ("l_max", "count", "q"), "eigen")
    l_max = _number(e, "l_max", "eigen", 2, integer=True)
    if l_max < 0:
        raise ConfigError("eigen.l_max: must be >= 0")
    eigen = EigenSpec(int(l_max), int(_number(e, "count", "eigen", 3, positive=True, integer=True)),
                      _float_list(e, "q", "eigen", EigenSpec.q, positive=True))

    v = _table(data, "verify")
    _check_keys(v, ("checks", "q_points", "completeness_r_max", "growth_r_max"), "verify")
    checks = v.get("checks", list(VERIFY_CHECKS))
    if not isinstance(checks, list) or any(c not in VERIFY_CHECKS for c in checks):
        raise ConfigError(f"verify.checks: entries must be among {', '.join(VERIFY_CHECKS)}")
    verify = VerifySpec(tuple(checks), _float_list(v, "q_points", "verify", (), positive=True),
                        float(_number(v, "completeness_r_max", "verify", 1600.0, positive=True)),
                        float(_number(v, "growth_r_max", "verify", 1200.0, positive=True)))

    s = _table(data, "escape")
    _check_keys(s, ("R", "tau"), "escape")
    escape = EscapeSpec(_float_list(s, "R", "escape", EscapeSpec.R, positive=True),
                        _float_list(s, "tau", "escape", EscapeSpec.tau))
    if any(t < 0 for t in escape.tau):
        raise ConfigError("escape.tau: entries must be non-negative")

    d = _table(data, "decay")
    _check_keys(d, ("quantity", "n", "x", "alpha", "t_min", "t_max", "points", "omega_min",
                    "omega_max", "smoothness", "vector", "tilt"), "decay")
    quantity = d.get("quantity", "stat-phase1")
    if quantity not in ("stat-phase1", "stat-phase2", "stat-phase3"):
        raise ConfigError("decay.quantity: expected stat-phase1|stat-phase2|stat-phase3")
    decay = DecaySpec(quantity, int(_number(d, "n", "decay", 2, positive=True, integer=True)),
                      _vector(d, "x", "decay", (0.0, 0.0, 1.0)),
                      float(_number(d, "alpha", "decay", 0.01)),
                      float(_number(d, "t_min", "decay", 10.0, positive=True)),
                      float(_number(d, "t_max", "decay", 1000.0, positive=True)),
                      int(_number(d, "points", "decay", 41, positive=True, integer=True)),
                      float(_number(d, "omega_min", "decay", 0.5, positive=True)),
                      float(_number(d, "omega_max", "decay", 1.5, positive=True)),
                      _number(d, "smoothness", "decay", None, positive=True, integer=True),
                      _vector(d, "vector", "decay", (1.0, 0.0, 0.0)),
                      _vector(d, "tilt", "decay", (0.0, 0.0, 0.5)))
    if not decay.t_max >= 100.0 * decay.t_min:
        raise ConfigError("decay: t_max must be at least 100 * t_min (two decades)")

    o = _table(data, "output")
    _check_keys(o, ("prefix",), "output")
    prefix = o.get("prefix", "")
    if not isinstance(prefix, str):
        raise ConfigError("output.prefix: expected a string")

    return RunConfig(pot, tuple(pulses), scale, float(alpha), grids, eigen, verify, escape, decay,
                     prefix, base_dir)


def load_config(path: str | Path) -> RunConfig:
    """Read and validate a TOML or JSON configuration file.

    Raises
    ------
    ConfigError
        With the line/column (parse errors) or dotted field name (validation).
    """
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    if path.suffix.lower() == ".json":
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: JSON error at line {exc.lineno}, column {exc.colno}: {exc.msg}") from exc
    else:
        try:
            data = tomllib.loads(text)
        except tomllib.TOMLDecodeError as exc:
            raise ConfigError(f"{path}: TOML error: {exc}") from exc
    return parse_config(data, str(path.parent))
