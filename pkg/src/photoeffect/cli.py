"""Command-line front end: ``photoeffect {eigen,rate,verify,escape,decay}``.

Exit codes: 0 ok, 1 configuration or invalid input, 2 no bound state,
3 non-orthonormal pulses, 4 verification failure, 5 numerical/resolution.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import warnings
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Callable

import numpy as np

from .config import UNITS, RunConfig, load_config
from .errors import ConfigError, PhotoeffectError
from .ionization import PerturbativeRegimeWarning, contributing_interval, p3_multi, p3_single
from .oracle import (amplitude_report, decay_fit, electron_state, escape_probability,
                     escape_scan, growth_check, growth_grid, p3_oracle, time_transform)
from .photon_model import RadialWindow, TransversePulse, make_pulse
from .radial_spectral import (Coulomb, completeness_report, continuum_wave, dipole_element,
                              excited_bound_states, gradient_element, ground_state,
                              position_times)

FORMATS = ("json", "csv", "text")
EXIT_VERIFY = 4


# ---------------------------------------------------------------------- writers

def _plain(obj):
    """Recursively convert numpy scalars/arrays and complex numbers to JSON types."""
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, complex):
        return {"re": _plain(obj.real), "im": _plain(obj.imag)}
    return obj


class Output:
    """Writes result files that all carry the config hash and unit banner."""

    def __init__(self, cfg: RunConfig, out_dir: Path, fmt: str):
        self.cfg = cfg
        self.dir = out_dir
        self.fmt = fmt
        self.written: list[Path] = []
        out_dir.mkdir(parents=True, exist_ok=True)

    def _path(self, name: str) -> Path:
        return self.dir / f"{self.cfg.output_prefix}{name}"

    def _save(self, name: str, text: str) -> Path:
        path = self._path(name)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
        self.written.append(path)
        return path

    def json(self, name: str, payload: dict) -> Path:
        doc = {"config_hash": self.cfg.hash, "units": UNITS, "schema_version": self.cfg.schema_version}
        doc.update(payload)
        return self._save(name, json.dumps(_plain(doc), sort_keys=True, indent=2, ensure_ascii=False) + "\n")

    def csv(self, name: str, header: list[str], rows, extra_comments=()) -> Path:
        lines = [f"# config_hash: {self.cfg.hash}", f"# units: {UNITS}"]
        lines += [f"# {c}" for c in extra_comments]
        lines.append(",".join(header))
        for row in rows:
            lines.append(",".join(_cell(v) for v in row))
        return self._save(name, "\n".join(lines) + "\n")

    def text(self, name: str, title: str, rows: list[tuple[str, object]]) -> Path:
        width = max((len(k) for k, _ in rows), default=0)
        lines = [title, f"config_hash: {self.cfg.hash}", f"units: {UNITS}", ""]
        lines += [f"{k.ljust(width)}  {_cell(v)}" for k, v in rows]
        return self._save(name, "\n".join(lines) + "\n")


def _cell(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (float, np.floating)):
        return format(float(v), ".17g")
    return str(v)


def _executor(threads: int):
    return ThreadPoolExecutor(max_workers=threads) if threads > 1 else None


def _map(executor, fn, items):
    # executor.map preserves input order, so reductions stay deterministic
    return list(executor.map(fn, items)) if executor else [fn(x) for x in items]


# ----------------------------------------------------------------------- eigen

def cmd_eigen(cfg: RunConfig, out: Output, threads: int = 1, tolerance: float | None = None) -> int:
    """Ground state, bound levels per channel and a phase-shift table."""
    V = cfg.build_potential()
    grid = cfg.build_grid(V)
    g = ground_state(V, grid)
    levels = []
    for l in range(cfg.eigen.l_max + 1):
        for s in excited_bound_states(V, grid, l, cfg.eigen.count):
            levels.append({"l": l, "radial_nodes": s.nodes, "energy": s.energy, "residual": s.residual})
    pairs = [(l, q) for l in range(cfg.eigen.l_max + 1) for q in cfg.eigen.q]
    ex = _executor(threads)
    waves = _map(ex, lambda lq: continuum_wave(V, grid, lq[1], lq[0]), pairs)
    phases = [{"l": w.l, "q": w.q, "delta": w.delta, "sigma": w.sigma, "phase": w.phase,
               "residual": w.residual} for w in waves]
    payload = {"command": "eigen", "potential": V.describe(), "ground_energy": g.energy,
               "ground_residual": g.residual, "bound_states": levels, "phase_shifts": phases,
               "grid": {"r_max": grid.r_max, "nodes": int(grid.n_nodes), "r_min": grid.r_min,
                        "scale": grid.scale}}
    if isinstance(V, Coulomb):
        payload["exact_ground_energy"] = -V.Z**2 / 4.0
    if out.fmt == "json":
        out.json("eigen.json", payload)
    elif out.fmt == "csv":
        out.csv("eigen_levels.csv", ["l", "radial_nodes", "energy"],
                [(d["l"], d["radial_nodes"], d["energy"]) for d in levels],
                [f"E0 = {format(g.energy, '.17g')}"])
        out.csv("phase_shifts.csv", ["q", "l", "delta", "sigma"],
                [(d["q"], d["l"], d["delta"], d["sigma"]) for d in phases])
    else:
        rows = [("E0", g.energy)] + [(f"E(l={d['l']}, nodes={d['radial_nodes']})", d["energy"])
                                      for d in levels]
        rows += [(f"delta_{d['l']}(q={d['q']:g})", d["delta"]) for d in phases]
        out.text("eigen.txt", "bound states and phase shifts", rows)
    return 0


# ------------------------------------------------------------------------ rate

def cmd_rate(cfg: RunConfig, out: Output, threads: int = 1, tolerance: float | None = None) -> int:
    """Leading-order ionization probability for the configured pulses."""
    V = cfg.build_potential()
    grid = cfg.build_grid(V)
    multi = cfg.build_multipulse()
    rtol = cfg.grids.q_rtol if tolerance is None else tolerance
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", PerturbativeRegimeWarning)
        ex = _executor(threads)
        result = p3_multi(V, multi, cfg.build_cutoff(), grid, rtol=rtol, executor=ex).with_alpha(cfg.alpha)
    notes = [str(w.message) for w in caught if issubclass(w.category, PerturbativeRegimeWarning)]
    below = result.diagnostics["below_threshold"]
    payload = {"command": "rate", "potential": V.describe(), "ground_energy": result.ground_energy,
               "per_pulse": list(result.per_pulse), "occupations": list(result.occupations),
               "total": result.total, "alpha": result.alpha,
               "total_probability": result.total_probability, "caveat": result.caveat,
               "below_threshold": below, "all_below_threshold": all(below),
               "diagnostics": result.diagnostics, "warnings": notes}
    for i, spec in enumerate(result.spectra):
        out.csv(f"spectrum_{i}.csv", ["q", "dPdq"], zip(spec.q, spec.dPdq),
                [f"pulse {i}; contributing interval {spec.interval}"])
    if out.fmt == "json":
        out.json("rate.json", payload)
    elif out.fmt == "csv":
        out.csv("rate.csv", ["pulse", "occupation", "P3"],
                [(i, m, p) for i, (m, p) in enumerate(zip(result.occupations, result.per_pulse))],
                [f"total P3 = {format(result.total, '.17g')}",
                 f"alpha = {result.alpha}; alpha^3 P3 = {format(result.total_probability, '.17g')}",
                 f"caveat: {result.caveat}"])
    else:
        rows = [(f"P3(pulse {i}) x {m}", p) for i, (m, p) in
                enumerate(zip(result.occupations, result.per_pulse))]
        rows += [("total P3", result.total), ("alpha", result.alpha),
                 ("alpha^3 P3", result.total_probability), ("caveat", result.caveat)]
        out.text("rate.txt", "leading-order ionization probability", rows)
    return 0


# ---------------------------------------------------------------------- verify

def _default_pulse() -> TransversePulse:
    return make_pulse(RadialWindow(0.45, 0.55), [0.0, 0.0, 1.0])


def _first_pulse(cfg: RunConfig) -> TransversePulse:
    pulses = cfg.build_pulses()
    return pulses[0] if pulses else _default_pulse()


def _check_ground(cfg, V, grid, tol):
    g = ground_state(V, grid)
    if isinstance(V, Coulomb):
        err = abs(g.energy + V.Z**2 / 4.0)
        return err, err <= (1e-6 if tol is None else tol), {"energy": g.energy}
    return g.residual, g.residual <= (1e-6 if tol is None else tol), {"energy": g.energy}


def _check_dipole(cfg, V, grid, tol):
    qs = np.array([0.6, 1.0, 1.5])
    E0 = ground_state(V, grid).energy
    lhs = (qs**2 - E0) * dipole_element(V, grid, qs)
    rhs = gradient_element(V, grid, qs)[:, 2]
    rel = np.abs(lhs - rhs) / np.abs(rhs)
    return float(rel.max()), float(rel.max()) <= (1e-5 if tol is None else tol), {"q": qs, "relative": rel}


def _sample_q(cfg, V, grid, F, count=5):
    if cfg.verify.q_points:
        return np.array(cfg.verify.q_points)
    E0 = ground_state(V, grid).energy
    interval = contributing_interval(E0, F.support)
    if interval is None:
        raise ConfigError("verify: the pulse is below threshold; set verify.q_points")
    lo, hi = interval
    return lo + (hi - lo) * (np.arange(count) + 1.0) / (count + 1.0)


def _check_amplitudes(cfg, V, grid, tol):
    F = _first_pulse(cfg)
    kap = cfg.build_cutoff()
    tr = time_transform(F, kap, cfg.grids.t_max, band=F.support, tol=cfg.grids.truncation_tol)
    reps = [amplitude_report(V, F, kap, q, qhat=(0.3, -0.2, 1.0), grid=grid, transform=tr)
            for q in _sample_q(cfg, V, grid, F)]
    worst = max(r.max_difference for r in reps)
    return worst, worst <= (1e-5 if tol is None else tol), {
        "q": [r.q for r in reps], "differences": [r.differences for r in reps],
        "T_max": tr.T_max, "truncation_error": tr.truncation_error}


def _check_p3(cfg, V, grid, tol):
    kap = cfg.build_cutoff()
    pulses = cfg.build_pulses() or [_default_pulse()]
    rel = []
    for F in pulses:
        a = p3_single(V, F, kap, grid, rtol=cfg.grids.q_rtol).value
        b = p3_oracle(V, F, kap, grid, cfg.grids.t_max)
        rel.append(abs(a - b) / a if a > 0 else abs(b))
    return max(rel), max(rel) <= (1e-4 if tol is None else tol), {"relative": rel}


def _check_decay(cfg, V, grid, tol):
    d = cfg.decay
    F = d.build_pulse()
    fit = decay_fit(F, cfg.build_cutoff(), d.quantity, np.array(d.x), d.alpha, d.n,
                    np.geomspace(d.t_min, d.t_max, d.points))
    return fit.slope, fit.passed, {"claimed": -d.n, "r_squared": fit.r_squared,
                                   "inconclusive": fit.inconclusive, "linearity": fit.linearity}


def _check_completeness(cfg, V, grid, tol):
    big = cfg.build_grid(V, r_max=cfg.verify.completeness_r_max)
    rep = completeness_report(position_times(ground_state(V, big)), V)
    return rep.defect, rep.defect <= (1e-4 if tol is None else tol), {
        "bound": rep.bound, "rydberg_tail": rep.rydberg_tail, "continuum": rep.continuum,
        "norm2": rep.norm2}


def _check_growth(cfg, V, grid, tol):
    rep = growth_check(V, growth_grid(V, cfg.verify.growth_r_max))
    return rep.exponent, rep.passed, {"bound": rep.bound, "method": rep.method,
                                      "t": rep.t, "values": rep.values}


def _check_escape(cfg, V, grid, tol):
    F = _first_pulse(cfg)
    kap = cfg.build_cutoff()
    p3 = p3_single(V, F, kap, grid).value
    state = electron_state(V, F, kap, grid, T_max=cfg.grids.t_max)
    esc = state.escape(20.0, 200.0)
    rel = abs(esc - p3) / p3
    bound = max(escape_probability(V, None, None, 20.0, t, grid, bound_only=True) for t in (0.0, 200.0))
    ok = rel <= (0.02 if tol is None else tol) and bound < 1e-3
    return rel, ok, {"escape": esc, "p3": p3, "bound_only": bound}


CHECKS: dict[str, Callable] = {
    "ground_state": _check_ground, "dipole_identity": _check_dipole,
    "amplitudes": _check_amplitudes, "p3": _check_p3, "decay": _check_decay,
    "completeness": _check_completeness, "growth": _check_growth, "escape": _check_escape,
}
CHECK_TOLERANCE = {"ground_state": 1e-6, "dipole_identity": 1e-5, "amplitudes": 1e-5, "p3": 1e-4,
                   "decay": 0.2, "completeness": 1e-4, "growth": 2.1, "escape": 0.02}


def cmd_verify(cfg: RunConfig, out: Output, threads: int = 1, tolerance: float | None = None) -> int:
    """Run the configured checks; exit 4 if any fails (the report is always written)."""
    records = []
    V = grid = None
    if cfg.verify.checks:
        V = cfg.build_potential()
        grid = cfg.build_grid(V)

    def run(name):
        rec = {"name": name, "tolerance": CHECK_TOLERANCE[name] if tolerance is None or name in
               ("decay", "growth") else tolerance}
        try:
            measured, ok, details = CHECKS[name](cfg, V, grid, None if name in ("decay", "growth")
                                                 else tolerance)
            rec.update(measured=measured, passed=bool(ok), details=details)
        except PhotoeffectError as exc:
            rec.update(measured=None, passed=False, error=f"{type(exc).__name__}: {exc}")
        return rec

    records = _map(_executor(threads), run, list(cfg.verify.checks))
    failed = [r["name"] for r in records if not r["passed"]]
    out.json("verify.json", {"command": "verify", "checks": records, "failed": failed,
                             "passed": not failed})
    return EXIT_VERIFY if failed else 0


# ---------------------------------------------------------------------- escape

def cmd_escape(cfg: RunConfig, out: Output, threads: int = 1, tolerance: float | None = None) -> int:
    """Escape probabilities on the configured ``(R, tau)`` grid for the first pulse."""
    V = cfg.build_potential()
    grid = cfg.build_grid(V)
    F = _first_pulse(cfg)
    kap = cfg.build_cutoff()
    state = electron_state(V, F, kap, grid, T_max=cfg.grids.t_max,
                           tau_max=max(cfg.escape.tau + (1.0,)), R_max=max(cfg.escape.R))
    scan = escape_scan(state, cfg.escape.R, cfg.escape.tau)
    p3 = p3_single(V, F, kap, grid).value
    rows = [(r, t, scan.values[i, j]) for i, r in enumerate(scan.R) for j, t in enumerate(scan.tau)]
    if out.fmt == "csv":
        out.csv("escape.csv", ["R", "tau", "escape"], rows,
                [f"P3 = {format(p3, '.17g')}", f"spectral norm = {format(scan.norm2, '.17g')}"])
    elif out.fmt == "text":
        out.text("escape.txt", "escape probability", [(f"R={r:g} tau={t:g}", v) for r, t, v in rows]
                 + [("P3", p3), ("monotone in R", scan.monotone_in_R)])
    else:
        out.json("escape.json", {"command": "escape", "R": scan.R, "tau": scan.tau,
                                 "escape": scan.values, "p3": p3, "norm2": scan.norm2,
                                 "monotone_in_R": scan.monotone_in_R})
    return 0


# ----------------------------------------------------------------------- decay

def cmd_decay(cfg: RunConfig, out: Output, threads: int = 1, tolerance: float | None = None) -> int:
    """Decay-exponent fit of a vacuum-correlation quantity for the first pulse."""
    d = cfg.decay
    F = d.build_pulse()
    fit = decay_fit(F, cfg.build_cutoff(), d.quantity, np.array(d.x), d.alpha, d.n,
                    np.geomspace(d.t_min, d.t_max, d.points),
                    slack=0.2 if tolerance is None else tolerance)
    payload = {"command": "decay", "quantity": fit.quantity, "slope": fit.slope,
               "prefactor": fit.prefactor, "r_squared": fit.r_squared, "claimed": -fit.claimed,
               "passed": fit.passed, "inconclusive": fit.inconclusive, "linearity": fit.linearity}
    if out.fmt == "csv":
        out.csv("decay.csv", ["t", "envelope"], zip(fit.t, fit.envelope),
                [f"slope = {format(fit.slope, '.17g')}", f"r_squared = {format(fit.r_squared, '.17g')}",
                 f"passed = {fit.passed}"])
    elif out.fmt == "text":
        out.text("decay.txt", f"decay fit ({fit.quantity})",
                 [("slope", fit.slope), ("r_squared", fit.r_squared), ("passed", fit.passed)])
    else:
        payload.update(t=fit.t, envelope=fit.envelope)
        out.json("decay.json", payload)
    return 0 if fit.passed else EXIT_VERIFY


COMMANDS = {"eigen": cmd_eigen, "rate": cmd_rate, "verify": cmd_verify, "escape": cmd_escape,
            "decay": cmd_decay}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="photoeffect",
                                     description="Leading-order photoionization probabilities and checks.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, fn in COMMANDS.items():
        p = sub.add_parser(name, help=fn.__doc__.splitlines()[0])
        p.add_argument("--config", required=True, help="TOML or JSON run configuration")
        p.add_argument("--out", default=".", help="output directory (default: current)")
        p.add_argument("--format", choices=FORMATS, default="json", help="output format")
        p.add_argument("--threads", type=int, default=1, help="worker threads (default 1)")
        p.add_argument("--tolerance", type=float, default=None,
                       help="override the q-quadrature rtol (rate), check tolerances (verify) "
                            "or slope slack (decay)")
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if args.threads < 1:
            raise ConfigError("--threads must be at least 1")
        if args.tolerance is not None and not args.tolerance > 0:
            raise ConfigError("--tolerance must be positive")
        cfg = load_config(args.config)
        out = Output(cfg, Path(args.out), args.format)
        code = COMMANDS[args.command](cfg, out, args.threads, args.tolerance)
    except PhotoeffectError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.exit_code
    for path in out.written:
        print(path)
    return code


if __name__ == "__main__":
    sys.exit(main())
