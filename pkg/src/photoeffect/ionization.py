"""Leading-order ionization probability.

The probability that a photon state built from the pulse ``f`` ionizes the
ground state is ``alpha^3 P3(f) + O(alpha^4)`` with

    P3(f) = int d^3q |<phi_q, x phi_el> . T(q^2 - E0)|^2
          = (4 pi / 3) int q^2 |c(q)|^2 |T(q^2 - E0)|^2 dq,

where ``<phi_q, x phi_el> = c(q) q_hat`` and ``T`` is the energy-shell
amplitude of the pulse.
"""

from __future__ import annotations

import math
import warnings
from concurrent.futures import Executor
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NumericalError, OrthonormalityError
from .photon_model import (Cutoff, MultiPulse, PhotonField, shell_profile, shell_sphere_check)
from .quadrature import adaptive_gauss_legendre, sphere_rule
from .radial_spectral import (Potential, RadialGrid, default_grid, dipole_element,
                              ground_state)

CAVEAT = ("leading order in alpha: alpha^3 P3 is valid up to an O(alpha^4) remainder "
          "(relative error O(alpha)); no constant for the remainder is available")
GRAM_TOLERANCE = 1e-8


class PerturbativeRegimeWarning(UserWarning):
    """The leading-order probability exceeds one."""


def shell_amplitude(F: PhotonField, kappa: Cutoff, omega) -> np.ndarray:
    """``T(omega) = i pi kappa(omega) sqrt(2 omega) omega^2 * (sphere average of F)``.

    Exactly zero outside the radial support of the pulse.  Accepts a scalar
    (result shape (3,)) or an array of energies (shape (n, 3)).
    """
    om = np.atleast_1d(np.asarray(omega, dtype=float))
    if np.any(om <= 0.0):
        raise InvalidInputError("photon energy must be positive")
    out = np.zeros((om.size, 3), dtype=complex)
    lo, hi = F.support
    inside = (om > lo) & (om < hi)
    if np.any(inside):
        w = om[inside]
        S = shell_profile(F, w)
        out[inside] = (1j * np.pi * kappa(w) * np.sqrt(2.0 * w) * w**2)[:, None] * S
    return out if np.ndim(omega) else out[0]


def contributing_interval(E0: float, support: tuple[float, float]) -> tuple[float, float] | None:
    """Momenta ``q > 0`` with ``q^2 - E0`` inside the pulse support, or ``None``."""
    lo, hi = support
    if hi + E0 <= 0.0:
        return None
    return math.sqrt(max(0.0, lo + E0)), math.sqrt(hi + E0)


@dataclass(frozen=True)
class Spectrum:
    """Differential probability ``dP3/dq`` sampled at quadrature nodes."""

    q: np.ndarray
    dPdq: np.ndarray
    interval: tuple[float, float] | None

    def at(self, q) -> np.ndarray:
        """Linear interpolation, exactly zero outside the contributing interval."""
        q = np.asarray(q, dtype=float)
        if self.interval is None or self.q.size == 0:
            return np.zeros_like(q)
        lo, hi = self.interval
        vals = np.interp(q, self.q, self.dPdq)
        return np.where((q > lo) & (q < hi), vals, 0.0)


@dataclass(frozen=True)
class SingleResult:
    value: float
    spectrum: Spectrum
    below_threshold: bool
    diagnostics: dict


@dataclass(frozen=True)
class IonizationResult:
    """Per-pulse and total leading-order coefficients of a multi-pulse state."""

    per_pulse: tuple[float, ...]
    occupations: tuple[int, ...]
    total: float
    spectra: tuple[Spectrum, ...]
    ground_energy: float
    diagnostics: dict
    caveat: str = CAVEAT
    alpha: float | None = None
    total_probability: float | None = None

    def with_alpha(self, alpha: float) -> "IonizationResult":
        est = total_probability(self, alpha)
        return IonizationResult(self.per_pulse, self.occupations, self.total, self.spectra,
                                self.ground_energy, self.diagnostics, self.caveat,
                                float(alpha), est.value)


@dataclass(frozen=True)
class ProbabilityEstimate:
    """``alpha^3 P3`` together with its validity caveat."""

    value: float
    alpha: float
    p3: float
    caveat: str = CAVEAT

    def __float__(self) -> float:
        return self.value


def _grid_for(V: Potential, grid: RadialGrid | None) -> RadialGrid:
    return default_grid(V) if grid is None else grid


def p3_integrand(V: Potential, F: PhotonField, kappa: Cutoff, q, grid: RadialGrid) -> np.ndarray:
    """``dP3/dq = (4 pi/3) q^2 |c(q)|^2 |T(q^2 - E0)|^2``."""
    E0 = ground_state(V, grid).energy
    q = np.atleast_1d(np.asarray(q, dtype=float))
    c = dipole_element(V, grid, q)
    T = shell_amplitude(F, kappa, q**2 - E0)
    return (4.0 * np.pi / 3.0) * q**2 * np.abs(c) ** 2 * np.sum(np.abs(T) ** 2, axis=-1)


def angular_crosscheck(V: Potential, F: PhotonField, kappa: Cutoff, q: np.ndarray,
                       weights: np.ndarray, grid: RadialGrid, degree: int = 17) -> float:
    """Full spherical quadrature ``int q^2 dq int dOmega |c(q) q_hat . T|^2``."""
    E0 = ground_state(V, grid).energy
    pts, wts = sphere_rule(degree)
    c = dipole_element(V, grid, q)
    T = shell_amplitude(F, kappa, q**2 - E0)
    proj = np.abs(c[:, None] * (T @ pts.T)) ** 2
    return float(np.sum(weights * q**2 * (proj @ wts)))


def p3_single(V: Potential, F: PhotonField, kappa: Cutoff, grid: RadialGrid | None = None,
              *, rtol: float = 1e-8) -> SingleResult:
    """Leading-order ionization coefficient of one pulse, with its spectrum.

    Returns exactly zero (with ``below_threshold`` set) when no final momentum
    satisfies energy conservation.
    """
    grid = _grid_for(V, grid)
    E0 = ground_state(V, grid).energy
    interval = contributing_interval(E0, F.support)
    if interval is None:
        empty = np.empty(0)
        return SingleResult(0.0, Spectrum(empty, empty, None), True,
                            {"ground_energy": E0, "quadrature_error": 0.0})
    lo, hi = interval
    res = adaptive_gauss_legendre(lambda q: p3_integrand(V, F, kappa, q, grid), lo, hi,
                                  rtol=rtol, order=16, initial_panels=8)
    if not np.isfinite(res.value) or res.value < 0.0:
        raise NumericalError(f"invalid P3 value {res.value}")
    order = np.argsort(res.nodes)
    spectrum = Spectrum(res.nodes[order], res.values[order], interval)
    full = angular_crosscheck(V, F, kappa, res.nodes, res.weights, grid)
    mid = 0.5 * (lo + hi)
    diag = {
        "ground_energy": E0,
        "quadrature_error": res.error,
        "panels": res.panels,
        "angular_crosscheck": abs(full - res.value) / max(res.value, 1e-300),
        "sphere_refinement": shell_sphere_check(F, min(max(mid**2 - E0, F.support[0] * 1.001),
                                                       F.support[1] * 0.999)),
    }
    return SingleResult(float(res.value), spectrum, False, diag)


def p3_multi(V: Potential, M: MultiPulse, kappa: Cutoff, grid: RadialGrid | None = None, *,
             rtol: float = 1e-8, executor: Executor | None = None) -> IonizationResult:
    """``P3`` of a multi-pulse state as ``sum_l m_l P3(f_l)``.

    Raises
    ------
    OrthonormalityError
        If the pulses are not orthonormal (largest Gram deviation above 1e-8).
    """
    residual = M.gram_residual()
    if residual > GRAM_TOLERANCE:
        raise OrthonormalityError(
            f"pulses are not orthonormal: max |<f_i,f_j> - delta_ij| = {residual:.3e}", residual)
    grid = _grid_for(V, grid)
    ground_state(V, grid)  # fail early, before dispatching

    def one(pulse):
        return p3_single(V, pulse, kappa, grid, rtol=rtol)

    singles = list(executor.map(one, M.pulses)) if executor else [one(p) for p in M.pulses]
    per = tuple(s.value for s in singles)
    total = math.fsum(m * p for m, p in zip(M.occupations, per))
    diag = {"gram_residual": residual,
            "quadrature_error": [s.diagnostics["quadrature_error"] for s in singles],
            "angular_crosscheck": [s.diagnostics.get("angular_crosscheck", 0.0) for s in singles],
            "below_threshold": [s.below_threshold for s in singles]}
    return IonizationResult(per, tuple(int(m) for m in M.occupations), total,
                            tuple(s.spectrum for s in singles),
                            singles[0].diagnostics["ground_energy"], diag)


def total_probability(result: IonizationResult | float, alpha: float) -> ProbabilityEstimate:
    """``alpha^3 P3`` with the O(alpha^4) caveat; warns if it exceeds one."""
    if not alpha >= 0.0:
        raise InvalidInputError("alpha must be non-negative")
    p3 = result.total if isinstance(result, IonizationResult) else float(result)
    value = alpha**3 * p3
    if value > 1.0:
        warnings.warn(f"alpha^3 P3 = {value:.3g} > 1: the leading-order expression is outside "
                      "the perturbative regime", PerturbativeRegimeWarning, stacklevel=2)
    return ProbabilityEstimate(value, float(alpha), p3)
