"""Photon wave packets, ultraviolet cutoff, the omega-norm, the photon form
factor and the vacuum field correlations C_A(t), C_E(t).

A pulse is specified by its polarization-summed transverse field
``F(k) = N g(|k|) (1 + k.w) (v - (k.v) k)`` with ``k`` the unit vector of
``k``; the optional real tilt ``w`` (``|w| < 1``) breaks parity while keeping
the field transverse.  Only ``F`` enters any formula, so polarization vectors
are never represented.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Protocol, Sequence

import numpy as np

from .errors import InvalidInputError, NumericalError, ResolutionError
from .quadrature import composite_gauss_legendre, next_sphere_degree, oscillatory_panels, sphere_rule

MIN_SPHERE_DEGREE = 17
_RADIAL_PANELS = 16
_RADIAL_ORDER = 20


@dataclass(frozen=True)
class RadialWindow:
    """Compactly supported radial profile ``g(omega)``.

    Parameters
    ----------
    omega_min, omega_max : float
        Support interval, ``0 < omega_min < omega_max``.
    smoothness : int or None
        ``None`` selects the C-infinity bump ``exp(4 - 1/s - 1/(1-s))``; an
        integer ``n >= 2`` selects the polynomial window ``(4 s (1-s))**(n+1)``,
        which is exactly C^n.  Here ``s`` is the window coordinate in [0, 1].
    amplitude : float
        Peak value (zero gives the trivial window).
    """

    omega_min: float
    omega_max: float
    smoothness: int | None = None
    amplitude: float = 1.0

    def __post_init__(self):
        if not (np.isfinite(self.omega_min) and np.isfinite(self.omega_max)):
            raise InvalidInputError("window endpoints must be finite")
        if not 0.0 < self.omega_min < self.omega_max:
            raise InvalidInputError(
                f"degenerate window [{self.omega_min}, {self.omega_max}]: "
                "need 0 < omega_min < omega_max")
        if self.smoothness is not None and int(self.smoothness) < 2:
            raise InvalidInputError("smoothness class must be at least 2")

    @property
    def support(self) -> tuple[float, float]:
        return (self.omega_min, self.omega_max)

    @property
    def width(self) -> float:
        return self.omega_max - self.omega_min

    def __call__(self, omega) -> np.ndarray:
        omega = np.asarray(omega, dtype=float)
        s = (omega - self.omega_min) / self.width
        inside = (s > 0.0) & (s < 1.0)
        out = np.zeros_like(omega)
        si = s[inside]
        if self.smoothness is None:
            out[inside] = np.exp(4.0 - 1.0 / si - 1.0 / (1.0 - si))
        else:
            out[inside] = (4.0 * si * (1.0 - si)) ** (int(self.smoothness) + 1)
        return self.amplitude * out


@dataclass(frozen=True)
class Cutoff:
    """Radial Gaussian ultraviolet cutoff ``kappa(k) = exp(-|k|^2 / scale^2)``."""

    scale: float = 10.0

    def __post_init__(self):
        if not self.scale > 0.0:
            raise InvalidInputError("cutoff scale must be positive")

    def __call__(self, k) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        return np.exp(-(k / self.scale) ** 2)

    def moment_bounds(self, k_grid: np.ndarray, max_power: int = 8) -> np.ndarray:
        """``max_k kappa(k) |k|^m`` over ``k_grid`` for ``m = 0..max_power``."""
        k = np.abs(np.asarray(k_grid, dtype=float))
        kap = self(k)
        return np.array([np.max(kap * k**m) for m in range(max_power + 1)])


class PhotonField(Protocol):
    """Anything with a compact radial support and a transverse field."""

    support: tuple[float, float]
    angular_degree: int

    def field(self, k: np.ndarray) -> np.ndarray: ...


@dataclass(frozen=True, eq=False)
class TransversePulse:
    """Single photon wave packet ``F(k) = N g(|k|)(1 + k.w)(v - (k.v)k)``."""

    window: RadialWindow
    vector: np.ndarray
    norm: float = 1.0
    tilt: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        v = np.asarray(self.vector, dtype=complex).reshape(3)
        w = np.asarray(self.tilt, dtype=float).reshape(3)
        if abs(np.linalg.norm(v) - 1.0) > 1e-12:
            raise InvalidInputError(f"reference vector must be a unit vector, |v| = {np.linalg.norm(v)}")
        if np.linalg.norm(w) >= 1.0:
            raise InvalidInputError("tilt must satisfy |w| < 1")
        if not (np.isfinite(self.norm) and self.norm >= 0.0):
            raise InvalidInputError("normalization constant must be finite and non-negative")
        object.__setattr__(self, "vector", v)
        object.__setattr__(self, "tilt", w)

    @property
    def support(self) -> tuple[float, float]:
        return self.window.support

    @property
    def angular_degree(self) -> int:
        return 2 if not np.any(self.tilt) else 3

    def angular(self, khat: np.ndarray) -> np.ndarray:
        """Direction-dependent factor ``(1 + k.w)(v - (k.v)k)`` for unit ``khat``."""
        kv = khat @ self.vector
        proj = self.vector - kv[..., None] * khat
        return (1.0 + khat @ self.tilt)[..., None] * proj

    def field(self, k: np.ndarray) -> np.ndarray:
        k = np.asarray(k, dtype=float)
        kn = np.linalg.norm(k, axis=-1)
        safe = np.where(kn > 0.0, kn, 1.0)
        khat = k / safe[..., None]
        radial = self.norm * self.window(kn)
        return radial[..., None] * self.angular(khat)

    def scaled(self, c: complex) -> "TransversePulse":
        """Pulse with field ``c*F`` (the phase of ``c`` is absorbed into ``v``)."""
        c = complex(c)
        if c == 0:
            return TransversePulse(self.window, self.vector, 0.0, self.tilt)
        return TransversePulse(self.window, self.vector * (c / abs(c)), self.norm * abs(c), self.tilt)

    def rotated(self, rotation: np.ndarray) -> "TransversePulse":
        """Pulse rotated rigidly: ``F'(k) = R F(R^T k)``."""
        rotation = np.asarray(rotation, dtype=float)
        return TransversePulse(self.window, rotation @ self.vector, self.norm, rotation @ self.tilt)


@dataclass(frozen=True, eq=False)
class PulseSum:
    """Linear combination ``sum_i c_i F_i`` of transverse fields."""

    terms: tuple[tuple[complex, TransversePulse], ...]

    @property
    def support(self) -> tuple[float, float]:
        return (min(p.support[0] for _, p in self.terms), max(p.support[1] for _, p in self.terms))

    @property
    def angular_degree(self) -> int:
        return max(p.angular_degree for _, p in self.terms)

    def field(self, k: np.ndarray) -> np.ndarray:
        return sum(c * p.field(k) for c, p in self.terms)


@dataclass(frozen=True, eq=False)
class MultiPulse:
    """Finitely many pulses with occupation numbers ``m_l >= 1``."""

    pulses: tuple[TransversePulse, ...]
    occupations: tuple[int, ...]

    def __post_init__(self):
        if len(self.pulses) != len(self.occupations) or not self.pulses:
            raise InvalidInputError("need one occupation number per pulse and at least one pulse")
        if any(int(m) < 1 for m in self.occupations):
            raise InvalidInputError("occupation numbers must be positive integers")

    def gram(self) -> np.ndarray:
        n = len(self.pulses)
        g = np.zeros((n, n), dtype=complex)
        for i in range(n):
            for j in range(i, n):
                g[i, j] = pulse_inner(self.pulses[i], self.pulses[j])
                g[j, i] = np.conj(g[i, j])
        return g

    def gram_residual(self) -> float:
        return float(np.max(np.abs(self.gram() - np.eye(len(self.pulses)))))


def make_pulse(g: RadialWindow, v: Sequence[complex], normalize: bool = True,
               tilt: Sequence[float] | None = None) -> TransversePulse:
    """Build a transverse pulse from a window and a unit reference vector.

    With ``normalize`` the constant ``N`` is chosen so that ``<f,f> = 1``.
    """
    pulse = TransversePulse(g, np.asarray(v, dtype=complex), 1.0,
                            np.zeros(3) if tilt is None else np.asarray(tilt, dtype=float))
    if not normalize:
        return pulse
    nrm2 = pulse_inner(pulse, pulse).real
    if not nrm2 > 0.0:
        raise InvalidInputError("cannot normalize a pulse with vanishing field")
    return TransversePulse(g, pulse.vector, 1.0 / np.sqrt(nrm2), pulse.tilt)


def _radial_rule(lo: float, hi: float, frequency: float = 0.0, max_nodes: int = 2_000_000):
    if frequency * (hi - lo) <= _RADIAL_PANELS * np.pi:
        return composite_gauss_legendre(np.linspace(lo, hi, _RADIAL_PANELS + 1), _RADIAL_ORDER)
    try:
        return oscillatory_panels(lo, hi, frequency, order=_RADIAL_ORDER,
                                  min_panels=_RADIAL_PANELS, max_nodes=max_nodes)
    except NumericalError as exc:
        raise ResolutionError(str(exc), "reduce |t| or split the time range into chunks") from exc


def _sphere_for(F: PhotonField, extra_phase: float = 0.0, degree: int | None = None):
    deg = max(MIN_SPHERE_DEGREE, 2 * F.angular_degree + 1,
              F.angular_degree + int(np.ceil(1.5 * extra_phase)) + 16)
    if degree is not None:
        deg = max(deg, degree)
    return sphere_rule(deg)


def shell_profile(F: PhotonField, omega: np.ndarray, x: np.ndarray | None = None,
                  alpha: float = 0.0, degree: int | None = None) -> np.ndarray:
    """Unit-sphere average ``S(omega) = int dOmega exp(i alpha omega k.x) F(omega k)``.

    Returns an array of shape ``(len(omega), 3)``; the surface integral over the
    sphere of radius ``omega`` is ``omega**2 * S(omega)``.
    """
    omega = np.atleast_1d(np.asarray(omega, dtype=float))
    reach = 0.0 if x is None else alpha * float(np.max(omega, initial=0.0)) * np.linalg.norm(x)
    pts, wts = _sphere_for(F, reach, degree)
    k = omega[:, None, None] * pts[None, :, :]
    vals = F.field(k)
    if x is not None and alpha != 0.0:
        phase = np.exp(1j * alpha * omega[:, None] * (pts @ np.asarray(x, dtype=float))[None, :])
        vals = vals * phase[..., None]
    return np.einsum("p,kpc->kc", wts, vals)


def pulse_inner(F1: PhotonField, F2: PhotonField) -> complex:
    """``<f1, f2> = int conj(F1(k)) . F2(k) d^3k``."""
    lo = max(F1.support[0], F2.support[0])
    hi = min(F1.support[1], F2.support[1])
    if lo >= hi:
        return 0.0 + 0.0j
    return _weighted_inner(F1, F2, lo, hi, lambda w: np.ones_like(w))


def _weighted_inner(F1, F2, lo, hi, weight) -> complex:
    omega, w = _radial_rule(lo, hi)
    deg = F1.angular_degree + F2.angular_degree
    pts, wts = sphere_rule(max(MIN_SPHERE_DEGREE, deg + 1))
    k = omega[:, None, None] * pts[None, :, :]
    dens = np.einsum("kpc,kpc->kp", np.conj(F1.field(k)), F2.field(k)) @ wts
    value = np.sum(w * omega**2 * weight(omega) * dens)
    if not np.isfinite(value):
        raise NumericalError("non-finite pulse inner product")
    return complex(value)


def omega_norm(F: PhotonField) -> float:
    """``||f||_omega = (int |F|^2 (1 + 1/|k|) d^3k)^(1/2)``."""
    lo, hi = F.support
    val = _weighted_inner(F, F, lo, hi, lambda w: 1.0 + 1.0 / w).real
    return float(np.sqrt(max(val, 0.0)))


@dataclass(frozen=True, eq=False)
class CorrelationProfile:
    """Radial quadrature of the shell-averaged profile of a pulse.

    Vacuum correlations are 1-D Fourier integrals over ``omega``:
    ``C_A(t) = sum_j a_j exp(-i omega_j t)`` and
    ``C_E(t) = sum_j (i omega_j) a_j exp(-i omega_j t)`` with
    ``a_j = w_j omega_j^2 kappa(omega_j) / sqrt(2 omega_j) S(omega_j)``.
    """

    omega: np.ndarray
    coeff: np.ndarray  # (K, 3)
    t_max: float

    def _fourier(self, t, extra: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        scalar = t.ndim == 0
        tt = np.atleast_1d(t).ravel()
        if np.max(np.abs(tt), initial=0.0) > self.t_max * (1 + 1e-12):
            raise ResolutionError(
                f"|t| = {np.max(np.abs(tt)):.4g} exceeds the resolved range {self.t_max:.4g}",
                "rebuild the profile with a larger t_max")
        c = self.coeff * extra[:, None]
        out = np.empty((tt.size, 3), dtype=complex)
        chunk = max(1, 4_000_000 // max(1, self.omega.size))
        for s in range(0, tt.size, chunk):
            ph = np.exp(-1j * np.outer(tt[s:s + chunk], self.omega))
            out[s:s + chunk] = ph @ c
        return out[0] if scalar else out.reshape(t.shape + (3,))

    def A(self, t) -> np.ndarray:
        return self._fourier(t, np.ones_like(self.omega))

    def E(self, t) -> np.ndarray:
        return self._fourier(t, 1j * self.omega)


def correlation_profile(F: PhotonField, kappa: Cutoff, t_max: float,
                        x: np.ndarray | None = None, alpha: float = 0.0,
                        max_nodes: int = 200_000) -> CorrelationProfile:
    """Quadrature for ``<G_x, f_t>`` valid for ``|t| <= t_max``."""
    lo, hi = F.support
    reach = 0.0 if x is None else alpha * np.linalg.norm(x)
    omega, w = _radial_rule(lo, hi, abs(t_max) + reach, max_nodes=max_nodes)
    S = shell_profile(F, omega, x, alpha)
    coeff = (w * omega**2 * kappa(omega) / np.sqrt(2.0 * omega))[:, None] * S
    return CorrelationProfile(omega, coeff, float(abs(t_max)))


def formfactor_inner(x: np.ndarray, F: PhotonField, kappa: Cutoff, t, alpha: float) -> np.ndarray:
    """``<G_x, f_t> = int kappa/sqrt(2|k|) exp(i alpha k.x - i t |k|) F(k) d^3k``.

    ``t`` may be a scalar or an array; the result has a trailing axis of length 3.
    """
    if alpha < 0:
        raise InvalidInputError("alpha must be non-negative")
    t_arr = np.asarray(t, dtype=float)
    prof = correlation_profile(F, kappa, float(np.max(np.abs(t_arr), initial=0.0)),
                               np.asarray(x, dtype=float), alpha)
    return prof.A(t_arr)


def correlation_A(F: PhotonField, kappa: Cutoff, t) -> np.ndarray:
    """Vacuum correlation ``C_A(t) = <G_0, f_t>``."""
    t_arr = np.asarray(t, dtype=float)
    return correlation_profile(F, kappa, float(np.max(np.abs(t_arr), initial=0.0))).A(t_arr)


def correlation_E(F: PhotonField, kappa: Cutoff, t) -> np.ndarray:
    """Vacuum correlation ``C_E(t) = int i|k| exp(-i t |k|) kappa/sqrt(2|k|) F d^3k``."""
    t_arr = np.asarray(t, dtype=float)
    return correlation_profile(F, kappa, float(np.max(np.abs(t_arr), initial=0.0))).E(t_arr)


def correlation_decay_time(F: PhotonField, kappa: Cutoff, rel: float = 1e-6,
                           which: str = "E", t_scan: float | None = None) -> float:
    """Smallest ``T`` with ``|C(t)| < rel * max|C|`` for all scanned ``|t| > T``.

    The scan covers ``|t| <= t_scan`` (default 400 window periods) on a grid a
    quarter of the fastest oscillation period apart.
    """
    lo, hi = F.support
    if t_scan is None:
        t_scan = 400.0 * 2.0 * np.pi / (hi - lo)
    prof = correlation_profile(F, kappa, t_scan)
    dt = 0.25 * 2.0 * np.pi / hi
    t = np.arange(-t_scan, t_scan + dt, dt)
    t = t[np.abs(t) <= t_scan]
    vals = prof.E(t) if which == "E" else prof.A(t)
    mag = np.linalg.norm(vals, axis=-1)
    peak = mag.max()
    if peak == 0.0:
        return 0.0
    above = np.abs(t[mag >= rel * peak])
    T = float(above.max())
    if T >= t_scan - 2 * dt:
        raise ResolutionError("correlation has not decayed within the scanned range",
                              "increase t_scan")
    return T


def transversality_residual(F: PhotonField, k: np.ndarray) -> float:
    """``max |k . F(k)| / (|k| max|F|)`` over sample points ``k`` of shape (N, 3)."""
    k = np.asarray(k, dtype=float)
    vals = F.field(k)
    scale = max(float(np.max(np.abs(vals))), 1e-300)
    dots = np.abs(np.einsum("nc,nc->n", k, vals)) / np.linalg.norm(k, axis=-1)
    return float(dots.max() / scale)


def shell_sphere_check(F: PhotonField, omega: float) -> float:
    """Relative change of the shell average under one step of sphere refinement."""
    base = max(MIN_SPHERE_DEGREE, F.angular_degree + 16)
    a = shell_profile(F, np.array([omega]), degree=base)[0]
    b = shell_profile(F, np.array([omega]), degree=next_sphere_degree(base))[0]
    scale = max(np.linalg.norm(b), 1e-300)
    return float(np.linalg.norm(a - b) / scale)
