"""Spectral analysis of ``H_el = -Laplacian + V`` for radial potentials.

Radial equations are solved on a log-linear grid ``x = ln r + r/scale``
(uniform in ``x``) after the Liouville substitution ``u = sqrt(dr/dx) w``,
which turns ``-u'' + (V + l(l+1)/r^2) u = E u`` into ``w'' = (P - E S) w``
with ``S = (dr/dx)^2`` and ``P = S (V + l(l+1)/r^2) + (Schwarzian term)``.
The transformed equation is integrated with the Numerov recurrence.

Generalized eigenfunctions follow the convention

    phi_q(x) = (2 pi)^(-3/2) 4 pi sum_lm i^l exp(i theta_l)
               u_{q,l}(r) / (q r) S_lm(q_hat) S_lm(x_hat),

with ``theta_l = sigma_l + delta_l`` and real spherical harmonics ``S_lm``
(the addition theorem makes this identical to the complex-harmonic form).
At ``V = 0`` it reduces to ``(2 pi)^(-3/2) exp(i q.x)``.  Radial waves behave
as ``sin(q r - eta ln(2 q r) - l pi/2 + theta_l)`` at large ``r``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, ClassVar, Sequence

import mpmath
import numpy as np
from scipy.interpolate import CubicSpline
from scipy.linalg import lapack
from scipy.special import loggamma, sph_harm_y, spherical_jn, spherical_yn, zeta

from . import _kernels as kern
from .errors import (BasisCoverageError, InvalidInputError, MissingChannelError,
                     NoBoundStateError, NumericalError, ResolutionError)
from .quadrature import adaptive_gauss_legendre, oscillatory_panels

OVERLAP_PREFACTOR = (2.0 * np.pi) ** -1.5 * 4.0 * np.pi
THRESHOLD_REJECT = 1e-8
_TAIL_EFOLDS = 40.0
_MAX_Q_STEP = 0.6  # largest q * dr allowed on the grid

_FD1 = np.array([-1 / 60, 3 / 20, -3 / 4, 0.0, 3 / 4, -3 / 20, 1 / 60])
_FD2 = np.array([1 / 90, -3 / 20, 3 / 2, -49 / 18, 3 / 2, -3 / 20, 1 / 90])


# --------------------------------------------------------------------------- grid

def _invert_map(x: np.ndarray, scale: float) -> np.ndarray:
    # solve rho + exp(rho)/scale = x for rho = ln r (monotone and convex in rho)
    rho = np.where(x > np.log(scale) + 1.0, np.log(scale * np.maximum(x, 1.0)), x)
    for _ in range(100):
        e = np.exp(rho) / scale
        step = (rho + e - x) / (1.0 + e)
        rho = rho - step
        if np.max(np.abs(step)) < 1e-15 * max(1.0, float(np.max(np.abs(rho)))):
            break
    return np.exp(rho)


@dataclass(frozen=True, eq=False)
class RadialGrid:
    """Log-linear radial grid, logarithmic near the origin and uniform far out.

    Parameters
    ----------
    r_max : float
        Outer radius, where Dirichlet conditions are imposed.
    n_nodes : int
        Number of nodes (uniform in the mapped variable).
    r_min : float
        Innermost node.
    scale : float
        Crossover radius; the far-field spacing is ``step * scale``.
    """

    r_max: float
    n_nodes: int
    r_min: float = 1e-6
    scale: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.r_min < self.r_max and self.scale > 0.0 and int(self.n_nodes) >= 32):
            raise InvalidInputError("radial grid needs 0 < r_min < r_max, scale > 0, n_nodes >= 32")
        x0 = math.log(self.r_min) + self.r_min / self.scale
        x1 = math.log(self.r_max) + self.r_max / self.scale
        x = np.linspace(x0, x1, int(self.n_nodes))
        r = _invert_map(x, self.scale)
        r[0], r[-1] = self.r_min, self.r_max
        c = self.scale
        rp = r * c / (c + r)
        g1 = c**2 / (c + r) ** 2
        g2 = -2.0 * c**2 / (c + r) ** 3
        h = x[1] - x[0]
        weights = h * rp
        weights[0] *= 0.5
        weights[-1] *= 0.5
        if not np.all(np.diff(r) > 0):
            raise InvalidInputError("grid nodes are not strictly increasing")
        for name, val in (("x", x), ("r", r), ("dr", rp), ("S", rp**2), ("g1", g1),
                          ("schwarz", 0.25 * g1**2 - 0.5 * rp * g2), ("weights", weights)):
            val.setflags(write=False)
            object.__setattr__(self, name, val)
        object.__setattr__(self, "step", float(h))

    @classmethod
    def with_step(cls, r_max: float, step: float = 0.01, r_min: float = 1e-6,
                  scale: float = 1.0) -> "RadialGrid":
        """Grid with mapped-variable spacing close to ``step``."""
        span = (math.log(r_max) + r_max / scale) - (math.log(r_min) + r_min / scale)
        return cls(r_max, int(math.ceil(span / step)) + 1, r_min, scale)

    def coarsened(self) -> "RadialGrid":
        """Grid with twice the spacing (odd node count keeps every other node)."""
        return RadialGrid(self.r_max, (int(self.n_nodes) + 1) // 2, self.r_min, self.scale)

    def refined(self) -> "RadialGrid":
        return RadialGrid(self.r_max, 2 * int(self.n_nodes) - 1, self.r_min, self.scale)

    @property
    def max_spacing(self) -> float:
        return float(self.r[-1] - self.r[-2])

    def index_at(self, r: float) -> int:
        """First node index with ``r_i >= r`` (clipped to the grid)."""
        return int(min(np.searchsorted(self.r, r), self.n_nodes - 1))

    def integrate(self, f: np.ndarray, n: int | None = None):
        """``int f dr`` over the first ``n`` nodes (trapezoid in the mapped variable)."""
        n = f.shape[-1] if n is None else n
        w = self.weights[:n].copy()
        w[n - 1] = 0.5 * self.step * self.dr[n - 1]
        return f[..., :n] @ w

    def derivative(self, f: np.ndarray) -> np.ndarray:
        """``df/dr`` by sixth-order differences in the mapped variable."""
        return _fd(f, _FD1) / self.step / self.dr


def _fd(f: np.ndarray, stencil: np.ndarray) -> np.ndarray:
    out = np.empty_like(f)
    n = f.shape[-1]
    core = sum(c * f[..., k:n - 6 + k] for k, c in enumerate(stencil))
    out[..., 3:n - 3] = core
    if stencil is _FD1:
        edge = np.gradient(f, axis=-1, edge_order=2)
    else:
        edge = np.gradient(np.gradient(f, axis=-1, edge_order=2), axis=-1, edge_order=2)
    out[..., :3] = edge[..., :3]
    out[..., n - 3:] = edge[..., n - 3:]
    return out


def default_grid(V: "Potential", r_max: float | None = None, step: float = 0.01) -> RadialGrid:
    """Grid adequate for the ground state and low continuum of ``V``."""
    if isinstance(V, Coulomb):
        z = abs(V.Z)
        r_max = 120.0 / z if r_max is None else r_max
        return RadialGrid.with_step(r_max, step, r_min=1e-6 / z, scale=1.0 / z)
    r_max = max(120.0, 4.0 * V.R) if r_max is None else r_max
    return RadialGrid.with_step(r_max, step, r_min=1e-6, scale=1.0)


# ----------------------------------------------------------------------- potentials

@dataclass(frozen=True)
class Coulomb:
    """Coulomb potential ``V(r) = -Z/r`` (attractive for ``Z > 0``)."""

    Z: float
    kind: ClassVar[str] = "coulomb"

    def __post_init__(self):
        if not (math.isfinite(self.Z) and self.Z != 0.0):
            raise InvalidInputError("Coulomb charge Z must be finite and non-zero")

    def __call__(self, r):
        return -self.Z / np.asarray(r, dtype=float)

    def series(self, l: int, energy):
        a1 = -self.Z / (2.0 * l + 2.0)
        a2 = (-self.Z * a1 - np.asarray(energy)) / (2.0 * (2.0 * l + 3.0))
        return a1, a2

    def level(self, n: int) -> float:
        """Exact bound-state energy ``-Z^2/(4 n^2)``."""
        return -self.Z**2 / (4.0 * n * n)

    def describe(self) -> dict:
        return {"kind": "coulomb", "Z": self.Z}


@dataclass(frozen=True, eq=False)
class ShortRange:
    """Short-range radial potential given by an evaluation handle.

    ``mu`` and ``R`` are the decay parameters of the hypotheses
    ``|V'(r)| <= r^(-1-mu)``, ``|V''(r)| <= r^(-2-mu)`` for ``r > R``.
    """

    potential: Callable[[np.ndarray], np.ndarray]
    mu: float = 1.0
    R: float = 10.0
    label: str = "short-range"
    kind: ClassVar[str] = "short_range"

    def __call__(self, r):
        r = np.asarray(r, dtype=float)
        return np.asarray(self.potential(r), dtype=float) * np.ones_like(r)

    def series(self, l: int, energy):
        v0 = float(self(np.array([1e-8]))[0])
        return 0.0, (v0 - np.asarray(energy)) / (2.0 * (2.0 * l + 3.0))

    def describe(self) -> dict:
        return {"kind": "short_range", "label": self.label, "mu": self.mu, "R": self.R}


Potential = Coulomb | ShortRange


def free_particle() -> ShortRange:
    return ShortRange(lambda r: np.zeros_like(r), mu=1.0, R=0.0, label="free")


def gaussian_well(depth: float, width: float) -> ShortRange:
    """``V(r) = -depth * exp(-(r/width)^2)`` (negative depth gives a barrier)."""
    return ShortRange(lambda r: -depth * np.exp(-(r / width) ** 2), mu=1.0,
                      R=6.0 * width, label=f"gaussian(depth={depth}, width={width})")


def tabulated_potential(r: np.ndarray, v: np.ndarray, mu: float = 1.0,
                        R: float | None = None) -> ShortRange:
    """Short-range potential from a table, cubic-spline interpolated, zero beyond."""
    r = np.asarray(r, dtype=float)
    v = np.asarray(v, dtype=float)
    spline = CubicSpline(r, v)
    r_end = r[-1]

    def fn(x):
        x = np.asarray(x, dtype=float)
        return np.where(x >= r_end, 0.0, spline(np.clip(x, r[0], r_end)))

    return ShortRange(fn, mu=mu, R=float(r_end if R is None else R), label="table")


def potential_diagnostics(V: Potential, grid: RadialGrid) -> dict:
    """Sampled checks of the decay hypotheses; raises if ``V(r_max)`` is not small."""
    tail = abs(float(V(np.array([grid.r_max]))[0]))
    report = {"abs_V_at_r_max": tail, "decays": tail < 1e-6}
    if not report["decays"]:
        raise InvalidInputError(f"|V(r_max)| = {tail:.3e} is not below 1e-6; enlarge r_max")
    if isinstance(V, ShortRange):
        r = np.geomspace(max(V.R, 1e-3), grid.r_max, 400)[1:-1]
        d1 = np.gradient(V(r), r)
        d2 = np.gradient(d1, r)
        report["first_derivative_bound"] = bool(np.all(np.abs(d1) <= r ** (-1 - V.mu) + 1e-12))
        report["second_derivative_bound"] = bool(np.all(np.abs(d2) <= r ** (-2 - V.mu) + 1e-10))
    return report


def _channel_potential(V: Potential, grid: RadialGrid, l: int) -> np.ndarray:
    r = grid.r
    return grid.S * (V(r) + l * (l + 1) / r**2) + grid.schwarz


def _start_values(V: Potential, grid: RadialGrid, l: int, energy):
    """Series start ``u ~ r^(l+1)(1 + a1 r + a2 r^2)``, scaled by ``r_min^-(l+1)``."""
    r0, r1 = grid.r[0], grid.r[1]
    a1, a2 = V.series(l, energy)
    u0 = 1.0 + a1 * r0 + a2 * r0**2
    u1 = (r1 / r0) ** (l + 1) * (1.0 + a1 * r1 + a2 * r1**2)
    return u0 / np.sqrt(grid.dr[0]), u1 / np.sqrt(grid.dr[1])


# ---------------------------------------------------------------------- bound states

@dataclass(frozen=True, eq=False)
class BoundState:
    """Normalized bound eigenpair in one partial wave.

    ``u`` is the reduced radial function on ``grid`` with ``int u^2 dr = 1``.
    """

    energy: float
    l: int
    u: np.ndarray
    grid: RadialGrid
    nodes: int
    residual: float
    match_error: float

    @property
    def r(self) -> np.ndarray:
        return self.grid.r


def _residual(grid: RadialGrid, Q: np.ndarray, w: np.ndarray, stop: int) -> float:
    """Grid norm of ``-u'' + (V_eff - E) u`` for ``u = sqrt(r') w`` over ``[0, stop)``.

    Evaluated with sixth-order differences; the norm is relative to the grid
    norm of ``(V_eff - E) u`` so that it is independent of normalization.
    """
    stop = max(stop, 16)
    ww = w[:stop]
    res = _fd(ww, _FD2)[..., 3:stop - 3] / grid.step**2 - Q[3:stop - 3] * ww[..., 3:stop - 3]
    rp = grid.dr[3:stop - 3]
    num = np.sqrt(np.sum(res**2 / rp**2, axis=-1))
    den = np.sqrt(np.sum((Q[3:stop - 3] * ww[..., 3:stop - 3]) ** 2 / rp**2, axis=-1))
    return np.asarray(num / np.maximum(den, 1e-300))


def _assemble_bound(V, grid, l, energy, P) -> BoundState | None:
    S, h, n = grid.S, grid.step, int(grid.n_nodes)
    Q = P - energy * S
    allowed = np.nonzero(Q < 0.0)[0]
    if allowed.size == 0:
        return None
    i_m = int(allowed[-1])
    kappa = np.sqrt(np.maximum(Q[i_m:], 0.0))
    beyond = np.nonzero(np.cumsum(kappa) * h > _TAIL_EFOLDS)[0]
    if beyond.size == 0 or i_m + int(beyond[0]) >= n - 2:
        return None  # tail not resolved inside the box
    i_e = i_m + int(beyond[0])
    w0, w1 = _start_values(V, grid, l, energy)
    w_out = kern.numerov_outward(P, S, energy, h, float(w0), float(w1), i_m + 2)
    while abs(w_out[i_m]) < 1e-6 * np.max(np.abs(w_out[:i_m + 1])) and i_m > 4:
        i_m -= 1
    w_in = kern.numerov_inward(P, S, energy, h, i_e, i_m - 1, 0.0, 1e-200)
    scale = w_out[i_m] / w_in[1]
    w = np.zeros(n)
    w[:i_m + 1] = w_out[:i_m + 1]
    w[i_m + 1:i_e + 1] = scale * w_in[2:]
    match = abs(scale * w_in[2] - w_out[i_m + 1]) / np.max(np.abs(w[:i_m + 1]))
    u = np.sqrt(grid.dr) * w
    norm = math.sqrt(float(grid.integrate(u * u)))
    u /= norm
    w /= norm
    big = np.abs(u) > 1e-8 * np.max(np.abs(u))
    signs = np.sign(u[big])
    nodes = int(np.count_nonzero(signs[1:] != signs[:-1]))
    residual = float(_residual(grid, Q, w, i_e))
    u.setflags(write=False)
    return BoundState(float(energy), l, u, grid, nodes, residual, float(match))


def _node_counter(V, grid, l, P):
    S, h = grid.S, grid.step

    def count(energy: float) -> int:
        w0, w1 = _start_values(V, grid, l, energy)
        return int(kern.numerov_node_count(P, S, float(energy), h, float(w0), float(w1)))

    return count


def _bound_levels(V: Potential, grid: RadialGrid, l: int, count: int) -> list[BoundState]:
    P = _channel_potential(V, grid, l)
    floor = float(np.min(P / grid.S))
    top = -THRESHOLD_REJECT
    if floor >= top:
        return []
    nodes_below = _node_counter(V, grid, l, P)
    available = nodes_below(top)
    states = []
    lo_k = floor - 1e-9 * abs(floor)
    for k in range(min(count, available)):
        lo, hi = lo_k, top
        # invariant: nodes_below(lo) <= k < nodes_below(hi)
        for _ in range(200):
            mid = 0.5 * (lo + hi)
            if mid <= lo or mid >= hi:
                break
            if nodes_below(mid) <= k:
                lo = mid
            else:
                hi = mid
            if hi - lo <= 2e-16 * max(1.0, abs(hi)):
                break
        energy = 0.5 * (lo + hi)
        state = _assemble_bound(V, grid, l, energy, P)
        if state is None:
            break  # higher levels are even less resolved
        states.append(state)
        lo_k = hi
    return states


@lru_cache(maxsize=64)
def _cached_levels(V, grid, l, count):
    return tuple(_bound_levels(V, grid, l, count))


def ground_state(V: Potential, grid: RadialGrid) -> BoundState:
    """Lowest eigenpair of the s-wave channel.

    Raises
    ------
    NoBoundStateError
        If the channel has no resolved negative eigenvalue.
    """
    states = _cached_levels(V, grid, 0, 1)
    if not states:
        raise NoBoundStateError("no negative eigenvalue: the hypotheses require inf spec(H_el) < 0")
    return states[0]


def excited_bound_states(V: Potential, grid: RadialGrid, l: int, count: int) -> list[BoundState]:
    """Up to ``count`` lowest resolved bound states of channel ``l``, sorted."""
    return list(_cached_levels(V, grid, int(l), int(count)))


def all_bound_states(V: Potential, grid: RadialGrid, l: int, limit: int = 64) -> list[BoundState]:
    """Every bound state of channel ``l`` whose tail is resolved on ``grid``."""
    return list(_cached_levels(V, grid, int(l), int(limit)))


# --------------------------------------------------------------------- continuum

@dataclass(frozen=True, eq=False)
class ContinuumWave:
    """Delta-normalized radial partial wave on the first ``len(u)`` grid nodes."""

    q: float
    l: int
    delta: float
    sigma: float
    eta: float
    u: np.ndarray
    grid: RadialGrid
    residual: float

    @property
    def phase(self) -> float:
        return self.sigma + self.delta

    @property
    def r(self) -> np.ndarray:
        return self.grid.r[:self.u.size]


def coulomb_phase(l: int, eta) -> np.ndarray:
    """``sigma_l = arg Gamma(l + 1 + i eta)`` (continuous branch)."""
    return np.imag(loggamma(l + 1 + 1j * np.asarray(eta)))


def _log_gamow(l: int, eta: np.ndarray) -> np.ndarray:
    # log of C_l(eta) = 2^l exp(-pi eta/2) |Gamma(l+1+i eta)| / (2l+1)!
    return (l * math.log(2.0) - 0.5 * np.pi * eta + np.real(loggamma(l + 1 + 1j * eta))
            - math.lgamma(2 * l + 2))


def _stop_index(grid: RadialGrid, r_stop: float | None) -> int:
    if r_stop is None:
        return int(grid.n_nodes)
    return min(int(grid.n_nodes), grid.index_at(r_stop) + 8)


def _raw_waves(V, grid, qs, l, n):
    P = _channel_potential(V, grid, l)
    energies = qs**2
    w0, w1 = _start_values(V, grid, l, energies)
    w0 = np.broadcast_to(w0, qs.shape).astype(float)
    w1 = np.broadcast_to(w1, qs.shape).astype(float)
    W = kern.numerov_outward_batch(P, grid.S, energies, grid.step, w0, w1, n)
    return W, P


def continuum_batch(V: Potential, grid: RadialGrid, qs, l: int, r_stop: float | None = None,
                    with_residual: bool = False):
    """Delta-normalized waves for many momenta at once.

    Returns
    -------
    U : ndarray, shape (len(qs), n)
        Reduced radial functions on the first ``n`` grid nodes.
    delta, sigma, eta : ndarray
        Short-range phase shift, Coulomb phase and Sommerfeld parameter.
    residual : ndarray or None
    """
    qs = np.atleast_1d(np.asarray(qs, dtype=float))
    if np.any(qs <= 0.0):
        raise InvalidInputError("continuum momenta must be positive")
    n = _stop_index(grid, r_stop)
    spacing = float(np.max(np.diff(grid.r[:n])))
    if np.max(qs) * spacing > _MAX_Q_STEP:
        raise ResolutionError(
            f"q = {np.max(qs):.4g} is not resolved by radial spacing {spacing:.3g}",
            f"use a grid with spacing below {_MAX_Q_STEP / np.max(qs):.3g}")
    W, P = _raw_waves(V, grid, qs, l, n)
    sq = np.sqrt(grid.dr[:n])
    if isinstance(V, Coulomb):
        eta = -V.Z / (2.0 * qs)
        log_norm = (l + 1) * (np.log(qs) + math.log(grid.r[0])) + _log_gamow(l, eta)
        U = W * (np.exp(log_norm)[:, None] * sq[None, :])
        sigma = coulomb_phase(l, eta)
        delta = np.zeros_like(qs)
        Wn = W * np.exp(log_norm)[:, None]
    else:
        U, delta, Wn = _match_free(V, grid, qs, l, W, n)
        eta = np.zeros_like(qs)
        sigma = np.zeros_like(qs)
    residual = None
    if with_residual:
        Q = P[None, :n] - (qs**2)[:, None] * grid.S[None, :n]
        residual = np.array([_residual(grid, Q[k], Wn[k], n) for k in range(qs.size)])
    return U, delta, sigma, eta, residual


def _match_free(V: ShortRange, grid, qs, l, W, n):
    """Normalize by value/derivative matching to Riccati-Bessel functions."""
    ib = n - 4
    rb = grid.r[ib]
    past = np.nonzero(np.abs(V(grid.r[:n])) > 1e-13)[0]
    r_inner = grid.r[past[-1]] if past.size else 0.0
    if rb <= max(r_inner, 0.0) or (V.R > 0 and rb < V.R):
        raise ResolutionError(
            f"matching radius {rb:.3g} lies inside the potential range {max(r_inner, V.R):.3g}",
            "increase r_stop or r_max")
    sq = math.sqrt(grid.dr[ib])
    wx = (W[:, ib - 3:ib + 4] @ _FD1) / grid.step
    u_b = sq * W[:, ib]
    du_b = (0.5 * grid.g1[ib] * W[:, ib] + wx) / sq
    x = qs * rb
    jl, jd = spherical_jn(l, x), spherical_jn(l, x, derivative=True)
    yl, yd = spherical_yn(l, x), spherical_yn(l, x, derivative=True)
    jhat, nhat = x * jl, x * yl
    jhat_d, nhat_d = qs * (jl + x * jd), qs * (yl + x * yd)
    det = jhat * nhat_d - nhat * jhat_d
    a = (u_b * nhat_d - nhat * du_b) / det
    b = (jhat * du_b - u_b * jhat_d) / det
    sign = np.where(a < 0.0, -1.0, 1.0)
    amp = np.hypot(a, b)
    delta = np.arctan2(-b * sign, a * sign)
    factor = sign / amp
    sqn = np.sqrt(grid.dr[:n])
    return W * (factor[:, None] * sqn[None, :]), delta, W * factor[:, None]


def continuum_wave(V: Potential, grid: RadialGrid, q: float, l: int,
                   r_stop: float | None = None) -> ContinuumWave:
    """Single delta-normalized partial wave with residual diagnostics."""
    U, delta, sigma, eta, res = continuum_batch(V, grid, np.array([q]), l, r_stop, with_residual=True)
    return ContinuumWave(float(q), int(l), float(delta[0]), float(sigma[0]), float(eta[0]),
                         U[0], grid, float(res[0]))


def asymptotic_mismatch(wave: ContinuumWave, points: int = 4) -> float:
    """Largest deviation of ``u`` from the exact regular solution at the outermost nodes.

    For Coulomb waves the reference is the regular Coulomb function evaluated
    with arbitrary precision; for short-range waves it is
    ``cos(delta) qr j_l(qr) - sin(delta) qr y_l(qr)``.
    """
    idx = np.arange(wave.u.size - 5 - points, wave.u.size - 5)
    r = wave.grid.r[idx]
    if wave.eta != 0.0:
        ref = np.array([float(mpmath.coulombf(wave.l, wave.eta, wave.q * ri)) for ri in r])
    else:
        x = wave.q * r
        ref = x * (np.cos(wave.delta) * spherical_jn(wave.l, x) - np.sin(wave.delta) * spherical_yn(wave.l, x))
    return float(np.max(np.abs(wave.u[idx] - ref)))


# -------------------------------------------------------------------- wave packets

def real_spherical_harmonic(l: int, m: int, directions: np.ndarray) -> np.ndarray:
    """Orthonormal real spherical harmonic ``S_lm`` at unit vectors ``directions``."""
    d = np.asarray(directions, dtype=float)
    theta = np.arccos(np.clip(d[..., 2] / np.linalg.norm(d, axis=-1), -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    y = sph_harm_y(l, abs(m), theta, phi)
    if m > 0:
        return math.sqrt(2.0) * (-1) ** m * y.real
    if m < 0:
        return math.sqrt(2.0) * (-1) ** m * y.imag
    return y.real


AXIS_TO_M = {0: 1, 1: -1, 2: 0}  # x, y, z as real l = 1 harmonics


@dataclass(frozen=True, eq=False)
class Wavepacket:
    """``psi(x) = sum_(l,m) u_lm(r)/r S_lm(x_hat)`` on a radial grid."""

    grid: RadialGrid
    channels: dict

    def __post_init__(self):
        fixed = {}
        for key, u in self.channels.items():
            l, m = int(key[0]), int(key[1])
            if abs(m) > l or l < 0:
                raise InvalidInputError(f"invalid channel {(l, m)}")
            arr = np.asarray(u, dtype=complex)
            if arr.shape != (int(self.grid.n_nodes),):
                raise InvalidInputError("channel arrays must match the grid")
            fixed[(l, m)] = arr
        object.__setattr__(self, "channels", fixed)

    def norm2(self) -> float:
        return float(sum(self.grid.integrate(np.abs(u) ** 2) for u in self.channels.values()))

    def norm(self) -> float:
        return math.sqrt(self.norm2())

    def moment_norm(self, power: float) -> float:
        """``|| |x|^power psi ||``."""
        r = self.grid.r
        return math.sqrt(float(sum(self.grid.integrate(r ** (2 * power) * np.abs(u) ** 2)
                                   for u in self.channels.values())))

    def extent(self, rel: float = 1e-13) -> float:
        """Radius beyond which every channel is below ``rel`` of its maximum."""
        last = 0
        for u in self.channels.values():
            a = np.abs(u)
            big = np.nonzero(a > rel * a.max())[0] if a.max() > 0 else []
            if len(big):
                last = max(last, int(big[-1]))
        return float(self.grid.r[min(last + 1, int(self.grid.n_nodes) - 1)])

    def inner(self, other: "Wavepacket") -> complex:
        return complex(sum(self.grid.integrate(np.conj(u) * other.channels[k])
                           for k, u in self.channels.items() if k in other.channels))

    @classmethod
    def from_bound(cls, state: BoundState, m: int = 0) -> "Wavepacket":
        return cls(state.grid, {(state.l, m): state.u.astype(complex)})


def position_times(state: BoundState, axis: int = 2) -> Wavepacket:
    """``x_axis * phi`` for an s-wave state ``phi`` (a pure l = 1 packet)."""
    if state.l != 0:
        raise InvalidInputError("position_times expects an s-wave state")
    return Wavepacket(state.grid, {(1, AXIS_TO_M[axis]): state.grid.r * state.u / math.sqrt(3.0)})


def _wave_extent(u: np.ndarray, grid: RadialGrid, rel: float = 1e-14) -> float:
    a = np.abs(u)
    big = np.nonzero(a > rel * a.max())[0]
    return float(grid.r[min(int(big[-1]) + 1, int(grid.n_nodes) - 1)]) if big.size else grid.r[16]


def _phase_factor(l, delta, sigma, qs, gauge):
    theta = sigma + delta
    if gauge is not None:
        theta = theta + np.asarray([gauge(q) for q in qs])
    return OVERLAP_PREFACTOR * (-1j) ** l * np.exp(-1j * theta) / qs


def eigen_overlap(w: Wavepacket, V: Potential, q, *, l_max: int | None = None,
                  gauge: Callable[[float], float] | None = None) -> dict:
    """Channel overlaps ``a_lm(q)`` with ``<phi_q, psi> = sum a_lm(q) S_lm(q_hat)``.

    ``gauge`` optionally adds a q-dependent phase to every generalized
    eigenfunction; physical quantities must not depend on it.
    """
    qs = np.atleast_1d(np.asarray(q, dtype=float))
    out = {}
    for (l, m), u in w.channels.items():
        if l_max is not None and l > l_max:
            raise MissingChannelError(f"channel l = {l} is outside the computed set l <= {l_max}")
        U, delta, sigma, _, _ = continuum_batch(V, w.grid, qs, l, _wave_extent(u, w.grid))
        radial = U @ (u[:U.shape[1]] * _trap_weights(w.grid, U.shape[1]))
        vals = _phase_factor(l, delta, sigma, qs, gauge) * radial
        out[(l, m)] = vals if np.ndim(q) else complex(vals[0])
    return out


def assemble_overlap(overlaps: dict, qhat: np.ndarray) -> np.ndarray:
    """``<phi_q, psi>`` along unit directions ``qhat`` from per-channel overlaps."""
    return sum(a * real_spherical_harmonic(l, m, qhat) for (l, m), a in overlaps.items())


def _trap_weights(grid: RadialGrid, n: int) -> np.ndarray:
    w = grid.weights[:n].copy()
    w[n - 1] = 0.5 * grid.step * grid.dr[n - 1]
    return w


# ------------------------------------------------------------ dipole matrix elements

def _reference_u(V, grid, reference) -> tuple[np.ndarray, float]:
    if reference is None:
        g = ground_state(V, grid)
        return g.u, g.energy
    if isinstance(reference, BoundState):
        return reference.u, reference.energy
    return np.asarray(reference, dtype=float), float("nan")


def dipole_radial_integral(V, grid, q, reference=None) -> np.ndarray:
    """``J(q) = int u_{q,1}(r) r u_0(r) dr``."""
    u0, _ = _reference_u(V, grid, reference)
    qs = np.atleast_1d(np.asarray(q, dtype=float))
    U, *_ = continuum_batch(V, grid, qs, 1, _wave_extent(u0, grid))
    n = U.shape[1]
    return U @ (grid.r[:n] * u0[:n] * _trap_weights(grid, n))


def gradient_radial_integral(V, grid, q, reference=None) -> np.ndarray:
    """``K(q) = int u_{q,1}(r) (u_0'(r) - u_0(r)/r) dr``."""
    u0, _ = _reference_u(V, grid, reference)
    qs = np.atleast_1d(np.asarray(q, dtype=float))
    g = grid.derivative(u0) - u0 / grid.r
    U, *_ = continuum_batch(V, grid, qs, 1, _wave_extent(u0, grid))
    n = U.shape[1]
    return U @ (g[:n] * _trap_weights(grid, n))


def _l1_phase(V, grid, qs, gauge):
    # Coulomb phases need no integration; short-range shifts are matched beyond the range
    r_stop = grid.r[40] if isinstance(V, Coulomb) else None
    _, delta, sigma, _, _ = continuum_batch(V, grid, qs, 1, r_stop)
    return (2.0 * np.pi) ** -1.5 * math.sqrt(4.0 * np.pi) * (-1j) * np.exp(
        -1j * (sigma + delta + (0.0 if gauge is None else np.array([gauge(x) for x in qs])))) / qs


def dipole_element(V: Potential, grid: RadialGrid, q, *, reference=None,
                   gauge: Callable[[float], float] | None = None):
    """Radial factor ``c(q)`` of ``<phi_q, x phi_el> = c(q) q_hat``."""
    qs = np.atleast_1d(np.asarray(q, dtype=float))
    c = _l1_phase(V, grid, qs, gauge) * dipole_radial_integral(V, grid, qs, reference)
    return c if np.ndim(q) else complex(c[0])


def gradient_element(V: Potential, grid: RadialGrid, q, direction=(0.0, 0.0, 1.0), *,
                     reference=None, gauge=None) -> np.ndarray:
    """``<phi_q, -2 grad phi_el>`` as a complex 3-vector along ``direction``."""
    qs = np.atleast_1d(np.asarray(q, dtype=float))
    d = np.asarray(direction, dtype=float)
    d = d / np.linalg.norm(d)
    g = -2.0 * _l1_phase(V, grid, qs, gauge) * gradient_radial_integral(V, grid, qs, reference)
    out = g[:, None] * d[None, :]
    return out if np.ndim(q) else out[0]


def momentum_element(V: Potential, grid: RadialGrid, q, direction=(0.0, 0.0, 1.0), *,
                     reference=None, gauge=None) -> np.ndarray:
    """``<phi_q, 2p phi_el>`` with ``p = -i grad``, from the gradient radial integral.

    Satisfies ``<phi_q, 2p phi_el> = +i (q^2 - E0) <phi_q, x phi_el>``.
    """
    return 1j * gradient_element(V, grid, q, direction, reference=reference, gauge=gauge)


def dipole_vector(V, grid, q, direction, *, reference=None, gauge=None) -> np.ndarray:
    d = np.asarray(direction, dtype=float)
    return dipole_element(V, grid, q, reference=reference, gauge=gauge) * d / np.linalg.norm(d)


# ------------------------------------------------------------------ completeness

@dataclass(frozen=True)
class CompletenessReport:
    norm2: float
    bound: float
    rydberg_tail: float
    continuum: float
    continuum_error: float
    bound_levels: dict
    q_max: float

    @property
    def defect(self) -> float:
        return abs(self.norm2 - self.bound - self.rydberg_tail - self.continuum)


def _rydberg_tail(V: Coulomb, l: int, weights: list[float]) -> float:
    """Extrapolated weight of unresolved Rydberg levels ``n > n_last``.

    ``n^3 |c_n|^2`` is a smooth function of ``1/n^2``; a quadratic fit through
    the highest resolved levels is summed with Hurwitz zeta functions.
    """
    if len(weights) < 4:
        return 0.0
    n = np.arange(l + 1, l + 1 + len(weights), dtype=float)[-4:]
    y = np.asarray(weights[-4:]) * n**3
    coef = np.polyfit(1.0 / n**2, y, 2)  # y = c2 x^2 + c1 x + c0 with x = 1/n^2
    start = n[-1] + 1.0
    return float(coef[2] * zeta(3, start) + coef[1] * zeta(5, start) + coef[0] * zeta(7, start))


def continuum_weight(w_u: np.ndarray, V, grid, l, *, rtol=1e-10, atol=0.0, q_cap=None,
                     gauge=None) -> tuple[float, float, float]:
    """``(2/pi) int |int u_q u dr|^2 dq`` with adaptive panels; returns (value, error, q_max)."""
    r_stop = _wave_extent(w_u, grid)
    u_col = w_u
    cap = q_cap if q_cap is not None else _MAX_Q_STEP / grid.max_spacing * 0.9

    def integrand(qs):
        U, *_ = continuum_batch(V, grid, qs, l, r_stop)
        n = U.shape[1]
        return (2.0 / np.pi) * np.abs(U @ (u_col[:n] * _trap_weights(grid, n))) ** 2

    total, err, lo = 0.0, 0.0, 0.0
    edges = [0.0, 1.0, 3.0, 6.0, 10.0, 16.0, 24.0, 36.0, 50.0]
    for hi in edges[1:]:
        hi = min(hi, cap)
        if hi <= lo:
            break
        res = adaptive_gauss_legendre(integrand, lo, hi, rtol=rtol, atol=atol * 0.1, order=16,
                                      initial_panels=4)
        total += res.value
        err += res.error
        lo = hi
        if res.value < max(atol, 1e-12 * total) and lo >= 6.0:
            break
    return total, err, lo


def completeness_report(w: Wavepacket, V: Potential, *, rtol: float = 1e-10,
                        gauge=None, rydberg_tail: bool = True) -> CompletenessReport:
    """Bound, continuum and extrapolated Rydberg weights of a wave packet."""
    norm2 = w.norm2()
    bound = tail = cont = cont_err = 0.0
    levels = {}
    q_max = 0.0
    for (l, m), u in w.channels.items():
        states = all_bound_states(V, w.grid, l)
        weights = [abs(complex(w.grid.integrate(s.u * u))) ** 2 for s in states]
        levels[(l, m)] = [(s.energy, wt) for s, wt in zip(states, weights)]
        bound += sum(weights)
        if isinstance(V, Coulomb) and rydberg_tail:
            tail += _rydberg_tail(V, l, weights)
        val, err, qm = continuum_weight(u, V, w.grid, l, rtol=rtol, atol=1e-12 * norm2, gauge=gauge)
        cont += val
        cont_err += err
        q_max = max(q_max, qm)
    return CompletenessReport(norm2, bound, tail, cont, cont_err, levels, q_max)


def completeness_defect(w: Wavepacket, V: Potential, **kwargs) -> float:
    """``| ||w||^2 - sum_bound |<phi_n,w>|^2 - int |<phi_q,w>|^2 d^3q |``."""
    return completeness_report(w, V, **kwargs).defect


# ------------------------------------------------------------------- evolution

@dataclass(frozen=True, eq=False)
class ChannelSpectrum:
    """Spectral coefficients of one radial function in channel ``l``.

    The radial function is ``sum_n b_n u_n + (2/pi) int a(q) u_q dq`` with
    the ``q`` integral discretized by ``q_nodes``/``q_weights``.
    """

    l: int
    bound_states: tuple
    bound_coeffs: np.ndarray
    q_nodes: np.ndarray
    q_weights: np.ndarray
    q_coeffs: np.ndarray

    def weight(self) -> float:
        return float(np.sum(np.abs(self.bound_coeffs) ** 2)
                     + (2.0 / np.pi) * np.sum(self.q_weights * np.abs(self.q_coeffs) ** 2))

    def synthesize(self, V, grid, t: float, n_out: int, chunk: int = 64) -> np.ndarray:
        """Radial function of ``exp(-i H t)`` applied to the represented state."""
        out = np.zeros(n_out, dtype=complex)
        for s, b in zip(self.bound_states, self.bound_coeffs):
            out += b * np.exp(-1j * s.energy * t) * s.u[:n_out]
        r_stop = grid.r[n_out - 1]
        for k in range(0, self.q_nodes.size, chunk):
            qs = self.q_nodes[k:k + chunk]
            U, *_ = continuum_batch(V, grid, qs, self.l, r_stop)
            coef = (2.0 / np.pi) * self.q_weights[k:k + chunk] * self.q_coeffs[k:k + chunk] \
                * np.exp(-1j * qs**2 * t)
            out += coef @ U[:, :n_out]
        return out


def project_continuum(V, grid, qs, l, u, r_stop=None, chunk: int = 256) -> np.ndarray:
    """``int u_q(r) u(r) dr`` for many momenta, built in chunks to bound memory."""
    qs = np.atleast_1d(np.asarray(qs, dtype=float))
    r_stop = _wave_extent(u, grid) if r_stop is None else r_stop
    out = np.empty(qs.size, dtype=np.result_type(u, float))
    for k in range(0, qs.size, chunk):
        U, *_ = continuum_batch(V, grid, qs[k:k + chunk], l, r_stop)
        n = U.shape[1]
        out[k:k + chunk] = U @ (u[:n] * _trap_weights(grid, n))
    return out


def _q_cutoff(V, grid, l, u, tol) -> float:
    cap = _MAX_Q_STEP / grid.max_spacing * 0.9
    qs = np.linspace(0.02, cap, int(cap / 0.02))
    dens = np.abs(project_continuum(V, grid, qs, l, u)) ** 2
    tail = np.cumsum(dens[::-1])[::-1] * (qs[1] - qs[0])
    # relative to the continuum weight, floored by the state norm so that a
    # pure bound state (continuum density at rounding level) keeps a small cutoff
    nrm = float(grid.integrate(np.abs(u) ** 2))
    threshold = max(tol * tail[0], 1e-18 * nrm)
    idx = np.nonzero(tail > threshold)[0]
    return float(qs[min(int(idx[-1]) + 2, qs.size - 1)]) if idx.size else float(qs[1])


def spectral_decomposition(w: Wavepacket, V: Potential, *, t: float = 0.0,
                           r_out: float | None = None, coverage_tol: float = 1e-4,
                           q_tol: float = 1e-20) -> dict:
    """Per-channel spectral coefficients resolved for synthesis at time ``t``.

    Raises
    ------
    BasisCoverageError
        If bound plus continuum weights miss more than ``coverage_tol`` of ``||w||^2``.
    """
    grid = w.grid
    r_out = grid.r_max if r_out is None else r_out
    result = {}
    for (l, m), u in w.channels.items():
        nrm = float(grid.integrate(np.abs(u) ** 2))
        states = all_bound_states(V, grid, l)
        b = np.array([complex(grid.integrate(s.u * u)) for s in states], dtype=complex)
        q_hi = _q_cutoff(V, grid, l, u, q_tol)
        freq = r_out + 2.0 * q_hi * abs(t) + 2.0 * _wave_extent(u, grid)
        qn, qw = oscillatory_panels(0.0, q_hi, freq, order=20, radians_per_panel=4.0 * np.pi,
                                    min_panels=16)
        a = project_continuum(V, grid, qn, l, u)
        spec = ChannelSpectrum(l, tuple(states), b, qn, qw, a)
        defect = abs(nrm - spec.weight()) / max(nrm, 1e-300)
        if defect > coverage_tol:
            raise BasisCoverageError(
                f"channel {(l, m)}: computed eigenfunctions cover the state only up to a "
                f"relative defect {defect:.2e} > {coverage_tol:.1e}", defect)
        result[(l, m)] = spec
    return result


def evolve(w: Wavepacket | BoundState, V: Potential, t: float, *, method: str = "spectral",
           coverage_tol: float = 1e-4, dt: float = 0.01) -> Wavepacket:
    """``exp(-i H_el t) w``.

    ``method="spectral"`` expands every channel in computed bound states and
    delta-normalized waves (raises :class:`BasisCoverageError` if they do not
    cover ``w``); ``method="propagate"`` uses Crank-Nicolson time stepping on
    the radial grid, which needs no eigenfunction basis.
    """
    if isinstance(w, BoundState):
        w = Wavepacket.from_bound(w)
    if t == 0.0:
        return Wavepacket(w.grid, {k: u.copy() for k, u in w.channels.items()})
    if method == "propagate":
        return propagate(w, V, [t], dt=dt)[0]
    if method != "spectral":
        raise InvalidInputError(f"unknown evolution method {method!r}")
    spectra = spectral_decomposition(w, V, t=t, coverage_tol=coverage_tol)
    n = int(w.grid.n_nodes)
    return Wavepacket(w.grid, {k: spec.synthesize(V, w.grid, t, n) for k, spec in spectra.items()})


def propagate(w: Wavepacket, V: Potential, times: Sequence[float], *, dt: float = 0.01) -> list:
    """Crank-Nicolson evolution of every channel, returning packets at ``times``.

    The discretization is the second-order finite-difference form of
    ``i S dw/dt = (-d^2/dx^2 + P) w`` with Dirichlet ends; it is exactly
    unitary in the grid norm ``sum S |w|^2 h``.
    """
    grid = w.grid
    h = grid.step
    times = [float(t) for t in times]
    states = {k: (u / np.sqrt(grid.dr)).astype(complex) for k, u in w.channels.items()}
    outputs = []
    t_now = 0.0
    factor_cache = {}
    for t_target in times:
        span = t_target - t_now
        n_steps = int(math.ceil(abs(span) / dt - 1e-9)) if span != 0 else 0
        for key in states:
            if n_steps == 0:
                continue
            tau = span / n_steps
            l = key[0]
            fkey = (l, round(tau, 15))
            if fkey not in factor_cache:
                P = _channel_potential(V, grid, l)[1:-1]
                S = grid.S[1:-1]
                diag = 2.0 / h**2 + P
                off = np.full(S.size - 1, -1.0 / h**2)
                lhs = (S + 0.5j * tau * diag, 0.5j * tau * off)
                rhs = (S - 0.5j * tau * diag, -0.5j * tau * off)
                dl, d, du, du2, ipiv, info = lapack.zgttrf(lhs[1].astype(complex), lhs[0].astype(complex),
                                                           lhs[1].astype(complex))
                if info != 0:
                    raise NumericalError("Crank-Nicolson factorization failed")
                factor_cache[fkey] = (rhs, (dl, d, du, du2, ipiv))
            rhs, fac = factor_cache[fkey]
            psi = states[key][1:-1].copy()
            rd, ro = rhs
            for _ in range(n_steps):
                b = rd * psi
                b[:-1] += ro * psi[1:]
                b[1:] += ro * psi[:-1]
                psi, info = lapack.zgttrs(*fac, b)
            states[key][1:-1] = psi
        t_now = t_target
        outputs.append(Wavepacket(grid, {k: v * np.sqrt(grid.dr) for k, v in states.items()}))
    return outputs
