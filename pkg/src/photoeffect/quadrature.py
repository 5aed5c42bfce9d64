"""Quadrature building blocks: Gauss-Legendre panels, adaptive refinement,
oscillation-aware panelling, and spherical surface rules."""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache
from typing import Callable, Sequence

import numpy as np
from scipy.integrate import lebedev_rule

from .errors import NumericalError

LEBEDEV_ORDERS = (3, 5, 7, 9, 11, 13, 15, 17, 19, 21, 23, 25, 27, 29, 31, 35, 41,
                  47, 53, 59, 65, 71, 77, 83, 89, 95, 101, 107, 113, 119, 125, 131)


@lru_cache(maxsize=64)
def _legendre(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    x.setflags(write=False)
    w.setflags(write=False)
    return x, w


def gauss_legendre(a: float, b: float, order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Nodes and weights of the ``order``-point Gauss-Legendre rule on [a, b]."""
    x, w = _legendre(order)
    half = 0.5 * (b - a)
    return 0.5 * (a + b) + half * x, half * w


def composite_gauss_legendre(edges: Sequence[float] | np.ndarray,
                             order: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Gauss-Legendre rule on every panel ``[edges[i], edges[i+1]]``."""
    edges = np.asarray(edges, dtype=float)
    x, w = _legendre(order)
    lo, hi = edges[:-1, None], edges[1:, None]
    half = 0.5 * (hi - lo)
    nodes = 0.5 * (lo + hi) + half * x[None, :]
    weights = half * w[None, :]
    return nodes.ravel(), weights.ravel()


def oscillatory_panels(a: float, b: float, frequency: float, *, order: int = 20,
                       radians_per_panel: float = 4.0 * np.pi, min_panels: int = 4,
                       max_nodes: int = 2_000_000) -> tuple[np.ndarray, np.ndarray]:
    """Composite Gauss-Legendre rule resolving ``exp(i*frequency*s)`` on [a, b].

    Each panel spans at most ``radians_per_panel`` of phase, which a 20-point
    rule integrates to roughly machine precision.
    """
    span = abs(b - a) * abs(frequency)
    n_panels = max(min_panels, int(np.ceil(span / radians_per_panel)))
    if n_panels * order > max_nodes:
        raise NumericalError(
            f"oscillatory rule would need {n_panels * order} nodes (limit {max_nodes})")
    return composite_gauss_legendre(np.linspace(a, b, n_panels + 1), order)


@dataclass(frozen=True)
class AdaptiveResult:
    """Outcome of :func:`adaptive_gauss_legendre`.

    ``nodes``, ``weights`` and ``values`` describe the final composite rule, so
    callers can reuse the integrand samples (for example as a spectrum).
    """

    value: float
    error: float
    nodes: np.ndarray
    weights: np.ndarray
    values: np.ndarray
    panels: int


def adaptive_gauss_legendre(f: Callable[[np.ndarray], np.ndarray], a: float, b: float, *,
                            rtol: float = 1e-8, atol: float = 0.0, order: int = 16,
                            breakpoints: Sequence[float] = (), initial_panels: int = 4,
                            max_panels: int = 4000) -> AdaptiveResult:
    """Globally adaptive panel Gauss-Legendre quadrature of a real integrand.

    The panel error is estimated as the difference between the one-panel rule
    and the rule on its two halves; the panel with the largest estimate is
    bisected until the summed estimate drops below ``max(atol, rtol*|I|)``.
    ``f`` maps an array of nodes to an array of values of the same length.
    """
    if b <= a:
        empty = np.empty(0)
        return AdaptiveResult(0.0, 0.0, empty, empty, empty, 0)
    cuts = sorted({a, b, *[p for p in breakpoints if a < p < b]})
    edges = []
    for lo, hi in zip(cuts[:-1], cuts[1:]):
        edges.extend(np.linspace(lo, hi, initial_panels + 1)[:-1])
    edges.append(b)

    def evaluate(lo: float, hi: float):
        x, w = gauss_legendre(lo, hi, order)
        y = np.asarray(f(x), dtype=float)
        if not np.all(np.isfinite(y)):
            raise NumericalError(f"non-finite integrand on [{lo}, {hi}]")
        return x, w, y, float(np.dot(w, y))

    # each entry: [lo, hi, whole-estimate, left-half data, right-half data, error]
    panels = []
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        whole = evaluate(lo, hi)[3]
        left, right = evaluate(lo, mid), evaluate(mid, hi)
        panels.append([lo, hi, whole, left, right, abs(left[3] + right[3] - whole)])

    while True:
        total = sum(p[3][3] + p[4][3] for p in panels)
        error = sum(p[5] for p in panels)
        if error <= max(atol, rtol * abs(total)):
            break
        if len(panels) >= max_panels:
            raise NumericalError(
                f"adaptive quadrature did not converge: error {error:.3e} "
                f"for value {total:.6e} with {len(panels)} panels")
        k = int(np.argmax([p[5] for p in panels]))
        lo, hi, _, left, right, _ = panels.pop(k)
        mid = 0.5 * (lo + hi)
        for (plo, phi), half in (((lo, mid), left), ((mid, hi), right)):
            pm = 0.5 * (plo + phi)
            ll, rr = evaluate(plo, pm), evaluate(pm, phi)
            panels.insert(k, [plo, phi, half[3], ll, rr, abs(ll[3] + rr[3] - half[3])])
            k += 1
    panels.sort(key=lambda p: p[0])
    nodes = np.concatenate([np.concatenate([p[3][0], p[4][0]]) for p in panels])
    weights = np.concatenate([np.concatenate([p[3][1], p[4][1]]) for p in panels])
    values = np.concatenate([np.concatenate([p[3][2], p[4][2]]) for p in panels])
    # the summed panels use a fixed left-to-right order, so results are reproducible
    return AdaptiveResult(float(np.dot(weights, values)), float(error), nodes, weights,
                          values, len(panels))


@lru_cache(maxsize=32)
def _lebedev(order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = lebedev_rule(order)
    points = np.ascontiguousarray(x.T)
    points.setflags(write=False)
    w = np.ascontiguousarray(w)
    w.setflags(write=False)
    return points, w


def sphere_rule(degree: int) -> tuple[np.ndarray, np.ndarray]:
    """Lebedev rule on the unit sphere exact for polynomials up to ``degree``.

    Returns points of shape (N, 3) and weights summing to 4*pi.
    """
    for order in LEBEDEV_ORDERS:
        if order >= degree:
            return _lebedev(order)
    raise NumericalError(f"no spherical rule of degree {degree} (max {LEBEDEV_ORDERS[-1]})")


def next_sphere_degree(degree: int) -> int:
    """Smallest tabulated degree strictly above ``degree`` (for refinement checks)."""
    for order in LEBEDEV_ORDERS:
        if order > degree:
            return order
    raise NumericalError("spherical rule cannot be refined further")
