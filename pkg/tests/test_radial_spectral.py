import math

import mpmath
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import spherical_jn

from photoeffect import (Coulomb, InvalidInputError, MissingChannelError, NoBoundStateError,
                         RadialGrid, ResolutionError, Wavepacket, completeness_defect,
                         continuum_wave, default_grid, dipole_element, eigen_overlap, evolve,
                         excited_bound_states, free_particle, gaussian_well, ground_state,
                         momentum_element, tabulated_potential)
from photoeffect.radial_spectral import (AXIS_TO_M, asymptotic_mismatch, assemble_overlap,
                                         completeness_report, dipole_radial_integral,
                                         gradient_element, position_times, propagate,
                                         real_spherical_harmonic)


# ------------------------------------------------------------------ grid

def test_grid_integrates_smooth_functions():
    grid = RadialGrid.with_step(60.0, 0.01)
    assert grid.r[-1] == pytest.approx(60.0)
    assert grid.integrate(grid.r**2 * np.exp(-grid.r)) == pytest.approx(2.0, rel=1e-10)
    d = grid.derivative(np.sin(grid.r))
    assert np.max(np.abs(d[10:-10] - np.cos(grid.r[10:-10]))) < 1e-8


def test_grid_refinement_halves_step():
    grid = RadialGrid.with_step(40.0, 0.02)
    fine = grid.refined()
    assert fine.step == pytest.approx(grid.step / 2, rel=1e-12)
    np.testing.assert_allclose(fine.r[::2], grid.r, rtol=1e-13)
    assert fine.coarsened().n_nodes == grid.n_nodes


# ------------------------------------------------------------ bound states

@pytest.mark.parametrize("Z", [1.0, 2.0, 3.0])
def test_coulomb_ground_state(Z):
    V = Coulomb(Z)
    g = ground_state(V, default_grid(V))
    assert abs(g.energy + Z * Z / 4) < 1e-9
    assert g.nodes == 0
    assert g.u[np.argmax(np.abs(g.u))] > 0
    assert g.residual < 1e-6
    exact = Z**1.5 / math.sqrt(2.0) * g.r * np.exp(-Z * g.r / 2)
    assert np.max(np.abs(g.u - exact)) < 1e-8


@pytest.mark.parametrize("l", [0, 1, 2])
def test_coulomb_excited_levels(l):
    V = Coulomb(1.0)
    grid = default_grid(V, r_max=400.0)
    states = excited_bound_states(V, grid, l, 4)
    for k, s in enumerate(states):
        n = l + 1 + k
        assert s.energy == pytest.approx(V.level(n), rel=1e-9)
        assert s.nodes == k


def test_hydrogen_moments_closed_form(hydrogen, hgrid):
    psi = position_times(ground_state(hydrogen, hgrid))
    assert psi.norm2() == pytest.approx(4.0, rel=1e-10)
    # <r^4 z^2> = <r^6>/3 = 8!/2/3 for the 1s state with Bohr radius 2
    assert psi.moment_norm(2) ** 2 == pytest.approx(6720.0, rel=1e-9)


def test_unresolved_tail_is_not_reported():
    # kappa ~ 0.64 needs r ~ 63 for the decaying tail; a 40-unit box cannot hold it
    V = gaussian_well(5.0, 1.0)
    with pytest.raises(NoBoundStateError):
        ground_state(V, default_grid(V, r_max=40.0))


def test_no_bound_state_cases():
    with pytest.raises(NoBoundStateError):
        ground_state(free_particle(), default_grid(free_particle(), r_max=60))
    V = Coulomb(-1.0)
    with pytest.raises(NoBoundStateError):
        ground_state(V, default_grid(V))
    with pytest.raises(InvalidInputError):
        Coulomb(0.0)


def test_gaussian_well_ground_energy(frozen):
    V = gaussian_well(5.0, 1.0)
    g = ground_state(V, default_grid(V))
    assert g.energy == pytest.approx(frozen["gaussian_ground_energy"]["depth=5,width=1"], abs=1e-8)


def test_tabulated_potential_matches_analytic():
    V = gaussian_well(5.0, 1.0)
    r = np.linspace(0.0, 8.0, 4001)
    Vt = tabulated_potential(r, -5.0 * np.exp(-r**2))
    grid = default_grid(V)
    assert ground_state(Vt, grid).energy == pytest.approx(ground_state(V, grid).energy, abs=1e-7)


# ------------------------------------------------------------ continuum

@pytest.mark.parametrize("l", [0, 1, 2])
@pytest.mark.parametrize("q", [0.3, 1.0])
def test_coulomb_wave_vs_arbitrary_precision(hydrogen, hgrid, l, q):
    w = continuum_wave(hydrogen, hgrid, q, l)
    assert w.eta == pytest.approx(-1.0 / (2 * q))
    idx = np.linspace(200, w.u.size - 20, 12).astype(int)
    ref = np.array([float(mpmath.coulombf(l, w.eta, q * hgrid.r[i])) for i in idx])
    assert np.max(np.abs(w.u[idx] - ref)) < 1e-7
    assert asymptotic_mismatch(w) < 1e-7
    assert w.delta == 0.0
    assert w.sigma == pytest.approx(float(mpmath.arg(mpmath.gamma(l + 1 + 1j * w.eta))), abs=1e-12)


@pytest.mark.parametrize("key", ["0:0.2", "0:0.5", "0:1.0", "1:0.2", "1:0.5", "1:1.0"])
def test_short_range_phase_shift_vs_ode(frozen, key):
    l, q = key.split(":")
    V = gaussian_well(1.0, 1.0)
    w = continuum_wave(V, default_grid(V, r_max=60.0), float(q), int(l))
    assert w.delta == pytest.approx(frozen["gaussian_phase_shift"][key], abs=1e-8)
    assert -math.pi / 2 < w.delta <= math.pi / 2
    assert asymptotic_mismatch(w) < 1e-7


def test_free_wave_is_riccati_bessel():
    V = free_particle()
    grid = default_grid(V, r_max=50)
    w = continuum_wave(V, grid, 0.8, 2)
    assert abs(w.delta) < 1e-9
    x = 0.8 * w.r
    assert np.max(np.abs(w.u - x * spherical_jn(2, x))) < 1e-8


def test_unresolved_momentum_raises(hydrogen):
    grid = RadialGrid.with_step(60.0, 0.2)
    with pytest.raises(ResolutionError):
        continuum_wave(hydrogen, grid, 50.0, 1)


# ------------------------------------------------------ matrix elements

def test_dipole_radial_integral_vs_arbitrary_precision(hydrogen, hgrid, frozen):
    for q, ref in frozen["coulomb_dipole_integral"].items():
        assert dipole_radial_integral(hydrogen, hgrid, float(q))[0] == pytest.approx(ref, rel=1e-8)


@pytest.mark.parametrize("V", [Coulomb(1.0), Coulomb(2.0), gaussian_well(5.0, 1.0)],
                         ids=["H", "He+", "gauss"])
def test_dipole_identity(V):
    grid = default_grid(V)
    qs = np.array([0.3, 0.6, 1.0, 1.5, 2.5])
    E0 = ground_state(V, grid).energy
    lhs = (qs**2 - E0) * dipole_element(V, grid, qs)
    np.testing.assert_allclose(gradient_element(V, grid, qs)[:, 2], lhs, rtol=1e-7)
    np.testing.assert_allclose(momentum_element(V, grid, qs)[:, 2], 1j * lhs, rtol=1e-7)


@settings(max_examples=10, deadline=None)
@given(st.floats(-10, 10), st.floats(0, 5))
def test_dipole_modulus_is_gauge_invariant(a, b):
    V = Coulomb(1.0)
    grid = default_grid(V)
    qs = np.array([0.4, 0.9])
    base = dipole_element(V, grid, qs)
    gauged = dipole_element(V, grid, qs, gauge=lambda q: a + b * q * q)
    np.testing.assert_allclose(np.abs(gauged), np.abs(base), rtol=1e-13)
    np.testing.assert_allclose(gauged / base, np.exp(-1j * (a + b * qs**2)), rtol=1e-12)


def test_overlap_of_position_times_ground_state(hydrogen, hgrid):
    g = ground_state(hydrogen, hgrid)
    qs = np.array([0.5, 1.2])
    qhat = np.array([[0.6, 0.0, 0.8], [0.0, 1.0, 0.0]])
    c = dipole_element(hydrogen, hgrid, qs)
    for axis in range(3):
        ov = eigen_overlap(position_times(g, axis), hydrogen, qs)
        assert set(ov) == {(1, AXIS_TO_M[axis])}
        for i in range(2):
            amp = assemble_overlap({k: v[i] for k, v in ov.items()}, qhat[i:i + 1])[0]
            assert amp == pytest.approx(c[i] * qhat[i, axis], rel=1e-8, abs=1e-13)


def test_missing_channel(hydrogen, hgrid):
    g = ground_state(hydrogen, hgrid)
    with pytest.raises(MissingChannelError):
        eigen_overlap(position_times(g), hydrogen, 0.5, l_max=0)


def test_real_harmonics_are_cartesian_for_l1():
    d = np.array([[0.6, 0.0, 0.8], [0.0, -1.0, 0.0]])
    for axis, m in AXIS_TO_M.items():
        np.testing.assert_allclose(real_spherical_harmonic(1, m, d), math.sqrt(3 / (4 * math.pi)) * d[:, axis],
                                   atol=1e-15)


# ------------------------------------------------------ completeness / evolution

def _free_packet(grid):
    r = grid.r
    return Wavepacket(grid, {(0, 0): r * np.exp(-r**2 / 2), (1, 1): r**2 * np.exp(-(r - 1) ** 2),
                             (2, -1): 0.5j * r**3 * np.exp(-r**2 / 3)})


def test_free_completeness():
    V = free_particle()
    grid = default_grid(V, r_max=40.0)
    assert completeness_defect(_free_packet(grid), V) < 1e-8


def test_coulomb_completeness(hydrogen):
    grid = default_grid(hydrogen, r_max=1600.0)
    rep = completeness_report(position_times(ground_state(hydrogen, grid)), hydrogen)
    assert rep.defect < 1e-5
    assert rep.bound + rep.rydberg_tail + rep.continuum == pytest.approx(4.0, rel=1e-5)
    # the 2p level alone carries 2^15/3^10 * 4 ~ 55% of the norm
    assert rep.bound_levels[(1, 0)][0][1] == pytest.approx(4 * 2**15 / 3**10, rel=1e-8)


def _gaussian_exact(r, t, s=1.0):
    a = s * s + 2j * t
    return (s * s / a) ** 1.5 * np.exp(-r**2 / (2 * a))


@pytest.mark.parametrize("method", ["spectral", "propagate"])
def test_free_gaussian_evolution(method):
    V = free_particle()
    grid = default_grid(V, r_max=60.0)
    r = grid.r
    w = Wavepacket(grid, {(0, 0): r * _gaussian_exact(r, 0.0)})
    out = evolve(w, V, 2.0, method=method, dt=0.005)
    err = np.max(np.abs(out.channels[(0, 0)] - r * _gaussian_exact(r, 2.0)))
    assert err < (1e-6 if method == "spectral" else 1e-3)
    assert out.norm2() == pytest.approx(w.norm2(), rel=1e-6)


def test_bound_state_only_acquires_phase(hydrogen, hgrid):
    g = ground_state(hydrogen, hgrid)
    out = evolve(g, hydrogen, 3.0)
    np.testing.assert_allclose(out.channels[(0, 0)], np.exp(-3j * g.energy) * g.u, atol=1e-8)


def test_propagation_is_unitary(hydrogen):
    grid = default_grid(hydrogen, r_max=200.0)
    psi = position_times(ground_state(hydrogen, grid))
    outs = propagate(psi, hydrogen, [1.0, 5.0], dt=0.05)
    for o in outs:
        assert o.norm2() == pytest.approx(psi.norm2(), rel=1e-10)
