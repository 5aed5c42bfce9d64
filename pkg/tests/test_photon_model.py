import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from conftest import random_rotation
from photoeffect import (Cutoff, InvalidInputError, MultiPulse, RadialWindow, TransversePulse,
                         correlation_A, correlation_E, formfactor_inner, make_pulse, omega_norm,
                         pulse_inner)
from photoeffect.errors import ResolutionError
from photoeffect.photon_model import (PulseSum, correlation_decay_time, correlation_profile,
                                      shell_profile, transversality_residual)

unit = st.floats(-1.0, 1.0)


def _unit_vector(a, b, c, d, e, f):
    v = np.array([a + 1j * d, b + 1j * e, c + 1j * f])
    n = np.linalg.norm(v)
    return v / n if n > 1e-3 else np.array([0.0, 0.0, 1.0])


# ------------------------------------------------------------------ windows

@pytest.mark.parametrize("bad", [(0.0, 1.0), (0.5, 0.5), (0.6, 0.4), (float("nan"), 1.0),
                                 (0.1, float("inf"))])
def test_window_rejects_degenerate_support(bad):
    with pytest.raises(InvalidInputError):
        RadialWindow(*bad)


def test_window_rejects_low_smoothness():
    with pytest.raises(InvalidInputError):
        RadialWindow(0.2, 0.4, smoothness=1)


@pytest.mark.parametrize("smoothness", [None, 2, 3, 5])
def test_window_support_and_peak(smoothness):
    g = RadialWindow(0.2, 0.6, smoothness, amplitude=2.5)
    assert g(np.array([0.1, 0.2, 0.6, 0.9])).tolist() == [0.0, 0.0, 0.0, 0.0]
    assert g(np.array([0.4]))[0] == pytest.approx(2.5, rel=1e-15)


@pytest.mark.parametrize("n", [2, 3, 4])
def test_polynomial_window_edge_order(n):
    # g ~ (4 s)^(n+1) at the lower edge: the first n derivatives vanish there
    g = RadialWindow(1.0, 2.0, smoothness=n)
    s = np.array([1e-4, 2e-4])
    vals = g(1.0 + s)
    assert vals[1] / vals[0] == pytest.approx(2.0 ** (n + 1), rel=1e-3)


# ------------------------------------------------------------------ pulses

@given(unit, unit, unit, unit, unit, unit, st.floats(-0.9, 0.9))
def test_transversality(a, b, c, d, e, f, tilt):
    v = _unit_vector(a, b, c, d, e, f)
    F = TransversePulse(RadialWindow(0.3, 0.9), v, 1.0, np.array([0.0, tilt, 0.0]))
    rng = np.random.default_rng(0)
    k = rng.normal(size=(64, 3))
    k *= ((0.3 + 0.6 * rng.random(64)) / np.linalg.norm(k, axis=1))[:, None]
    assert transversality_residual(F, k) < 1e-14


def test_pulse_validation():
    g = RadialWindow(0.3, 0.5)
    with pytest.raises(InvalidInputError):
        TransversePulse(g, np.array([1.0, 1.0, 0.0]))
    with pytest.raises(InvalidInputError):
        TransversePulse(g, np.array([0.0, 0.0, 1.0]), tilt=np.array([0.0, 1.0, 0.0]))
    with pytest.raises(InvalidInputError):
        make_pulse(RadialWindow(0.3, 0.5, amplitude=0.0), [0, 0, 1])
    with pytest.raises(InvalidInputError):
        MultiPulse((make_pulse(g, [0, 0, 1]),), (0,))


def test_norm_matches_radial_closed_form():
    # untilted: ||f||^2 = (8 pi/3) int g^2 omega^2 d omega for unit v
    g = RadialWindow(0.4, 0.7, smoothness=3)
    F = TransversePulse(g, np.array([0.0, 1.0, 0.0]))
    radial = quad(lambda w: g(np.array([w]))[0] ** 2 * w * w, 0.4, 0.7, epsrel=1e-13)[0]
    assert pulse_inner(F, F).real == pytest.approx(8 * math.pi / 3 * radial, rel=1e-12)
    omega = quad(lambda w: g(np.array([w]))[0] ** 2 * (w * w + w), 0.4, 0.7, epsrel=1e-13)[0]
    assert omega_norm(F) == pytest.approx(math.sqrt(8 * math.pi / 3 * omega), rel=1e-12)


def test_make_pulse_normalizes_tilted_circular_pulse():
    F = make_pulse(RadialWindow(0.3, 0.6), np.array([1.0, 1.0j, 0.0]) / math.sqrt(2),
                   tilt=[0.2, 0.0, 0.4])
    assert pulse_inner(F, F) == pytest.approx(1.0, abs=1e-13)
    assert omega_norm(F) > 1.0


def test_disjoint_pulses_are_exactly_orthogonal():
    F1 = make_pulse(RadialWindow(0.3, 0.4), [0, 0, 1])
    F2 = make_pulse(RadialWindow(0.4, 0.5), [0, 0, 1])
    assert pulse_inner(F1, F2) == 0.0
    assert MultiPulse((F1, F2), (1, 3)).gram_residual() < 1e-13


def test_orthogonal_polarizations_in_one_band():
    g = RadialWindow(0.3, 0.5)
    Fx, Fy = make_pulse(g, [1, 0, 0]), make_pulse(g, [0, 1, 0])
    assert abs(pulse_inner(Fx, Fy)) < 1e-15


@settings(max_examples=20, deadline=None)
@given(st.floats(-3, 3), st.floats(-3, 3))
def test_inner_product_sesquilinear(re, im):
    c = complex(re, im)
    F = make_pulse(RadialWindow(0.3, 0.5), [0, 0, 1], tilt=[0.3, 0, 0])
    G = make_pulse(RadialWindow(0.35, 0.6, 2), [1, 0, 0])
    assert pulse_inner(F, F.scaled(c)) == pytest.approx(c, rel=1e-12, abs=1e-14)
    assert pulse_inner(F.scaled(c), G) == pytest.approx(np.conj(c) * pulse_inner(F, G),
                                                        rel=1e-11, abs=1e-14)


def test_scaled_field_and_zero_scaling():
    F = make_pulse(RadialWindow(0.3, 0.5), [0, 1, 0])
    k = np.array([[0.2, 0.3, -0.1], [0.0, 0.0, 0.45]])
    np.testing.assert_allclose(F.scaled(2 - 1j).field(k), (2 - 1j) * F.field(k), rtol=1e-14)
    assert np.all(F.scaled(0).field(k) == 0)


def test_rotation_covariance():
    F = make_pulse(RadialWindow(0.3, 0.5), np.array([1, 1j, 0]) / math.sqrt(2), tilt=[0, 0.2, 0.1])
    R = random_rotation(np.random.default_rng(3))
    k = np.random.default_rng(4).normal(size=(10, 3)) * 0.25
    np.testing.assert_allclose(F.rotated(R).field(k @ R.T), F.field(k) @ R.T, atol=1e-14)


def test_pulse_sum_field_is_linear():
    F = make_pulse(RadialWindow(0.3, 0.5), [0, 0, 1])
    G = make_pulse(RadialWindow(0.4, 0.6), [1, 0, 0])
    S = PulseSum(((2.0, F), (1j, G)))
    k = np.array([[0.1, 0.2, 0.3], [0.0, 0.45, 0.0]])
    np.testing.assert_allclose(S.field(k), 2 * F.field(k) + 1j * G.field(k))
    assert S.support == (0.3, 0.6)


# ---------------------------------------------------------- correlations

@pytest.fixture(scope="module")
def reference_pulse():
    # unnormalized, matching the pulse used to freeze the correlation oracles
    return TransversePulse(RadialWindow(0.4, 0.6), np.array([0.0, 0.0, 1.0]))


def test_correlation_at_zero_vs_nested_quadrature(reference_pulse, frozen, kappa):
    ref = complex(*frozen["correlation_A_t0"]["z=2"])
    val = correlation_A(reference_pulse, kappa, 0.0)
    assert val[2] == pytest.approx(ref, rel=1e-10)
    assert np.max(np.abs(val[:2])) < 1e-15


@pytest.mark.parametrize("t", ["15.0", "60.0", "240.0"])
def test_correlation_in_time_vs_oscillatory_quadrature(reference_pulse, frozen, kappa, t):
    ref = complex(*frozen["correlation_A_t"][t])
    peak = abs(complex(*frozen["correlation_A_t0"]["z=2"]))
    val = correlation_A(reference_pulse, kappa, float(t))[2]
    assert abs(val - ref) < 1e-11 * peak


def test_electric_correlation_is_minus_time_derivative(reference_pulse, kappa):
    h = 1e-3
    t = np.array([3.0 - h, 3.0, 3.0 + h])
    A = correlation_A(reference_pulse, kappa, t)
    E = correlation_E(reference_pulse, kappa, 3.0)
    np.testing.assert_allclose(E, -(A[2] - A[0]) / (2 * h), rtol=1e-6, atol=1e-12)


def test_formfactor_vs_cartesian_lattice(frozen, kappa):
    F = TransversePulse(RadialWindow(0.4, 0.6), np.array([1.0, 1.0j, 0.0]) / math.sqrt(2.0),
                        1.0, np.array([0.0, 0.0, 0.3]))
    ref = np.array([complex(*c) for c in frozen["formfactor_cartesian"]["x=(0.5,-1,2),alpha=0.3,t=7"]])
    val = formfactor_inner(np.array([0.5, -1.0, 2.0]), F, kappa, 7.0, 0.3)
    assert np.max(np.abs(val - ref)) < 1e-9 * np.max(np.abs(ref))


def test_formfactor_at_origin_is_vacuum_correlation(reference_pulse, kappa):
    t = np.linspace(-20, 20, 9)
    np.testing.assert_allclose(formfactor_inner(np.zeros(3), reference_pulse, kappa, t, 0.5),
                               correlation_A(reference_pulse, kappa, t), rtol=1e-13, atol=1e-16)
    with pytest.raises(InvalidInputError):
        formfactor_inner(np.zeros(3), reference_pulse, kappa, 0.0, -1.0)


def test_shell_profile_is_rotation_covariant():
    F = make_pulse(RadialWindow(0.3, 0.5), np.array([0.0, 0.0, 1.0]), tilt=[0.5, 0, 0])
    R = random_rotation(np.random.default_rng(9))
    a = shell_profile(F, np.array([0.4]))[0]
    b = shell_profile(F.rotated(R), np.array([0.4]))[0]
    np.testing.assert_allclose(b, R @ a, atol=1e-15)


def test_profile_refuses_unresolved_times(reference_pulse, kappa):
    prof = correlation_profile(reference_pulse, kappa, 100.0)
    with pytest.raises(ResolutionError):
        prof.A(200.0)


def test_decay_time(reference_pulse, kappa):
    T = correlation_decay_time(reference_pulse, kappa, rel=1e-6)
    assert 0.0 < T < 400 * 2 * math.pi / 0.2
    t = np.linspace(T * 1.01, T * 1.5, 400)
    peak = np.max(np.linalg.norm(correlation_E(reference_pulse, kappa, np.linspace(0, 10, 50)), axis=-1))
    assert np.all(np.linalg.norm(correlation_E(reference_pulse, kappa, t), axis=-1) < 1e-6 * peak * 1.0001)


def test_cutoff():
    kap = Cutoff(2.0)
    assert kap(np.array([0.0]))[0] == 1.0
    assert kap(np.array([2.0]))[0] == pytest.approx(math.exp(-1))
    bounds = kap.moment_bounds(np.linspace(0, 20, 20001), 2)
    assert bounds[2] == pytest.approx(4.0 * math.exp(-1), rel=1e-6)  # max of k^2 exp(-k^2/4)
    with pytest.raises(InvalidInputError):
        Cutoff(0.0)
