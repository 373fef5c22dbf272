import math

import numpy as np
import pytest

from ucplab.carleman import (
    FourierMode,
    ModeIndex,
    TestFunction1D,
    bump,
    carleman_mode_terms,
    conjugated_operator_check,
    exponential_envelope,
    logpolar_gradient,
    logpolar_laplacian,
    mode_field,
    sigma,
    verify_commutator_estimate,
    verify_factor_estimate,
    verify_full_carleman,
    verify_mode_ode,
    verify_weighted_reduction,
    weight_envelope,
)
from ucplab.errors import DomainError, NumericalError
from ucplab.fields import LogPolarGrid, ScalarField, VectorField
from ucplab.weights import CarlemanWeight

# frozen from tests/oracles/reference_values.py (adaptive quadrature and a BVP solver)
FACTOR_LINEAR = {16.25: 1.3490770448048326, 32.5: 1.5560303166649312}
FACTOR_LINEAR_SIGMA0 = 1.7124287278781525
COMMUTATOR = 0.00352033422409784
MODE_ODE = {0: 0.0059431347052670966, 25: 0.0049291536462906975}
WEIGHTED_REDUCTION = 0.01319167406140342
FULL_MODE = {8.25: 0.09732152256120963, 16.25: 0.07788208619985836, 32.25: 0.05717749866796665}


def test_sigma_values():
    assert sigma(2, 3) == 3.0
    assert sigma(3, 0) == 0.5
    assert ModeIndex(3, 2).sigma == 2.5
    with pytest.raises(ValueError):
        sigma(1, 0)
    with pytest.raises(ValueError):
        ModeIndex(2, -1)


def test_bump_derivatives():
    s = np.linspace(-0.95, 0.95, 201)
    b, b1, b2 = bump(s)
    step = 1e-6
    np.testing.assert_allclose((bump(s + step)[0] - bump(s - step)[0]) / (2 * step), b1, atol=1e-8)
    np.testing.assert_allclose((bump(s + step)[1] - bump(s - step)[1]) / (2 * step), b2, atol=1e-6)
    assert bump(np.array([1.0, -1.0, 2.0]))[0].tolist() == [0.0, 0.0, 0.0]


def test_test_function_support_and_seeding():
    with pytest.raises(DomainError):
        TestFunction1D(0.0, 1.0, (0.9,), (0.2,), (1.0,))
    with pytest.raises(ValueError):
        TestFunction1D(1.0, 1.0, (1.0,), (0.1,), (1.0,))
    a = TestFunction1D.seeded(7, 2.0, 4.0)
    b = TestFunction1D.seeded(7, 2.0, 4.0)
    assert a.centers == b.centers and a.amplitudes == b.amplitudes
    t = np.linspace(0, 6, 601)
    assert np.all(a(t)[(t <= 2.0) | (t >= 4.0)] == 0.0)


def test_envelope_jet_matches_differentiation():
    v = TestFunction1D.single(1.0, 3.0, envelope=exponential_envelope(2.5))
    t = np.linspace(1.2, 2.8, 41)
    phi, d0, d1, d2 = v.jet(t)
    step = 1e-5
    np.testing.assert_allclose(np.exp(-phi) * d1, (v(t + step) - v(t - step)) / (2 * step), atol=1e-8)
    np.testing.assert_allclose(np.exp(-phi) * d2, (v(t + step) - 2 * v(t) + v(t - step)) / step**2, atol=1e-4)


@pytest.mark.parametrize("tau", sorted(FACTOR_LINEAR))
def test_factor_linear_weight_oracle(tau):
    rep = verify_factor_estimate(CarlemanWeight(tau, 0.0), 3.0, TestFunction1D.single(4.0, 6.0))
    assert rep.ratio == pytest.approx(FACTOR_LINEAR[tau], rel=1e-8)


def test_factor_linear_weight_growth_exceeds_ten_percent():
    # doubling tau changes the ratio by about 15 percent for this bump
    lo = verify_factor_estimate(CarlemanWeight(16.25, 0.0), 3.0, TestFunction1D.single(4.0, 6.0)).ratio
    hi = verify_factor_estimate(CarlemanWeight(32.5, 0.0), 3.0, TestFunction1D.single(4.0, 6.0)).ratio
    assert 0.15 < hi / lo - 1 < 0.16


def test_factor_sigma_zero_oracle():
    rep = verify_factor_estimate(CarlemanWeight(16.25, 0.0), 0.0, TestFunction1D.single(4.0, 6.0))
    assert rep.ratio == pytest.approx(FACTOR_LINEAR_SIGMA0, rel=1e-8)


def test_commutator_oracle():
    rep = verify_commutator_estimate(CarlemanWeight(16.25, 1 / 16), 1.0, TestFunction1D.single(2.0, 4.0))
    assert rep.ratio == pytest.approx(COMMUTATOR, rel=1e-8)
    assert rep.details["richardson_change"] < 1e-6


@pytest.mark.parametrize("k", sorted(MODE_ODE))
def test_mode_ode_oracle(k):
    rep = verify_mode_ode(CarlemanWeight(16.25, 1 / 16), ModeIndex(2, k), TestFunction1D.single(2.0, 4.0))
    # the oracle's boundary-value solve is accurate to about 1e-7
    assert rep.ratio == pytest.approx(MODE_ODE[k], rel=1e-6)
    assert rep.details["moment_defect"] < 1e-10


def test_mode_ode_rejects_unprojected_forcing():
    with pytest.raises(NumericalError, match="orthogonal"):
        verify_mode_ode(CarlemanWeight(16.25), ModeIndex(2, 1), TestFunction1D.single(2.0, 4.0), project=False)


def test_mode_ode_zero_forcing_is_vacuous():
    g = TestFunction1D.single(2.0, 4.0, amplitude=0.0)
    rep = verify_mode_ode(CarlemanWeight(16.25), ModeIndex(2, 1), g)
    assert rep.ratio == 0.0 and rep.details["vacuous"]


def test_weighted_reduction_oracle():
    rep = verify_weighted_reduction(16.0, 16.25, [FourierMode(1, TestFunction1D.single(2.0, 4.0))])
    assert rep.ratio == pytest.approx(WEIGHTED_REDUCTION, rel=1e-5)
    assert rep.details["modes"] == [0, 2]


def test_weighted_reduction_zero_forcing():
    rep = verify_weighted_reduction(16.0, 16.25, [FourierMode(1, TestFunction1D.single(2.0, 4.0, amplitude=0.0))])
    assert rep.lhs == 0.0 and rep.ratio == 0.0
    with pytest.raises(ValueError):
        verify_weighted_reduction(2.0, 16.25, [FourierMode(1, TestFunction1D.single(2.0, 4.0))])


def test_ratios_are_homogeneous():
    v = TestFunction1D.seeded(3, 2.0, 4.0)
    w = CarlemanWeight(32.25)
    for verify in (verify_factor_estimate, verify_commutator_estimate):
        assert verify(w, 2.0, v.scaled(1e-3)).ratio == pytest.approx(verify(w, 2.0, v).ratio, rel=1e-12)
    a = verify_mode_ode(w, ModeIndex(2, 3), v).ratio
    assert verify_mode_ode(w, ModeIndex(2, 3), v.scaled(-40.0)).ratio == pytest.approx(a, rel=1e-10)


def test_large_weights_do_not_overflow():
    rep = verify_commutator_estimate(CarlemanWeight(1024.25), 3.0, TestFunction1D.single(10.0, 14.0))
    assert np.isfinite(rep.ratio) and rep.log_scale > 700


@pytest.mark.parametrize("tau", sorted(FULL_MODE))
def test_mode_reduction_matches_oracle(tau):
    rep = carleman_mode_terms(CarlemanWeight(tau, 1 / 16), 1, TestFunction1D.single(1.0, 2.0))
    assert rep.ratio == pytest.approx(FULL_MODE[tau], rel=1e-8)


def test_full_carleman_on_grid_matches_mode_reduction():
    grid = LogPolarGrid(0.5, 2.5, 1024, 32)
    u = mode_field(grid, TestFunction1D.single(1.0, 2.0), 1)
    zero = ScalarField(grid, np.zeros(grid.shape))
    ratios = [verify_full_carleman(CarlemanWeight(tau, 1 / 16), u, zero).ratio for tau in sorted(FULL_MODE)]
    for ratio, tau in zip(ratios, sorted(FULL_MODE)):
        assert ratio == pytest.approx(FULL_MODE[tau], rel=1e-3)
    assert max(ratios) / min(ratios) <= 2.0


def test_full_carleman_with_pressure_term():
    grid = LogPolarGrid(0.5, 2.5, 512, 32)
    t, th = grid.polar()
    prof = TestFunction1D.single(1.0, 2.0).profile(t)[0]
    u = VectorField(grid, np.stack([prof * np.cos(th), prof * np.sin(2 * th)]))
    f = ScalarField(grid, prof * np.cos(3 * th))
    rep = verify_full_carleman(CarlemanWeight(16.25), u, f)
    assert 0 < rep.ratio < 1 and np.isfinite(rep.log_scale)


def test_full_carleman_zero_field_and_support():
    grid = LogPolarGrid(0.5, 2.5, 256, 16)
    zero_u = VectorField(grid, np.zeros((2,) + grid.shape))
    zero_f = ScalarField(grid, np.zeros(grid.shape))
    assert verify_full_carleman(CarlemanWeight(16.25), zero_u, zero_f).ratio == 0.0
    with pytest.raises(DomainError):
        verify_full_carleman(CarlemanWeight(16.25), VectorField(grid, np.ones((2,) + grid.shape)), zero_f)


def test_logpolar_operators_on_polynomials():
    grid = LogPolarGrid(0.2, 1.5, 2048, 32)
    x1, x2 = grid.coordinates()
    lap = logpolar_laplacian(x1**2 * x2, grid)
    inner = slice(2, -2)
    np.testing.assert_allclose(lap[inner], 2 * x2[inner], atol=1e-5)
    grad = logpolar_gradient(x1 * x2, grid)
    np.testing.assert_allclose(grad[0][inner], x2[inner], atol=1e-6)
    np.testing.assert_allclose(grad[1][inner], x1[inner], atol=1e-6)


def test_conjugated_operator_identity():
    rep = conjugated_operator_check(lambda a, b: a, LogPolarGrid(0.5, 3.0, 512, 256))
    assert rep.residual <= 1e-6
    radial = conjugated_operator_check(lambda a, b: np.exp(-(a * a + b * b)), LogPolarGrid(0.5, 3.0, 512, 64))
    assert radial.relative < 1e-4
    mode = conjugated_operator_check(lambda a, b: (a**3 - 3 * a * b * b) * np.exp(-(a * a + b * b)), LogPolarGrid(0.5, 3.0, 512, 64))
    assert mode.relative < 1e-4
    with pytest.raises(NotImplementedError):
        conjugated_operator_check(lambda a, b: a, LogPolarGrid(0.5, 3.0, 64, 16), n=3)


def test_resonant_bump_separates_integer_tau():
    def ratio(w):
        v = TestFunction1D.single(14.0, 64.0, envelope=weight_envelope(w))
        centre = float(round(w(37.0)[1]))
        return verify_commutator_estimate(w, centre, v).ratio

    assert ratio(CarlemanWeight(101.0, 1e-6)) >= 10 * ratio(CarlemanWeight(101.25, 1 / 16))
