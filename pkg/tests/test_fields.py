import math

import numpy as np
import pytest

from ucplab import fields as fd
from ucplab.errors import DomainError
from ucplab.fields import AnnulusSpec, CartesianGrid, LogPolarGrid, ScalarField, VectorField


def test_grid_geometry():
    g = CartesianGrid(1.0, 33)
    assert g.spacing == pytest.approx(2.0 / 32)
    x1, x2 = g.coordinates()
    assert x1[16, 16] == 0.0 and x2[16, 16] == 0.0
    with pytest.raises(ValueError):
        CartesianGrid(1.0, 15)
    with pytest.raises(ValueError):
        LogPolarGrid(0.0, 1.0, 15, 32)
    with pytest.raises(DomainError):
        LogPolarGrid(-0.1, 1.0, 32, 32)


def test_fields_are_immutable_and_finite():
    g = CartesianGrid(1.0, 17)
    f = ScalarField(g, np.zeros(g.shape))
    with pytest.raises(ValueError):
        f.values[0, 0] = 1.0
    with pytest.raises(ValueError):
        ScalarField(g, np.full(g.shape, np.nan))
    with pytest.raises(ValueError):
        VectorField(g, np.zeros(g.shape))


def test_l2_norm_of_constant_on_annulus():
    g = CartesianGrid(2.5, 401)
    one = ScalarField(g, np.ones(g.shape))
    assert fd.l2_norm(one, AnnulusSpec((0, 0), 1.0, 2.0)) == pytest.approx(math.sqrt(3 * math.pi), rel=1e-12)


def test_l2_norm_of_radial_field():
    g = CartesianGrid(1.0, 513)
    u = fd.sample(g, lambda a, b: (a, b))
    # (int_0^1 r^2 2 pi r dr)^(1/2)
    assert fd.l2_norm(u, AnnulusSpec.ball((0, 0), 1.0)) == pytest.approx(1.2533141373155001, rel=2e-5)


def test_zero_measure_region():
    g = CartesianGrid(1.0, 65)
    u = fd.sample(g, lambda a, b: np.exp(a) + b)
    assert fd.l2_norm(u, AnnulusSpec((0, 0), 0.3, 0.3)) == 0.0


def test_region_outside_grid_raises():
    g = CartesianGrid(1.0, 65)
    one = ScalarField(g, np.ones(g.shape))
    with pytest.raises(DomainError):
        fd.l2_norm(one, AnnulusSpec.ball((0.5, 0.0), 0.6))


def test_ball_area_accuracy():
    g = CartesianGrid(1.0, 129)
    one = ScalarField(g, np.ones(g.shape))
    for r in (10 * g.spacing, 0.37, 0.9):
        area = fd.l2_norm(one, AnnulusSpec.ball((0.05, -0.1), r)) ** 2 if r < 0.9 else fd.l2_norm(one, AnnulusSpec.ball((0, 0), r)) ** 2
        assert abs(area / (math.pi * r * r) - 1.0) <= 2.0 / g.points_per_side


def test_additivity_over_annuli():
    g = CartesianGrid(1.0, 101)
    u = fd.sample(g, lambda a, b: (np.sin(3 * a) + b, a * b))
    outer = fd.l2_norm(u, AnnulusSpec.ball((0, 0), 0.8)) ** 2
    inner = fd.l2_norm(u, AnnulusSpec.ball((0, 0), 0.35)) ** 2
    ring = fd.l2_norm(u, AnnulusSpec((0, 0), 0.35, 0.8)) ** 2
    assert abs(outer - inner - ring) <= 1e-12 * outer


def test_norm_monotone_in_nesting():
    g = CartesianGrid(1.0, 65)
    u = fd.sample(g, lambda a, b: np.cos(5 * a * b))
    radii = np.linspace(0.05, 0.95, 12)
    norms = [fd.l2_norm(u, AnnulusSpec.ball((0, 0), r)) for r in radii]
    assert all(b >= a for a, b in zip(norms, norms[1:]))


def test_norm_converges_at_second_order():
    # ||e^{x1}||^2 on B_0.5 = 2 pi * int_0^0.5 I_0(2r) r dr
    from scipy.integrate import quad
    from scipy.special import i0

    exact = math.sqrt(2 * math.pi * quad(lambda r: i0(2 * r) * r, 0, 0.5, epsrel=1e-13)[0])
    errs = []
    for n in (65, 129, 257):
        g = CartesianGrid(1.0, n)
        u = fd.sample(g, lambda a, b: np.exp(a))
        errs.append(abs(fd.l2_norm(u, AnnulusSpec.ball((0, 0), 0.5)) - exact))
    assert math.log2(errs[0] / errs[1]) > 1.8
    assert math.log2(errs[1] / errs[2]) > 1.8


def test_divergence_exact_on_affine():
    g = CartesianGrid(1.0, 33)
    u = fd.sample(g, lambda a, b: (a, -b))
    assert np.abs(fd.divergence(u).values).max() < 1e-13


def test_gradient_exact_on_quadratic_interior():
    g = CartesianGrid(1.0, 33)
    f = fd.sample(g, lambda a, b: a * a)
    x1, _ = g.coordinates()
    grad = fd.gradient(f).values
    assert np.abs(grad[0, 1:-1, 1:-1] - 2 * x1[1:-1, 1:-1]).max() < 1e-13


def test_gradient_error_second_order():
    errs = []
    for n in (33, 65, 129):
        g = CartesianGrid(1.0, n)
        x1, _ = g.coordinates()
        grad = fd.gradient(fd.sample(g, lambda a, b: np.sin(a))).values
        errs.append(np.abs(grad[0, 1:-1, 1:-1] - np.cos(x1[1:-1, 1:-1])).max())
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=0.05)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=0.05)


def test_fourth_order_stencils():
    errs = []
    for n in (33, 65):
        g = CartesianGrid(1.0, n)
        x1, x2 = g.coordinates()
        v = np.sin(x1) * np.cos(x2)
        lap = fd.laplacian_array(v, g, order=4)
        errs.append(np.abs(lap + 2 * v).max())
    assert math.log2(errs[0] / errs[1]) > 3.5


def test_discrete_derivatives_bundle():
    g = CartesianGrid(1.0, 33)
    u = fd.sample(g, lambda a, b: (a * b, a - b))
    d = fd.discrete_derivatives(u)
    x1, x2 = g.coordinates()
    np.testing.assert_allclose(d.divergence, x2 - 1.0, atol=1e-12)
    s = fd.discrete_derivatives(fd.sample(g, lambda a, b: a * a + 3 * b * b))
    np.testing.assert_allclose(s.laplacian[1:-1, 1:-1], 8.0, atol=1e-10)
    np.testing.assert_allclose(s.hessian[0, 1][2:-2, 2:-2], 0.0, atol=1e-10)


def test_interpolate_nodes_and_affine():
    g = CartesianGrid(1.0, 17)
    f = fd.sample(g, lambda a, b: 2 * a - 3 * b + 0.5)
    x1, x2 = g.coordinates()
    assert fd.interpolate(f, (x1[3, 7], x2[3, 7])) == pytest.approx(f.values[3, 7], abs=1e-14)
    h = g.spacing
    p = (x1[3, 7] + h / 2, x2[3, 7] + h / 2)
    assert fd.interpolate(f, p) == pytest.approx(2 * p[0] - 3 * p[1] + 0.5, abs=1e-13)
    u = fd.sample(g, lambda a, b: (a, b))
    np.testing.assert_allclose(fd.interpolate(u, (0.11, -0.27)), [0.11, -0.27], atol=1e-14)


def test_interpolate_quadratic_second_order():
    errs = []
    for n in (17, 33, 65):
        g = CartesianGrid(1.0, n)
        f = fd.sample(g, lambda a, b: a * a)
        x1, _ = g.coordinates()
        c = x1[5, 0] + g.spacing / 2
        errs.append(abs(fd.interpolate(f, (c, 0.0)) - c * c))
    assert errs[0] / errs[1] == pytest.approx(4.0, rel=1e-6)
    assert errs[1] / errs[2] == pytest.approx(4.0, rel=1e-6)


def test_interpolate_outside_raises():
    g = CartesianGrid(1.0, 17)
    f = fd.sample(g, lambda a, b: a)
    with pytest.raises(DomainError):
        fd.interpolate(f, (1.2, 0.0))


def test_logpolar_interpolation_and_quadrature():
    g = LogPolarGrid(0.1, 2.0, 256, 64)
    x1, x2 = g.coordinates()
    f = ScalarField(g, x1 + 0.0 * x2)
    t, th = g.t[10], g.theta[5]
    assert fd.interpolate(f, (math.exp(-t) * math.cos(th), math.exp(-t) * math.sin(th))) == pytest.approx(f.values[10, 5])
    one = ScalarField(g, np.ones(g.shape))
    r_in, r_out = math.exp(-1.5), math.exp(-0.5)
    assert fd.l2_norm(one, AnnulusSpec((0, 0), r_in, r_out)) ** 2 == pytest.approx(math.pi * (r_out**2 - r_in**2), rel=1e-12)


def test_polar_theta_derivative_is_spectral():
    g = LogPolarGrid(0.0, 1.0, 16, 32)
    _, th = g.polar()
    v = np.cos(3 * th)
    np.testing.assert_allclose(fd.polar_d_theta(v, g, 2), -9 * v, atol=1e-11)
    np.testing.assert_allclose(fd.polar_d_theta(v, g, 1), -3 * np.sin(3 * th), atol=1e-11)


def test_field_csv_round_trip(tmp_path):
    g = CartesianGrid(0.5, 17)
    u = fd.sample(g, lambda a, b: (np.sin(a) / 3, b**2))
    fd.write_field_csv(u, tmp_path / "u.csv")
    back = fd.read_field_csv(tmp_path / "u.csv")
    assert back.grid == g
    np.testing.assert_array_equal(back.values, u.values)
    lg = LogPolarGrid(0.2, 1.3, 16, 16)
    s = ScalarField(lg, np.arange(256.0).reshape(16, 16) / 7)
    fd.write_field_csv(s, tmp_path / "s.csv")
    back = fd.read_field_csv(tmp_path / "s.csv")
    assert back.grid == lg
    np.testing.assert_array_equal(back.values, s.values)
    assert (tmp_path / "u.csv").read_text().startswith("# grid=cartesian")
