import numpy as np
import pytest

from ucplab import fields as fd
from ucplab.fields import CartesianGrid
from ucplab.lame import CoefficientProfile, harmonic_gradient, residual_divergence
from ucplab.solver import MMS_CASES, BoundaryData, solve_dirichlet

# criterion number -> (description, value, threshold, passed); filled by test_acceptance
ACCEPTANCE: dict[int, tuple[str, float, float, bool]] = {}


@pytest.fixture(scope="session")
def acceptance():
    return ACCEPTANCE


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        desc, value, threshold, passed = ACCEPTANCE[num]
        status = "PASS" if passed else "FAIL"
        terminalreporter.write_line(f"criterion {num:2d} {status}  {desc}: value={value:.6g} threshold={threshold:.6g}")


# variable-coefficient Dirichlet problems with harmonic-gradient traces and no forcing
SOLVED_CASES = {
    "affine": (CoefficientProfile("affine", {"mu": 1.0, "mu_slope": (0.3, 0.0), "lam": 1.0}), 2, 0.6),
    "kink": (CoefficientProfile("kink", {"mu": 1.0, "mu_kink": 0.3, "lam": 1.0}), 3, 0.9),
}

_solved: dict = {}
_mms: dict = {}


def solved_case(name: str, n: int):
    """``(u, coeffs)`` for a cached variable-coefficient solve on ``[-1, 1]^2``."""
    key = (name, n)
    if key not in _solved:
        profile, degree, phase = SOLVED_CASES[name]
        grid = CartesianGrid(1.0, n)
        coeffs = profile.build(grid)
        trace = BoundaryData.dirichlet_from_field(harmonic_gradient(grid, degree, phase))
        _solved[key] = (solve_dirichlet(coeffs, trace, grid).solution, coeffs)
    return _solved[key]


def mms_solve(case: str, n: int):
    """``(u_h, exact, forcing, coeffs)`` for a cached manufactured-solution solve."""
    key = (case, n)
    if key not in _mms:
        c = MMS_CASES[case]
        grid = CartesianGrid(1.0, n)
        coeffs = c.profile.build(grid)
        exact = fd.sample(grid, c.exact)
        forcing = residual_divergence(exact, coeffs)
        rep = solve_dirichlet(coeffs, BoundaryData.dirichlet_from_field(exact), grid, forcing)
        _mms[key] = (rep.solution, exact, forcing, coeffs)
    return _mms[key]


@pytest.fixture(scope="session")
def solved():
    return solved_case


@pytest.fixture(scope="session")
def mms():
    return mms_solve


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
