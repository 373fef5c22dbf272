"""The isotropic Lamé operator in divergence form and its reduced (u, p) system.

The operator acting on a displacement ``u`` is

    div(mu (grad u + grad u^T)) + grad(lam div u) + rho u

which expands to

    mu lap u + grad((lam + mu) div u) + (grad u + grad u^T) grad mu - (div u) grad mu + rho u.

With ``a = (lam + mu)/(lam + 2 mu)`` and ``p = ((lam + 2 mu)/mu) div u`` a solution
satisfies the pair of equations

    lap u + grad(a p) + G = 0,      lap p + div G = 0,

where ``G`` collects the lower-order terms (see ``reduced_quantities``).
"""

from __future__ import annotations

from dataclasses import dataclass, field as dc_field

import numpy as np

from . import fields as fd
from .errors import DegenerateInputError, ValidationError
from .fields import AnnulusSpec, CartesianGrid, ScalarField, VectorField


# ---------------------------------------------------------------------------
# coefficients


@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    margin: float
    witness_index: tuple[int, int] | None = None
    witness_point: tuple[float, float] | None = None


@dataclass(frozen=True)
class ValidationReport:
    checks: tuple[CheckResult, ...]

    @property
    def passed(self) -> bool:
        return all(c.passed for c in self.checks)

    def failures(self) -> list[CheckResult]:
        return [c for c in self.checks if not c.passed]

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


@dataclass(frozen=True, eq=False)
class LameCoefficients:
    """Nodal ``mu``, ``lam`` and ``rho`` on a common Cartesian grid.

    ``delta0`` and ``M0`` are the declared ellipticity and size bounds;
    ``convexity_delta`` (defaults to ``delta0``) is the bound used for the
    strong-convexity check required by traction problems.
    """

    mu: ScalarField
    lam: ScalarField
    rho: ScalarField
    delta0: float
    M0: float
    convexity_delta: float | None = None
    name: str = "custom"

    def __post_init__(self):
        grids = {self.mu.grid, self.lam.grid, self.rho.grid}
        if len(grids) != 1:
            raise ValueError("mu, lam and rho must share one grid")
        if not isinstance(self.mu.grid, CartesianGrid):
            raise TypeError("coefficients live on a CartesianGrid")
        if not (self.delta0 > 0 and self.M0 > 0):
            raise ValueError("delta0 and M0 must be positive")

    @property
    def grid(self) -> CartesianGrid:
        return self.mu.grid

    def validate(self, check_convexity: bool = False) -> ValidationReport:
        return validate_coefficients(self, check_convexity=check_convexity)

    def require_valid(self, check_convexity: bool = False) -> None:
        report = self.validate(check_convexity)
        if not report.passed:
            bad = report.failures()[0]
            raise ValidationError(
                f"coefficient check '{bad.name}' failed with margin {bad.margin:.3e} "
                f"at node {bad.witness_index} (x = {bad.witness_point})"
            )


def _argmin_check(name, margin_field: np.ndarray, grid: CartesianGrid) -> CheckResult:
    idx = np.unravel_index(int(np.argmin(margin_field)), margin_field.shape)
    a = grid.axis
    margin = float(margin_field[idx])
    return CheckResult(name, margin >= 0.0, margin, (int(idx[0]), int(idx[1])), (float(a[idx[0]]), float(a[idx[1]])))


def lipschitz_seminorm(field: ScalarField) -> float:
    """Largest difference quotient over grid edges."""
    v = field.values
    h = field.grid.spacing
    return float(max(np.max(np.abs(np.diff(v, axis=0))), np.max(np.abs(np.diff(v, axis=1)))) / h)


def validate_coefficients(coeffs: LameCoefficients, check_convexity: bool = False) -> ValidationReport:
    """Check ellipticity, the size bound and (optionally) strong convexity.

    Each check reports its smallest margin and the node where it is attained.
    """
    grid = coeffs.grid
    mu, lam, rho = coeffs.mu.values, coeffs.lam.values, coeffs.rho.values
    d0 = coeffs.delta0
    checks = [
        _argmin_check("mu_lower", mu - d0, grid),
        _argmin_check("lam_plus_2mu_lower", lam + 2.0 * mu - d0, grid),
    ]
    size = float(np.max(np.abs(mu))) + lipschitz_seminorm(coeffs.mu) + float(np.max(np.abs(lam)))
    checks.append(CheckResult("size_bound", size <= coeffs.M0, coeffs.M0 - size))
    rho_sup = float(np.max(np.abs(rho)))
    checks.append(CheckResult("rho_bound", rho_sup <= coeffs.M0, coeffs.M0 - rho_sup))
    if check_convexity:
        dc = coeffs.convexity_delta if coeffs.convexity_delta is not None else d0
        checks.append(_argmin_check("convexity_mu", mu - dc, grid))
        checks.append(_argmin_check("convexity_2mu_plus_n_lam", 2.0 * mu + 2.0 * lam - dc, grid))
    return ValidationReport(tuple(checks))


# ---------------------------------------------------------------------------
# coefficient profiles


@dataclass(frozen=True)
class CoefficientProfile:
    """A named family of coefficient fields.

    Supported kinds and their parameters:

    * ``constant``: ``mu``, ``lam``, ``rho``
    * ``affine``: ``mu``, ``mu_slope`` (pair), ``lam``, ``rho``
    * ``radial-lipschitz``: ``mu``, ``mu_radial`` (``mu + c |x|``), ``lam``, ``rho``
    * ``kink``: ``mu``, ``mu_kink`` (``mu + c |x1|``), ``lam``, ``rho``
    * ``bounded-oscillatory``: smooth ``mu`` as ``affine`` plus
      ``lam + lam_amplitude * sign(sin(lam_frequency * x1))``
    """

    kind: str
    params: dict = dc_field(default_factory=dict)
    delta0: float = 0.5
    M0: float = 10.0

    KINDS = ("constant", "affine", "radial-lipschitz", "kink", "bounded-oscillatory")

    def __post_init__(self):
        if self.kind not in self.KINDS:
            raise ValueError(f"unknown coefficient profile {self.kind!r}; choose from {self.KINDS}")

    def build(self, grid: CartesianGrid) -> LameCoefficients:
        p = self.params
        x1, x2 = grid.coordinates()
        mu = np.full(grid.shape, float(p.get("mu", 1.0)))
        lam = np.full(grid.shape, float(p.get("lam", 1.0)))
        rho = np.full(grid.shape, float(p.get("rho", 0.0)))
        if self.kind in ("affine", "bounded-oscillatory"):
            s1, s2 = p.get("mu_slope", (0.0, 0.0))
            mu = mu + s1 * x1 + s2 * x2
        if self.kind == "radial-lipschitz":
            mu = mu + float(p.get("mu_radial", 0.0)) * np.hypot(x1, x2)
        if self.kind == "kink":
            mu = mu + float(p.get("mu_kink", 0.0)) * np.abs(x1)
        if self.kind == "bounded-oscillatory":
            amp = float(p.get("lam_amplitude", 0.0))
            freq = float(p.get("lam_frequency", 1.0))
            lam = lam + amp * np.sign(np.sin(freq * x1))
        return LameCoefficients(
            ScalarField(grid, mu),
            ScalarField(grid, lam),
            ScalarField(grid, rho),
            self.delta0,
            self.M0,
            name=self.kind,
        )


def constant_coefficients(grid: CartesianGrid, mu=1.0, lam=1.0, rho=0.0, delta0=0.5, M0=10.0) -> LameCoefficients:
    return CoefficientProfile("constant", {"mu": mu, "lam": lam, "rho": rho}, delta0, M0).build(grid)


# ---------------------------------------------------------------------------
# residuals


def _stress_pieces(u: VectorField, order: int = 2):
    jac = fd.jacobian(u, order)
    div = jac[0, 0] + jac[1, 1]
    sym = jac + np.swapaxes(jac, 0, 1)
    return jac, div, sym


def _matvec(mat: np.ndarray, vec: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,j...->i...", mat, vec)


def residual_divergence(u: VectorField, coeffs: LameCoefficients, order: int = 4) -> VectorField:
    """Pointwise residual of the non-divergence expansion of the Lamé operator.

    Derivatives of ``u`` use stencils of the given order (4 by default); ``mu``
    is differentiated with second-order differences so that merely Lipschitz
    profiles are not amplified.  ``lam`` is never differentiated on its own.
    """
    grid = coeffs.grid
    if u.grid != grid:
        raise ValueError("u and coefficients must share one grid")
    mu, lam, rho = coeffs.mu.values, coeffs.lam.values, coeffs.rho.values
    _, div, sym = _stress_pieces(u, order)
    grad_mu = fd.gradient_array(mu, grid)
    out = (
        mu * fd.laplacian_array(u.values, grid, order)
        + fd.gradient_array((lam + mu) * div, grid, order)
        + _matvec(sym, grad_mu)
        - div * grad_mu
        + rho * u.values
    )
    return VectorField(grid, out)


def relative_residual(u: VectorField, coeffs: LameCoefficients, fraction: float = 0.8) -> float:
    """``||residual|| / ||u||`` over the ball of radius ``fraction * L``."""
    region = AnnulusSpec.ball((0.0, 0.0), fraction * coeffs.grid.half_width)
    unorm = fd.l2_norm(u, region)
    if unorm == 0.0:
        raise DegenerateInputError("u vanishes on the residual region")
    return fd.l2_norm(residual_divergence(u, coeffs), region) / unorm


@dataclass(frozen=True, eq=False)
class ReducedState:
    """The reduced unknowns of a displacement field.

    ``a`` and ``p`` are scalar fields and ``G`` the lower-order vector field.
    """

    a: ScalarField
    p: ScalarField
    G: VectorField


def reduced_quantities(u: VectorField, coeffs: LameCoefficients) -> ReducedState:
    """Compute ``a``, ``p`` and ``G`` from ``u``.

    ``G = (grad u + grad u^T) grad mu / mu - div u (grad mu / mu + (lam + mu) grad(1/mu)) + rho u / mu``
    """
    report = coeffs.validate()
    for name in ("mu_lower", "lam_plus_2mu_lower"):
        if not report[name].passed:
            raise ValidationError(f"reduction needs {name}; margin {report[name].margin:.3e}")
    grid = coeffs.grid
    mu, lam, rho = coeffs.mu.values, coeffs.lam.values, coeffs.rho.values
    _, div, sym = _stress_pieces(u)
    grad_mu = fd.gradient_array(mu, grid)
    grad_inv_mu = -grad_mu / mu**2
    a = (lam + mu) / (lam + 2.0 * mu)
    p = (lam + 2.0 * mu) / mu * div
    G = _matvec(sym, grad_mu) / mu - div * (grad_mu / mu + (lam + mu) * grad_inv_mu) + rho * u.values / mu
    return ReducedState(ScalarField(grid, a), ScalarField(grid, p), VectorField(grid, G))


def reduced_residuals(u: VectorField, state: ReducedState) -> tuple[VectorField, ScalarField]:
    """``res_u = lap u + grad(a p) + G`` and ``res_p = lap p + div G``."""
    grid = u.grid
    a, p, G = state.a.values, state.p.values, state.G.values
    res_u = fd.laplacian_array(u.values, grid) + fd.gradient_array(a * p, grid) + G
    res_p = fd.laplacian_array(p, grid) + fd.divergence(state.G).values
    return VectorField(grid, res_u), ScalarField(grid, res_p)


# ---------------------------------------------------------------------------
# Caccioppoli ratio


def caccioppoli_ratio(
    u: VectorField,
    p: ScalarField,
    r: float,
    radii: tuple[float, float, float, float] = (1.0 / 3.0, 1.0 / 2.0, 1.0 / 4.0, 2.0 / 3.0),
    center=(0.0, 0.0),
) -> float:
    """Ratio of the weighted energy on an annulus to the L2 mass on a wider annulus.

    With ``radii = (a1, a2, a3, a4)`` and ``rho = |x - center|`` the numerator is
    the integral over ``a1 r < rho < a2 r`` of
    ``|u|^2 + rho^2 |p|^2 + rho^2 |grad u|^2 + rho^4 |grad p|^2`` and the
    denominator the integral of ``|u|^2`` over ``a3 r < rho < a4 r``.
    """
    a1, a2, a3, a4 = radii
    if not (a3 < a1 < a2 < a4):
        raise ValueError("Caccioppoli radii must satisfy a3 < a1 < a2 < a4")
    grid = u.grid
    x1, x2 = grid.coordinates()
    rho2 = (x1 - center[0]) ** 2 + (x2 - center[1]) ** 2
    jac = fd.jacobian(u)
    grad_p = fd.gradient_array(p.values, grid)
    u2 = np.sum(u.values**2, axis=0)
    p2 = p.values**2
    num_density = u2 + rho2 * p2 + rho2 * np.sum(jac**2, axis=(0, 1)) + rho2**2 * np.sum(grad_p**2, axis=0)
    den_density = u2
    num = fd.integrate(ScalarField(grid, num_density), AnnulusSpec(center, a1 * r, a2 * r))
    den = fd.integrate(ScalarField(grid, den_density), AnnulusSpec(center, a3 * r, a4 * r))
    if den <= 0.0:
        raise DegenerateInputError("u vanishes on the outer annulus")
    return num / den


# ---------------------------------------------------------------------------
# exact solutions


def harmonic_gradient(grid, degree: int, phase: float = 0.0) -> VectorField:
    """``grad Re(e^{-i phase} z^degree)``: a Lamé solution for constant coefficients and ``rho = 0``.

    The field is homogeneous of degree ``degree - 1`` with ``|u| = degree |x|^(degree-1)``.
    """
    if degree < 1:
        raise ValueError("degree must be at least 1")
    x1, x2 = grid.coordinates()
    w = degree * np.exp(-1j * phase) * (x1 + 1j * x2) ** (degree - 1)
    return VectorField(grid, np.stack([w.real, -w.imag]))


def rigid_motion(grid, shift=(0.0, 0.0), rotation: float = 0.0) -> VectorField:
    """``c + W x`` with ``W`` the skew matrix of angular rate ``rotation``."""
    x1, x2 = grid.coordinates()
    return VectorField(grid, np.stack([shift[0] - rotation * x2, shift[1] + rotation * x1]))


def solution_library(grid: CartesianGrid, max_degree: int = 6) -> list[tuple[str, VectorField]]:
    """Exact constant-coefficient solutions: harmonic gradients and rigid motions."""
    lib = [(f"harmonic-gradient-{d}", harmonic_gradient(grid, d, phase=0.3 * d)) for d in range(1, max_degree + 1)]
    lib.append(("rigid-translation", rigid_motion(grid, (0.7, -0.4), 0.0)))
    lib.append(("rigid-rotation", rigid_motion(grid, (0.1, 0.2), 0.9)))
    return lib


def homogeneous_degree_check(u: VectorField, k: float, center=(0.0, 0.0), r: float = 0.25) -> float:
    """Relative deviation of ``||u||_{B_2r} / ||u||_{B_r}`` from its homogeneous value ``2^(k+1)``."""
    big = fd.l2_norm(u, AnnulusSpec.ball(center, 2 * r))
    small = fd.l2_norm(u, AnnulusSpec.ball(center, r))
    if small == 0.0:
        raise DegenerateInputError("u vanishes on the small ball")
    return abs(big / small / 2.0 ** (k + 1) - 1.0)

