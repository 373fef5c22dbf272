"""Quantitative unique continuation diagnostics: doubling constants, frequency, global scans.

For a field ``u`` and a center ``x0``:

* doubling constant ``K(r) = ||u||_{B_2r(x0)} / ||u||_{B_r(x0)}``;
* frequency ``m(R) = -ln(||u||_{R/2 < |x-x0| < R} / ||u||_{R < |x-x0| < 2R})``.

A homogeneous field of degree ``k`` has ``K = 2^(k+1)`` and ``m = (k+1) ln 2``
at the origin.  The choice of the large parameter ``tau0`` uses a different pair
of annuli, ``2R/3 < |x| < R`` and ``R/2 < |x| < 2R``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy.optimize import brentq

from . import fields as fd
from .errors import ConfigError, DegenerateInputError, DomainError, ResolutionError
from .fields import AnnulusSpec, CartesianGrid, ScalarField, VectorField
from .lame import LameCoefficients, reduced_quantities
from .weights import CarlemanWeight, eval_weight

FREQUENCY_INNER = (0.5, 1.0)
FREQUENCY_OUTER = (1.0, 2.0)
TAU0_INNER = (2.0 / 3.0, 1.0)
TAU0_OUTER = (0.5, 2.0)


def _matvec(mat: np.ndarray, vec: np.ndarray) -> np.ndarray:
    return np.einsum("ij...,j...->i...", mat, vec)


def _norm(u, center, r_in, r_out) -> float:
    return fd.l2_norm(u, AnnulusSpec(tuple(center), r_in, r_out))


def doubling_constant(u: VectorField, x0, r: float) -> float:
    """``||u||_{B_2r(x0)} / ||u||_{B_r(x0)}``."""
    if r <= 0:
        raise ValueError("radius must be positive")
    if not u.grid.contains_disk(x0, 2 * r):
        raise DomainError(f"B_2r(x0) with r = {r} is not contained in the grid domain")
    small = _norm(u, x0, 0.0, r)
    if small == 0.0:
        raise DegenerateInputError(f"u vanishes on B_r(x0) for r = {r}")
    return _norm(u, x0, 0.0, 2 * r) / small


@dataclass(frozen=True)
class FrequencyReport:
    R: float
    inner_norm: float
    outer_norm: float
    m: float


def frequency(u: VectorField, R: float, x0=(0.0, 0.0)) -> FrequencyReport:
    """Frequency ``m = -ln(||u||_{B_R \\ B_R/2} / ||u||_{B_2R \\ B_R})``; needs ``B_2R(x0)`` inside the grid."""
    if not u.grid.contains_disk(x0, 2 * R):
        raise DomainError(f"B_2R(x0) with R = {R} is not contained in the grid domain")
    inner = _norm(u, x0, FREQUENCY_INNER[0] * R, FREQUENCY_INNER[1] * R)
    outer = _norm(u, x0, FREQUENCY_OUTER[0] * R, FREQUENCY_OUTER[1] * R)
    if inner == 0.0 or outer == 0.0:
        raise DegenerateInputError(f"u vanishes on an annulus at scale R = {R} (vanishing on an open set)")
    return FrequencyReport(R, inner, outer, -math.log(inner / outer))


@dataclass(frozen=True)
class VanishingOrder:
    slope: float
    fit_error: float


def vanishing_order(u: VectorField, radii, x0=(0.0, 0.0)) -> VanishingOrder:
    """Least-squares slope of ``ln ||u||_{B_r}`` against ``ln r`` with its standard error.

    Degree-``k`` homogeneous fields give ``k + 1``; fields with ``u(x0) != 0`` give 1.
    """
    radii = np.asarray(sorted(radii), dtype=float)
    if radii.size < 4:
        raise ValueError("vanishing_order needs at least four radii")
    norms = np.array([_norm(u, x0, 0.0, r) for r in radii])
    if np.any(norms <= 0):
        raise DegenerateInputError("u vanishes on one of the balls")
    lr, ln = np.log(radii), np.log(norms)
    coef, cov = np.polyfit(lr, ln, 1, cov="unscaled")
    resid = ln - np.polyval(coef, lr)
    dof = radii.size - 2
    err = math.sqrt(float(np.sum(resid**2)) / dof * cov[0, 0]) if dof > 0 else 0.0
    return VanishingOrder(float(coef[0]), err)


@dataclass(frozen=True)
class LowerBoundReport:
    R: float
    m: float
    C: float
    radii: tuple[float, ...]
    margins: tuple[float, ...]


def lower_bound_check(u: VectorField, R: float, r_list, x0=(0.0, 0.0)) -> LowerBoundReport:
    """Smallest ``C >= 1`` with ``||u||_{B_r} >= C^{-1} (r/R)^{C max(m, 1)} ||u||_{B_2R \\ B_R}`` for all ``r``.

    ``margins`` are ``ln ||u||_{B_r}`` minus the log of the right-hand side at the fitted ``C``.
    """
    if not u.grid.contains_disk(x0, 3 * R):
        raise DomainError("lower_bound_check needs B_3R inside the grid")
    freq = frequency(u, R, x0)
    M = max(freq.m, 1.0)
    ln_out = math.log(freq.outer_norm)
    radii = tuple(sorted(float(r) for r in r_list))
    if not radii or radii[-1] > R * (1 + 1e-12) or radii[0] <= 0:
        raise ValueError("radii must lie in (0, R]")
    ln_ball = [math.log(_norm(u, x0, 0.0, r)) for r in radii]

    def rhs(C, r):
        return -math.log(C) + C * M * math.log(r / R) + ln_out

    C = 1.0
    for r, lb in zip(radii, ln_ball):
        if rhs(C, r) <= lb:
            continue
        hi = 2.0 * C
        while rhs(hi, r) > lb:
            hi *= 2.0
        C = brentq(lambda c: rhs(c, r) - lb, C, hi, xtol=1e-14, rtol=1e-14)
    margins = tuple(lb - rhs(C, r) for r, lb in zip(radii, ln_ball))
    return LowerBoundReport(R, freq.m, C, radii, margins)


def fit_doubling_constant(pairs, form: str = "multiplicative") -> float:
    """Smallest ``C`` with ``K <= C e^{C m}`` (``multiplicative``) or ``ln K <= C (1 + m)`` (``linear``).

    ``pairs`` is an iterable of ``(K, m)``.  The multiplicative form searches
    ``C >= 1``.
    """
    pairs = [(float(K), float(m)) for K, m in pairs]
    if not pairs:
        raise ValueError("need at least one (K, m) pair")
    if form == "linear":
        worst = 0.0
        for K, m in pairs:
            if 1.0 + m <= 0.0:
                if math.log(K) > 0:
                    raise DegenerateInputError(f"no constant satisfies ln K <= C(1 + m) with m = {m}")
                continue
            worst = max(worst, math.log(K) / (1.0 + m))
        return worst
    if form != "multiplicative":
        raise ValueError("form must be 'linear' or 'multiplicative'")
    best = 1.0
    for K, m in pairs:
        target = math.log(K)
        if target <= m:  # C = 1 already works
            continue
        if m >= 0:
            hi = 2.0
            while math.log(hi) + hi * m < target:
                hi *= 2.0
            c = brentq(lambda c: math.log(c) + c * m - target, 1.0, hi)
        else:
            c_peak = -1.0 / m
            if c_peak < 1.0 or math.log(c_peak) - 1.0 < target:
                raise DegenerateInputError(f"no constant satisfies K <= C e^(C m) with K = {K}, m = {m}")
            c = brentq(lambda c: math.log(c) + c * m - target, 1.0, c_peak)
        best = max(best, c)
    return best


@dataclass(frozen=True)
class DoublingRow:
    x0: tuple[float, float]
    r: float
    K: float
    m: float
    log_slope: float | None = None


@dataclass(frozen=True)
class DoublingReport:
    """Doubling constants at the given radii with the frequency at scale ``R``.

    ``c_tilde`` is the smallest ``C`` with ``K(r) <= C e^{C m}`` over all rows and
    ``c_tilde_linear`` the smallest with ``ln K(r) <= C (1 + m)``.
    """

    x0: tuple[float, float]
    R: float
    rows: tuple[DoublingRow, ...]
    frequency: FrequencyReport
    c_tilde: float
    c_tilde_linear: float

    @property
    def max_K(self) -> float:
        return max(row.K for row in self.rows)


def doubling_scan(u: VectorField, x0, radii, R: float) -> DoublingReport:
    """Doubling constants at each admissible radius (``B_2r ⊂ B_{R/2}``) plus ``m(R)``."""
    radii = sorted(float(r) for r in radii)
    bad = [r for r in radii if 2 * r > R / 2 * (1 + 1e-12)]
    if bad:
        raise ValueError(f"radii {bad} violate B_2r ⊂ B_(R/2) for R = {R}")
    x0 = (float(x0[0]), float(x0[1]))
    freq = frequency(u, R, x0)
    Ks = [doubling_constant(u, x0, r) for r in radii]
    slopes: list[float | None] = [None] * len(radii)
    norms = [_norm(u, x0, 0.0, r) for r in radii]
    for i in range(1, len(radii)):
        slopes[i] = math.log(norms[i] / norms[i - 1]) / math.log(radii[i] / radii[i - 1])
    rows = tuple(DoublingRow(x0, r, K, freq.m, s) for r, K, s in zip(radii, Ks, slopes))
    pairs = [(K, freq.m) for K in Ks]
    return DoublingReport(x0, R, rows, freq, fit_doubling_constant(pairs), fit_doubling_constant(pairs, "linear"))


# ---------------------------------------------------------------------------
# choosing the large parameter


def tau0_norms(u: VectorField, R: float, x0=(0.0, 0.0)) -> tuple[float, float]:
    """``(||u||_{2R/3 < |x| < R}, ||u||_{R/2 < |x| < 2R})``."""
    return _norm(u, x0, TAU0_INNER[0] * R, TAU0_INNER[1] * R), _norm(u, x0, TAU0_OUTER[0] * R, TAU0_OUTER[1] * R)


def tau0_select(u: VectorField, R: float, c_prop: float = 1.0, x0=(0.0, 0.0)) -> float:
    """Smallest ``tau`` in ``N + 5/4`` with ``tau >= 2.25`` and ``tau >= c_prop ln(N1 / N2)``.

    ``N1`` and ``N2`` are the norms of ``tau0_norms``.  The first annulus lies
    inside the second, so ``N1 <= N2`` and the logarithm is never positive: the
    rule always returns ``2.25``.  ``tau0_absorption`` gives a working value.
    """
    n1, n2 = tau0_norms(u, R, x0)
    if n1 <= 0 or n2 <= 0:
        raise DegenerateInputError("annulus norms must be positive")
    return _project_tau(max(2.25, c_prop * math.log(n1 / n2)))


def _project_tau(raw: float) -> float:
    return math.ceil(raw - 1.25 - 1e-12) + 1.25


def tau0_absorption(N1: float, N2: float, R: float, C: float = 1.0, delta: float = 1.0 / 16.0, R0: float = 1.0) -> float:
    """Smallest ``tau`` in ``N + 5/4`` for which the weighted annulus term can be absorbed.

    The requirement is ``C e^{h(5R/4)} (5R/4)^{-2} N2 <= (1/2) R^{-2} e^{h(R)} N1``
    with ``h`` evaluated at ``-ln(R0 |x|)``.  Since ``h(R) - h(5R/4)`` grows linearly
    in ``tau`` this grows like ``ln(N2/N1) / ln(5/4)``.
    """
    if N1 <= 0 or N2 <= 0:
        raise DegenerateInputError("annulus norms must be positive")
    target = math.log(2.0 * C * (R / (1.25 * R)) ** 2 * N2 / N1)

    def gap(tau):
        w = CarlemanWeight(tau, delta)
        return eval_weight(w, -math.log(R0 * R))[0] - eval_weight(w, -math.log(R0 * 1.25 * R))[0]

    tau = 2.25
    for _ in range(100000):
        if gap(tau) >= target:
            return tau
        tau += 1.0
    raise DegenerateInputError("no admissible tau absorbs the annulus term")


# ---------------------------------------------------------------------------
# global scans


@dataclass(frozen=True)
class GlobalScanConfig:
    """Parameters of a propagation and doubling scan over a square domain.

    ``theta`` controls the interior margin ``4 sigma / theta`` of the
    propagation probes; doubling probes lie in ``Omega_rbar`` with radii up to
    ``vartheta * rbar / 2``.  Lattices have spacing ``sigma / 2`` unless set.
    """

    sigma: float = 0.1
    theta: float = 1.0
    rbar: float = 0.2
    vartheta: float = 1.0
    lattice_spacing: float | None = None
    doubling_radii: int = 4
    K_bound: float | None = None
    probes: tuple[tuple[float, float], ...] | None = None

    def __post_init__(self):
        for name in ("sigma", "theta", "rbar", "vartheta"):
            if not getattr(self, name) > 0:
                raise ConfigError(f"global scan parameter {name} must be positive", name)

    @property
    def spacing(self) -> float:
        return self.lattice_spacing if self.lattice_spacing is not None else 0.5 * self.sigma


@dataclass(frozen=True)
class ScanRow:
    probe: tuple[float, float]
    scale: float
    metric: str
    value: float


@dataclass(frozen=True)
class ScanReport:
    rows: tuple[ScanRow, ...]
    domain_norm: float
    h1_ratio_proxy: float
    flagged: tuple[tuple[float, float], ...] = dc_field(default_factory=tuple)

    def metric(self, name: str) -> list[ScanRow]:
        return [row for row in self.rows if row.metric == name]

    @property
    def propagation_constant(self) -> float:
        """Empirical ``C_sigma``: the smallest local-to-global mass ratio over the probes."""
        return min(row.value for row in self.metric("propagation"))

    @property
    def global_doubling(self) -> float:
        return max(row.value for row in self.metric("doubling"))


def _lattice(grid: CartesianGrid, margin: float, spacing: float) -> list[tuple[float, float]]:
    limit = grid.half_width - margin
    if limit <= 0:
        return []
    n = int(math.floor(limit / spacing - 1e-12))
    pts = [i * spacing for i in range(-n, n + 1)]
    return [(a, b) for a in pts for b in pts if max(abs(a), abs(b)) < limit]


def _h1_proxy(u: VectorField) -> float:
    w = fd.domain_weights(u.grid)
    jac = fd.jacobian(u)
    l2 = float(np.sum(w * np.sum(u.values**2, axis=0)))
    grad = float(np.sum(w * np.sum(jac**2, axis=(0, 1))))
    return math.sqrt((l2 + grad) / l2)


def global_scan(u: VectorField, config: GlobalScanConfig) -> ScanReport:
    """Mass ratios ``int_{B_sigma(x)} |u|^2 / int_Omega |u|^2`` and doubling constants over probes.

    The domain is the grid square.  ``h1_ratio_proxy`` is ``||u||_{H^1} / ||u||_{L^2}``
    on the whole square; it stands in for the fractional-norm ratio that
    controls the propagation constant and is reported as a proxy only.
    """
    grid = u.grid
    if not isinstance(grid, CartesianGrid):
        raise TypeError("global scans need a CartesianGrid field")
    w = fd.domain_weights(grid)
    dom = math.sqrt(float(np.sum(w * np.sum(u.values**2, axis=0))))
    if dom == 0.0:
        raise DegenerateInputError("u vanishes on the domain")
    margin = 4.0 * config.sigma / config.theta
    if config.probes is not None:
        probes = [tuple(map(float, p)) for p in config.probes]
        outside = [p for p in probes if max(abs(p[0]), abs(p[1])) >= grid.half_width - margin]
        if outside:
            raise ConfigError(f"probes {outside} lie outside the interior margin {margin}", "probes")
    else:
        probes = _lattice(grid, margin, config.spacing)
        if not probes:
            raise ConfigError(f"no lattice probes fit inside the interior margin {margin}", "sigma")
    rows: list[ScanRow] = []
    for p in probes:
        local = _norm(u, p, 0.0, config.sigma)
        if local == 0.0:
            raise DegenerateInputError(f"u vanishes on B_sigma({p})")
        rows.append(ScanRow(p, config.sigma, "propagation", (local / dom) ** 2))
    r_max = 0.5 * config.vartheta * config.rbar
    radii = np.geomspace(r_max / 2 ** (config.doubling_radii - 1), r_max, config.doubling_radii)
    dprobes = [p for p in _lattice(grid, config.rbar, config.spacing)]
    flagged = []
    for p in dprobes:
        worst = 0.0
        for r in radii:
            K = doubling_constant(u, p, float(r))
            worst = max(worst, K)
            rows.append(ScanRow(p, float(r), "doubling", K))
        if config.K_bound is not None and worst > config.K_bound:
            flagged.append(p)
    return ScanReport(tuple(rows), dom, _h1_proxy(u), tuple(flagged))


# ---------------------------------------------------------------------------
# cutoff


def smoothstep(s: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Degree-9 smoothstep clamped to [0, 1] with first and second derivatives.

    Four derivatives vanish at both ends, so the step is C^4 and
    ``S(1 - s) = 1 - S(s)``.
    """
    s = np.clip(s, 0.0, 1.0)
    val = s**5 * (126.0 - 420.0 * s + 540.0 * s**2 - 315.0 * s**3 + 70.0 * s**4)
    d1 = 630.0 * s**4 * (1.0 - s) ** 4
    d2 = 2520.0 * s**3 * (1.0 - s) ** 3 * (1.0 - 2.0 * s)
    return val, d1, d2


@dataclass(frozen=True)
class CutoffSpec:
    """Radial cutoff equal to 1 on ``5r/12 <= |x| <= 5 R/4`` and 0 off ``r/3 < |x| < 3R/2``."""

    r: float
    R: float
    center: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        if not (0 < self.r and 5.0 * self.r / 12.0 < 5.0 * self.R / 4.0):
            raise ValueError("cutoff needs 0 < r and 5r/12 < 5R/4")

    @property
    def inner(self) -> tuple[float, float]:
        return (self.r / 3.0, 5.0 * self.r / 12.0)

    @property
    def outer(self) -> tuple[float, float]:
        return (5.0 * self.R / 4.0, 3.0 * self.R / 2.0)


@dataclass(frozen=True, eq=False)
class Cutoff:
    spec: CutoffSpec
    chi: ScalarField
    grad: VectorField
    hessian: np.ndarray
    laplacian: ScalarField

    def support_mask(self) -> np.ndarray:
        """Nodes where ``grad chi`` can be non-zero (the two transition annuli)."""
        x1, x2 = self.chi.grid.coordinates()
        rad = np.hypot(x1 - self.spec.center[0], x2 - self.spec.center[1])
        (a0, a1), (b0, b1) = self.spec.inner, self.spec.outer
        return ((rad >= a0) & (rad <= a1)) | ((rad >= b0) & (rad <= b1))


def build_cutoff(spec: CutoffSpec, grid: CartesianGrid) -> Cutoff:
    """Sample the cutoff and its analytic gradient and Hessian on the grid.

    Raises ``ResolutionError`` when a transition annulus spans fewer than four
    grid spacings and ``DomainError`` when the support leaves the grid.
    """
    if not grid.contains_disk(spec.center, spec.outer[1]):
        raise DomainError("cutoff support exceeds the grid domain")
    h = grid.spacing
    (a0, a1), (b0, b1) = spec.inner, spec.outer
    if min(a1 - a0, b1 - b0) < 4.0 * h:
        raise ResolutionError(
            f"cutoff transition width {min(a1 - a0, b1 - b0):.3e} is below 4 grid spacings ({4 * h:.3e})"
        )
    x1, x2 = grid.coordinates()
    y1, y2 = x1 - spec.center[0], x2 - spec.center[1]
    rad = np.hypot(y1, y2)
    up, dup, ddup = smoothstep((rad - a0) / (a1 - a0))
    dn, ddn, dddn = smoothstep((rad - b0) / (b1 - b0))
    chi = up * (1.0 - dn)
    # radial derivatives of the product
    dchi = dup / (a1 - a0) * (1.0 - dn) - up * ddn / (b1 - b0)
    d2chi = ddup / (a1 - a0) ** 2 * (1.0 - dn) - 2.0 * dup * ddn / ((a1 - a0) * (b1 - b0)) - up * dddn / (b1 - b0) ** 2
    safe = np.where(rad > 0, rad, 1.0)
    e1, e2 = y1 / safe, y2 / safe
    grad = np.stack([dchi * e1, dchi * e2])
    over = np.where(rad > 0, dchi / safe, 0.0)
    unit = (e1, e2)
    hess = np.empty((2, 2, *grid.shape))
    for i in range(2):
        for j in range(2):
            hess[i, j] = d2chi * unit[i] * unit[j] + over * ((1.0 if i == j else 0.0) - unit[i] * unit[j])
    lap = hess[0, 0] + hess[1, 1]
    return Cutoff(spec, ScalarField(grid, chi), VectorField(grid, grad), hess, ScalarField(grid, lap))


@dataclass(frozen=True, eq=False)
class CutoffRHS:
    F: VectorField
    H: ScalarField
    residual_u: VectorField
    residual_p: ScalarField


def cutoff_rhs(u: VectorField, p: ScalarField, coeffs: LameCoefficients, cutoff: Cutoff) -> CutoffRHS:
    """Right-hand sides of the reduced system for the truncated pair ``(chi u, chi p)``.

    ``F = (lap chi) u + 2 (grad u) grad chi + a p grad chi - chi G`` and
    ``H = (lap chi) p + 2 grad chi . grad p + grad chi . G``.  The returned
    residuals are the discrete defects of

        lap(chi u) + grad(a chi p) = F,      lap(chi p) = H - div(chi G)

    which vanish for an exact solution up to truncation error.  ``a`` and
    ``G`` come from ``reduced_quantities(u, coeffs)``; ``p`` is passed explicitly.
    """
    grid = u.grid
    state = reduced_quantities(u, coeffs)
    chi, gchi, lchi = cutoff.chi.values, cutoff.grad.values, cutoff.laplacian.values
    a, G = state.a.values, state.G.values
    p = p.values
    jac = fd.jacobian(u)
    grad_p = fd.gradient_array(p, grid)
    F = lchi * u.values + 2.0 * _matvec(jac, gchi) + a * p * gchi - chi * G
    H = lchi * p + 2.0 * np.sum(gchi * grad_p, axis=0) + np.sum(gchi * G, axis=0)
    res_u = fd.laplacian_array(chi * u.values, grid) + fd.gradient_array(a * chi * p, grid) - F
    chiG = VectorField(grid, chi * G)
    res_p = fd.laplacian_array(chi * p, grid) - H + fd.divergence(chiG).values
    return CutoffRHS(VectorField(grid, F), ScalarField(grid, H), VectorField(grid, res_u), ScalarField(grid, res_p))
