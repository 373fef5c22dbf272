"""Numerical verification of weighted (Carleman-type) estimates.

Every verifier builds the two sides of one inequality for concrete data and
returns their ratio ``LHS / RHS``.  The estimates hold with a constant
independent of ``tau`` exactly when the ratio stays bounded as ``tau`` grows.

Weighted integrals involve ``e^{2h}`` with ``h`` up to several thousand, so all
quadratures are carried out on ``exp(log_weight - shift)`` with a common shift;
``RatioReport.log_scale`` records it so ``lhs * e^{log_scale}`` is the true value.

One-dimensional integrals run over the logarithmic radial variable ``t``;
two-dimensional ones use a ``LogPolarGrid`` with ``dx = e^{-2t} dt dtheta``
and ``lap = e^{2t}(d_tt + d_theta theta)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field
from typing import Callable

import numpy as np
from scipy.signal import lfilter

from . import fields as fd
from .errors import DomainError, NumericalError
from .fields import LogPolarGrid, ScalarField, VectorField
from .weights import CarlemanWeight, eval_weight

DEFAULT_RESOLUTION = 2**16


def sigma(n: int, k: int) -> float:
    """``(n - 2)/2 + k``: square root of the k-th eigenvalue of ``-lap_S + ((n-2)/2)^2``."""
    if n < 2 or k < 0:
        raise ValueError("need n >= 2 and k >= 0")
    return (n - 2) / 2.0 + k


@dataclass(frozen=True)
class ModeIndex:
    n: int
    k: int

    def __post_init__(self):
        if self.n < 2 or self.k < 0:
            raise ValueError("mode index needs n >= 2 and k >= 0")

    @property
    def sigma(self) -> float:
        return sigma(self.n, self.k)


# ---------------------------------------------------------------------------
# test functions


def bump(s):
    """``exp(-1/(1 - s^2))`` on ``|s| < 1`` with its first two derivatives."""
    s = np.asarray(s, dtype=float)
    inside = np.abs(s) < 1.0
    q = np.where(inside, 1.0 - s * s, 1.0)
    b = np.where(inside, np.exp(-1.0 / q), 0.0)
    b1 = b * (-2.0 * s / q**2)
    b2 = b * (6.0 * s**4 - 2.0) / q**4
    return b, np.where(inside, b1, 0.0), np.where(inside, b2, 0.0)


Envelope = Callable[[np.ndarray], tuple[np.ndarray, np.ndarray, np.ndarray]]


def exponential_envelope(rate: float) -> Envelope:
    """``phi(t) = rate * t``."""

    def env(t):
        return rate * t, np.full_like(t, rate), np.zeros_like(t)

    env.description = f"exp(-{rate!r} t)"
    return env


def weight_envelope(w: CarlemanWeight, offset: float = 0.0) -> Envelope:
    """``phi(t) = h(t) - offset``: a test function written in the weight's own frame."""

    def env(t):
        h, h1, h2 = eval_weight(w, t)
        return h - offset, h1, h2

    env.description = f"exp(-h) for tau={w.tau!r}, delta={w.delta!r}"
    return env


@dataclass(frozen=True, eq=False)
class TestFunction1D:
    """``v(t) = e^{-phi(t)} * sum_i A_i b((t - c_i)/w_i)`` with ``b`` the standard bump.

    The bumps lie inside ``(t0, t1)``.  ``envelope`` (optional) returns
    ``(phi, phi', phi'')``; it lets a profile carry an exponential factor far
    beyond floating-point range without ever forming it.
    """

    t0: float
    t1: float
    centers: tuple[float, ...]
    widths: tuple[float, ...]
    amplitudes: tuple[float, ...]
    seed: int | None = None
    envelope: Envelope | None = None

    __test__ = False  # not a pytest class

    def __post_init__(self):
        if not self.t1 > self.t0:
            raise ValueError("support must have t1 > t0")
        if not (len(self.centers) == len(self.widths) == len(self.amplitudes) >= 1):
            raise ValueError("need matching, non-empty bump parameter lists")
        for c, w in zip(self.centers, self.widths):
            if w <= 0 or c - w < self.t0 - 1e-12 or c + w > self.t1 + 1e-12:
                raise DomainError(f"bump centered at {c} with half-width {w} leaves ({self.t0}, {self.t1})")

    @classmethod
    def seeded(cls, seed: int, t0: float, t1: float, max_bumps: int = 3, envelope: Envelope | None = None):
        """Deterministic random sum of one to ``max_bumps`` bumps on ``(t0, t1)``."""
        rng = np.random.default_rng(seed)
        count = int(rng.integers(1, max_bumps + 1))
        half = 0.5 * (t1 - t0)
        widths = rng.uniform(0.25, 1.0, count) * half
        centers = [rng.uniform(t0 + w, t1 - w) for w in widths]
        amps = rng.uniform(0.5, 1.5, count) * rng.choice([-1.0, 1.0], count)
        return cls(t0, t1, tuple(map(float, centers)), tuple(map(float, widths)), tuple(map(float, amps)), seed, envelope)

    @classmethod
    def single(cls, t0: float, t1: float, amplitude: float = 1.0, envelope: Envelope | None = None):
        """One bump filling ``(t0, t1)``."""
        return cls(t0, t1, (0.5 * (t0 + t1),), (0.5 * (t1 - t0),), (float(amplitude),), None, envelope)

    def scaled(self, factor: float) -> "TestFunction1D":
        amps = tuple(factor * a for a in self.amplitudes)
        return TestFunction1D(self.t0, self.t1, self.centers, self.widths, amps, self.seed, self.envelope)

    def profile(self, t):
        """Bump sum and its first two derivatives (no envelope)."""
        t = np.asarray(t, dtype=float)
        b0 = np.zeros_like(t)
        b1 = np.zeros_like(t)
        b2 = np.zeros_like(t)
        for c, w, a in zip(self.centers, self.widths, self.amplitudes):
            v0, v1, v2 = bump((t - c) / w)
            b0 += a * v0
            b1 += a * v1 / w
            b2 += a * v2 / (w * w)
        return b0, b1, b2

    def jet(self, t):
        """``(phi, d0, d1, d2)`` with ``v^{(j)}(t) = e^{-phi(t)} d_j(t)``."""
        b0, b1, b2 = self.profile(t)
        if self.envelope is None:
            return np.zeros_like(b0), b0, b1, b2
        p0, p1, p2 = self.envelope(np.asarray(t, dtype=float))
        d1 = b1 - p1 * b0
        d2 = b2 - 2.0 * p1 * b1 + (p1 * p1 - p2) * b0
        return p0, b0, d1, d2

    def __call__(self, t):
        phi, d0, _, _ = self.jet(t)
        return np.exp(-phi) * d0


# ---------------------------------------------------------------------------
# reports and quadrature


@dataclass(frozen=True)
class RatioReport:
    estimate: str
    tau: float
    sigma: float
    lhs: float
    rhs: float
    ratio: float
    resolution: int
    log_scale: float = 0.0
    details: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        if not (np.isfinite(self.lhs) and np.isfinite(self.rhs) and self.lhs >= 0 and self.rhs >= 0):
            raise NumericalError(f"{self.estimate}: non-finite or negative sides ({self.lhs}, {self.rhs})")


def _shift(log_weights, densities) -> float:
    """Largest ``log_weight + log(density)`` over all terms, used to normalize."""
    best = -np.inf
    for lw, dens in zip(log_weights, densities):
        with np.errstate(divide="ignore"):
            cand = lw + np.log(np.abs(dens))
        cand = cand[np.isfinite(cand)]
        if cand.size:
            best = max(best, float(cand.max()))
    return 0.0 if not np.isfinite(best) else best


def _weighted(t, log_weight, density, shift) -> float:
    with np.errstate(under="ignore"):
        vals = np.where(density != 0.0, np.exp(np.minimum(log_weight - shift + np.log(np.abs(density) + 1e-300), 700.0)), 0.0)
    return float(np.trapezoid(vals, t))


def _ratio(estimate, tau, sig, t, lhs_terms, rhs_terms, resolution, details=None) -> RatioReport:
    """Each term is ``(log_weight, density, coefficient)``; density is non-negative."""
    terms = lhs_terms + rhs_terms
    shift = _shift([lw for lw, _, _ in terms], [d for _, d, _ in terms])

    def sides(step):
        ts = t[::step]
        lhs = sum(c * _weighted(ts, lw[::step], d[::step], shift) for lw, d, c in lhs_terms)
        rhs = sum(c * _weighted(ts, lw[::step], d[::step], shift) for lw, d, c in rhs_terms)
        return lhs, rhs

    lhs, rhs = sides(1)
    lhs2, rhs2 = sides(2)
    details = dict(details or {})
    if rhs == 0.0:
        if lhs == 0.0:
            details["vacuous"] = True
            return RatioReport(estimate, tau, sig, 0.0, 0.0, 0.0, resolution, shift, details)
        raise NumericalError(f"{estimate}: right-hand side vanished with non-zero left-hand side")
    ratio = lhs / rhs
    if rhs2 > 0:
        details["richardson_change"] = abs(lhs2 / rhs2 - ratio) / ratio if ratio > 0 else 0.0
    return RatioReport(estimate, tau, sig, lhs, rhs, ratio, resolution, shift, details)


def _grid(v: TestFunction1D, resolution: int) -> np.ndarray:
    if resolution < 64 or resolution % 2:
        raise ValueError("resolution must be an even integer >= 64")
    return np.linspace(v.t0, v.t1, resolution + 1)


# ---------------------------------------------------------------------------
# one-dimensional estimates


def verify_factor_estimate(h: CarlemanWeight, sig: float, v: TestFunction1D, resolution: int = DEFAULT_RESOLUTION) -> RatioReport:
    """``int e^{2h}(v'^2 + (tau^2 + sigma^2) v^2)`` against ``int e^{2h}(v' - sigma v)^2``."""
    t = _grid(v, resolution)
    phi, d0, d1, _ = v.jet(t)
    hv, _, _ = eval_weight(h, t)
    lw = 2.0 * (hv - phi)
    tau = h.tau
    lhs = [(lw, d1 * d1, 1.0), (lw, d0 * d0, tau * tau + sig * sig)]
    rhs = [(lw, (d1 - sig * d0) ** 2, 1.0)]
    return _ratio("factor", tau, sig, t, lhs, rhs, resolution)


def verify_commutator_estimate(
    h: CarlemanWeight, sig: float, v: TestFunction1D, resolution: int = DEFAULT_RESOLUTION
) -> RatioReport:
    """``int e^{2h}(1 + h'') v^2`` against ``int e^{2h}(v' + sigma v)^2``."""
    t = _grid(v, resolution)
    phi, d0, d1, _ = v.jet(t)
    hv, _, h2 = eval_weight(h, t)
    lw = 2.0 * (hv - phi)
    lhs = [(lw, (1.0 + h2) * d0 * d0, 1.0)]
    rhs = [(lw, (d1 + sig * d0) ** 2, 1.0)]
    return _ratio("commutator", h.tau, sig, t, lhs, rhs, resolution)


def _decaying_green(rhs: np.ndarray, s: float, dt: float):
    """Solve ``-w'' + s^2 w = rhs`` with decay at both ends of the sampled interval.

    Returns ``(w, w')`` using ``w = (1/2s) int e^{-s|t-t'|} rhs(t') dt'``; the
    two one-sided convolutions are linear recursions evaluated by ``lfilter``.
    """
    q = math.exp(-s * dt)
    b = [0.5 * dt, 0.5 * dt * q]
    left = lfilter(b, [1.0, -q], rhs)
    right = lfilter(b, [1.0, -q], rhs[::-1])[::-1]
    return (left + right) / (2.0 * s), 0.5 * (right - left)


def _trap_head(vals: np.ndarray, dt: float) -> np.ndarray:
    return np.concatenate([[0.0], np.cumsum(0.5 * dt * (vals[1:] + vals[:-1]))])


def _trap_tail(vals: np.ndarray, dt: float) -> np.ndarray:
    return _trap_head(vals[::-1], dt)[::-1]


def _one_sided(f: np.ndarray, s: float, dt: float, growing: bool, reverse: bool = False) -> np.ndarray:
    """Trapezoid ``int e^{-+s|t - t'|} f(t') dt'`` over ``t' < t`` (``t' > t`` if ``reverse``)."""
    q = math.exp(s * dt) if growing else math.exp(-s * dt)
    x = f[::-1] if reverse else f
    with np.errstate(over="ignore", invalid="ignore"):
        y = lfilter([0.5 * dt, 0.5 * dt * q], [1.0, -q], x)
    return y[::-1] if reverse else y


def _compact_green(f: np.ndarray, s: float, dt: float):
    """Solve ``u'' - s^2 u = f`` for forcing with vanishing ``e^{+-st}`` moments.

    Such a solution is supported with ``f``.  Each one-sided convolution has two
    representations (head or tail integral, equal by the vanishing moments);
    at every node the one with the smaller sum of absolute terms is used, so
    ``u`` keeps full relative accuracy where it is tiny.  Returns ``(u, u')``.
    """
    af = np.abs(f)
    if s > 0:
        hm, hp = _one_sided(f, s, dt, False), _one_sided(f, s, dt, True)
        tm, tp = _one_sided(f, s, dt, False, True), _one_sided(f, s, dt, True, True)
        ahm, ahp = _one_sided(af, s, dt, False), _one_sided(af, s, dt, True)
        atm, atp = _one_sided(af, s, dt, False, True), _one_sided(af, s, dt, True, True)
        left = np.where(atp < ahm, -tp, hm)
        right = np.where(ahp < atm, -hp, tm)
        return -(left + right) / (2.0 * s), 0.5 * (left - right)
    n = f.size
    x = dt * np.arange(n)
    y = x[::-1]
    c0, c0r = _trap_head(f, dt), _trap_tail(f, dt)
    head = x * c0 - _trap_head(x * f, dt)
    tail = y * c0r - _trap_tail(y * f, dt)
    a_head = x * _trap_head(af, dt) + _trap_head(x * af, dt)
    a_tail = y * _trap_tail(af, dt) + _trap_tail(y * af, dt)
    pick = a_tail < a_head
    return np.where(pick, tail, head), np.where(pick, -c0r, c0)


def _moment_defect(f: np.ndarray, t: np.ndarray, tests) -> float:
    return max(abs(np.trapezoid(tf * f, t)) / max(np.trapezoid(np.abs(tf * f), t), 1e-300) for tf in tests)


def _moment_basis(g: TestFunction1D):
    L = g.t1 - g.t0
    return (
        TestFunction1D.single(g.t0 + L / 12.0, g.t0 + 7.0 * L / 12.0),
        TestFunction1D.single(g.t0 + 5.0 * L / 12.0, g.t0 + 11.0 * L / 12.0),
    )


def verify_mode_ode(
    h: CarlemanWeight,
    mode: ModeIndex,
    g: TestFunction1D,
    resolution: int = DEFAULT_RESOLUTION,
    project: bool = True,
) -> RatioReport:
    """Mode estimate for ``u'' - sigma^2 u = e^{-(n+2)t/2} g``.

    The unique solution decaying at both ends is compactly supported only when
    the forcing ``f = e^{-(n+2)t/2} g`` is orthogonal to ``e^{+sigma t}`` and
    ``e^{-sigma t}`` (to ``1`` and ``t`` when ``sigma = 0``).  With
    ``project=True`` two fixed bumps inside the support are added to ``g`` to
    enforce this; their coefficients are reported in ``details``.  The solution
    is then obtained from the decaying Green's function on the support of
    ``g`` and the ratio of

        int e^{2h}(1 + h'')(u'^2 + (1 + k^2 + h'^2) u^2)   to   int e^{2h} f^2

    is returned.
    """
    if g.envelope is not None:
        raise ValueError("mode ODE forcing must be a plain bump profile")
    t = _grid(g, resolution)
    dt = t[1] - t[0]
    sig = mode.sigma
    k = mode.k
    decay = np.exp(-(mode.n + 2) / 2.0 * t)
    gv = g.profile(t)[0]
    details: dict = {}
    if sig > 0:
        tests = [np.exp(sig * (t - g.t1)), np.exp(-sig * (t - g.t0))]
    else:
        tests = [np.ones_like(t), t - 0.5 * (g.t0 + g.t1)]
    if project:
        basis = [b.profile(t)[0] for b in _moment_basis(g)]
        M = np.array([[np.trapezoid(tf * decay * bv, t) for bv in basis] for tf in tests])
        m = np.array([np.trapezoid(tf * decay * gv, t) for tf in tests])
        coef = np.linalg.solve(M, -m)
        gv = gv + coef[0] * basis[0] + coef[1] * basis[1]
        details["moment_correction"] = coef.tolist()
    f = decay * gv
    if not np.any(f):
        details["vacuous"] = True
        return RatioReport("mode_ode", h.tau, sig, 0.0, 0.0, 0.0, resolution, 0.0, details)
    defect = _moment_defect(f, t, tests)
    details["moment_defect"] = defect
    if defect > 1e-6:
        raise NumericalError(
            f"mode ODE forcing is not orthogonal to the homogeneous solutions (relative moment {defect:.2e});"
            " no solution decays at both ends"
        )
    u, u1 = _compact_green(f, sig, dt)
    hv, h1, h2 = eval_weight(h, t)
    lw = 2.0 * hv
    lhs = [(lw, (1.0 + h2) * (u1 * u1 + (1.0 + k * k + h1 * h1) * u * u), 1.0)]
    rhs = [(lw, f * f, 1.0)]
    return _ratio("mode_ode", h.tau, sig, t, lhs, rhs, resolution, details)


@dataclass(frozen=True, eq=False)
class FourierMode:
    """``Re(coefficient * e^{i k theta}) * F(t)`` with ``F`` a plain test function."""

    k: int
    profile: TestFunction1D
    coefficient: complex = 1.0

    def __post_init__(self):
        if self.k < 0:
            raise ValueError("Fourier index must be non-negative")
        if self.profile.envelope is not None:
            raise ValueError("weighted-reduction data must be a plain bump profile")


def verify_weighted_reduction(
    K_reduction: float,
    tau: float,
    f_modes: list[FourierMode],
    weight: CarlemanWeight | None = None,
    resolution: int = DEFAULT_RESOLUTION,
) -> RatioReport:
    """Solve ``-lap w + K tau^2 |x|^{-2} w = grad f`` mode by mode and compare

        int e^{2h}(|grad w|^2 + tau^2 |x|^{-2} |w|^2)   with   int e^{2h} |f|^2.

    ``weight`` defaults to the linear weight ``h = tau t``.  Writing
    ``w1 + i w2`` in complex form, the mode ``a_j(t) e^{i j theta}`` of ``f``
    drives the mode ``j + 1`` of ``w`` through ``-e^t (a_j' + j a_j)``, and each
    amplitude solves ``-W'' + (m^2 + K tau^2) W = e^{-2t}(forcing)`` with
    decay in both directions on an interval padded by twice the support width.
    """
    if K_reduction < 4:
        raise ValueError("the reduction constant must be at least 4")
    if not f_modes:
        raise ValueError("need at least one Fourier mode")
    h = weight if weight is not None else CarlemanWeight(tau, 0.0)
    if abs(h.tau - tau) > 1e-12 * tau:
        raise ValueError("weight tau does not match tau")
    t0 = min(m.profile.t0 for m in f_modes)
    t1 = max(m.profile.t1 for m in f_modes)
    width = t1 - t0
    t = np.linspace(t0 - 2.0 * width, t1 + 2.0 * width, resolution + 1)
    dt = t[1] - t[0]
    amps: dict[int, np.ndarray] = {}
    damps: dict[int, np.ndarray] = {}
    for mode in f_modes:
        b0, b1, _ = mode.profile.profile(t)
        c = complex(mode.coefficient)
        pairs = [(0, c.real)] if mode.k == 0 else [(mode.k, 0.5 * c), (-mode.k, 0.5 * c.conjugate())]
        for j, cj in pairs:
            amps[j] = amps.get(j, 0.0) + cj * b0
            damps[j] = damps.get(j, 0.0) + cj * b1
    hv, _, _ = eval_weight(h, t)
    lw = 2.0 * hv
    e_t = np.exp(-t)
    lhs_terms = []
    rhs_terms = []
    for j in sorted(amps):
        a, da = amps[j], damps[j]
        m = j + 1
        s = math.sqrt(m * m + K_reduction * tau * tau)
        forcing = -e_t * (da + j * a)
        W, W1 = _decaying_green(forcing.astype(complex), s, dt)
        lhs_terms.append((lw, np.abs(W1) ** 2 + (m * m + tau * tau) * np.abs(W) ** 2, 2.0 * np.pi))
        rhs_terms.append((lw - 2.0 * t, np.abs(a) ** 2, 2.0 * np.pi))
    return _ratio(
        "weighted_reduction", tau, float(K_reduction), t, lhs_terms, rhs_terms, resolution,
        {"modes": sorted(j + 1 for j in amps)},
    )


# ---------------------------------------------------------------------------
# two-dimensional estimate


def _check_support(values: np.ndarray, name: str, rows: int = 2) -> None:
    if np.any(values[..., :rows, :] != 0.0) or np.any(values[..., -rows:, :] != 0.0):
        raise DomainError(f"{name} must vanish near both ends of the log-polar grid (support touches the edge)")


def logpolar_laplacian(values: np.ndarray, grid: LogPolarGrid) -> np.ndarray:
    t, _ = grid.polar()
    return np.exp(2.0 * t) * (fd.polar_d_tt(values, grid) + fd.polar_d_theta(values, grid, 2))


def logpolar_gradient(values: np.ndarray, grid: LogPolarGrid) -> np.ndarray:
    """Cartesian gradient of a scalar sampled on a log-polar grid."""
    t, th = grid.polar()
    ft = fd.polar_d_t(values, grid)
    fth = fd.polar_d_theta(values, grid, 1)
    et = np.exp(t)
    return np.stack([et * (-np.cos(th) * ft - np.sin(th) * fth), et * (-np.sin(th) * ft + np.cos(th) * fth)])


def verify_full_carleman(h: CarlemanWeight, u: VectorField, f: ScalarField) -> RatioReport:
    """Two-dimensional estimate with ``g = lap u + grad f`` formed discretely.

    LHS is ``tau ||x|^{-2}(1+h'')^{1/2} e^h u|| + ||x|^{-1}(1+h'')^{1/2} e^h grad u||``,
    RHS is ``tau ||x|^{-1} e^h f|| + ||e^h g||`` (all weighted L2 norms over the grid).
    """
    grid = u.grid
    if not isinstance(grid, LogPolarGrid) or f.grid != grid:
        raise TypeError("u and f must live on the same LogPolarGrid")
    _check_support(u.values, "u")
    _check_support(f.values, "f")
    t, _ = grid.polar()
    hv, _, h2 = eval_weight(h, t)
    g = np.stack([logpolar_laplacian(u.values[j], grid) for j in range(2)]) + logpolar_gradient(f.values, grid)
    u_t = fd.polar_d_t(u.values, grid)
    u_th = fd.polar_d_theta(u.values, grid, 1)
    dens = {
        "u": (2 * hv + 2 * t, (1 + h2) * np.sum(u.values**2, axis=0)),
        "grad_u": (2 * hv + 2 * t, (1 + h2) * np.sum(u_t**2 + u_th**2, axis=0)),
        "f": (2 * hv, f.values**2),
        "g": (2 * hv - 2 * t, np.sum(g**2, axis=0)),
    }
    shift = _shift([lw for lw, _ in dens.values()], [d for _, d in dens.values()])
    tt = grid.t
    norms = {}
    for key, (lw, d) in dens.items():
        with np.errstate(under="ignore"):
            vals = np.where(d != 0.0, np.exp(lw - shift + np.log(np.abs(d) + 1e-300)), 0.0)
        norms[key] = math.sqrt(float(np.trapezoid(vals.sum(axis=1) * grid.theta_spacing, tt)))
    tau = h.tau
    lhs = tau * norms["u"] + norms["grad_u"]
    rhs = tau * norms["f"] + norms["g"]
    half = 0.5 * shift
    details = {"norms": norms, "grid": (grid.t_count, grid.theta_count)}
    if rhs == 0.0:
        if lhs == 0.0:
            details["vacuous"] = True
            return RatioReport("full_carleman", tau, float("nan"), 0.0, 0.0, 0.0, grid.t_count, half, details)
        raise NumericalError("full Carleman: right-hand side vanished with non-zero left-hand side")
    return RatioReport("full_carleman", tau, float("nan"), lhs, rhs, lhs / rhs, grid.t_count, half, details)


def mode_field(grid: LogPolarGrid, w: TestFunction1D, k: int) -> VectorField:
    """``u = (w(t) cos(k theta), 0)`` sampled on a log-polar grid."""
    if w.envelope is not None:
        raise ValueError("two-dimensional fields cannot carry an envelope")
    t, th = grid.polar()
    val = w.profile(t)[0] * np.cos(k * th)
    return VectorField(grid, np.stack([val, np.zeros_like(val)]))


def carleman_mode_terms(h: CarlemanWeight, k: int, w: TestFunction1D, resolution: int = DEFAULT_RESOLUTION) -> RatioReport:
    """The full estimate for ``u = (w(t) cos k theta, 0)``, ``f = 0``, reduced to one dimension.

    After integrating out ``theta`` (a factor ``pi``, or ``2 pi`` for ``k = 0``)
    the squared norms are ``int e^{2h+2t}(1+h'') w^2``,
    ``int e^{2h+2t}(1+h'')(w'^2 + k^2 w^2)`` and ``int e^{2h+2t}(w'' - k^2 w)^2``.
    ``w`` may carry an envelope.
    """
    t = _grid(w, resolution)
    phi, d0, d1, d2 = w.jet(t)
    hv, _, h2 = eval_weight(h, t)
    lw = 2.0 * (hv - phi) + 2.0 * t
    ang = 2.0 * np.pi if k == 0 else np.pi
    dens = {
        "u": (1 + h2) * d0 * d0,
        "grad_u": (1 + h2) * (d1 * d1 + k * k * d0 * d0),
        "g": (d2 - k * k * d0) ** 2,
    }
    shift = _shift([lw] * 3, list(dens.values()))
    tau = h.tau

    def sides(step):
        ts = t[::step]
        n = {key: math.sqrt(ang * _weighted(ts, lw[::step], d[::step], shift)) for key, d in dens.items()}
        return tau * n["u"] + n["grad_u"], n["g"]

    lhs, rhs = sides(1)
    lhs2, rhs2 = sides(2)
    if rhs == 0.0:
        raise NumericalError("mode reduction: right-hand side vanished")
    details = {"richardson_change": abs(lhs2 / rhs2 - lhs / rhs) / (lhs / rhs)}
    return RatioReport("full_carleman_mode", tau, float(k), lhs, rhs, lhs / rhs, resolution, 0.5 * shift, details)


# ---------------------------------------------------------------------------
# conjugated operator


@dataclass(frozen=True)
class ConjugationReport:
    residual: float
    relative: float
    reference_norm: float


def conjugated_operator_check(u_func, grid: LogPolarGrid, n: int = 2, require_compact: bool = False) -> ConjugationReport:
    """Compare ``|x|^{(2+n)/2} lap(|x|^{(2-n)/2} u)`` with ``u_tt + lap_S u - ((n-2)/2)^2 u``.

    The left side uses a Cartesian five-point Laplacian of ``u_func(x1, x2)``
    with a local step ``1e-3 |x|`` at every node; the right side uses the
    log-polar grid (second-order in ``t``, spectral in ``theta``).  Only the
    planar case ``n = 2`` is implemented.  Returns the ``L2`` norm of the
    difference over the interior ``t`` nodes (one node trimmed at each end).
    """
    if n != 2:
        raise NotImplementedError("only n = 2 is implemented")
    t, th = grid.polar()
    x1, x2 = grid.coordinates()
    U = np.asarray(u_func(x1, x2), dtype=float)
    if require_compact:
        _check_support(U, "u")
    r = np.exp(-t)
    eps = 1e-3 * r
    lap = (
        u_func(x1 + eps, x2) + u_func(x1 - eps, x2) + u_func(x1, x2 + eps) + u_func(x1, x2 - eps) - 4.0 * U
    ) / eps**2
    lhs = r * r * lap
    rhs = fd.polar_d_tt(U, grid) + fd.polar_d_theta(U, grid, 2)
    region = fd.AnnulusSpec((0.0, 0.0), math.exp(-grid.t[-2]), math.exp(-grid.t[1]))
    diff = ScalarField(grid, lhs - rhs)
    res = fd.l2_norm(diff, region)
    ref = max(fd.l2_norm(ScalarField(grid, lhs), region), fd.l2_norm(ScalarField(grid, U), region))
    return ConjugationReport(res, res / ref if ref > 0 else 0.0, ref)
