"""Convex Carleman weights ``h(t) = tau t + 4 delta tau e^{-t/2}`` and their certification.

``t`` is the logarithmic radial variable ``t = -ln|x|``.  The weight is linear
(``h' ~ tau``) for ``t >> a = 2 ln tau`` and strongly convex
(``h'' >= delta`` on ``t <= a``) near the outer boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

VARIANTS = ("base", "tilde")


@dataclass(frozen=True)
class CarlemanWeight:
    """Weight parameters.

    Admissible weights have ``tau`` in ``N + 5/4`` (``tau >= 2.25``) and
    ``0 < delta <= 1/16``; other values are accepted for comparison studies and
    flagged by ``admissible``.  ``delta = 0`` gives the linear weight ``tau t``.
    """

    tau: float
    delta: float = 1.0 / 16.0
    variant: str = "base"

    def __post_init__(self):
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}")
        if not (self.tau > 0 and math.isfinite(self.tau)):
            raise ValueError("tau must be positive and finite")
        if self.delta < 0:
            raise ValueError("delta must be non-negative")

    @property
    def admissible(self) -> bool:
        frac = self.tau - math.floor(self.tau)
        return self.tau >= 2.25 and abs(frac - 0.25) < 1e-12 and 0 < self.delta <= 1.0 / 16.0

    @property
    def regime_boundary(self) -> float:
        """``a = 2 ln tau``: below it the weight is strongly convex."""
        return 2.0 * math.log(self.tau)

    def with_variant(self, variant: str) -> "CarlemanWeight":
        return CarlemanWeight(self.tau, self.delta, variant)

    def __call__(self, t):
        return eval_weight(self, t)


def tilde_weight(w: CarlemanWeight) -> CarlemanWeight:
    return w.with_variant("tilde")


def eval_weight(w: CarlemanWeight, t):
    """Closed-form ``(h, h', h'')`` at ``t`` (scalar or array)."""
    t = np.asarray(t, dtype=float)
    tau, delta = w.tau, w.delta
    E = delta * tau * np.exp(-0.5 * t)
    h = tau * t + 4.0 * E
    h1 = tau - 2.0 * E
    h2 = E
    if w.variant == "tilde":
        # h - t - ln(1 + h'')/2
        h = h - t - 0.5 * np.log1p(E)
        h1 = h1 - 1.0 + E / (4.0 * (1.0 + E))
        h2 = h2 - E / (8.0 * (1.0 + E) ** 2)
    if h.ndim == 0:
        return float(h), float(h1), float(h2)
    return h, h1, h2


def rescaled_argument(x_norm, R: float = 1.0, R0: float = 1.0):
    """The weight argument ``-ln(R0 |x| / R)`` used when working on ``B_R``."""
    return -np.log(R0 * np.asarray(x_norm, dtype=float) / R)


# ---------------------------------------------------------------------------
# certification


@dataclass(frozen=True)
class WeightReport:
    condition: str
    t_range: tuple[float, float]
    margin: float
    witness_t: float
    threshold: float

    def __post_init__(self):
        if not math.isfinite(self.margin):
            raise ValueError("margin must be finite")

    @property
    def passed(self) -> bool:
        return self.margin >= self.threshold


def _scan_points(w: CarlemanWeight, t_max: float, n_points: int) -> np.ndarray:
    t = np.linspace(0.0, t_max, n_points)
    a = w.regime_boundary
    if 0.0 < a < t_max:
        t = np.union1d(t, [a])
    return t


def check_weight_conditions(
    w: CarlemanWeight,
    t_max: float | None = None,
    c_low: float = 0.5,
    c_high: float = 1.0,
    c_spectral: float = 1.0 / 16.0,
    n_points: int = 4096,
) -> list[WeightReport]:
    """Certify ``c_low tau <= h' <= c_high tau`` and ``dist(2h', Z) + h'' >= c_spectral`` on ``[0, t_max]``.

    Also reports convexity (``min h''`` against 0).  ``t_max`` defaults to
    ``a + 8`` and must be at least ``a + 4`` so the linear regime is sampled.
    """
    a = w.regime_boundary
    if t_max is None:
        t_max = a + 8.0
    if t_max < a + 4.0:
        raise ValueError(f"t_max = {t_max} must reach past a + 4 = {a + 4.0}")
    t = _scan_points(w, t_max, n_points)
    _, h1, h2 = eval_weight(w, t)
    tr = (0.0, float(t_max))
    reports = []

    def add(name, values, threshold):
        i = int(np.argmin(values))
        reports.append(WeightReport(name, tr, float(values[i]), float(t[i]), threshold))

    add("h1_lower", h1 / w.tau, c_low)
    add("h1_upper", c_high - h1 / w.tau, 0.0)
    two = 2.0 * h1
    add("spectral", np.abs(two - np.round(two)) + h2, c_spectral)
    add("convexity", h2, 0.0)
    return reports


@dataclass(frozen=True)
class DecayReport:
    C: float
    r_star: float
    failures: np.ndarray
    margins: np.ndarray
    r_grid: np.ndarray

    @property
    def passed(self) -> bool:
        return self.failures.size == 0


def check_decay_condition(w: CarlemanWeight, C: float, r_grid=None, R: float = 1.0, R0: float = 1.0) -> DecayReport:
    """Scan ``C |x| tau <= 1 + h''(-ln(R0 |x| / R))`` over radii in ``(0, 1]``.

    ``r_star`` is the supremum of radii ``r`` such that the inequality holds on
    all sampled ``|x| <= r``; ``failures`` lists the sampled radii where it fails.
    """
    if r_grid is None:
        r_grid = np.geomspace(1e-8, 1.0, 4001)
    r_grid = np.sort(np.asarray(r_grid, dtype=float))
    if np.any(r_grid <= 0) or np.any(r_grid > 1.0 + 1e-15):
        raise ValueError("decay radii must lie in (0, 1]")
    _, _, h2 = eval_weight(w, rescaled_argument(r_grid, R, R0))
    margins = 1.0 + h2 - C * r_grid * w.tau
    bad = margins < 0
    if not bad.any():
        r_star = float(r_grid[-1])
    else:
        first = int(np.argmax(bad))
        r_star = float(r_grid[first - 1]) if first > 0 else 0.0
    return DecayReport(C, r_star, r_grid[bad], margins, r_grid)
