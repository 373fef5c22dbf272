"""Grids, discrete fields, finite-difference derivatives and exact-area quadrature.

Two grid families are supported:

* ``CartesianGrid``: uniform nodes on the square ``[-L, L]^2``.
* ``LogPolarGrid``: nodes in ``(t, theta)`` with ``x = e^{-t}(cos theta, sin theta)``,
  uniform in ``t`` and periodic in ``theta``.

Field values are stored with the grid axes last: a scalar field has shape
``grid.shape`` and a vector field has shape ``(2, *grid.shape)``.  For Cartesian
grids axis 0 is ``x1`` and axis 1 is ``x2``; for log-polar grids axis 0 is ``t``
and axis 1 is ``theta``.  Vector components are always Cartesian.
"""

from __future__ import annotations

import csv
import functools
import math
from dataclasses import dataclass
from pathlib import Path
from typing import Union

import numpy as np

from .errors import DomainError, ValidationError

_REGION_TOL = 1e-12


# ---------------------------------------------------------------------------
# grids


@dataclass(frozen=True)
class CartesianGrid:
    """Uniform ``n x n`` grid on ``[-half_width, half_width]^2``."""

    half_width: float
    points_per_side: int

    def __post_init__(self):
        if not (self.half_width > 0 and math.isfinite(self.half_width)):
            raise ValueError(f"half_width must be positive, got {self.half_width}")
        if self.points_per_side < 16:
            raise ValueError("points_per_side must be at least 16")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.points_per_side, self.points_per_side)

    @property
    def spacing(self) -> float:
        return 2.0 * self.half_width / (self.points_per_side - 1)

    @property
    def axis(self) -> np.ndarray:
        return np.linspace(-self.half_width, self.half_width, self.points_per_side)

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Return ``(x1, x2)`` node coordinate arrays of shape ``grid.shape``."""
        a = self.axis
        return np.meshgrid(a, a, indexing="ij")

    def contains_disk(self, center, radius, tol=_REGION_TOL) -> bool:
        c = np.asarray(center, dtype=float)
        return bool(np.all(np.abs(c) + radius <= self.half_width * (1.0 + tol)))


@dataclass(frozen=True)
class LogPolarGrid:
    """Grid in ``(t, theta)`` covering the annulus ``e^{-t_max} <= |x| <= e^{-t_min}``."""

    t_min: float
    t_max: float
    t_count: int
    theta_count: int

    def __post_init__(self):
        if self.t_min < 0:
            raise DomainError("log-polar grids must lie in the unit ball (t_min >= 0)")
        if not self.t_max > self.t_min:
            raise ValueError("t_max must exceed t_min")
        if self.t_count < 16 or self.theta_count < 16:
            raise ValueError("log-polar grids need at least 16 nodes per axis")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.t_count, self.theta_count)

    @property
    def t(self) -> np.ndarray:
        return np.linspace(self.t_min, self.t_max, self.t_count)

    @property
    def theta(self) -> np.ndarray:
        return 2.0 * np.pi * np.arange(self.theta_count) / self.theta_count

    @property
    def t_spacing(self) -> float:
        return (self.t_max - self.t_min) / (self.t_count - 1)

    @property
    def theta_spacing(self) -> float:
        return 2.0 * np.pi / self.theta_count

    def coordinates(self) -> tuple[np.ndarray, np.ndarray]:
        """Cartesian coordinates of every node."""
        t, th = np.meshgrid(self.t, self.theta, indexing="ij")
        r = np.exp(-t)
        return r * np.cos(th), r * np.sin(th)

    def polar(self) -> tuple[np.ndarray, np.ndarray]:
        """``(t, theta)`` node arrays of shape ``grid.shape``."""
        return np.meshgrid(self.t, self.theta, indexing="ij")


Grid = Union[CartesianGrid, LogPolarGrid]


# ---------------------------------------------------------------------------
# fields


def _frozen_copy(values) -> np.ndarray:
    arr = np.array(values, dtype=float, copy=True)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True, eq=False)
class ScalarField:
    grid: Grid
    values: np.ndarray
    interpolation: str = "bilinear"

    def __post_init__(self):
        arr = _frozen_copy(self.values)
        if arr.shape != self.grid.shape:
            raise ValueError(f"scalar field shape {arr.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", arr)

    def with_values(self, values) -> "ScalarField":
        return ScalarField(self.grid, values, self.interpolation)


@dataclass(frozen=True, eq=False)
class VectorField:
    grid: Grid
    values: np.ndarray
    interpolation: str = "bilinear"

    def __post_init__(self):
        arr = _frozen_copy(self.values)
        if arr.shape != (2, *self.grid.shape):
            raise ValueError(f"vector field shape {arr.shape} != (2, {self.grid.shape})")
        if not np.all(np.isfinite(arr)):
            raise ValueError("field values must be finite")
        object.__setattr__(self, "values", arr)

    def component(self, j: int) -> ScalarField:
        return ScalarField(self.grid, self.values[j], self.interpolation)

    def with_values(self, values) -> "VectorField":
        return VectorField(self.grid, values, self.interpolation)


Field = Union[ScalarField, VectorField]


def sample(grid: Grid, func) -> Field:
    """Evaluate ``func(x1, x2)`` at every node.

    A scalar result becomes a ``ScalarField``; a length-2 result (tuple or array
    with leading axis 2) becomes a ``VectorField``.
    """
    x1, x2 = grid.coordinates()
    out = func(x1, x2)
    if isinstance(out, (tuple, list)):
        out = np.stack([np.broadcast_to(np.asarray(c, dtype=float), grid.shape) for c in out])
    out = np.asarray(out, dtype=float)
    if out.shape == grid.shape or out.ndim == 0:
        return ScalarField(grid, np.broadcast_to(out, grid.shape))
    return VectorField(grid, out)


# ---------------------------------------------------------------------------
# derivatives on Cartesian grids


def _require_cartesian(field: Field) -> CartesianGrid:
    if not isinstance(field.grid, CartesianGrid):
        raise TypeError("this operation needs a CartesianGrid field")
    return field.grid


def _d1(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    return np.gradient(values, h, axis=axis, edge_order=2)


def _d2(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Second derivative: compact 3-point interior, 4-point one-sided at the ends."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[1:-1] = v[2:] - 2.0 * v[1:-1] + v[:-2]
    out[0] = 2.0 * v[0] - 5.0 * v[1] + 4.0 * v[2] - v[3]
    out[-1] = 2.0 * v[-1] - 5.0 * v[-2] + 4.0 * v[-3] - v[-4]
    return np.moveaxis(out / (h * h), 0, axis)


def _d1_4(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order first derivative (5-point centered, one-sided near the ends)."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[2:-2] = (v[:-4] - 8.0 * v[1:-3] + 8.0 * v[3:-1] - v[4:]) / 12.0
    out[0] = (-25.0 * v[0] + 48.0 * v[1] - 36.0 * v[2] + 16.0 * v[3] - 3.0 * v[4]) / 12.0
    out[1] = (-3.0 * v[0] - 10.0 * v[1] + 18.0 * v[2] - 6.0 * v[3] + v[4]) / 12.0
    out[-1] = -(-25.0 * v[-1] + 48.0 * v[-2] - 36.0 * v[-3] + 16.0 * v[-4] - 3.0 * v[-5]) / 12.0
    out[-2] = -(-3.0 * v[-1] - 10.0 * v[-2] + 18.0 * v[-3] - 6.0 * v[-4] + v[-5]) / 12.0
    return np.moveaxis(out / h, 0, axis)


def _d2_4(values: np.ndarray, h: float, axis: int) -> np.ndarray:
    """Fourth-order second derivative (5-point centered, 6-point one-sided near the ends)."""
    v = np.moveaxis(values, axis, 0)
    out = np.empty_like(v)
    out[2:-2] = (-v[:-4] + 16.0 * v[1:-3] - 30.0 * v[2:-2] + 16.0 * v[3:-1] - v[4:]) / 12.0
    for end, sl in ((0, slice(None)), (-1, slice(None, None, -1))):
        w = v[sl]
        first = (45.0 * w[0] - 154.0 * w[1] + 214.0 * w[2] - 156.0 * w[3] + 61.0 * w[4] - 10.0 * w[5]) / 12.0
        second = (10.0 * w[0] - 15.0 * w[1] - 4.0 * w[2] + 14.0 * w[3] - 6.0 * w[4] + w[5]) / 12.0
        out[end] = first
        out[1 if end == 0 else -2] = second
    return np.moveaxis(out / (h * h), 0, axis)


def _first(order: int):
    if order not in (2, 4):
        raise ValueError("stencil order must be 2 or 4")
    return _d1 if order == 2 else _d1_4


def _second(order: int):
    if order not in (2, 4):
        raise ValueError("stencil order must be 2 or 4")
    return _d2 if order == 2 else _d2_4


def gradient_array(values: np.ndarray, grid: CartesianGrid, order: int = 2) -> np.ndarray:
    """Gradient of a scalar array; result has a new leading axis of length 2."""
    h = grid.spacing
    d = _first(order)
    return np.stack([d(values, h, -2), d(values, h, -1)])


def laplacian_array(values: np.ndarray, grid: CartesianGrid, order: int = 2) -> np.ndarray:
    h = grid.spacing
    d = _second(order)
    return d(values, h, -2) + d(values, h, -1)


def hessian_array(values: np.ndarray, grid: CartesianGrid) -> np.ndarray:
    """Hessian ``H[i, j] = d_i d_j f`` (compact pure second derivatives)."""
    h = grid.spacing
    d11 = _d2(values, h, -2)
    d22 = _d2(values, h, -1)
    d12 = _d1(_d1(values, h, -2), h, -1)
    return np.stack([np.stack([d11, d12]), np.stack([d12, d22])])


def gradient(field: ScalarField) -> VectorField:
    grid = _require_cartesian(field)
    return VectorField(grid, gradient_array(field.values, grid))


def jacobian(field: VectorField, order: int = 2) -> np.ndarray:
    """``J[j, k] = d_k u_j`` with shape ``(2, 2, *grid.shape)``."""
    grid = _require_cartesian(field)
    return np.stack([gradient_array(field.values[j], grid, order) for j in range(2)])


def divergence(field: VectorField) -> ScalarField:
    grid = _require_cartesian(field)
    h = grid.spacing
    return ScalarField(grid, _d1(field.values[0], h, 0) + _d1(field.values[1], h, 1))


def laplacian(field: Field) -> Field:
    grid = _require_cartesian(field)
    return field.with_values(laplacian_array(field.values, grid))


def hessian(field: ScalarField) -> np.ndarray:
    grid = _require_cartesian(field)
    return hessian_array(field.values, grid)


@dataclass(frozen=True, eq=False)
class Derivatives:
    gradient: np.ndarray
    divergence: np.ndarray | None
    hessian: np.ndarray | None
    laplacian: np.ndarray


def discrete_derivatives(field: Field) -> Derivatives:
    """Second-order finite differences of a Cartesian field.

    For a scalar field ``gradient`` has shape ``(2, n, n)`` and ``hessian``
    ``(2, 2, n, n)``.  For a vector field ``gradient`` is the Jacobian
    ``J[j, k] = d_k u_j`` and ``divergence`` is its trace.
    """
    grid = _require_cartesian(field)
    if isinstance(field, ScalarField):
        v = field.values
        return Derivatives(gradient_array(v, grid), None, hessian_array(v, grid), laplacian_array(v, grid))
    jac = jacobian(field)
    return Derivatives(jac, jac[0, 0] + jac[1, 1], None, laplacian_array(field.values, grid))


# ---------------------------------------------------------------------------
# derivatives on log-polar grids


def polar_d_t(values: np.ndarray, grid: LogPolarGrid) -> np.ndarray:
    return _d1(values, grid.t_spacing, -2)


def polar_d_tt(values: np.ndarray, grid: LogPolarGrid) -> np.ndarray:
    return _d2(values, grid.t_spacing, -2)


def polar_d_theta(values: np.ndarray, grid: LogPolarGrid, order: int = 1) -> np.ndarray:
    """Spectral derivative along the periodic ``theta`` axis."""
    n = grid.theta_count
    freq = np.fft.fftfreq(n, d=1.0 / n)
    if n % 2 == 0 and order % 2 == 1:
        freq[n // 2] = 0.0
    symbol = (1j * freq) ** order
    return np.real(np.fft.ifft(np.fft.fft(values, axis=-1) * symbol, axis=-1))


# ---------------------------------------------------------------------------
# interpolation


def interpolate(field: Field, point) -> float | np.ndarray:
    """Bilinear interpolation at a Cartesian point.

    Returns a float for scalar fields and a length-2 array for vector fields.
    Points outside the grid raise ``DomainError``.
    """
    x = np.asarray(point, dtype=float)
    grid = field.grid
    if isinstance(grid, CartesianGrid):
        a = grid.axis
        i, s = _locate(a, x[0])
        j, r = _locate(a, x[1])
        values = field.values
        idx_i, idx_j = (i, i + 1), (j, j + 1)
    else:
        rad = math.hypot(x[0], x[1])
        if rad == 0.0:
            raise DomainError("the origin is not covered by a log-polar grid")
        t = -math.log(rad)
        i, s = _locate(grid.t, t)
        th = math.atan2(x[1], x[0]) % (2.0 * np.pi)
        pos = th / grid.theta_spacing
        j = int(math.floor(pos)) % grid.theta_count
        r = pos - math.floor(pos)
        values = field.values
        idx_i, idx_j = (i, i + 1), (j, (j + 1) % grid.theta_count)
    w = ((1 - s) * (1 - r), (1 - s) * r, s * (1 - r), s * r)
    corners = (
        values[..., idx_i[0], idx_j[0]],
        values[..., idx_i[0], idx_j[1]],
        values[..., idx_i[1], idx_j[0]],
        values[..., idx_i[1], idx_j[1]],
    )
    out = sum(wk * ck for wk, ck in zip(w, corners))
    return float(out) if np.ndim(out) == 0 else np.asarray(out)


def _locate(axis: np.ndarray, x: float) -> tuple[int, float]:
    lo, hi = axis[0], axis[-1]
    span = hi - lo
    if x < lo - 1e-12 * span or x > hi + 1e-12 * span:
        raise DomainError(f"point coordinate {x} outside grid range [{lo}, {hi}]")
    h = span / (len(axis) - 1)
    pos = min(max((x - lo) / h, 0.0), len(axis) - 1.0)
    i = min(int(math.floor(pos)), len(axis) - 2)
    return i, pos - i


# ---------------------------------------------------------------------------
# quadrature over disks and annuli


@dataclass(frozen=True)
class AnnulusSpec:
    """``{x : r_inner <= |x - center| <= r_outer}``; ``r_inner = 0`` gives a disk."""

    center: tuple[float, float]
    r_inner: float
    r_outer: float

    def __post_init__(self):
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))
        if self.r_inner < 0 or self.r_outer < self.r_inner:
            raise ValueError(f"invalid annulus radii ({self.r_inner}, {self.r_outer})")

    @classmethod
    def ball(cls, center, radius) -> "AnnulusSpec":
        return cls(tuple(center), 0.0, radius)


def _segment_primitive(x: np.ndarray, r: float) -> np.ndarray:
    # int_0^x sqrt(r^2 - s^2) ds for 0 <= x <= r
    ratio = np.clip(x / r, -1.0, 1.0)
    return 0.5 * (x * np.sqrt(np.maximum(r * r - x * x, 0.0)) + r * r * np.arcsin(ratio))


def _quadrant_area(x: np.ndarray, y: np.ndarray, r: float) -> np.ndarray:
    """Signed area of ``disk(0, r) ∩ [0, x] x [0, y]``."""
    sx, sy = np.sign(x), np.sign(y)
    ax = np.minimum(np.abs(x), r)
    ay = np.minimum(np.abs(y), r)
    inside = ax * ax + ay * ay <= r * r
    xs = np.sqrt(np.maximum(r * r - ay * ay, 0.0))
    xs = np.minimum(xs, ax)
    curved = xs * ay + _segment_primitive(ax, r) - _segment_primitive(xs, r)
    return sx * sy * np.where(inside, ax * ay, curved)


def _cell_bounds(axis: np.ndarray, half_width: float) -> tuple[np.ndarray, np.ndarray]:
    h = axis[1] - axis[0]
    lo = np.maximum(axis - 0.5 * h, -half_width)
    hi = np.minimum(axis + 0.5 * h, half_width)
    return lo, hi


@functools.lru_cache(maxsize=64)
def _disk_weights(grid: CartesianGrid, center: tuple[float, float], radius: float) -> np.ndarray:
    shape = grid.shape
    if radius <= 0.0:
        return np.zeros(shape)
    lo, hi = _cell_bounds(grid.axis, grid.half_width)
    x0, x1 = lo - center[0], hi - center[0]
    y0, y1 = lo - center[1], hi - center[1]
    # nearest / farthest distance of each cell to the center
    nx = np.where(x0 > 0, x0, np.where(x1 < 0, -x1, 0.0))
    ny = np.where(y0 > 0, y0, np.where(y1 < 0, -y1, 0.0))
    fx = np.maximum(np.abs(x0), np.abs(x1))
    fy = np.maximum(np.abs(y0), np.abs(y1))
    near = nx[:, None] ** 2 + ny[None, :] ** 2
    far = fx[:, None] ** 2 + fy[None, :] ** 2
    r2 = radius * radius
    full = far <= r2
    cut = (~full) & (near < r2)
    weights = np.where(full, (x1 - x0)[:, None] * (y1 - y0)[None, :], 0.0)
    ii, jj = np.nonzero(cut)
    if ii.size:
        a0, a1 = x0[ii], x1[ii]
        b0, b1 = y0[jj], y1[jj]
        area = (
            _quadrant_area(a1, b1, radius)
            - _quadrant_area(a0, b1, radius)
            - _quadrant_area(a1, b0, radius)
            + _quadrant_area(a0, b0, radius)
        )
        weights[ii, jj] = area
    weights.setflags(write=False)
    return weights


def _polar_weights(grid: LogPolarGrid, region: AnnulusSpec) -> np.ndarray:
    if region.center != (0.0, 0.0):
        raise DomainError("log-polar quadrature needs a region centered at the origin")
    if region.r_inner <= 0.0:
        raise DomainError("the origin is not covered by a log-polar grid")
    t_lo, t_hi = -math.log(region.r_outer), -math.log(region.r_inner)
    span = grid.t_max - grid.t_min
    if t_lo < grid.t_min - _REGION_TOL * span or t_hi > grid.t_max + _REGION_TOL * span:
        raise DomainError("annulus extends beyond the log-polar grid")
    t = grid.t
    h = grid.t_spacing
    lo = np.clip(np.maximum(t - 0.5 * h, grid.t_min), t_lo, t_hi)
    hi = np.clip(np.minimum(t + 0.5 * h, grid.t_max), t_lo, t_hi)
    # exact integral of the Jacobian e^{-2t} over each clipped cell
    w_t = 0.5 * (np.exp(-2.0 * lo) - np.exp(-2.0 * hi))
    return np.repeat(w_t[:, None] * grid.theta_spacing, grid.theta_count, axis=1)


def region_weights(grid: Grid, region: AnnulusSpec) -> np.ndarray:
    """Quadrature weights: node value times exact area of its cell inside the region."""
    if isinstance(grid, LogPolarGrid):
        return _polar_weights(grid, region)
    if not grid.contains_disk(region.center, region.r_outer):
        raise DomainError(
            f"region of radius {region.r_outer} about {region.center} exceeds the grid domain"
        )
    outer = _disk_weights(grid, region.center, float(region.r_outer))
    if region.r_inner == 0.0:
        return outer
    return outer - _disk_weights(grid, region.center, float(region.r_inner))


def _density(field) -> np.ndarray:
    values = field.values if isinstance(field, (ScalarField, VectorField)) else np.asarray(field)
    if isinstance(field, VectorField):
        return np.sum(values * values, axis=0)
    return values * values


def integrate(field: ScalarField, region: AnnulusSpec) -> float:
    """Integral of a scalar density over the region."""
    return float(np.sum(region_weights(field.grid, region) * field.values))


def l2_norm(field: Field, region: AnnulusSpec) -> float:
    """L2 norm over a ball or annulus (midpoint values, exact cell areas)."""
    return math.sqrt(max(float(np.sum(region_weights(field.grid, region) * _density(field))), 0.0))


def domain_weights(grid: CartesianGrid) -> np.ndarray:
    """Trapezoid weights on the full square (exact for bilinear integrands)."""
    n = grid.points_per_side
    w = np.full(n, grid.spacing)
    w[0] = w[-1] = 0.5 * grid.spacing
    return np.outer(w, w)


# ---------------------------------------------------------------------------
# CSV round trip


def write_field_csv(field: Field, path) -> None:
    """Write a field as CSV: a ``#`` header with the grid parameters, then one row per node."""
    path = Path(path)
    grid = field.grid
    kind = "vector" if isinstance(field, VectorField) else "scalar"
    if isinstance(grid, CartesianGrid):
        gline = f"# grid=cartesian half_width={grid.half_width!r} points_per_side={grid.points_per_side}"
        names = ("x1", "x2")
        c1, c2 = grid.coordinates()
    else:
        gline = (
            f"# grid=logpolar t_min={grid.t_min!r} t_max={grid.t_max!r} "
            f"t_count={grid.t_count} theta_count={grid.theta_count}"
        )
        names = ("t", "theta")
        c1, c2 = grid.polar()
    comps = ["u1", "u2"] if kind == "vector" else ["u"]
    vals = field.values.reshape(len(comps), -1) if kind == "vector" else field.values.reshape(1, -1)
    with path.open("w", newline="") as fh:
        fh.write(gline + f" field={kind} interpolation={field.interpolation}\n")
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([*names, *comps])
        for k, (a, b) in enumerate(zip(c1.ravel(), c2.ravel())):
            writer.writerow([repr(float(a)), repr(float(b)), *(repr(float(v[k])) for v in vals)])


def read_field_csv(path) -> Field:
    path = Path(path)
    with path.open() as fh:
        header = fh.readline()
        if not header.startswith("#"):
            raise ValidationError(f"{path}: missing grid header line")
        meta = dict(tok.split("=", 1) for tok in header[1:].split())
        reader = csv.reader(line for line in fh if not line.startswith("#"))
        columns = next(reader)
        rows = np.array([[float(v) for v in row] for row in reader])
    if meta.get("grid") == "cartesian":
        grid: Grid = CartesianGrid(float(meta["half_width"]), int(meta["points_per_side"]))
    elif meta.get("grid") == "logpolar":
        grid = LogPolarGrid(
            float(meta["t_min"]), float(meta["t_max"]), int(meta["t_count"]), int(meta["theta_count"])
        )
    else:
        raise ValidationError(f"{path}: unknown grid kind {meta.get('grid')!r}")
    ncomp = len(columns) - 2
    if rows.shape != (grid.shape[0] * grid.shape[1], len(columns)):
        raise ValidationError(f"{path}: row count does not match grid")
    interp = meta.get("interpolation", "bilinear")
    if ncomp == 1:
        return ScalarField(grid, rows[:, 2].reshape(grid.shape), interp)
    return VectorField(grid, rows[:, 2:].T.reshape(2, *grid.shape), interp)
