"""Univariate bases for KAN edges: B-splines, SiLU and the RSWAF basis.

All evaluation functions broadcast: a scalar ``x`` gives a 1-D vector of
basis values, an array of shape ``s`` gives shape ``s + (n_basis,)``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from dpkan.numerics import ShapeError


@dataclass(frozen=True)
class BSplineGrid:
    """Uniform knot vector of ``grid_size`` intervals over [lo, hi], extended
    by ``degree`` knots on each side."""

    degree: int
    grid_size: int
    lo: float = -1.0
    hi: float = 1.0
    knots: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.degree < 0:
            raise ValueError(f"degree must be >= 0, got {self.degree}")
        if self.grid_size < 1:
            raise ValueError(f"grid_size must be >= 1, got {self.grid_size}")
        if not self.hi > self.lo:
            raise ValueError(f"empty domain [{self.lo}, {self.hi}]")
        h = (self.hi - self.lo) / self.grid_size
        idx = np.arange(-self.degree, self.grid_size + self.degree + 1)
        knots = self.lo + idx * h
        knots.flags.writeable = False
        object.__setattr__(self, "knots", knots)

    @property
    def n_basis(self) -> int:
        return self.grid_size + self.degree


@dataclass(frozen=True)
class RswafGrid:
    """Centers for the 1 - tanh^2 basis used by FasterKAN layers."""

    grid_min: float = -1.2
    grid_max: float = 0.2
    num_grids: int = 2
    inv_denominator: float = 0.5
    centers: np.ndarray = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if self.num_grids < 1:
            raise ValueError(f"num_grids must be >= 1, got {self.num_grids}")
        if self.num_grids > 1 and not self.grid_max > self.grid_min:
            raise ValueError("grid_max must exceed grid_min")
        if not self.inv_denominator > 0:
            raise ValueError(f"inv_denominator must be positive, got {self.inv_denominator}")
        centers = np.linspace(self.grid_min, self.grid_max, self.num_grids)
        centers.flags.writeable = False
        object.__setattr__(self, "centers", centers)

    @property
    def n_basis(self) -> int:
        return self.num_grids


def _check_finite(x):
    x = np.asarray(x, dtype=np.float64)
    if not np.all(np.isfinite(x)):
        raise ValueError("basis inputs must be finite")
    return x


def _cox_de_boor(x: np.ndarray, t: np.ndarray, degree: int) -> np.ndarray:
    x = x[..., None]
    # right-continuous indicators: knot_i <= x < knot_{i+1}
    b = ((t[:-1] <= x) & (x < t[1:])).astype(np.float64)
    for d in range(1, degree + 1):
        left = (x - t[: -(d + 1)]) / (t[d:-1] - t[: -(d + 1)])
        right = (t[d + 1 :] - x) / (t[d + 1 :] - t[1:-d])
        b = left * b[..., :-1] + right * b[..., 1:]
    return b


def bspline_basis(x, grid: BSplineGrid) -> np.ndarray:
    """All ``grid.n_basis`` B-spline values at ``x`` via Cox-de Boor."""
    x = _check_finite(x)
    return _cox_de_boor(x, grid.knots, grid.degree)


def bspline_basis_derivative(x, grid: BSplineGrid) -> np.ndarray:
    """d/dx of each B-spline, from the degree-reduction recurrence."""
    x = _check_finite(x)
    k = grid.degree
    t = grid.knots
    if k == 0:
        return np.zeros(x.shape + (grid.n_basis,))
    lower = _cox_de_boor(x, t, k - 1)
    return k * (lower[..., :-1] / (t[k:-1] - t[: -(k + 1)]) - lower[..., 1:] / (t[k + 1 :] - t[1:-k]))


def spline_eval(x, coeffs, grid: BSplineGrid):
    coeffs = np.asarray(coeffs, dtype=np.float64)
    if coeffs.shape[-1:] != (grid.n_basis,):
        raise ShapeError(f"expected {grid.n_basis} coefficients, got shape {coeffs.shape}")
    out = bspline_basis(x, grid) @ coeffs
    return float(out) if np.ndim(out) == 0 else out


def silu(x):
    x = np.asarray(x, dtype=np.float64)
    out = x * expit(x)
    return float(out) if out.ndim == 0 else out


def silu_derivative(x):
    x = np.asarray(x, dtype=np.float64)
    s = expit(x)
    out = s * (1.0 + x * (1.0 - s))
    return float(out) if out.ndim == 0 else out


def phi_eval(x, w_b: float, w_s: float, coeffs, grid: BSplineGrid):
    """Residual KAN activation ``w_b * silu(x) + w_s * spline(x)``."""
    return w_b * silu(x) + w_s * spline_eval(x, coeffs, grid)


def rswaf_basis(x, grid: RswafGrid) -> np.ndarray:
    x = _check_finite(x)
    u = (x[..., None] - grid.centers) * grid.inv_denominator
    return 1.0 - np.tanh(u) ** 2


def rswaf_basis_derivative(x, grid: RswafGrid) -> np.ndarray:
    x = _check_finite(x)
    th = np.tanh((x[..., None] - grid.centers) * grid.inv_denominator)
    return -2.0 * th * (1.0 - th**2) * grid.inv_denominator


def basis_derivative(x, grid):
    """Dispatch to the derivative matching the grid type."""
    if isinstance(grid, BSplineGrid):
        return bspline_basis_derivative(x, grid)
    if isinstance(grid, RswafGrid):
        return rswaf_basis_derivative(x, grid)
    raise TypeError(f"unsupported grid type {type(grid).__name__}")
