"""Cell-centered scalar fields on uniform rectangular grids.

Everything downstream (simulation drift, histogram densities, PDE states,
reconstructed potentials) lives on the same cell-centered layout: ``values``
is an ``(ny, nx)`` array, ``values[iy, ix]`` belongs to the cell center
``(x_min + (ix + 1/2) hx, y_min + (iy + 1/2) hy)``. Row index runs with y.

All operations here are pure: they never mutate their inputs, so fields can
be shared freely across threads.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "DegenerateFieldWarning",
    "Domain",
    "Grid2D",
    "ScalarField",
    "integrate",
    "gradient_central",
    "interp_bilinear",
    "min_max_scale",
    "resample",
]


class DegenerateFieldWarning(UserWarning):
    """Raised-as-warning when an operation hits a degenerate field (e.g. constant input)."""


@dataclass(frozen=True)
class Domain:
    """Axis-aligned rectangle [x_min, x_max] x [y_min, y_max]."""

    x_min: float = -3.0
    x_max: float = 3.0
    y_min: float = -3.0
    y_max: float = 3.0

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(
                f"degenerate domain: [{self.x_min}, {self.x_max}] x [{self.y_min}, {self.y_max}]"
            )

    @property
    def width(self) -> float:
        return self.x_max - self.x_min

    @property
    def height(self) -> float:
        return self.y_max - self.y_min

    def isclose(self, other: "Domain", rel_tol: float = 1e-12) -> bool:
        return (
            math.isclose(self.x_min, other.x_min, rel_tol=rel_tol, abs_tol=1e-12)
            and math.isclose(self.x_max, other.x_max, rel_tol=rel_tol, abs_tol=1e-12)
            and math.isclose(self.y_min, other.y_min, rel_tol=rel_tol, abs_tol=1e-12)
            and math.isclose(self.y_max, other.y_max, rel_tol=rel_tol, abs_tol=1e-12)
        )


@dataclass(frozen=True)
class Grid2D:
    """Uniform cell-centered grid over a :class:`Domain`.

    Parameters
    ----------
    domain : Domain
        Spatial extent covered by the cells.
    nx, ny : int
        Number of cells per axis; at least 1 each.
    """

    domain: Domain
    nx: int
    ny: int

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise ValueError(f"grid too small: need nx, ny >= 1, got {self.nx} x {self.ny}")

    @property
    def hx(self) -> float:
        return self.domain.width / self.nx

    @property
    def hy(self) -> float:
        return self.domain.height / self.ny

    @property
    def shape(self) -> tuple[int, int]:
        """Array shape (ny, nx) of fields on this grid."""
        return (self.ny, self.nx)

    @property
    def n_cells(self) -> int:
        return self.nx * self.ny

    @property
    def cell_area(self) -> float:
        return self.hx * self.hy

    @property
    def x_centers(self) -> np.ndarray:
        d = self.domain
        return d.x_min + (np.arange(self.nx) + 0.5) * self.hx

    @property
    def y_centers(self) -> np.ndarray:
        d = self.domain
        return d.y_min + (np.arange(self.ny) + 0.5) * self.hy

    def meshgrid(self) -> tuple[np.ndarray, np.ndarray]:
        """(X, Y) cell-center coordinate arrays, each shaped (ny, nx)."""
        return np.meshgrid(self.x_centers, self.y_centers)

    def compatible(self, other: "Grid2D") -> bool:
        return (
            self.nx == other.nx
            and self.ny == other.ny
            and self.domain.isclose(other.domain)
        )


@dataclass
class ScalarField:
    """A real-valued function sampled at the cell centers of a :class:`Grid2D`."""

    grid: Grid2D
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.shape != self.grid.shape:
            raise ValueError(
                f"field/grid shape mismatch: values {v.shape}, grid expects {self.grid.shape}"
            )
        if not np.all(np.isfinite(v)):
            raise ValueError("field values must be finite")
        self.values = v

    @classmethod
    def zeros(cls, grid: Grid2D) -> "ScalarField":
        return cls(grid, np.zeros(grid.shape))

    @classmethod
    def full(cls, grid: Grid2D, value: float) -> "ScalarField":
        return cls(grid, np.full(grid.shape, float(value)))

    @classmethod
    def from_function(cls, grid: Grid2D, fn) -> "ScalarField":
        """Sample ``fn(X, Y)`` at the cell centers."""
        xx, yy = grid.meshgrid()
        return cls(grid, np.asarray(fn(xx, yy), dtype=float))

    def copy(self) -> "ScalarField":
        return ScalarField(self.grid, self.values.copy())


def integrate(f: ScalarField) -> float:
    """Midpoint-rule integral of ``f`` over its domain (sum of cells times cell area)."""
    return float(f.values.sum() * f.grid.cell_area)


def gradient_central(f: ScalarField) -> tuple[ScalarField, ScalarField]:
    """Return (df/dx, df/dy) as fields.

    Central differences on interior cells, one-sided differences on boundary
    cells, so affine fields differentiate exactly everywhere (constants to
    exactly zero) and quadratics exactly on the interior.
    """
    g = f.grid
    if g.nx < 3 or g.ny < 3:
        raise ValueError(f"grid too small for gradients: {g.nx} x {g.ny}, need >= 3 per axis")
    dy, dx = np.gradient(f.values, g.hy, g.hx, edge_order=1)
    return ScalarField(g, dx), ScalarField(g, dy)


def interp_bilinear(f: ScalarField, x, y):
    """Bilinear interpolation of cell-center samples at points (x, y).

    Accepts scalars or arrays (broadcast together). Queries in the half-cell
    margin beyond the outermost centers get constant extrapolation; queries
    outside the domain are clamped to it first.

    Returns
    -------
    float or ndarray
        Interpolated values, shaped like the broadcast inputs.
    """
    g = f.grid
    d = g.domain
    scalar = np.isscalar(x) and np.isscalar(y)
    x = np.clip(np.asarray(x, dtype=float), d.x_min, d.x_max)
    y = np.clip(np.asarray(y, dtype=float), d.y_min, d.y_max)

    # Fractional index relative to the first cell center; clamping here also
    # produces the constant-extrapolation behavior in the half-cell margin.
    fx = np.clip((x - d.x_min) / g.hx - 0.5, 0.0, g.nx - 1.0)
    fy = np.clip((y - d.y_min) / g.hy - 0.5, 0.0, g.ny - 1.0)
    ix0 = np.minimum(fx.astype(int), g.nx - 2)
    iy0 = np.minimum(fy.astype(int), g.ny - 2)
    tx = fx - ix0
    ty = fy - iy0

    v = f.values
    v00 = v[iy0, ix0]
    v01 = v[iy0, ix0 + 1]
    v10 = v[iy0 + 1, ix0]
    v11 = v[iy0 + 1, ix0 + 1]
    out = (
        v00 * (1 - tx) * (1 - ty)
        + v01 * tx * (1 - ty)
        + v10 * (1 - tx) * ty
        + v11 * tx * ty
    )
    return float(out) if scalar else out


def min_max_scale(f: ScalarField) -> ScalarField:
    """Affinely map ``f`` onto [0, 1].

    A constant field has no range to scale; it comes back as all zeros with a
    :class:`DegenerateFieldWarning`.
    """
    lo = float(f.values.min())
    hi = float(f.values.max())
    if hi == lo:
        warnings.warn(
            "min_max_scale: constant field, returning zeros", DegenerateFieldWarning, stacklevel=2
        )
        return ScalarField.zeros(f.grid)
    return ScalarField(f.grid, (f.values - lo) / (hi - lo))


def _overlap_matrix(n_src: int, n_tgt: int, length: float) -> np.ndarray:
    """1-D cell-overlap weights W[t, s] = |cell_t ∩ cell_s| / h_t (rows sum to 1)."""
    h_s = length / n_src
    h_t = length / n_tgt
    a_s = np.arange(n_src) * h_s
    a_t = np.arange(n_tgt) * h_t
    lo = np.maximum(a_t[:, None], a_s[None, :])
    hi = np.minimum(a_t[:, None] + h_t, a_s[None, :] + h_s)
    return np.maximum(hi - lo, 0.0) / h_t


def resample(f: ScalarField, target: Grid2D) -> ScalarField:
    """Map ``f`` onto another grid over the same domain.

    Coarsening (target no finer on either axis) box-averages over the covered
    source cells, which preserves the integral exactly. Refining interpolates
    bilinearly between cell centers.
    """
    g = f.grid
    if not g.domain.isclose(target.domain):
        raise ValueError("resample: source and target grids cover different domains")
    if target.nx == g.nx and target.ny == g.ny:
        return f.copy()
    if target.nx <= g.nx and target.ny <= g.ny:
        wx = _overlap_matrix(g.nx, target.nx, g.domain.width)
        wy = _overlap_matrix(g.ny, target.ny, g.domain.height)
        return ScalarField(target, wy @ f.values @ wx.T)
    xx, yy = target.meshgrid()
    return ScalarField(target, interp_bilinear(f, xx, yy))
