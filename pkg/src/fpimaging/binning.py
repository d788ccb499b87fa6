"""Histogram binning: particle frames -> normalized density frames.

A frame of N_p positions becomes counts on a bin mesh divided by
N_p * hx * hy, i.e. a piecewise-constant probability density of unit mass.
No smoothing is applied. Particles sitting exactly on an interior bin edge
go to the higher-index bin; the domain's far edges belong to the last bin.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Grid2D, ScalarField
from .sde import TrajectoryFrames

__all__ = ["FrameSequence", "bin_frame", "bin_sequence", "inject_piecewise_constant"]


@dataclass
class FrameSequence:
    """Time-ordered density fields on a common grid, spaced ``dt`` apart.

    ``values[l]`` is the (ny, nx) density array of frame l. Frames are
    piecewise-constant in time between stored instants: the density at time t
    is the most recent frame at or before t.
    """

    grid: Grid2D
    values: np.ndarray
    dt: float

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 3 or v.shape[1:] != self.grid.shape:
            raise ValueError(
                f"frame stack shape {v.shape} does not match grid {self.grid.shape}"
            )
        if v.shape[0] < 1:
            raise ValueError("need at least one frame")
        if self.dt <= 0:
            raise ValueError("frame spacing must be positive")
        if not np.all(np.isfinite(v)):
            raise ValueError("density frames must be finite")
        if v.min() < 0:
            raise ValueError("density frames must be nonnegative")
        self.values = v

    @property
    def n_frames(self) -> int:
        return self.values.shape[0]

    def frame(self, l: int) -> ScalarField:
        return ScalarField(self.grid, self.values[l])

    @classmethod
    def from_fields(cls, frames: list[ScalarField], dt: float) -> "FrameSequence":
        if not frames:
            raise ValueError("need at least one frame")
        grid = frames[0].grid
        for f in frames[1:]:
            if not f.grid.compatible(grid):
                raise ValueError("frames live on incompatible grids")
        return cls(grid, np.stack([f.values for f in frames]), dt)

    def window(self, start: int, stop: int) -> "FrameSequence":
        """Frames start..stop inclusive, as a view-backed sequence."""
        if not (0 <= start < stop < self.n_frames):
            raise ValueError(f"bad frame window [{start}, {stop}] of {self.n_frames}")
        return FrameSequence(self.grid, self.values[start : stop + 1], self.dt)


def bin_frame(positions: np.ndarray, grid: Grid2D) -> ScalarField:
    """Histogram one frame of positions onto ``grid`` as a unit-mass density."""
    positions = np.asarray(positions, dtype=float)
    if positions.ndim != 2 or positions.shape[1] != 2:
        raise ValueError(f"positions must have shape (n_particles, 2), got {positions.shape}")
    n_p = positions.shape[0]
    if n_p == 0:
        raise ValueError("cannot bin an empty ensemble")
    d = grid.domain
    edges_x = np.linspace(d.x_min, d.x_max, grid.nx + 1)
    edges_y = np.linspace(d.y_min, d.y_max, grid.ny + 1)
    # histogram2d uses half-open bins except the last, which matches the
    # edge-goes-to-higher-bin rule on interior edges and keeps x_max in range.
    counts, _, _ = np.histogram2d(positions[:, 0], positions[:, 1], bins=(edges_x, edges_y))
    return ScalarField(grid, counts.T / (n_p * grid.cell_area))


def bin_sequence(traj: TrajectoryFrames, grid: Grid2D) -> FrameSequence:
    """Bin every stored frame of a trajectory."""
    if not grid.domain.isclose(traj.domain):
        raise ValueError("bin grid does not cover the trajectory domain")
    stack = np.empty((traj.n_frames, grid.ny, grid.nx))
    for l in range(traj.n_frames):
        stack[l] = bin_frame(traj.positions[l], grid).values
    return FrameSequence(grid, stack, traj.dt)


def inject_piecewise_constant(f: ScalarField, target: Grid2D) -> ScalarField:
    """Transfer a bin-mesh field to a (typically finer) solver grid.

    Each target cell takes the value of the source cell containing its
    center, i.e. the density is treated as the piecewise-constant function it
    is. When the target mesh refines the source mesh evenly this preserves
    the integral exactly.
    """
    g = f.grid
    if not g.domain.isclose(target.domain):
        raise ValueError("inject: grids cover different domains")
    ix = np.minimum(((target.x_centers - g.domain.x_min) / g.hx).astype(int), g.nx - 1)
    iy = np.minimum(((target.y_centers - g.domain.y_min) / g.hy).astype(int), g.ny - 1)
    return ScalarField(target, f.values[np.ix_(iy, ix)])
