"""Scikit-learn style estimator wrapping the windowed reconstruction."""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .analysis import scaled_cross_correlation
from .binning import FrameSequence
from .fields import Domain, Grid2D, ScalarField
from .fokker_planck import FpConfig
from .inverse import InverseConfig
from .windows import run_windows

__all__ = ["PotentialReconstructor", "check_density_stack"]


def check_density_stack(X) -> np.ndarray:
    """Validate a (n_frames, ny, nx) stack of nonnegative density frames."""
    X = np.asarray(X, dtype=float)
    if X.ndim != 3:
        raise ValueError(f"expected a 3-d array (n_frames, ny, nx), got shape {X.shape}")
    if X.shape[0] < 2:
        raise ValueError("need at least two frames to constrain the dynamics")
    if not np.all(np.isfinite(X)):
        raise ValueError("density stack contains non-finite values")
    if X.min() < 0:
        raise ValueError("density stack contains negative values")
    return X


class PotentialReconstructor(BaseEstimator):
    """Estimate a static potential from a movie of particle densities.

    Parameters mirror the reconstruction pipeline: the densities are
    interpreted as snapshots of an advection-diffusion evolution whose drift
    is the negative potential gradient, and the potential minimizing the
    regularized misfit is found per time window and averaged.

    Parameters
    ----------
    grid_size : solver grid points per axis.
    sigma_fp : model noise amplitude.
    alpha : Tikhonov weight on the potential and its gradient.
    xi : terminal misfit weight.
    n_windows : number of time windows.
    tol : relative gradient-norm tolerance per window.
    max_iter : iteration cap per window.
    frame_dt : time between frames (used when ``X`` is a bare array).
    domain : (x_min, x_max, y_min, y_max) box (used when ``X`` is a bare array).

    Attributes
    ----------
    potential_ : ScalarField, mean of the min-max scaled window potentials.
    potential_sd_ : ScalarField, pixelwise sample standard deviation.
    window_potentials_ : list of raw per-window potentials.
    result_ : full reconstruction record (plans, reports, flags).
    """

    def __init__(
        self,
        grid_size: int = 100,
        sigma_fp: float = 0.7,
        alpha: float = 1e-4,
        xi: float = 1.0,
        n_windows: int = 5,
        tol: float = 1e-4,
        max_iter: int = 100,
        frame_dt: float = 0.03,
        domain: tuple[float, float, float, float] = (-3.0, 3.0, -3.0, 3.0),
    ):
        self.grid_size = grid_size
        self.sigma_fp = sigma_fp
        self.alpha = alpha
        self.xi = xi
        self.n_windows = n_windows
        self.tol = tol
        self.max_iter = max_iter
        self.frame_dt = frame_dt
        self.domain = domain

    def _as_sequence(self, X) -> FrameSequence:
        if isinstance(X, FrameSequence):
            return X
        values = check_density_stack(X)
        domain = Domain(*self.domain)
        grid = Grid2D(domain, values.shape[2], values.shape[1])
        masses = values.sum(axis=(1, 2)) * grid.cell_area
        if np.any(masses <= 0):
            raise ValueError("every density frame needs positive total mass")
        return FrameSequence(grid, values / masses[:, None, None], self.frame_dt)

    def fit(self, X, y=None):
        """Reconstruct the potential from a density movie.

        ``X`` is either a FrameSequence or an array of shape
        (n_frames, ny, nx) sampled every ``frame_dt`` on ``domain``.
        """
        fd = self._as_sequence(X)
        grid = Grid2D(fd.grid.domain, self.grid_size, self.grid_size)
        fp_cfg = FpConfig(sigma_fp=self.sigma_fp, grid=grid, dt=fd.dt, n_steps=1)
        inv_cfg = InverseConfig(
            alpha=self.alpha, xi=self.xi, tol=self.tol, n_max=self.max_iter
        )
        result = run_windows(fd, self.n_windows, inv_cfg, fp_cfg)
        self.result_ = result
        self.potential_ = result.mean
        self.potential_sd_ = result.sd
        self.window_potentials_ = list(result.window_potentials)
        self.n_features_in_ = fd.grid.n_cells
        return self

    def score(self, X=None, y=None) -> float:
        """Scaled cross-correlation of the fitted potential with ``y``."""
        check_is_fitted(self, "potential_")
        if y is None:
            raise ValueError("score requires a reference potential y")
        reference = y if isinstance(y, ScalarField) else ScalarField(
            Grid2D(Domain(*self.domain), np.asarray(y).shape[1], np.asarray(y).shape[0]),
            np.asarray(y, dtype=float),
        )
        return scaled_cross_correlation(self.potential_, reference)
