"""Forward and adjoint solvers for the drift-diffusion density equation.

The density f obeys

    df/dt = div( C grad f + f grad U ),      C = sigma^2 / 2,

with zero total flux through the domain walls, so mass is conserved and the
stationary state is the Gibbs density ~ exp(-U / C) = exp(-2 U / sigma^2).

Space: cell-centered finite volumes with Chang-Cooper exponential fitting on
the faces. Writing w = (U_R - U_L) / C for a face between cells L and R, the
face density is delta(w) f_L + (1 - delta(w)) f_R with
delta(w) = 1/w - 1/(e^w - 1); this is the unique weighting that makes the
discrete Gibbs state an exact kernel of the assembled operator, and it keeps
all off-diagonal rates nonnegative. Omitting the boundary faces enforces the
zero-flux condition and makes every column of the operator sum to zero.

Time: BDF2 with a single implicit-Euler startup step. The two step matrices
are factorized once (sparse LU) and reused across the march; adjoint and
sensitivity sweeps reuse the same factorizations through transposed solves.

The adjoint variable p obeys the backward equation

    dp/dt + C lap p + grad p . b = f - f_d,   b = -grad U,

with terminal value p(T) = -xi (f(T) - f_d(T)) and homogeneous Neumann
walls. Its spatial operator is the transpose of the forward one (the
discrete backward generator), marched in reverse with the same BDF2 /
implicit-Euler pattern and the running misfit as source.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps
from scipy.sparse.linalg import splu

from .binning import FrameSequence
from .fields import Grid2D, ScalarField

__all__ = [
    "FpConfig",
    "SolverTrajectory",
    "cc_delta",
    "neumann_laplacian",
    "assemble_fp_operator",
    "assemble_adjoint_operator",
    "gibbs_state",
    "step_factors",
    "solve_forward",
    "solve_adjoint",
]

logger = logging.getLogger(__name__)


def cc_delta(w):
    """Chang-Cooper face weight delta(w) = 1/w - 1/(e^w - 1), delta(0) = 1/2.

    Accepts scalars or arrays. Uses the series 1/2 - w/12 + w^3/720 near zero
    (the formula is a 0/0 there) and saturates the exponential far out, where
    delta tends to 1/w (w -> +inf) resp. 1 + 1/w (w -> -inf).
    """
    w = np.asarray(w, dtype=float)
    scalar = w.ndim == 0
    w = np.atleast_1d(w)
    out = np.empty_like(w)
    small = np.abs(w) < 1e-3
    ws = w[small]
    out[small] = 0.5 - ws / 12.0 + ws**3 / 720.0
    wl = np.clip(w[~small], -700.0, 700.0)
    out[~small] = 1.0 / wl - 1.0 / np.expm1(wl)
    return float(out[0]) if scalar else out


def _face_w(U: ScalarField, C: float) -> tuple[np.ndarray, np.ndarray]:
    """Potential jumps across interior faces, scaled by 1/C.

    Returns (wx, wy): wx[iy, i] spans cells (iy, i) -> (iy, i+1), wy[j, ix]
    spans (j, ix) -> (j+1, ix). The face drift is -dU/h, so w = dU/C carries
    all of the drift information the face needs (the h cancels).
    """
    v = U.values
    return np.diff(v, axis=1) / C, np.diff(v, axis=0) / C


def _assemble_from_faces(grid: Grid2D, cLx, cRx, cLy, cRy) -> sps.csr_matrix:
    """Build the flux-divergence operator from per-face exchange rates.

    For a face L->R with rates (cL, cR), the net flux divided by h adds
    cR*f_R - cL*f_L to cell L and the negative of that to cell R. Interior
    faces only; each face's four entries cancel columnwise, which is the
    discrete form of mass conservation.
    """
    ny, nx = grid.shape
    idx = np.arange(grid.n_cells).reshape(ny, nx)
    rows, cols, vals = [], [], []

    def add(L, R, cL, cR):
        L, R = L.ravel(), R.ravel()
        cL, cR = cL.ravel(), cR.ravel()
        rows.extend([L, L, R, R])
        cols.extend([R, L, L, R])
        vals.extend([cR, -cL, cL, -cR])

    add(idx[:, :-1], idx[:, 1:], cLx, cRx)
    add(idx[:-1, :], idx[1:, :], cLy, cRy)
    n = grid.n_cells
    A = sps.coo_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n)
    )
    return A.tocsr()


def neumann_laplacian(grid: Grid2D) -> sps.csr_matrix:
    """Five-point Laplacian with homogeneous Neumann walls (mirrored ghosts)."""
    ones_x = np.full((grid.ny, grid.nx - 1), 1.0 / grid.hx**2)
    ones_y = np.full((grid.ny - 1, grid.nx), 1.0 / grid.hy**2)
    return _assemble_from_faces(grid, ones_x, ones_x, ones_y, ones_y)


def assemble_fp_operator(U: ScalarField, cfg: "FpConfig") -> sps.csr_matrix:
    """Spatial operator A with df/dt = A f (Chang-Cooper faces, zero-flux walls)."""
    if cfg.sigma_fp <= 0:
        raise ValueError(f"diffusion requires sigma_fp > 0, got {cfg.sigma_fp}")
    if not U.grid.compatible(cfg.grid):
        raise ValueError("potential grid does not match solver grid")
    C = 0.5 * cfg.sigma_fp**2
    grid = U.grid
    wx, wy = _face_w(U, C)
    # Exchange rates (C/h^2) * B(+-w) with B(w) = w/(e^w - 1) = 1 - w*delta(w):
    # both are positive, and B(-w)/B(w) = e^-w reproduces the Gibbs ratio.
    dx, dy_ = cc_delta(wx), cc_delta(wy)
    cLx = (C / grid.hx**2) * (1.0 - wx * dx)
    cRx = (C / grid.hx**2) * (1.0 + wx * (1.0 - dx))
    cLy = (C / grid.hy**2) * (1.0 - wy * dy_)
    cRy = (C / grid.hy**2) * (1.0 + wy * (1.0 - dy_))
    return _assemble_from_faces(grid, cLx, cRx, cLy, cRy)


def assemble_adjoint_operator(U: ScalarField, cfg: "FpConfig") -> sps.csr_matrix:
    """Backward-generator operator C lap p + b . grad p, the exact transpose
    of :func:`assemble_fp_operator` (zero-flux forward walls become Neumann)."""
    return assemble_fp_operator(U, cfg).T.tocsr()


def gibbs_state(U: ScalarField, sigma: float) -> ScalarField:
    """Unit-mass stationary density ~ exp(-2 U / sigma^2) on U's grid."""
    g = np.exp(-2.0 * (U.values - U.values.min()) / sigma**2)
    g /= g.sum() * U.grid.cell_area
    return ScalarField(U.grid, g)


@dataclass(frozen=True)
class FpConfig:
    """Solver parameters: diffusion amplitude, grid, step size, step count."""

    sigma_fp: float
    grid: Grid2D
    dt: float
    n_steps: int

    def __post_init__(self):
        if self.sigma_fp <= 0:
            raise ValueError(f"sigma_fp must be positive, got {self.sigma_fp}")
        if self.dt <= 0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_steps < 1:
            raise ValueError("need at least one time step")

    @property
    def t_final(self) -> float:
        return self.n_steps * self.dt


@dataclass
class SolverTrajectory:
    """States of a time march: ``states[n]`` is the field after n steps of ``dt``."""

    grid: Grid2D
    states: np.ndarray
    dt: float

    def __post_init__(self):
        s = np.asarray(self.states, dtype=float)
        if s.ndim != 3 or s.shape[1:] != self.grid.shape:
            raise ValueError(f"state stack shape {s.shape} does not match grid {self.grid.shape}")
        self.states = s

    @property
    def n_steps(self) -> int:
        return self.states.shape[0] - 1

    def state(self, n: int) -> ScalarField:
        return ScalarField(self.grid, self.states[n])

    def terminal(self) -> ScalarField:
        return ScalarField(self.grid, self.states[-1])


class StepFactors:
    """LU factorizations of the two step matrices for a fixed (U, cfg).

    ``lu_ie`` factors (I - dt A), ``lu_bdf2`` factors (3/2 I - dt A). The
    transposed systems (adjoint and sensitivity sweeps) are solved with the
    same factorizations via ``trans='T'``.
    """

    def __init__(self, U: ScalarField, cfg: FpConfig):
        self.cfg = cfg
        self.A = assemble_fp_operator(U, cfg)
        eye = sps.identity(cfg.grid.n_cells, format="csc")
        dtA = (cfg.dt * self.A).tocsc()
        self.lu_ie = splu(eye - dtA)
        self.lu_bdf2 = splu(1.5 * eye - dtA)


def step_factors(U: ScalarField, cfg: FpConfig) -> StepFactors:
    return StepFactors(U, cfg)


def _frame_index(n: int, dt: float, frame_dt: float, n_frames: int) -> int:
    """Index of the most recent data frame at or before solver time n*dt."""
    return min(int(np.floor(n * dt / frame_dt + 1e-9)), n_frames - 1)


def frame_indices(cfg: FpConfig, fd: FrameSequence) -> np.ndarray:
    """Most-recent-frame index for every solver step 0..n_steps."""
    return np.array(
        [_frame_index(n, cfg.dt, fd.dt, fd.n_frames) for n in range(cfg.n_steps + 1)], dtype=int
    )


def solve_forward(
    f0: ScalarField, U: ScalarField, cfg: FpConfig, factors: StepFactors | None = None
) -> SolverTrajectory:
    """March the density forward over the whole window.

    Parameters
    ----------
    f0 : ScalarField
        Initial density (unit mass expected; whatever mass it has is kept).
    U : ScalarField
        Potential, on the solver grid.
    cfg : FpConfig
    factors : StepFactors, optional
        Reuse existing factorizations for this exact (U, cfg).

    Returns
    -------
    SolverTrajectory
        ``n_steps + 1`` states including the initial one.
    """
    if not f0.grid.compatible(cfg.grid):
        raise ValueError("initial density grid does not match solver grid")
    fac = factors if factors is not None else StepFactors(U, cfg)
    n = cfg.grid.n_cells
    states = np.empty((cfg.n_steps + 1, n))
    states[0] = f0.values.ravel()
    states[1] = fac.lu_ie.solve(states[0])
    for k in range(2, cfg.n_steps + 1):
        states[k] = fac.lu_bdf2.solve(2.0 * states[k - 1] - 0.5 * states[k - 2])
    lowest = states.min()
    if lowest < -1e-9:
        logger.warning("forward march produced undershoot: min state %.3e", lowest)
    return SolverTrajectory(cfg.grid, states.reshape(-1, *cfg.grid.shape), cfg.dt)


def solve_adjoint(
    traj_f: SolverTrajectory,
    fd: FrameSequence,
    U: ScalarField,
    xi: float,
    cfg: FpConfig,
    factors: StepFactors | None = None,
) -> SolverTrajectory:
    """March the adjoint state backward from t = T.

    Terminal value -xi (f(T) - f_d(T)); reverse BDF2 after an implicit-Euler
    startup, using the transposed forward operator; the source at step n is
    the running misfit f^n - f_d^n with the data frame active at that time.
    """
    if traj_f.n_steps != cfg.n_steps:
        raise ValueError("forward trajectory does not match cfg.n_steps")
    if not fd.grid.compatible(cfg.grid):
        raise ValueError("data frames do not live on the solver grid")
    fac = factors if factors is not None else StepFactors(U, cfg)
    N = cfg.n_steps
    ncell = cfg.grid.n_cells
    idx = frame_indices(cfg, fd)
    fvals = traj_f.states.reshape(N + 1, ncell)
    dvals = fd.values.reshape(fd.n_frames, ncell)

    def misfit(n: int) -> np.ndarray:
        return fvals[n] - dvals[idx[n]]

    p = np.empty((N + 1, ncell))
    p[N] = -xi * misfit(N)
    p[N - 1] = fac.lu_ie.solve(p[N] - cfg.dt * misfit(N - 1), trans="T")
    for k in range(N - 2, -1, -1):
        p[k] = fac.lu_bdf2.solve(2.0 * p[k + 1] - 0.5 * p[k + 2] - cfg.dt * misfit(k), trans="T")
    return SolverTrajectory(cfg.grid, p.reshape(-1, *cfg.grid.shape), cfg.dt)
