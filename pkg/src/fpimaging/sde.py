"""Synthetic particle data: overdamped Langevin dynamics in a potential.

Ensembles follow dX = b(X) dt + sigma dW with drift b = -grad U inside a
rectangular domain with mirror-reflecting walls, integrated by
Euler-Maruyama. Snapshots of all positions are stored every ``substeps``
steps; frame 0 holds the initial positions, so a trajectory with L stored
frames spans (L-1) * frame_dt of physical time.

Noise for integration step s is drawn from a generator derived from
(master seed, s), so results do not depend on how a caller partitions the
particle update across workers: the draws are centralized per step and fully
deterministic.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .fields import Domain, ScalarField, gradient_central, interp_bilinear

__all__ = ["SdeConfig", "TrajectoryFrames", "reflect", "em_step", "simulate",
           "mean_squared_displacement"]


@dataclass(frozen=True)
class SdeConfig:
    """Monte Carlo run parameters.

    ``n_frames`` counts stored frames including the initial one; between
    consecutive frames the ensemble advances ``substeps_per_frame``
    integration steps of size ``tau``, so frames are spaced
    ``substeps_per_frame * tau`` apart.
    """

    sigma_mc: float = 0.268
    tau: float = 0.03
    n_particles: int = 1000
    n_frames: int = 3000
    substeps_per_frame: int = 1
    seed: int = 0
    domain: Domain = field(default_factory=Domain)

    def __post_init__(self):
        if self.sigma_mc < 0:
            raise ValueError(f"sigma_mc must be nonnegative, got {self.sigma_mc}")
        if self.tau <= 0:
            raise ValueError(f"tau must be positive, got {self.tau}")
        if self.n_particles < 1:
            raise ValueError("need at least one particle")
        if self.n_frames < 2:
            raise ValueError("need at least two frames (initial + one update)")
        if self.substeps_per_frame < 1:
            raise ValueError("substeps_per_frame must be >= 1")

    @property
    def frame_dt(self) -> float:
        return self.substeps_per_frame * self.tau

    @property
    def t_final(self) -> float:
        return (self.n_frames - 1) * self.frame_dt


@dataclass
class TrajectoryFrames:
    """Stored ensemble snapshots: ``positions[l, p]`` = (x, y) of particle p at frame l."""

    positions: np.ndarray
    dt: float
    domain: Domain

    def __post_init__(self):
        p = np.asarray(self.positions, dtype=float)
        if p.ndim != 3 or p.shape[2] != 2:
            raise ValueError(f"positions must have shape (n_frames, n_particles, 2), got {p.shape}")
        if self.dt <= 0:
            raise ValueError("frame spacing must be positive")
        d = self.domain
        x, y = p[..., 0], p[..., 1]
        if (x < d.x_min).any() or (x > d.x_max).any() or (y < d.y_min).any() or (y > d.y_max).any():
            raise ValueError("positions fall outside the stated domain")
        self.positions = p

    @property
    def n_frames(self) -> int:
        return self.positions.shape[0]

    @property
    def n_particles(self) -> int:
        return self.positions.shape[1]

    def frame(self, l: int) -> np.ndarray:
        return self.positions[l]


def _fold(v: np.ndarray, lo: float, hi: float) -> np.ndarray:
    # Mirror reflection as a triangle wave of period 2(hi - lo): exact for
    # points already inside, correct for arbitrarily many wall crossings.
    width = hi - lo
    y = np.mod(v - lo, 2.0 * width)
    return lo + np.minimum(y, 2.0 * width - y)


def reflect(position, domain: Domain):
    """Mirror a position (or array of positions, last axis = (x, y)) into the domain."""
    pos = np.asarray(position, dtype=float)
    out = np.empty_like(pos)
    out[..., 0] = _fold(pos[..., 0], domain.x_min, domain.x_max)
    out[..., 1] = _fold(pos[..., 1], domain.y_min, domain.y_max)
    return out


def em_step(
    positions: np.ndarray,
    drift_field: tuple[ScalarField, ScalarField] | None,
    sigma: float,
    tau: float,
    rng: np.random.Generator,
    domain: Domain | None = None,
) -> np.ndarray:
    """One Euler-Maruyama step with reflecting walls.

    Parameters
    ----------
    positions : ndarray, shape (n_particles, 2)
    drift_field : (ScalarField, ScalarField) or None
        Drift components (b_x, b_y) on a common grid, interpolated
        bilinearly at the particle positions. None means zero drift.
    sigma, tau : float
        Noise amplitude and step size.
    rng : numpy Generator
        Source of this step's Gaussian increments.
    domain : Domain, optional
        Reflection box; defaults to the drift fields' domain (required when
        drift_field is None).
    """
    x = positions[:, 0]
    y = positions[:, 1]
    if drift_field is None:
        if domain is None:
            raise ValueError("em_step needs an explicit domain when there is no drift field")
        bx = by = 0.0
    else:
        bxf, byf = drift_field
        if not bxf.grid.compatible(byf.grid):
            raise ValueError("drift components live on different grids")
        if not (np.isfinite(bxf.values).all() and np.isfinite(byf.values).all()):
            raise ValueError("drift field contains non-finite values")
        if domain is None:
            domain = bxf.grid.domain
        bx = interp_bilinear(bxf, x, y)
        by = interp_bilinear(byf, x, y)
    noise = rng.standard_normal(positions.shape)
    stepped = np.empty_like(positions)
    root_tau = np.sqrt(tau)
    stepped[:, 0] = x + bx * tau + sigma * root_tau * noise[:, 0]
    stepped[:, 1] = y + by * tau + sigma * root_tau * noise[:, 1]
    return reflect(stepped, domain)


def _step_rng(seed: int, key: int) -> np.random.Generator:
    return np.random.default_rng(np.random.SeedSequence(entropy=seed, spawn_key=(key,)))


def drift_from_potential(U: ScalarField) -> tuple[ScalarField, ScalarField]:
    """b = -grad U, differentiated once on U's grid."""
    gx, gy = gradient_central(U)
    return ScalarField(U.grid, -gx.values), ScalarField(U.grid, -gy.values)


def simulate(cfg: SdeConfig, potential: ScalarField | None, x0: np.ndarray | None = None) -> TrajectoryFrames:
    """Integrate the ensemble and return the stored frames.

    Initial positions are uniform over the domain unless ``x0`` (shape
    (n_particles, 2)) is given. Identical (cfg, potential, x0) reproduce the
    same trajectory byte for byte. ``potential=None`` means free diffusion.
    """
    d = cfg.domain
    if potential is not None and not potential.grid.domain.isclose(d):
        raise ValueError("potential grid does not cover the simulation domain")
    if x0 is None:
        rng0 = _step_rng(cfg.seed, 0)
        x0 = np.column_stack(
            [
                rng0.uniform(d.x_min, d.x_max, cfg.n_particles),
                rng0.uniform(d.y_min, d.y_max, cfg.n_particles),
            ]
        )
    else:
        x0 = np.asarray(x0, dtype=float)
        if x0.shape != (cfg.n_particles, 2):
            raise ValueError(f"x0 must have shape ({cfg.n_particles}, 2), got {x0.shape}")

    drift = drift_from_potential(potential) if potential is not None else None
    frames = np.empty((cfg.n_frames, cfg.n_particles, 2))
    frames[0] = reflect(x0, d)
    x = frames[0]
    for l in range(1, cfg.n_frames):
        for sub in range(cfg.substeps_per_frame):
            step_index = (l - 1) * cfg.substeps_per_frame + sub
            x = em_step(x, drift, cfg.sigma_mc, cfg.tau, _step_rng(cfg.seed, 1 + step_index), d)
        frames[l] = x
    return TrajectoryFrames(frames, cfg.frame_dt, d)


def mean_squared_displacement(traj: TrajectoryFrames) -> np.ndarray:
    """Ensemble-mean |X_l - X_0|^2 for every stored frame (length n_frames)."""
    disp = traj.positions - traj.positions[0]
    return (disp**2).sum(axis=2).mean(axis=1)
