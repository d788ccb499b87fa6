"""Validation metrics, the resolution-target potential, and unit conversions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import Grid2D, ScalarField, min_max_scale, resample

__all__ = [
    "LabUnits",
    "TargetSpec",
    "cross_correlation",
    "scaled_cross_correlation",
    "make_target",
    "sigma_from_lab",
    "potential_to_kbt",
    "resolution_verdict",
]


@dataclass(frozen=True)
class LabUnits:
    """Mapping between the simulation box and physical lengths.

    l is the domain side in simulation units, l_tilde the physical side in
    micrometers, D the physical diffusion constant in um^2/s, pixel_size the
    physical size of one image pixel in um.
    """

    l: float = 6.0
    l_tilde: float = 10.0
    D: float = 0.1
    pixel_size: float = 0.05

    def __post_init__(self):
        for name in ("l", "l_tilde", "pixel_size"):
            if getattr(self, name) <= 0:
                raise ValueError(f"LabUnits.{name} must be positive")
        if self.D < 0:
            raise ValueError("LabUnits.D must be nonnegative")


@dataclass(frozen=True)
class TargetSpec:
    """Concentric-ring resolution target: U = A (1 + cos((2 pi / (d l)) (x^2 + y^2)))."""

    A: float = 0.05
    d: float = 0.05
    l: float = 6.0

    def __post_init__(self):
        if self.A <= 0:
            raise ValueError("amplitude A must be positive")
        if not 0 < self.d < 1:
            raise ValueError(f"peak-distance fraction d must lie in (0,1), got {self.d}")
        if self.l <= 0:
            raise ValueError("domain side l must be positive")


def cross_correlation(U_r: ScalarField | np.ndarray, U_s: ScalarField | np.ndarray) -> float:
    """Normalized cross-correlation cc = (U_r . U_s) / (|U_r| |U_s|).

    Cosine similarity of the flattened value vectors; both fields must be on
    the same grid (resample first otherwise) and neither may be all zero.
    """
    a = (U_r.values if isinstance(U_r, ScalarField) else np.asarray(U_r, float)).ravel()
    b = (U_s.values if isinstance(U_s, ScalarField) else np.asarray(U_s, float)).ravel()
    if a.shape != b.shape:
        raise ValueError(f"cross_correlation: shape mismatch {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na == 0.0 or nb == 0.0:
        raise ValueError("cross_correlation of an all-zero field is undefined")
    return float((a @ b) / (na * nb))


def scaled_cross_correlation(recon: ScalarField, reference: ScalarField) -> float:
    """cc between min-max-scaled fields on the reconstruction grid.

    The reference (typically a finer image) is resampled onto the
    reconstruction grid by box averaging before scaling.
    """
    ref = reference if reference.grid.compatible(recon.grid) else resample(reference, recon.grid)
    return cross_correlation(min_max_scale(recon), min_max_scale(ref))


def make_target(spec: TargetSpec, grid: Grid2D) -> ScalarField:
    """Sample the ring target at the cell centers of an origin-centered grid."""
    xx, yy = grid.meshgrid()
    r2 = xx**2 + yy**2
    return ScalarField(grid, spec.A * (1.0 + np.cos(2.0 * np.pi / (spec.d * spec.l) * r2)))


def sigma_from_lab(units: LabUnits) -> float:
    """Simulation noise amplitude sigma = (l / l_tilde) sqrt(2 D)."""
    return units.l / units.l_tilde * np.sqrt(2.0 * units.D)


def potential_to_kbt(U_depth: float, units: LabUnits) -> float:
    """Dimensionless potential depth U (l_tilde / l)^2 / D, in units of k_B T."""
    if units.D == 0:
        raise ValueError("potential_to_kbt requires D > 0")
    return U_depth * (units.l_tilde / units.l) ** 2 / units.D


def resolution_verdict(cc_value: float, threshold: float = 0.8) -> bool:
    """Resolved iff cc >= threshold (inclusive)."""
    if not -1.0 - 1e-12 <= cc_value <= 1.0 + 1e-12:
        raise ValueError(f"cc value {cc_value} outside [-1, 1]")
    return bool(cc_value >= threshold)
