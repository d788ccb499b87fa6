"""Windowed reconstruction with chained initial densities.

The data span [0, T] is partitioned into K windows of equal frame count
(the last window absorbs any remainder). Window 1 starts from the binned
initial frame; window k > 1 starts from the forward solution at the shared
boundary frame time, computed under window (k-1)'s optimal potential. Each
window runs its own NCG solve initialized at U = 0.

Averaging the min-max-scaled window potentials gives the reconstruction
<U_r>; their pixel-wise sample standard deviation (K - 1 in the
denominator) is the uncertainty map.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field, replace

import numpy as np

from .binning import FrameSequence, inject_piecewise_constant
from .fields import ScalarField, integrate, min_max_scale
from .fokker_planck import FpConfig, solve_forward
from .inverse import InverseConfig, LineSearchError, NcgReport, ncg_minimize

__all__ = ["WindowPlan", "ReconstructionResult", "run_windows", "aggregate"]

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class WindowPlan:
    """Partition of L frames (L-1 intervals) into K contiguous windows.

    ``boundaries`` holds K+1 frame indices, 0 = first and L-1 = last; window
    k spans frames boundaries[k]..boundaries[k+1] inclusive, so neighboring
    windows share their boundary frame.
    """

    n_windows: int
    boundaries: tuple[int, ...]

    def __post_init__(self):
        b = self.boundaries
        if self.n_windows < 1:
            raise ValueError("need at least one window")
        if len(b) != self.n_windows + 1 or b[0] != 0 or any(
            b[i] >= b[i + 1] for i in range(len(b) - 1)
        ):
            raise ValueError(f"inconsistent window boundaries {b}")

    @classmethod
    def uniform(cls, n_windows: int, n_frames: int) -> "WindowPlan":
        """Equal interval counts per window; the final window takes the remainder."""
        if n_windows < 1:
            raise ValueError("need at least one window")
        intervals = n_frames - 1
        if intervals < n_windows:
            raise ValueError(
                f"cannot split {intervals} frame intervals into {n_windows} windows"
            )
        base = intervals // n_windows
        bounds = [k * base for k in range(n_windows)] + [intervals]
        return cls(n_windows, tuple(bounds))

    def segment(self, k: int) -> tuple[int, int]:
        return self.boundaries[k], self.boundaries[k + 1]


@dataclass
class ReconstructionResult:
    """Everything a windowed run produces.

    ``failed_window`` is None for a complete run; otherwise the index of the
    window whose line search aborted, with everything before it retained.
    """

    window_potentials: list[ScalarField]
    scaled_potentials: list[ScalarField]
    mean: ScalarField
    sd: ScalarField
    reports: list[NcgReport]
    plan: WindowPlan
    degenerate_windows: list[int] = field(default_factory=list)
    failed_window: int | None = None

    @property
    def complete(self) -> bool:
        return self.failed_window is None


def _scale_windows(potentials: list[ScalarField]) -> tuple[list[ScalarField], list[int]]:
    scaled, degenerate = [], []
    for k, U in enumerate(potentials):
        if float(U.values.max()) == float(U.values.min()):
            degenerate.append(k)
            scaled.append(ScalarField.zeros(U.grid))
        else:
            scaled.append(min_max_scale(U))
    return scaled, degenerate


def aggregate(window_potentials: list[ScalarField]) -> tuple[ScalarField, ScalarField]:
    """Pixel-wise mean and sample sd of the min-max-scaled window potentials.

    With a single window the sd is undefined and comes back as all zeros,
    with a warning so the caller cannot mistake it for a tight estimate.
    """
    if not window_potentials:
        raise ValueError("no window potentials to aggregate")
    grid = window_potentials[0].grid
    scaled, _ = _scale_windows(window_potentials)
    stack = np.stack([s.values for s in scaled])
    mean = stack.mean(axis=0)
    if len(scaled) > 1:
        sd = stack.std(axis=0, ddof=1)
    else:
        warnings.warn(
            "aggregate: single window, sd is undefined and set to zero",
            RuntimeWarning,
            stacklevel=2,
        )
        sd = np.zeros(grid.shape)
    return ScalarField(grid, mean), ScalarField(grid, sd)


def run_windows(
    fd: FrameSequence,
    plan: WindowPlan | int,
    inv_cfg: InverseConfig,
    fp_cfg: FpConfig,
) -> ReconstructionResult:
    """Reconstruct the potential over every window of the plan.

    ``fd`` may live on a coarser bin mesh; frames are injected onto the
    solver grid piecewise-constantly. ``plan`` can be given as a bare window
    count. ``fp_cfg.dt`` must tile the frame spacing; ``fp_cfg.n_steps`` is
    derived per window and the template value is ignored.
    """
    grid = fp_cfg.grid
    if isinstance(plan, int):
        plan = WindowPlan.uniform(plan, fd.n_frames)
    if plan.boundaries[-1] != fd.n_frames - 1:
        raise ValueError(
            f"plan covers {plan.boundaries[-1] + 1} frames but the data has {fd.n_frames}"
        )

    substeps = fd.dt / fp_cfg.dt
    if abs(substeps - round(substeps)) > 1e-9 or round(substeps) < 1:
        raise ValueError(
            f"solver step {fp_cfg.dt} must evenly divide the frame spacing {fd.dt}"
        )
    substeps = int(round(substeps))

    if fd.grid.compatible(grid):
        fd_solver = fd
    else:
        stack = np.stack(
            [inject_piecewise_constant(fd.frame(l), grid).values for l in range(fd.n_frames)]
        )
        fd_solver = FrameSequence(grid, stack, fd.dt)

    f0 = fd_solver.frame(0)
    f0 = ScalarField(grid, f0.values / integrate(f0))

    potentials: list[ScalarField] = []
    reports: list[NcgReport] = []
    failed: int | None = None
    for k in range(plan.n_windows):
        start, stop = plan.segment(k)
        fd_k = fd_solver.window(start, stop)
        cfg_k = replace(fp_cfg, n_steps=(stop - start) * substeps)
        logger.info(
            "window %d/%d: frames %d..%d, %d steps", k + 1, plan.n_windows, start, stop,
            cfg_k.n_steps,
        )
        try:
            U_k, report = ncg_minimize(f0, fd_k, inv_cfg, cfg_k)
        except LineSearchError as err:
            logger.error("window %d aborted: %s", k + 1, err)
            failed = k
            break
        potentials.append(U_k)
        reports.append(report)
        if k + 1 < plan.n_windows:
            # Chain: the boundary-time density under this window's optimum
            # becomes the next window's initial condition.
            f0 = solve_forward(f0, U_k, cfg_k).terminal()

    if not potentials:
        raise LineSearchError("first window failed; nothing to aggregate")
    scaled, degenerate = _scale_windows(potentials)
    mean, sd = aggregate(potentials)
    return ReconstructionResult(
        window_potentials=potentials,
        scaled_potentials=scaled,
        mean=mean,
        sd=sd,
        reports=reports,
        plan=plan,
        degenerate_windows=degenerate,
        failed_window=failed,
    )
