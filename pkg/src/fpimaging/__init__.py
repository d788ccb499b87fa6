"""Potential reconstruction from particle-position movies.

The package turns time series of particle positions (or pre-binned density
frames) into an estimate of the underlying static potential by fitting an
advection-diffusion evolution to the observed densities, window by window,
with a preconditioned nonlinear conjugate gradient method.
"""

from .analysis import (
    LabUnits,
    TargetSpec,
    cross_correlation,
    make_target,
    potential_to_kbt,
    resolution_verdict,
    scaled_cross_correlation,
    sigma_from_lab,
)
from .binning import FrameSequence, bin_frame, bin_sequence, inject_piecewise_constant
from .estimator import PotentialReconstructor, check_density_stack
from .fields import DegenerateFieldWarning, Domain, Grid2D, ScalarField, min_max_scale, resample
from .fileio import (
    load_density,
    load_field,
    load_frames,
    load_potential_image,
    read_manifest,
    save_density,
    save_field,
    save_field_image,
    save_frames,
    write_manifest,
)
from .fokker_planck import (
    FpConfig,
    SolverTrajectory,
    StepFactors,
    assemble_adjoint_operator,
    assemble_fp_operator,
    cc_delta,
    gibbs_state,
    neumann_laplacian,
    solve_adjoint,
    solve_forward,
)
from .inverse import (
    H1Preconditioner,
    InverseConfig,
    IterationRecord,
    LineSearchError,
    NcgReport,
    compute_gradient,
    h1_gradient,
    l2_gradient,
    ncg_minimize,
    objective,
)
from .sde import (
    SdeConfig,
    TrajectoryFrames,
    drift_from_potential,
    em_step,
    mean_squared_displacement,
    reflect,
    simulate,
)
from .windows import ReconstructionResult, WindowPlan, aggregate, run_windows

__version__ = "0.1.0"

__all__ = [
    "__version__",
    "Domain",
    "Grid2D",
    "ScalarField",
    "DegenerateFieldWarning",
    "min_max_scale",
    "resample",
    "SdeConfig",
    "TrajectoryFrames",
    "simulate",
    "em_step",
    "reflect",
    "drift_from_potential",
    "mean_squared_displacement",
    "FrameSequence",
    "bin_frame",
    "bin_sequence",
    "inject_piecewise_constant",
    "FpConfig",
    "SolverTrajectory",
    "StepFactors",
    "assemble_fp_operator",
    "assemble_adjoint_operator",
    "neumann_laplacian",
    "cc_delta",
    "gibbs_state",
    "solve_forward",
    "solve_adjoint",
    "InverseConfig",
    "IterationRecord",
    "NcgReport",
    "LineSearchError",
    "H1Preconditioner",
    "objective",
    "l2_gradient",
    "h1_gradient",
    "compute_gradient",
    "ncg_minimize",
    "WindowPlan",
    "ReconstructionResult",
    "aggregate",
    "run_windows",
    "LabUnits",
    "TargetSpec",
    "cross_correlation",
    "scaled_cross_correlation",
    "make_target",
    "sigma_from_lab",
    "potential_to_kbt",
    "resolution_verdict",
    "PotentialReconstructor",
    "check_density_stack",
    "load_potential_image",
    "save_field_image",
    "save_frames",
    "load_frames",
    "save_density",
    "load_density",
    "save_field",
    "load_field",
    "write_manifest",
    "read_manifest",
]
