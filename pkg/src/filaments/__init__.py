"""Interacting filaments, their currents, and mean-field verification tools."""

from ._accel import get_threads, set_threads
from .currents import (
    CurrentPath,
    Diffeomorphism,
    FilamentCurrent,
    GridCurrent,
    TestFieldDictionary,
    convolve,
    dict_metric,
    mass_norm_upper,
    pair,
    path_distance,
    pushforward_dual_check,
    pushforward_field,
    pushforward_filament,
    pushforward_grid,
)
from .experiments import (
    RandomCurveLaw,
    StudyReport,
    chaos_study,
    contdep_study,
    meanfield_study,
    sample_family,
)
from .flow import FlowState, advect, flow_bounds_check
from .geometry import Curve, CurveFamily, NonFiniteError, arclength, tangent
from .kernels import (
    ConstantKernel,
    GaussianRotor,
    Kernel,
    MollifiedBiotSavart,
    ZeroKernel,
    bl_operator_bound,
    make_kernel,
)
from .solver import (
    NonContractionError,
    PicardConfig,
    conserved_quantity_check,
    evolve_grid_current,
    picard_solve,
    simulate_filaments,
    weak_residual,
)

__version__ = "0.1.0"
