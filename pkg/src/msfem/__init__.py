"""Multiscale finite elements with oversampled local correctors.

P1 elements on nested criss-cross meshes of the unit square, three
oversampling strategies for the local corrector problems, coarse-scale
solves in Petrov-Galerkin and symmetric form, and a study harness.
"""

from .mesh import (
    RefinementHierarchy,
    Triangulation,
    build_uniform_mesh,
    coarse_element_patch,
    refine_uniform,
)
from .problems import CoefficientField, ProblemInstance, get_problem
from .fem import (
    Assembly,
    ElementwiseField,
    FeFunction,
    SparseSystem,
    assemble_system,
    element_stiffness,
    solve_spd,
)
from .interpolation import ConstraintBlock, QuasiInterpolator
from .patches import (
    Patch,
    build_patches,
    maximal_patch,
    min_thickness,
    patch_from_coarse_layers,
    patch_from_fine_layers,
)
from .correctors import (
    CorrectionOperator,
    CorrectorBasis,
    apply_correction,
    compute_corrector_basis,
    solve_corrector_strategy1,
    solve_corrector_strategy2,
    solve_corrector_strategy3,
)
from .coarse import (
    MsfemSolution,
    SingularCoarseSystemError,
    reconstruct,
    solve_pg,
    solve_symmetric,
)
from .analysis import (
    DecayProfile,
    ErrorReport,
    decay_profile,
    error_norms,
    fit_rate,
)

__all__ = [name for name in dir() if not name.startswith("_")]
__version__ = "0.1.0"
