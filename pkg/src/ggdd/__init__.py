"""Discrete Gradgrad/divDiv tensor complexes on uniform grids.

Machine-precision tensor-calculus identities, adjoint pairs and complex
properties; Helmholtz-type decompositions and cohomology dimensions;
Friedrichs/Poincare constants; minimum-norm and composed regular
potentials; and four interchangeable solvers for the clamped biharmonic
problem (plus its 2D decomposition).
"""

from .grid_fields import (
    FiniteSubspace,
    Grid,
    ScalarField,
    TensorField,
    VectorField,
    inner_product,
    norm,
    project_subspace,
    random_smooth_field,
    read_field,
    subspace,
    write_field,
    zeros,
)
from .diffops import (
    OperatorHandle,
    SpaceDescriptor,
    build_composite,
    build_first_order,
    check_adjoint_pair,
    composition_defect,
    export_matrix_market,
    pack,
    unpack,
)
from .identity_suite import (
    identity_ids,
    run_all,
    run_cutoff_rule,
    run_identity,
    run_second_derivative_reconstruction,
)
from .complex_tools import (
    ComplexDescriptor,
    ConstantEstimate,
    DecompositionResult,
    cohomology_dim,
    estimate_constant,
    helmholtz_tensor,
    helmholtz_vector,
    make_complex,
    potential,
    potential_composed,
    split_H0m1,
)
from .biharmonic import (
    BiharmonicSolution,
    check_infsup,
    solve_decomposed,
    solve_decomposed_2d,
    solve_ddz,
    solve_mixed,
    solve_primal,
    solve_primal_2d,
)
from .krylov import SolveReport, cg, minres
from .manufactured import ManufacturedCase, convergence_study, get_case

__version__ = "0.1.0"
