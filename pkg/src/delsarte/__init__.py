"""Delsarte transmutation operators, Darboux-Baecklund dressing and Lax pairs on grids.

Modules
-------
numgrid
    Uniform grids, finite differences, quadrature, dense solves.
diffop
    Matrix differential expressions, formal adjoints, evolution operators.
concomitant
    Bilinear concomitants, closed m-forms, cubical chains and Stokes checks.
transmute
    Spectral families, cycle matrices, Volterra kernels, dressing.
laxpair
    Lax pairs, zero-curvature residuals, KdV solitons.
scenarios, cli
    Verification scenarios and the ``delsarte`` command.
"""

from .concomitant import (
    Chain,
    Cycle,
    MForm,
    SurfaceChain,
    assemble_Zm,
    closedness_residual,
    concomitant_axis,
    lagrangian_residual,
    path_independence_gap,
)
from .diffop import (
    DifferentialExpression,
    EvolutionOperator,
    adjoint_defect,
    apply_op,
    evolution_apply,
    formal_adjoint,
    load_operator,
)
from .laxpair import (
    LaxPair,
    SolitonSolution,
    backlund_residual,
    kdv_pair,
    kdv_residual,
    kdv_soliton,
    transformed_zs_residual,
    zs_residual,
)
from .numgrid import Grid, GridFunction, fd_partial, make_uniform_grid, pairing, quad
from .transmute import (
    DelsarteOperator,
    SpectralDatum,
    SpectralFamily,
    apply_delsarte,
    apply_inverse,
    build_delsarte,
    build_kernel,
    cycle_matrix,
    intertwining_residual,
    kernel_pde_residual,
    load_family,
    transformed_family,
    transformed_potential_schrodinger,
)

__version__ = "0.1.0"
