"""Knudsen boundary-layer toolkit.

Hard-sphere collision operator on a velocity grid, closed-form backward
characteristics in the corrected slab and in the disk, the damped-reflection
layer solver with lambda continuation, and the Burnett/macro-lift closures.
"""
from .closures import (BurnettSet, MacroLift, MacroMoments, TransportCoefficients,
                       build_burnett, check_lift, layer_moments, solve_macro_lift,
                       transport_coefficients)
from .collision import (CollisionOperator, GasState, VelocityGrid, assemble_kernel,
                        check_weighted_kernel_bound, invert_L0_on_complement, project_P0,
                        self_adjointness_defect, spectral_gap)
from .disk import DiskState, jacobian_disk, polar_trace, turning_radius
from .errors import (ConvergenceError, DomainError, GridError, InvariantError, KnudsenError,
                     NotSolvableError, SegmentError)
from .slab import SlabGeometry, cycle_decomposition, trace_backward, trace_forward
from .solver import (SlabProblem, SlabSolution, bundled_problem, continuation_solve,
                     diagnostics, mild_integral, solve_fixed)

__version__ = "0.1.0"
