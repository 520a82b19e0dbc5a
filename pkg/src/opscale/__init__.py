"""Operator, matrix and frame scaling by discretised gradient flow, with
spectral-gap certificates, capacity / permanent bounds and random-frame
moment calculations."""
from .operator import (BalanceReport, ErrorPair, Operator, apply_phi, apply_phi_adjoint,
                       balance_report, choi_matrix, delta_rate_decomposition, error_matrices,
                       gradient_direction, matrix_representation, normalize_orientation, size)
from .reductions import (BLDatum, Frame, bl_datum_to_operator, extract_diagonal_scaling,
                         frame_to_operator, matrix_to_operator)
from .spectral import (SpectralReport, certify_frame, certify_matrix, certify_operator,
                       cheeger_consistency, conductance, squared_gram, top_two_singular_values)
from .solvers import (ConvergenceTrace, ScalingResult, SolverConfig, condition_number,
                      gradient_step, run_alternating, run_frame_fast_path, run_gradient_descent,
                      run_matrix_fast_path, total_movement)

__version__ = "0.1.0"
