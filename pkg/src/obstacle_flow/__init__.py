"""Minimizing-movement solver for the two-obstacle parabolic biharmonic problem."""

__version__ = "0.1.0"

from .grid import (DiscreteOperator, Grid, GridError, assemble_biharmonic, assemble_laplacian,
                   build_grid, energy, inner, norm)
from .obstacles import (ObstacleError, ObstaclePair, PenaltyParams, obstacles_from_interior,
                        project_to_box, sample_obstacles, shift_lower)
from .stepper import (StepError, StepOptions, StepResult, beta, classify_contacts, gamma,
                      solve_constrained, solve_penalized)
from .flow import (Trajectory, dissipation_report, interpolate_constant, interpolate_linear,
                   run_flow)
from .diagnostics import (MeasureReport, RegularityReport, accumulate_bounds, residual_measure,
                          second_difference_sup, verify_structure)
from .oracle import OracleSolution, enumerate_step
